#pragma once

// Iterative body-parameter refinement against Gaussian renderings. Each
// iteration renders the splat template into a camera ring, compares the front
// view against the input mask and the side views against silhouettes of a
// predicted Gaussian cloud, and takes one adaptive-moment step on the pose,
// shape, and global parameters. The cloud is refreshed from the predictor on
// a fixed schedule and treated as a constant in between, so gradients flow
// only through the template renders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gaussforge/body.hpp"
#include "gaussforge/camera.hpp"
#include "gaussforge/common.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/render.hpp"

namespace gf {

inline constexpr std::size_t kBodyKeypointCount = 22;

struct RefineConfig {
    int iterations = 45;
    int gs_update_every = 15;
    double lambda_front = 10.0;
    double lambda_side = 1.0;
    double lambda_normal = 0.5;
    // The mask and keypoint terms have no published relative weighting, so
    // keypoints are off by default and opt-in.
    double lambda_keypoint = 0.0;
    double step = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    // Template splat radius in world units; 0 picks the template default.
    double splat_sigma = 0.0;

    // A schedule longer than the run disables the side-view supervision
    // entirely: the ablation baseline fits the front mask alone.
    bool SideViewsEnabled() const { return gs_update_every <= iterations; }

    void Validate() const {
        Require(iterations > 0, "refine: iterations must be positive");
        Require(gs_update_every > 0, "refine: gs_update_every must be positive");
        Require(lambda_front >= 0.0 && lambda_side >= 0.0 && lambda_normal >= 0.0 &&
                    lambda_keypoint >= 0.0,
                "refine: loss weights must be non-negative");
        Require(step > 0.0, "refine: step size must be positive");
        Require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
                "refine: moment decays must lie in [0, 1)");
    }
};

// Supplies the Gaussian cloud whose side-view silhouettes supervise the
// template. Called with no body at the start and with the current posed mesh
// at each scheduled refresh.
using CloudPredictor = std::function<GaussianCloud(const Mesh* posed_body)>;

// Optional supervision beyond the front mask. Normal maps are camera-space
// unit normals (zero where the estimator has no opinion), keyed by ring view
// index; detected keypoints are front-view pixel coordinates.
struct RefineProviders {
    std::map<int, ImageBuffer> normals;
    std::vector<Vec2> keypoints;
    Eigen::VectorXd keypoint_confidence;
};

struct RefineTraceRow {
    int iteration = 0;
    double l_front = 0.0;
    double l_side = 0.0;
    double l_normal = 0.0;
    double l_keypoint = 0.0;
    double total = 0.0;
    double mpjpe = -1.0;
};

struct RefineState {
    BodyParams params;
    GaussianCloud cloud;
    std::vector<RefineTraceRow> trace;
    int iteration = 0;
    Eigen::VectorXd adam_m;
    Eigen::VectorXd adam_v;
};

struct RefineResult {
    BodyParams params;
    GaussianCloud cloud;
    std::vector<RefineTraceRow> trace;
};

// ---------------------------------------------------------------------------
// Loss terms

struct MaskLoss {
    double value = 0.0;
    ImageBuffer d_mask;
};

// Mean squared difference over pixels, with the gradient for the first
// argument.
inline MaskLoss MaskMseLoss(const ImageBuffer& rendered, const ImageBuffer& target) {
    Require(rendered.channels == 1 && target.channels == 1, "mask loss expects 1-channel masks");
    Require(rendered.SameShape(target), "mask loss: resolutions differ");
    MaskLoss loss;
    loss.d_mask = ImageBuffer(rendered.width, rendered.height, 1, ImageSemantics::kMask, 0.0);
    const double inv_n = 1.0 / static_cast<double>(rendered.data.size());
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        loss.value += d * d * inv_n;
        loss.d_mask.data[i] = 2.0 * d * inv_n;
    }
    return loss;
}

struct KeypointLoss {
    double value = 0.0;
    std::vector<Vec2> d_points;
};

// Confidence-weighted mean squared pixel error; the mean runs over all 22
// entries, so zero-confidence joints dilute rather than renormalise.
inline KeypointLoss KeypointMseLoss(const std::vector<Vec2>& projected,
                                    const std::vector<Vec2>& detected,
                                    const Eigen::VectorXd& confidence) {
    Require(projected.size() == kBodyKeypointCount && detected.size() == kBodyKeypointCount,
            "keypoint loss expects the 22 body keypoints");
    Require(confidence.size() == static_cast<Eigen::Index>(kBodyKeypointCount),
            "keypoint loss: confidence count mismatch");
    KeypointLoss loss;
    loss.d_points.assign(projected.size(), Vec2::Zero());
    const double inv_n = 1.0 / static_cast<double>(projected.size());
    for (std::size_t k = 0; k < projected.size(); ++k) {
        const double w = confidence[static_cast<Eigen::Index>(k)];
        Require(w >= 0.0, "keypoint confidences must be non-negative");
        if (w == 0.0) continue;
        const Vec2 d = projected[k] - detected[k];
        loss.value += w * d.squaredNorm() * inv_n;
        loss.d_points[k] = 2.0 * w * inv_n * d;
    }
    return loss;
}

struct NormalLoss {
    double value = 0.0;
    ImageBuffer d_normals;
};

// Mean (1 - cosine) between rendered and provided normals over the foreground
// mask; zero when the mask is empty. Pixels where the render produced no
// normal contribute a constant 1 and no gradient.
inline NormalLoss NormalCosineLoss(const ImageBuffer& rendered, const ImageBuffer& provided,
                                   const ImageBuffer& foreground) {
    Require(rendered.channels == 3 && provided.channels == 3,
            "normal loss expects 3-channel normal maps");
    Require(foreground.channels == 1, "normal loss expects a 1-channel mask");
    Require(rendered.SameShape(provided), "normal loss: resolutions differ");
    Require(rendered.width == foreground.width && rendered.height == foreground.height,
            "normal loss: mask resolution differs");
    NormalLoss loss;
    loss.d_normals = ImageBuffer(rendered.width, rendered.height, 3, ImageSemantics::kNormal, 0.0);
    std::int64_t count = 0;
    for (int y = 0; y < rendered.height; ++y) {
        for (int x = 0; x < rendered.width; ++x) {
            if (foreground.At(x, y) < 0.5) continue;
            ++count;
        }
    }
    if (count == 0) return loss;
    const double inv_n = 1.0 / static_cast<double>(count);
    for (int y = 0; y < rendered.height; ++y) {
        for (int x = 0; x < rendered.width; ++x) {
            if (foreground.At(x, y) < 0.5) continue;
            double dot = 0.0;
            for (int c = 0; c < 3; ++c) dot += rendered.At(x, y, c) * provided.At(x, y, c);
            loss.value += (1.0 - dot) * inv_n;
            for (int c = 0; c < 3; ++c) loss.d_normals.At(x, y, c) = -provided.At(x, y, c) * inv_n;
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Backward helpers

// Pulls normal-map gradients back onto the depth map that produced them via
// RenderNormalFromDepth (central differences, cross product, normalise).
inline ImageBuffer NormalFromDepthBackward(const ImageBuffer& depth, const CameraView& view,
                                           const ImageBuffer& d_normals) {
    Require(depth.channels == 1, "depth map must be single channel");
    Require(d_normals.channels == 3, "normal gradient must be 3-channel");
    Require(depth.width == view.width && depth.height == view.height,
            "depth map does not match the view");
    Require(d_normals.width == depth.width && d_normals.height == depth.height,
            "normal gradient resolution mismatch");
    ImageBuffer d_depth(depth.width, depth.height, 1, ImageSemantics::kDepth, 0.0);
    const auto point_at = [&](int x, int y) {
        return view.UnprojectCamera(Vec2(x + 0.5, y + 0.5), depth.At(x, y));
    };
    const auto depth_direction = [&](int x, int y) -> Vec3 {
        return view.UnprojectCamera(Vec2(x + 0.5, y + 0.5), 1.0) -
               view.UnprojectCamera(Vec2(x + 0.5, y + 0.5), 0.0);
    };
    for (int y = 1; y < depth.height - 1; ++y) {
        for (int x = 1; x < depth.width - 1; ++x) {
            const bool valid = IsValidDepth(depth.At(x, y), view) &&
                               IsValidDepth(depth.At(x - 1, y), view) &&
                               IsValidDepth(depth.At(x + 1, y), view) &&
                               IsValidDepth(depth.At(x, y - 1), view) &&
                               IsValidDepth(depth.At(x, y + 1), view);
            if (!valid) continue;
            const Vec3 tx = point_at(x + 1, y) - point_at(x - 1, y);
            const Vec3 ty = point_at(x, y + 1) - point_at(x, y - 1);
            const Vec3 cr = ty.cross(tx);
            const double n = cr.norm();
            if (n < 1e-14) continue;
            const Vec3 unit = cr / n;
            const Vec3 g(d_normals.At(x, y, 0), d_normals.At(x, y, 1), d_normals.At(x, y, 2));
            const Vec3 d_cr = (g - unit * unit.dot(g)) / n;
            const Vec3 d_tx = d_cr.cross(ty);
            const Vec3 d_ty = tx.cross(d_cr);
            d_depth.At(x + 1, y) += d_tx.dot(depth_direction(x + 1, y));
            d_depth.At(x - 1, y) -= d_tx.dot(depth_direction(x - 1, y));
            d_depth.At(x, y + 1) += d_ty.dot(depth_direction(x, y + 1));
            d_depth.At(x, y - 1) -= d_ty.dot(depth_direction(x, y - 1));
        }
    }
    return d_depth;
}

namespace refinedetail {

// d(pixel)/d(world point) transposed applied to a pixel gradient.
inline Vec3 ProjectBackward(const CameraView& view, const Vec3& p_world, const Vec2& d_pixel) {
    const Vec3 p_cam = view.ToCamera(p_world);
    Vec3 d_cam;
    if (view.model == CameraModel::kPerspective) {
        const double inv_z = 1.0 / p_cam.z();
        d_cam = Vec3(view.fx * inv_z * d_pixel.x(), view.fy * inv_z * d_pixel.y(),
                     -(view.fx * p_cam.x() * d_pixel.x() + view.fy * p_cam.y() * d_pixel.y()) *
                         inv_z * inv_z);
    } else {
        d_cam = Vec3(view.scale * d_pixel.x(), view.scale * d_pixel.y(), 0.0);
    }
    return view.rotation.transpose() * d_cam;
}

}  // namespace refinedetail

// ---------------------------------------------------------------------------
// One refinement iteration

struct RefineIteration {
    double l_front = 0.0;
    double l_side = 0.0;
    double l_normal = 0.0;
    double l_keypoint = 0.0;
    double total = 0.0;
    BodyGrad grad;
};

// Renders the template into every ring view and accumulates the weighted
// losses and their parameter gradient. The side masks are constants supplied
// by the caller; pass none to run the front-only ablation.
inline RefineIteration ComputeRefineLosses(const BodyTemplate& tpl, const BodyParams& params,
                                           const ImageBuffer& front_mask, const CameraRig& ring,
                                           const std::vector<ImageBuffer>& side_masks,
                                           const RefineProviders& providers,
                                           const RefineConfig& config) {
    config.Validate();
    const int view_count = static_cast<int>(ring.views.size());
    Require(view_count >= 1, "refine needs at least the front view");
    Require(side_masks.empty() ||
                static_cast<int>(side_masks.size()) == view_count - 1,
            "refine: need one side mask per non-front view");
    Require(front_mask.channels == 1, "refine: front mask must be 1-channel");
    Require(front_mask.width == ring.views[0].width && front_mask.height == ring.views[0].height,
            "refine: front mask resolution does not match the front view");

    const GaussianCloud template_cloud = SplatTemplate(tpl, params, config.splat_sigma);
    const int side_count = view_count - 1;
    const int normal_views = static_cast<int>(providers.normals.size());

    RefineIteration it;
    std::vector<Vec3> d_vertices(template_cloud.Size(), Vec3::Zero());
    for (int v = 0; v < view_count; ++v) {
        const CameraView& view = ring.views[static_cast<std::size_t>(v)];
        const bool has_mask_target = v == 0 || !side_masks.empty();
        const auto normal_it = providers.normals.find(v);
        const bool has_normal_target = normal_it != providers.normals.end();
        if (!has_mask_target && !has_normal_target) continue;

        RenderContext ctx(template_cloud, view);
        ctx.Forward();
        const RenderOutput& out = ctx.Output();
        RenderUpstream upstream;

        if (has_mask_target) {
            const ImageBuffer& target =
                v == 0 ? front_mask : side_masks[static_cast<std::size_t>(v - 1)];
            const MaskLoss mask = MaskMseLoss(out.alpha, target);
            const double weight =
                v == 0 ? config.lambda_front
                       : config.lambda_side / static_cast<double>(side_count);
            if (v == 0) {
                it.l_front = mask.value;
            } else {
                it.l_side += mask.value / static_cast<double>(side_count);
            }
            upstream.d_alpha = mask.d_mask;
            for (double& g : upstream.d_alpha.data) g *= weight;
        }

        if (has_normal_target) {
            const ImageBuffer rendered = RenderNormalFromDepth(out.depth, view);
            const ImageBuffer& provided = normal_it->second;
            ImageBuffer foreground(provided.width, provided.height, 1, ImageSemantics::kMask, 0.0);
            for (int y = 0; y < provided.height; ++y) {
                for (int x = 0; x < provided.width; ++x) {
                    const double norm2 = provided.At(x, y, 0) * provided.At(x, y, 0) +
                                         provided.At(x, y, 1) * provided.At(x, y, 1) +
                                         provided.At(x, y, 2) * provided.At(x, y, 2);
                    foreground.At(x, y) = norm2 > 0.25 ? 1.0 : 0.0;
                }
            }
            NormalLoss normal = NormalCosineLoss(rendered, provided, foreground);
            it.l_normal += normal.value / static_cast<double>(normal_views);
            const double weight = config.lambda_normal / static_cast<double>(normal_views);
            for (double& g : normal.d_normals.data) g *= weight;
            upstream.d_depth = NormalFromDepthBackward(out.depth, view, normal.d_normals);
        }

        const RenderGradients grads = ctx.Backward(upstream);
        for (std::size_t i = 0; i < d_vertices.size(); ++i) d_vertices[i] += grads.d_center[i];
    }

    std::vector<Vec3> d_joints;
    if (config.lambda_keypoint > 0.0 && !providers.keypoints.empty()) {
        const std::vector<Vec3> joints = Keypoints3d(tpl, params);
        std::vector<Vec2> projected(joints.size());
        for (std::size_t k = 0; k < joints.size(); ++k) {
            projected[k] = ring.views[0].Project(joints[k]);
        }
        const KeypointLoss kp =
            KeypointMseLoss(projected, providers.keypoints, providers.keypoint_confidence);
        it.l_keypoint = kp.value;
        d_joints.assign(tpl.JointCount(), Vec3::Zero());
        for (std::size_t k = 0; k < joints.size(); ++k) {
            d_joints[static_cast<std::size_t>(tpl.keypoints[k])] +=
                config.lambda_keypoint *
                refinedetail::ProjectBackward(ring.views[0], joints[k], kp.d_points[k]);
        }
    }

    it.total = config.lambda_front * it.l_front + config.lambda_side * it.l_side +
               config.lambda_normal * it.l_normal + config.lambda_keypoint * it.l_keypoint;
    it.grad = PoseBodyBackward(tpl, params, d_vertices, d_joints);
    return it;
}

// ---------------------------------------------------------------------------
// Optimisation loop

inline RefineResult RefineBody(const BodyTemplate& tpl, const BodyParams& initial,
                               const ImageBuffer& front_mask, const CameraRig& ring,
                               const CloudPredictor& predictor, const RefineConfig& config,
                               const RefineProviders& providers = {},
                               const std::vector<Vec3>* gt_joints = nullptr) {
    config.Validate();
    ValidateParams(tpl, initial);
    Require(!ring.views.empty(), "refine needs at least the front view");
    Require(predictor != nullptr, "refine needs a cloud predictor");

    RefineState state;
    state.params = initial;
    const int dim = BodyParamCount(tpl.JointCount(), tpl.ShapeCount());
    state.adam_m = Eigen::VectorXd::Zero(dim);
    state.adam_v = Eigen::VectorXd::Zero(dim);

    const bool side_views = config.SideViewsEnabled();
    std::vector<ImageBuffer> side_masks;
    const auto refresh_cloud = [&](const Mesh* posed) {
        try {
            state.cloud = predictor(posed);
        } catch (const std::exception& e) {
            throw std::runtime_error("refine: predictor failed at iteration " +
                                     std::to_string(state.iteration) + ": " + e.what());
        }
        side_masks.clear();
        if (!side_views) return;
        side_masks.reserve(ring.views.size() - 1);
        for (std::size_t v = 1; v < ring.views.size(); ++v) {
            side_masks.push_back(RasterizeTiled(state.cloud, ring.views[v]).alpha);
        }
    };

    // The first prediction runs without the body prior; refreshes feed the
    // current posed body back in.
    refresh_cloud(nullptr);
    Mesh posed;
    for (state.iteration = 0; state.iteration < config.iterations; ++state.iteration) {
        if (side_views && state.iteration > 0 &&
            state.iteration % config.gs_update_every == 0) {
            posed = PosedMesh(tpl, state.params);
            refresh_cloud(&posed);
        }

        const RefineIteration it = ComputeRefineLosses(tpl, state.params, front_mask, ring,
                                                       side_masks, providers, config);
        RefineTraceRow row;
        row.iteration = state.iteration;
        row.l_front = it.l_front;
        row.l_side = it.l_side;
        row.l_normal = it.l_normal;
        row.l_keypoint = it.l_keypoint;
        row.total = it.total;
        if (gt_joints != nullptr) {
            const std::vector<Vec3> joints = Keypoints3d(tpl, state.params);
            Require(joints.size() == gt_joints->size(), "refine: keypoint count mismatch");
            double err = 0.0;
            for (std::size_t k = 0; k < joints.size(); ++k) {
                err += (joints[k] - (*gt_joints)[k]).norm();
            }
            row.mpjpe = err / static_cast<double>(joints.size());
        }
        state.trace.push_back(row);

        Eigen::VectorXd x = FlattenParams(state.params);
        const Eigen::VectorXd g = it.grad.Flatten();
        const double t = static_cast<double>(state.iteration + 1);
        state.adam_m = config.beta1 * state.adam_m + (1.0 - config.beta1) * g;
        state.adam_v =
            config.beta2 * state.adam_v + (1.0 - config.beta2) * g.cwiseProduct(g).eval();
        const double bias_m = 1.0 - std::pow(config.beta1, t);
        const double bias_v = 1.0 - std::pow(config.beta2, t);
        for (int i = 0; i < dim; ++i) {
            const double m_hat = state.adam_m[i] / bias_m;
            const double v_hat = state.adam_v[i] / bias_v;
            x[i] -= config.step * m_hat / (std::sqrt(v_hat) + 1e-8);
        }
        state.params = UnflattenParams(tpl.JointCount(), tpl.ShapeCount(), x);
        ValidateParams(tpl, state.params);
    }

    RefineResult result;
    result.params = state.params;
    result.cloud = state.cloud;
    result.trace = state.trace;
    return result;
}

// ---------------------------------------------------------------------------
// Trace I/O

// CSV of the loss trace; the mpjpe column appears only when ground truth was
// supplied to the run.
inline void SaveRefineTrace(const std::string& path, const std::vector<RefineTraceRow>& trace) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const bool with_mpjpe =
        !trace.empty() && std::all_of(trace.begin(), trace.end(),
                                      [](const RefineTraceRow& r) { return r.mpjpe >= 0.0; });
    out << "iteration,l_front,l_side,l_normal,total";
    if (with_mpjpe) out << ",mpjpe";
    out << "\n";
    out.precision(17);
    for (const auto& row : trace) {
        out << row.iteration << "," << row.l_front << "," << row.l_side << "," << row.l_normal
            << "," << row.total;
        if (with_mpjpe) out << "," << row.mpjpe;
        out << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace gf
