// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0
//
// Pixel-aligned Gaussian parameterization. Input images become 9-channel
// feature maps (color plus a Plucker ray embedding), predictors emit raw
// 14-channel Gaussian feature maps at half the input resolution, and decode
// turns those into clouds with one Gaussian per output pixel. A deterministic
// baseline predictor keeps the whole pipeline runnable without learned
// weights: it lifts foreground pixels onto the posed body surface (or the
// box-midpoint depth along the pixel ray) and copies the pixel color.
//
// Raw channel layout, per pixel: xyz (3), log-scale (3), quaternion wxyz (4),
// logit-opacity (1), color logits (3). Decode activations are fixed here:
// box-bounded sigmoid for centers, clamped exp for scales, normalization with
// identity fallback for quaternions, sigmoid for opacity and color.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gaussforge/bvh.hpp"
#include "gaussforge/camera.hpp"
#include "gaussforge/common.hpp"
#include "gaussforge/gaussian.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/mesh.hpp"
#include "gaussforge/parallel.hpp"

namespace gf {

inline constexpr int kInputFeatureChannels = 9;
inline constexpr int kGaussianFeatureChannels = 14;
inline constexpr int kInputResolution = 512;
inline constexpr int kGaussianMapResolution = 256;

inline constexpr double kMinGaussianScale = 1e-4;
inline constexpr double kBaselineOpacity = 0.95;
inline constexpr double kBackgroundOpacity = 1e-4;

// Per-pixel network input: color, ray moment o x d, ray direction d, all in
// world coordinates. The foreground mask rides along as a separate plane so
// predictors can tell subject from background without stealing a channel.
struct InputFeatureMap {
    ImageBuffer channels;  // 9 channels
    ImageBuffer alpha;     // 1 channel

    int Width() const { return channels.width; }
    int Height() const { return channels.height; }

    void Validate() const {
        Require(channels.channels == kInputFeatureChannels,
                "input feature map must have 9 channels");
        Require(alpha.channels == 1 && alpha.width == channels.width &&
                    alpha.height == channels.height,
                "input feature alpha plane must match resolution");
        for (int y = 0; y < channels.height; ++y)
            for (int x = 0; x < channels.width; ++x) {
                const double n2 = channels.At(x, y, 6) * channels.At(x, y, 6) +
                                  channels.At(x, y, 7) * channels.At(x, y, 7) +
                                  channels.At(x, y, 8) * channels.At(x, y, 8);
                Require(std::abs(n2 - 1.0) < 1e-6, "ray direction channels must be unit norm");
            }
    }
};

// Raw (pre-activation) per-pixel Gaussian features for one view.
struct GaussianFeatureMap {
    ImageBuffer channels;  // 14 channels
    uint16_t view_id = 0;

    int Width() const { return channels.width; }
    int Height() const { return channels.height; }
    int PixelCount() const { return channels.width * channels.height; }

    void Validate() const {
        Require(channels.channels == kGaussianFeatureChannels,
                "gaussian feature map must have 14 channels");
    }
};

// Predictor contract: one raw feature map per input view. The optional mesh
// is the posed body template; learned predictors may ignore it.
using Predictor = std::function<std::vector<GaussianFeatureMap>(
    const std::vector<InputFeatureMap>&, const std::vector<CameraView>&, const Mesh*)>;

inline InputFeatureMap BuildInputFeatures(const ImageBuffer& image, const CameraView& view) {
    view.Validate();
    Require(image.width == view.width && image.height == view.height,
            "image resolution does not match camera");
    Require(image.channels == 3 || image.channels == 4,
            "input image must be RGB or RGBA");

    InputFeatureMap map;
    map.channels = ImageBuffer(image.width, image.height, kInputFeatureChannels,
                               ImageSemantics::kFeature);
    map.alpha = ImageBuffer(image.width, image.height, 1, ImageSemantics::kAlpha);
    ParallelFor(static_cast<size_t>(image.height), 16, [&](size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < image.width; ++x) {
            const Ray ray = view.PixelRay(x + 0.5, y + 0.5);
            const Vec3 moment = ray.origin.cross(ray.direction);
            for (int c = 0; c < 3; ++c) {
                map.channels.At(x, y, c) = image.At(x, y, c);
                map.channels.At(x, y, 3 + c) = moment[c];
                map.channels.At(x, y, 6 + c) = ray.direction[c];
            }
            map.alpha.At(x, y, 0) = image.channels == 4 ? image.At(x, y, 3) : 1.0;
        }
    });
    return map;
}

namespace splatdetail {

inline double MaxLogScale(const BoundingBox& box) {
    return std::log(0.5 * box.Extent().norm());
}

// Shortest-arc rotation taking the local z axis onto n (unit). Roll about n
// is irrelevant because the tangential scales match.
inline Vec4 ZAxisToNormal(const Vec3& n) {
    const double w = 1.0 + n.z();
    if (w < 1e-9) return Vec4(0.0, 1.0, 0.0, 0.0);
    const Vec4 q(w, -n.y(), n.x(), 0.0);
    return q / q.norm();
}

inline Gaussian DecodePixel(const double raw[kGaussianFeatureChannels], const BoundingBox& box) {
    Gaussian g;
    const Vec3 extent = box.Extent();
    for (int a = 0; a < 3; ++a) g.center[a] = box.min[a] + Sigmoid(raw[a]) * extent[a];
    const double max_log = MaxLogScale(box);
    const double min_log = std::log(kMinGaussianScale);
    for (int a = 0; a < 3; ++a)
        g.log_scale[a] = std::min(std::max(raw[3 + a], min_log), max_log);
    Vec4 q(raw[6], raw[7], raw[8], raw[9]);
    const double norm = q.norm();
    g.rotation = norm < 1e-8 ? Vec4(1.0, 0.0, 0.0, 0.0) : Vec4(q / norm);
    g.logit_opacity = raw[10];
    for (int a = 0; a < 3; ++a) g.color[a] = Sigmoid(raw[11 + a]);
    return g;
}

}  // namespace splatdetail

// One Gaussian per pixel in row-major order, tagged with the map's view id.
inline GaussianCloud DecodeGaussians(const GaussianFeatureMap& features, const BoundingBox& box) {
    features.Validate();
    for (double v : features.channels.data)
        Require(std::isfinite(v), "gaussian feature map contains non-finite values");

    GaussianCloud cloud;
    cloud.gaussians.resize(static_cast<size_t>(features.PixelCount()));
    cloud.source_view.assign(static_cast<size_t>(features.PixelCount()), features.view_id);
    ParallelFor(static_cast<size_t>(features.Height()), 16, [&](size_t row) {
        const int y = static_cast<int>(row);
        double raw[kGaussianFeatureChannels];
        for (int x = 0; x < features.Width(); ++x) {
            for (int c = 0; c < kGaussianFeatureChannels; ++c)
                raw[c] = features.channels.At(x, y, c);
            cloud.gaussians[static_cast<size_t>(y) * features.Width() + x] =
                splatdetail::DecodePixel(raw, box);
        }
    });
    return cloud;
}

// Inverse activations of DecodeGaussians. Centers must lie strictly inside
// the box for the logit to exist; boundary centers are nudged inside by the
// sigmoid's numerical range.
inline GaussianFeatureMap EncodeGaussians(const GaussianCloud& cloud, int width, int height,
                                          const BoundingBox& box, uint16_t view_id = 0) {
    Require(width > 0 && height > 0, "encode needs a positive resolution");
    Require(cloud.Size() == static_cast<size_t>(width) * height,
            "cloud size does not match the requested map resolution");
    GaussianFeatureMap map;
    map.channels = ImageBuffer(width, height, kGaussianFeatureChannels, ImageSemantics::kFeature);
    map.view_id = view_id;
    const Vec3 extent = box.Extent();
    ParallelFor(static_cast<size_t>(height), 16, [&](size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < width; ++x) {
            const Gaussian& g = cloud.gaussians[static_cast<size_t>(y) * width + x];
            for (int a = 0; a < 3; ++a) {
                const double t = (g.center[a] - box.min[a]) / extent[a];
                map.channels.At(x, y, a) = Logit(t, 1e-9);
                map.channels.At(x, y, 3 + a) = g.log_scale[a];
                map.channels.At(x, y, 11 + a) = Logit(g.color[a], 1e-9);
            }
            for (int a = 0; a < 4; ++a) map.channels.At(x, y, 6 + a) = g.rotation[a];
            map.channels.At(x, y, 10) = g.logit_opacity;
        }
    });
    return map;
}

// Applies per-Gaussian residual deltas, one 14-channel row per Gaussian.
// Center deltas are world-space offsets clamped to the box; every other
// attribute is re-activated from (raw + delta).
inline GaussianCloud ApplyResiduals(const GaussianCloud& cloud, const Eigen::MatrixXd& deltas,
                                    const BoundingBox& box) {
    Require(static_cast<size_t>(deltas.rows()) == cloud.Size(),
            "residual rows must match gaussian count");
    Require(deltas.cols() == kGaussianFeatureChannels, "residuals must have 14 channels");
    Require(deltas.allFinite(), "residuals contain non-finite values");

    GaussianCloud out = cloud;
    const double max_log = splatdetail::MaxLogScale(box);
    const double min_log = std::log(kMinGaussianScale);
    ParallelFor(cloud.Size(), 1024, [&](size_t i) {
        const auto d = deltas.row(static_cast<int>(i));
        Gaussian& g = out.gaussians[i];
        for (int a = 0; a < 3; ++a) g.center[a] += d[a];
        g.center = box.Clamp(g.center);
        for (int a = 0; a < 3; ++a)
            g.log_scale[a] = std::min(std::max(g.log_scale[a] + d[3 + a], min_log), max_log);
        Vec4 q = g.rotation + Vec4(d[6], d[7], d[8], d[9]);
        const double norm = q.norm();
        g.rotation = norm < 1e-8 ? Vec4(1.0, 0.0, 0.0, 0.0) : Vec4(q / norm);
        g.logit_opacity += d[10];
        for (int a = 0; a < 3; ++a) g.color[a] = Sigmoid(Logit(g.color[a], 1e-9) + d[11 + a]);
    });
    return out;
}

inline GaussianCloud ApplyResiduals(const GaussianCloud& cloud, const GaussianFeatureMap& deltas,
                                    const BoundingBox& box) {
    deltas.Validate();
    Eigen::MatrixXd rows(deltas.PixelCount(), kGaussianFeatureChannels);
    for (int y = 0; y < deltas.Height(); ++y)
        for (int x = 0; x < deltas.Width(); ++x)
            for (int c = 0; c < kGaussianFeatureChannels; ++c)
                rows(y * deltas.Width() + x, c) = deltas.channels.At(x, y, c);
    return ApplyResiduals(cloud, rows, box);
}

// Deterministic stand-in for a learned predictor. Output maps are half the
// input resolution; output pixel (i, j) covers the 2x2 input block, with the
// ray taken at the block center. Foreground pixels (block-mean alpha >= 0.5)
// are lifted to the first ray hit on the posed mesh when one is provided,
// otherwise to the midpoint of the ray's span through the bounding box.
//
// Splats on the mesh are surface-aligned disks: 1.5x the input-pixel
// footprint tangentially and 0.2x along the hit normal. Flat splats keep the
// silhouette sharp where an isotropic ball would smear 2 sigma of color past
// the contour; off-mesh fallbacks stay isotropic at the tangential scale.
inline std::vector<GaussianFeatureMap> BaselinePredictor(
    const std::vector<InputFeatureMap>& inputs, const std::vector<CameraView>& views,
    const Mesh* body = nullptr, const BoundingBox& box = BoundingBox{}) {
    Require(!inputs.empty(), "baseline predictor needs at least one view");
    Require(inputs.size() == views.size(), "input and view counts differ");

    std::unique_ptr<TriangleBvh> bvh;
    if (body && !body->faces.empty()) bvh = std::make_unique<TriangleBvh>(*body);

    std::vector<GaussianFeatureMap> maps(inputs.size());
    for (size_t v = 0; v < inputs.size(); ++v) {
        const InputFeatureMap& in = inputs[v];
        const CameraView& view = views[v];
        Require(in.channels.channels == kInputFeatureChannels,
                "input feature map must have 9 channels");
        Require(in.Width() == view.width && in.Height() == view.height,
                "input feature map resolution does not match camera");
        Require(in.Width() % 2 == 0 && in.Height() % 2 == 0,
                "baseline predictor needs even input resolution");

        const CameraView half = view.Scaled(0.5);
        const int ow = half.width, oh = half.height;
        GaussianFeatureMap& map = maps[v];
        map.channels = ImageBuffer(ow, oh, kGaussianFeatureChannels, ImageSemantics::kFeature);
        map.view_id = static_cast<uint16_t>(v);

        const Vec3 extent = box.Extent();
        const double max_log = splatdetail::MaxLogScale(box);
        const double min_log = std::log(kMinGaussianScale);

        ParallelFor(static_cast<size_t>(oh), 8, [&](size_t row) {
            const int j = static_cast<int>(row);
            for (int i = 0; i < ow; ++i) {
                double alpha = 0.0;
                Vec3 color = Vec3::Zero();
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        const int sx = 2 * i + dx, sy = 2 * j + dy;
                        alpha += in.alpha.At(sx, sy, 0);
                        for (int c = 0; c < 3; ++c) color[c] += in.channels.At(sx, sy, c);
                    }
                alpha *= 0.25;
                color *= 0.25;
                const bool foreground = alpha >= 0.5;

                const Ray ray = half.PixelRay(i + 0.5, j + 0.5);
                double t = -1.0;
                Vec3 hit_normal = Vec3::Zero();
                if (foreground && bvh) {
                    const RayHit hit = bvh->Raycast(ray.origin, ray.direction, 1e-8);
                    if (hit.hit) {
                        t = hit.t;
                        hit_normal = FaceNormal(*body, hit.face);
                    }
                }
                if (t < 0.0) {
                    // Midpoint of the ray's span through the box; rays that
                    // miss it fall back to the closest approach to the center.
                    double t0 = -std::numeric_limits<double>::infinity();
                    double t1 = std::numeric_limits<double>::infinity();
                    bool miss = false;
                    for (int a = 0; a < 3; ++a) {
                        if (std::abs(ray.direction[a]) < 1e-12) {
                            if (ray.origin[a] < box.min[a] || ray.origin[a] > box.max[a])
                                miss = true;
                            continue;
                        }
                        double lo = (box.min[a] - ray.origin[a]) / ray.direction[a];
                        double hi = (box.max[a] - ray.origin[a]) / ray.direction[a];
                        if (lo > hi) std::swap(lo, hi);
                        t0 = std::max(t0, lo);
                        t1 = std::min(t1, hi);
                    }
                    if (miss || t1 < t0)
                        t = (box.Center() - ray.origin).dot(ray.direction);
                    else
                        t = 0.5 * (t0 + t1);
                }
                const Vec3 center = box.Clamp(ray.origin + t * ray.direction);

                const double depth =
                    (view.rotation * center + view.translation).z();
                const double footprint = view.model == CameraModel::kPerspective
                                             ? std::max(depth, view.near) / view.fx
                                             : 1.0 / view.scale;
                const double log_tangent =
                    std::min(std::max(std::log(1.5 * footprint), min_log), max_log);
                const double log_thin =
                    std::min(std::max(std::log(0.2 * footprint), min_log), max_log);
                const bool on_surface = hit_normal.squaredNorm() > 0.25;
                const Vec4 quat =
                    on_surface ? splatdetail::ZAxisToNormal(hit_normal) : Vec4(1, 0, 0, 0);

                double raw[kGaussianFeatureChannels];
                for (int a = 0; a < 3; ++a) {
                    const double u = (center[a] - box.min[a]) / extent[a];
                    raw[a] = Logit(std::min(std::max(u, 1e-6), 1.0 - 1e-6), 1e-9);
                    raw[3 + a] = log_tangent;
                    raw[11 + a] = Logit(std::min(std::max(color[a], 1e-6), 1.0 - 1e-6), 1e-9);
                }
                if (on_surface) raw[5] = log_thin;
                for (int a = 0; a < 4; ++a) raw[6 + a] = quat[a];
                raw[10] = Logit(foreground ? kBaselineOpacity : kBackgroundOpacity, 1e-9);
                for (int c = 0; c < kGaussianFeatureChannels; ++c)
                    map.channels.At(i, j, c) = raw[c];
            }
        });
    }
    return maps;
}

inline Predictor MakeBaselinePredictor(const BoundingBox& box = BoundingBox{}) {
    return [box](const std::vector<InputFeatureMap>& inputs,
                 const std::vector<CameraView>& views,
                 const Mesh* body) { return BaselinePredictor(inputs, views, body, box); };
}

inline void SaveGaussianFeatureMap(const std::string& path, const GaussianFeatureMap& map) {
    map.Validate();
    SaveRawImage(path, map.channels);
}

inline GaussianFeatureMap LoadGaussianFeatureMap(const std::string& path, uint16_t view_id = 0) {
    GaussianFeatureMap map;
    map.channels = LoadRawImage(path);
    map.view_id = view_id;
    if (map.channels.channels != kGaussianFeatureChannels)
        throw IoError("expected a 14-channel gaussian feature map: " + path);
    return map;
}

}  // namespace gf
