// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "gaussforge/camera.hpp"
#include "gaussforge/gaussian.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/parallel.hpp"

namespace gf {

// Rasterization constants. Both rasterizers and the backward pass share the
// same culling and clamping rules; changing one of these changes all of them
// together, which is what keeps the reference and tiled paths bit-identical.
constexpr double kCovarianceDilation = 0.3;     // pixels^2, added to diag(cov2d)
constexpr double kAlphaCutoff = 1.0 / 255.0;    // contributions below this are dropped
constexpr double kAlphaClamp = 0.999;           // per-splat alpha ceiling
constexpr double kFootprintSigmas = 3.0;        // influence radius in standard deviations
constexpr double kDepthAlphaThreshold = 0.5;    // min alpha for a valid depth sample
constexpr double kDepthSentinelFactor = 10.0;   // empty depth = far * this
constexpr int kTileSize = 16;

inline double DepthSentinel(const CameraView& view) {
    return view.far * kDepthSentinelFactor;
}

inline bool IsValidDepth(double depth, const CameraView& view) {
    return depth < view.far * (0.5 * kDepthSentinelFactor);
}

// A Gaussian prepared for rasterization in one view.
struct SplatProjection {
    int32_t index = -1;       // position in the source cloud
    Vec2 mean = Vec2::Zero();  // pixel coordinates
    double depth = 0.0;        // camera-space z
    Mat2 cov = Mat2::Zero();   // dilated 2d covariance
    Mat2 cov_inv = Mat2::Zero();
    double opacity = 0.0;      // activated, pre-clamp
    Vec3 color = Vec3::Zero();
    Vec2 rect_min = Vec2::Zero();  // conservative pixel-center bounds
    Vec2 rect_max = Vec2::Zero();
    bool culled = true;
};

// EWA projection of one Gaussian. Culls splats behind the near plane and
// splats whose 3 sigma footprint misses the image.
inline SplatProjection ProjectGaussian(const Gaussian& g, const CameraView& view,
                                       int32_t index = -1) {
    SplatProjection sp;
    sp.index = index;
    const Vec3 t = view.ToCamera(g.center);
    if (!(t.z() > view.near)) return sp;

    Eigen::Matrix<double, 2, 3> jac;
    if (view.model == CameraModel::kPerspective) {
        const double iz = 1.0 / t.z();
        jac << view.fx * iz, 0, -view.fx * t.x() * iz * iz,
               0, view.fy * iz, -view.fy * t.y() * iz * iz;
        sp.mean = Vec2(view.fx * t.x() * iz + view.cx, view.fy * t.y() * iz + view.cy);
    } else {
        jac << view.scale, 0, 0, 0, view.scale, 0;
        sp.mean = Vec2(view.scale * t.x() + view.cx, view.scale * t.y() + view.cy);
    }
    sp.depth = t.z();

    const Mat3 cov_world = CovarianceFromScaleRotation(g.Scale(), g.rotation);
    const Mat3 cov_cam = view.rotation * cov_world * view.rotation.transpose();
    sp.cov = jac * cov_cam * jac.transpose();
    sp.cov(0, 0) += kCovarianceDilation;
    sp.cov(1, 1) += kCovarianceDilation;

    const double det = sp.cov(0, 0) * sp.cov(1, 1) - sp.cov(0, 1) * sp.cov(1, 0);
    if (!(det > 0.0) || !std::isfinite(det)) return sp;
    sp.cov_inv << sp.cov(1, 1) / det, -sp.cov(0, 1) / det,
                  -sp.cov(1, 0) / det, sp.cov(0, 0) / det;

    const double mid = 0.5 * (sp.cov(0, 0) + sp.cov(1, 1));
    const double lambda_max =
            mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = kFootprintSigmas * std::sqrt(lambda_max);
    sp.rect_min = sp.mean - Vec2(radius, radius);
    sp.rect_max = sp.mean + Vec2(radius, radius);
    if (sp.rect_max.x() < 0.5 || sp.rect_min.x() > view.width - 0.5 ||
        sp.rect_max.y() < 0.5 || sp.rect_min.y() > view.height - 0.5) {
        return sp;
    }

    sp.opacity = g.Opacity();
    sp.color = g.color;
    sp.culled = false;
    return sp;
}

struct RenderOutput {
    ImageBuffer color;       // 3ch, black background
    ImageBuffer alpha;       // 1 - transmittance
    ImageBuffer depth;       // alpha-weighted mean splat depth, sentinel when thin
    ImageBuffer weight_sum;  // accumulated blend weights (conservation check)
};

namespace renderdetail {

// Projects and depth-sorts a cloud; ties break on cloud index.
inline std::vector<SplatProjection> PrepareSplats(const GaussianCloud& cloud,
                                                  const CameraView& view) {
    std::vector<SplatProjection> splats(cloud.Size());
    ParallelFor(static_cast<int64_t>(cloud.Size()), 1024, [&](int64_t i) {
        splats[i] = ProjectGaussian(cloud.gaussians[i], view, static_cast<int32_t>(i));
    });
    std::vector<SplatProjection> retained;
    retained.reserve(splats.size());
    for (auto& sp : splats) {
        if (!sp.culled) retained.push_back(sp);
    }
    std::sort(retained.begin(), retained.end(),
              [](const SplatProjection& a, const SplatProjection& b) {
                  return a.depth != b.depth ? a.depth < b.depth : a.index < b.index;
              });
    return retained;
}

// Front-to-back blend of one pixel. Candidates must already be depth-sorted;
// each is gated by its footprint rectangle, the 3 sigma ellipse and the alpha
// cutoff. No early termination: the full list contributes, which keeps the
// result independent of how candidates were bucketed.
template <class Emit>
inline void BlendPixel(const Vec2& px, const SplatProjection* const* candidates, int count,
                       Vec3* color, double* alpha, double* depth_num, double* weight,
                       double* transmittance, Emit&& emit) {
    Vec3 c = Vec3::Zero();
    double t = 1.0;
    double wsum = 0.0;
    double dsum = 0.0;
    for (int k = 0; k < count; ++k) {
        const SplatProjection& sp = *candidates[k];
        if (px.x() < sp.rect_min.x() || px.x() > sp.rect_max.x() ||
            px.y() < sp.rect_min.y() || px.y() > sp.rect_max.y()) {
            continue;
        }
        const Vec2 d = px - sp.mean;
        const double power = 0.5 * (d.x() * (sp.cov_inv(0, 0) * d.x() + sp.cov_inv(0, 1) * d.y()) +
                                    d.y() * (sp.cov_inv(1, 0) * d.x() + sp.cov_inv(1, 1) * d.y()));
        if (power > 0.5 * kFootprintSigmas * kFootprintSigmas) continue;
        const double alpha_raw = sp.opacity * std::exp(-power);
        if (alpha_raw < kAlphaCutoff) continue;
        const double a = std::min(alpha_raw, kAlphaClamp);
        const double w = a * t;
        emit(k, a, t);
        c += w * sp.color;
        wsum += w;
        dsum += w * sp.depth;
        t *= 1.0 - a;
    }
    *color = c;
    *alpha = 1.0 - t;
    *depth_num = dsum;
    *weight = wsum;
    *transmittance = t;
}

inline void NoEmit(int, double, double) {}

struct TileGrid {
    int tiles_x = 0;
    int tiles_y = 0;
    // Per tile: pointers into the sorted splat list, still in sorted order.
    std::vector<std::vector<const SplatProjection*>> bins;
};

inline TileGrid BuildTileGrid(const std::vector<SplatProjection>& splats, int width,
                              int height) {
    TileGrid grid;
    grid.tiles_x = (width + kTileSize - 1) / kTileSize;
    grid.tiles_y = (height + kTileSize - 1) / kTileSize;
    grid.bins.resize(static_cast<size_t>(grid.tiles_x) * grid.tiles_y);
    for (const SplatProjection& sp : splats) {
        // Tile (tx, ty) owns pixel centers in [16 tx + 0.5, 16 tx + 15.5].
        const int tx0 = std::max(0, static_cast<int>(std::floor((sp.rect_min.x() - 0.5) /
                                                                kTileSize)));
        const int ty0 = std::max(0, static_cast<int>(std::floor((sp.rect_min.y() - 0.5) /
                                                                kTileSize)));
        const int tx1 = std::min(grid.tiles_x - 1,
                                 static_cast<int>(std::floor((sp.rect_max.x() - 0.5) /
                                                             kTileSize)));
        const int ty1 = std::min(grid.tiles_y - 1,
                                 static_cast<int>(std::floor((sp.rect_max.y() - 0.5) /
                                                             kTileSize)));
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                grid.bins[static_cast<size_t>(ty) * grid.tiles_x + tx].push_back(&sp);
            }
        }
    }
    return grid;
}

inline RenderOutput RasterizeGrid(const TileGrid& grid, const CameraView& view) {
    const int w = view.width, h = view.height;
    RenderOutput out{ImageBuffer(w, h, 3, ImageSemantics::kColor),
                     ImageBuffer(w, h, 1, ImageSemantics::kAlpha),
                     ImageBuffer(w, h, 1, ImageSemantics::kDepth, DepthSentinel(view)),
                     ImageBuffer(w, h, 1, ImageSemantics::kFeature)};
    ParallelFor(static_cast<int64_t>(grid.bins.size()), 1, [&](int64_t tile) {
        const auto& bin = grid.bins[tile];
        if (bin.empty()) return;
        const int tx = static_cast<int>(tile) % grid.tiles_x;
        const int ty = static_cast<int>(tile) / grid.tiles_x;
        const int x1 = std::min(w, (tx + 1) * kTileSize);
        const int y1 = std::min(h, (ty + 1) * kTileSize);
        for (int y = ty * kTileSize; y < y1; ++y) {
            for (int x = tx * kTileSize; x < x1; ++x) {
                const Vec2 px(x + 0.5, y + 0.5);
                Vec3 c;
                double alpha, dnum, wsum, t;
                BlendPixel(px, bin.data(), static_cast<int>(bin.size()), &c, &alpha, &dnum,
                           &wsum, &t, NoEmit);
                for (int ch = 0; ch < 3; ++ch) out.color.At(x, y, ch) = c[ch];
                out.alpha.At(x, y) = alpha;
                out.weight_sum.At(x, y) = wsum;
                if (alpha >= kDepthAlphaThreshold) out.depth.At(x, y) = dnum / wsum;
            }
        }
    });
    return out;
}

}  // namespace renderdetail

// Brute-force renderer: every pixel walks the full sorted splat list. Slow
// but obviously correct; the tiled renderer is validated against it.
inline RenderOutput RasterizeReference(const GaussianCloud& cloud, const CameraView& view) {
    view.Validate();
    const int w = view.width, h = view.height;
    RenderOutput out{ImageBuffer(w, h, 3, ImageSemantics::kColor),
                     ImageBuffer(w, h, 1, ImageSemantics::kAlpha),
                     ImageBuffer(w, h, 1, ImageSemantics::kDepth, DepthSentinel(view)),
                     ImageBuffer(w, h, 1, ImageSemantics::kFeature)};
    const auto splats = renderdetail::PrepareSplats(cloud, view);
    std::vector<const SplatProjection*> ptrs(splats.size());
    for (size_t i = 0; i < splats.size(); ++i) ptrs[i] = &splats[i];

    ParallelFor(h, 1, [&](int64_t y) {
        for (int x = 0; x < w; ++x) {
            const Vec2 px(x + 0.5, y + 0.5);
            Vec3 c;
            double alpha, dnum, wsum, t;
            renderdetail::BlendPixel(px, ptrs.data(), static_cast<int>(ptrs.size()), &c, &alpha,
                                     &dnum, &wsum, &t, renderdetail::NoEmit);
            for (int ch = 0; ch < 3; ++ch) out.color.At(x, static_cast<int>(y), ch) = c[ch];
            out.alpha.At(x, static_cast<int>(y)) = alpha;
            out.weight_sum.At(x, static_cast<int>(y)) = wsum;
            if (alpha >= kDepthAlphaThreshold) {
                out.depth.At(x, static_cast<int>(y)) = dnum / wsum;
            }
        }
    });
    return out;
}

// Tile-binned renderer. Splats are bucketed into 16x16 pixel tiles and each
// tile blends only its own candidates, serially per pixel, so the output is
// identical to the reference renderer for every thread count.
inline RenderOutput RasterizeTiled(const GaussianCloud& cloud, const CameraView& view) {
    view.Validate();
    const auto splats = renderdetail::PrepareSplats(cloud, view);
    const auto grid = renderdetail::BuildTileGrid(splats, view.width, view.height);
    return renderdetail::RasterizeGrid(grid, view);
}

// Soft silhouette: the alpha channel relabeled as a mask.
inline ImageBuffer RenderMask(const GaussianCloud& cloud, const CameraView& view) {
    RenderOutput out = RasterizeTiled(cloud, view);
    out.alpha.semantics = ImageSemantics::kMask;
    return out.alpha;
}

// Per-Gaussian parameter gradients, same layout as the cloud.
struct RenderGradients {
    std::vector<Vec3> d_center;
    std::vector<Vec3> d_log_scale;
    std::vector<Vec4> d_rotation;
    std::vector<double> d_logit_opacity;
    std::vector<Vec3> d_color;

    explicit RenderGradients(size_t n = 0)
        : d_center(n, Vec3::Zero()),
          d_log_scale(n, Vec3::Zero()),
          d_rotation(n, Vec4::Zero()),
          d_logit_opacity(n, 0.0),
          d_color(n, Vec3::Zero()) {}
};

// Upstream derivatives for Backward. Any buffer may be left empty (treated
// as zero). d_color is 3ch; d_alpha and d_depth are 1ch. Depth gradients
// only flow through pixels whose forward depth was valid (alpha >= 0.5);
// sentinel pixels are constant by construction.
struct RenderUpstream {
    ImageBuffer d_color;
    ImageBuffer d_alpha;
    ImageBuffer d_depth;
};

// Differentiable rasterization context: forward caches the projected splats
// and tile bins, backward replays each pixel's blend to produce analytic
// parameter gradients. Gradients follow the same gates as the forward pass
// (culled splats and sub-cutoff contributions get exact zeros; the alpha
// clamp has zero slope).
class RenderContext {
public:
    RenderContext(const GaussianCloud& cloud, const CameraView& view)
        : cloud_(cloud), view_(view) {
        view_.Validate();
    }

    const RenderOutput& Forward() {
        splats_ = renderdetail::PrepareSplats(cloud_, view_);
        grid_ = renderdetail::BuildTileGrid(splats_, view_.width, view_.height);
        output_ = renderdetail::RasterizeGrid(grid_, view_);
        forward_done_ = true;
        return output_;
    }

    const RenderOutput& Output() const {
        RequireState(forward_done_, "render backward requires a cached forward pass");
        return output_;
    }

    RenderGradients Backward(const RenderUpstream& upstream) const {
        RequireState(forward_done_, "render backward requires a cached forward pass");
        const int w = view_.width, h = view_.height;
        const bool has_color = upstream.d_color.channels == 3;
        const bool has_alpha = upstream.d_alpha.channels == 1;
        const bool has_depth = upstream.d_depth.channels == 1;
        if (has_color) Require(upstream.d_color.width == w && upstream.d_color.height == h,
                               "upstream color gradient shape mismatch");
        if (has_alpha) Require(upstream.d_alpha.width == w && upstream.d_alpha.height == h,
                               "upstream alpha gradient shape mismatch");
        if (has_depth) Require(upstream.d_depth.width == w && upstream.d_depth.height == h,
                               "upstream depth gradient shape mismatch");

        // Pixel-space partials per splat: d mean (2), d cov_inv (3, symmetric),
        // d color (3), d opacity (1), d splat-depth (1).
        struct SplatPartial {
            Vec2 d_mean = Vec2::Zero();
            Vec3 d_cov_inv = Vec3::Zero();  // (m00, m01, m11)
            Vec3 d_color = Vec3::Zero();
            double d_opacity = 0.0;
            double d_depth = 0.0;
        };

        const size_t num_tiles = grid_.bins.size();
        std::vector<std::vector<SplatPartial>> tile_partials(num_tiles);

        ParallelFor(static_cast<int64_t>(num_tiles), 1, [&](int64_t tile) {
            const auto& bin = grid_.bins[tile];
            if (bin.empty()) return;
            auto& partials = tile_partials[tile];
            partials.assign(bin.size(), SplatPartial());

            struct Contribution {
                int k = 0;          // index into the tile bin
                double alpha = 0;   // post-clamp alpha
                double t = 0;       // transmittance before this splat
            };
            std::vector<Contribution> contribs;
            contribs.reserve(bin.size());

            const int tx = static_cast<int>(tile) % grid_.tiles_x;
            const int ty = static_cast<int>(tile) / grid_.tiles_x;
            const int x1 = std::min(w, (tx + 1) * kTileSize);
            const int y1 = std::min(h, (ty + 1) * kTileSize);
            for (int y = ty * kTileSize; y < y1; ++y) {
                for (int x = tx * kTileSize; x < x1; ++x) {
                    const Vec2 px(x + 0.5, y + 0.5);
                    contribs.clear();
                    Vec3 c;
                    double alpha, dnum, wsum, t_final;
                    renderdetail::BlendPixel(
                            px, bin.data(), static_cast<int>(bin.size()), &c, &alpha, &dnum,
                            &wsum, &t_final, [&](int k, double a, double t) {
                                contribs.push_back(Contribution{k, a, t});
                            });
                    if (contribs.empty()) continue;

                    Vec3 gc = Vec3::Zero();
                    if (has_color) {
                        for (int ch = 0; ch < 3; ++ch) gc[ch] = upstream.d_color.At(x, y, ch);
                    }
                    const double ga = has_alpha ? upstream.d_alpha.At(x, y) : 0.0;
                    const bool depth_valid = alpha >= kDepthAlphaThreshold;
                    const double gd =
                            (has_depth && depth_valid) ? upstream.d_depth.At(x, y) : 0.0;
                    if (gc.isZero(0.0) && ga == 0.0 && gd == 0.0) continue;

                    const double depth_out = depth_valid ? dnum / wsum : 0.0;
                    // Suffix sums over later contributions.
                    Vec3 suffix_c = Vec3::Zero();
                    double suffix_w = 0.0;
                    double suffix_wd = 0.0;
                    for (int idx = static_cast<int>(contribs.size()) - 1; idx >= 0; --idx) {
                        const Contribution& cb = contribs[idx];
                        const SplatProjection& sp = *bin[cb.k];
                        SplatPartial& acc = partials[cb.k];
                        const double weight = cb.alpha * cb.t;
                        const double one_minus = 1.0 - cb.alpha;

                        acc.d_color += weight * gc;
                        double d_alpha_i = gc.dot(cb.t * sp.color - suffix_c / one_minus);
                        d_alpha_i += ga * (cb.t - suffix_w / one_minus);
                        if (gd != 0.0) {
                            acc.d_depth += gd * weight / wsum;
                            d_alpha_i += gd / wsum *
                                         (cb.t * (sp.depth - depth_out) -
                                          (suffix_wd - depth_out * suffix_w) / one_minus);
                        }

                        const Vec2 d = px - sp.mean;
                        const double g_exp = cb.alpha / sp.opacity;
                        // The clamp is flat: no flow into opacity or shape.
                        if (sp.opacity * g_exp < kAlphaClamp) {
                            acc.d_opacity += d_alpha_i * g_exp;
                            const double d_gauss = d_alpha_i * sp.opacity;
                            const Vec2 md(sp.cov_inv(0, 0) * d.x() + sp.cov_inv(0, 1) * d.y(),
                                          sp.cov_inv(1, 0) * d.x() + sp.cov_inv(1, 1) * d.y());
                            acc.d_mean += d_gauss * g_exp * md;
                            const double s = -0.5 * d_gauss * g_exp;
                            acc.d_cov_inv[0] += s * d.x() * d.x();
                            acc.d_cov_inv[1] += 2.0 * s * d.x() * d.y();
                            acc.d_cov_inv[2] += s * d.y() * d.y();
                        }

                        suffix_c += weight * sp.color;
                        suffix_w += weight;
                        suffix_wd += weight * sp.depth;
                    }
                }
            }
        });

        // Merge tile partials in tile order, then chain through the
        // projection per retained splat. The merge order is fixed by the
        // grid layout, so results do not depend on the worker count.
        std::vector<SplatPartial> merged(splats_.size());
        for (size_t tile = 0; tile < num_tiles; ++tile) {
            const auto& bin = grid_.bins[tile];
            if (tile_partials[tile].empty()) continue;
            for (size_t k = 0; k < bin.size(); ++k) {
                const SplatPartial& p = tile_partials[tile][k];
                const size_t splat_idx = static_cast<size_t>(bin[k] - splats_.data());
                SplatPartial& m = merged[splat_idx];
                m.d_mean += p.d_mean;
                m.d_cov_inv += p.d_cov_inv;
                m.d_color += p.d_color;
                m.d_opacity += p.d_opacity;
                m.d_depth += p.d_depth;
            }
        }

        RenderGradients grads(cloud_.Size());
        ParallelFor(static_cast<int64_t>(splats_.size()), 256, [&](int64_t si) {
            ChainSplatGradient(splats_[si], merged[si].d_mean, merged[si].d_cov_inv,
                               merged[si].d_color, merged[si].d_opacity, merged[si].d_depth,
                               &grads);
        });
        return grads;
    }

private:
    // Chains pixel-space partials for one splat back to its cloud parameters.
    void ChainSplatGradient(const SplatProjection& sp, const Vec2& d_mean,
                            const Vec3& d_cov_inv_sym, const Vec3& d_color, double d_opacity,
                            double d_depth, RenderGradients* grads) const {
        const int32_t i = sp.index;
        const Gaussian& g = cloud_.gaussians[i];

        grads->d_color[i] += d_color;
        grads->d_logit_opacity[i] += d_opacity * sp.opacity * (1.0 - sp.opacity);

        // d cov2d = -cov_inv d(cov_inv) cov_inv (cov_inv symmetric).
        Mat2 d_minv;
        d_minv << d_cov_inv_sym[0], 0.5 * d_cov_inv_sym[1], 0.5 * d_cov_inv_sym[1],
                d_cov_inv_sym[2];
        const Mat2 d_cov = -sp.cov_inv * d_minv * sp.cov_inv;

        const Vec3 t = view_.ToCamera(g.center);
        Eigen::Matrix<double, 2, 3> jac;
        if (view_.model == CameraModel::kPerspective) {
            const double iz = 1.0 / t.z();
            jac << view_.fx * iz, 0, -view_.fx * t.x() * iz * iz,
                   0, view_.fy * iz, -view_.fy * t.y() * iz * iz;
        } else {
            jac << view_.scale, 0, 0, 0, view_.scale, 0;
        }

        const Vec4 q = NormalizeQuaternion(g.rotation);
        const Mat3 rot = QuaternionToMatrix(q);
        const Vec3 scale = g.Scale();
        const Mat3 m0 = rot * scale.asDiagonal();
        const Mat3 cov_world = m0 * m0.transpose();
        const Mat3 cov_cam = view_.rotation * cov_world * view_.rotation.transpose();

        // Shape chain: cov2d -> cov_cam -> cov_world -> (scale, rotation).
        const Mat3 d_cov_cam = jac.transpose() * d_cov * jac;
        const Mat3 d_cov_world = view_.rotation.transpose() * d_cov_cam * view_.rotation;
        const Mat3 d_m0 = 2.0 * d_cov_world * m0;
        for (int k = 0; k < 3; ++k) {
            const double ds = rot.col(k).dot(d_m0.col(k));
            grads->d_log_scale[i][k] += ds * scale[k];
        }
        const Mat3 d_rot = d_m0 * scale.asDiagonal();
        Vec4 d_qhat = Vec4::Zero();
        for (int k = 0; k < 4; ++k) {
            d_qhat[k] = (QuaternionToMatrixJacobian(q, k).array() * d_rot.array()).sum();
        }
        const double qnorm = std::max(g.rotation.norm(), 1e-12);
        grads->d_rotation[i] += (d_qhat - q * q.dot(d_qhat)) / qnorm;

        // Position chain: mean, splat depth, and the Jacobian's own
        // dependence on the camera-space point (perspective only).
        Vec3 d_t = Vec3::Zero();
        if (view_.model == CameraModel::kPerspective) {
            const double iz = 1.0 / t.z();
            d_t.x() += view_.fx * iz * d_mean.x();
            d_t.y() += view_.fy * iz * d_mean.y();
            d_t.z() += -(view_.fx * t.x() * d_mean.x() + view_.fy * t.y() * d_mean.y()) * iz * iz;

            const Mat2 sym = d_cov;  // already symmetric
            const Eigen::Matrix<double, 2, 3> d_jac = 2.0 * sym * jac * cov_cam;
            d_t.x() += d_jac(0, 2) * (-view_.fx * iz * iz);
            d_t.y() += d_jac(1, 2) * (-view_.fy * iz * iz);
            d_t.z() += d_jac(0, 0) * (-view_.fx * iz * iz) +
                       d_jac(0, 2) * (2.0 * view_.fx * t.x() * iz * iz * iz) +
                       d_jac(1, 1) * (-view_.fy * iz * iz) +
                       d_jac(1, 2) * (2.0 * view_.fy * t.y() * iz * iz * iz);
        } else {
            d_t.x() += view_.scale * d_mean.x();
            d_t.y() += view_.scale * d_mean.y();
        }
        d_t.z() += d_depth;
        grads->d_center[i] += view_.rotation.transpose() * d_t;
    }

    GaussianCloud cloud_;
    CameraView view_;
    std::vector<SplatProjection> splats_;
    renderdetail::TileGrid grid_;
    RenderOutput output_;
    bool forward_done_ = false;
};

// Convenience wrapper when the caller does not need to keep the context.
inline RenderGradients RenderBackward(const GaussianCloud& cloud, const CameraView& view,
                                      const RenderUpstream& upstream,
                                      RenderOutput* forward_out = nullptr) {
    RenderContext ctx(cloud, view);
    ctx.Forward();
    if (forward_out) *forward_out = ctx.Output();
    return ctx.Backward(upstream);
}

// Camera-space surface normals from a depth map by central differences on
// unprojected points. Pixels with missing depth in the stencil (or on the
// image border) produce a zero normal. For a fronto-parallel plane the
// result is (0, 0, -1): surfaces seen by the camera face against +z.
inline ImageBuffer RenderNormalFromDepth(const ImageBuffer& depth, const CameraView& view) {
    Require(depth.channels == 1, "depth map must be single channel");
    Require(depth.width == view.width && depth.height == view.height,
            "depth map does not match the view");
    ImageBuffer normals(depth.width, depth.height, 3, ImageSemantics::kNormal);
    auto point_at = [&](int x, int y) {
        return view.UnprojectCamera(Vec2(x + 0.5, y + 0.5), depth.At(x, y));
    };
    ParallelFor(depth.height, 1, [&](int64_t y) {
        if (y == 0 || y == depth.height - 1) return;
        for (int x = 1; x < depth.width - 1; ++x) {
            const bool valid = IsValidDepth(depth.At(x, y), view) &&
                               IsValidDepth(depth.At(x - 1, y), view) &&
                               IsValidDepth(depth.At(x + 1, y), view) &&
                               IsValidDepth(depth.At(x, y - 1), view) &&
                               IsValidDepth(depth.At(x, y + 1), view);
            if (!valid) continue;
            const Vec3 tx = point_at(x + 1, static_cast<int>(y)) -
                            point_at(x - 1, static_cast<int>(y));
            const Vec3 ty = point_at(x, static_cast<int>(y) + 1) -
                            point_at(x, static_cast<int>(y) - 1);
            const Vec3 cr = ty.cross(tx);
            const double n = cr.norm();
            if (n < 1e-14) continue;
            for (int c = 0; c < 3; ++c) normals.At(x, static_cast<int>(y), c) = cr[c] / n;
        }
    });
    return normals;
}

}  // namespace gf
