// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0
//
// Sparse feature volume around the posed body template. Per-vertex tokens are
// scattered into a voxel grid over the working bounding box, mixed by a small
// stack of 3x3x3 sparse convolutions, and sampled back trilinearly at query
// points; sampled features are fused with image-branch features into
// per-Gaussian residual channels.
//
// The grid stores only occupied cells: a sorted list of linear cell indices
// plus one feature row per cell. Convolution reads absent neighbors as zero
// and dilates occupancy by one cell per layer, so the structure stays sparse
// while the receptive field grows. All reductions are cell-ordered, which
// keeps every operation byte-identical across thread counts.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gaussforge/common.hpp"
#include "gaussforge/gaussian.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/parallel.hpp"
#include "gaussforge/rng.hpp"

namespace gf {

inline constexpr int kTokenDim = 32;
inline constexpr int kVolumeResolution = 64;
inline constexpr int kConvLayers = 3;
inline constexpr int kResidualChannels = 14;

// One learnable feature vector per template vertex, rows aligned with
// BodyTemplate::rest_vertices.
struct VertexTokens {
    Eigen::MatrixXd values;

    int Count() const { return static_cast<int>(values.rows()); }
    int Dim() const { return static_cast<int>(values.cols()); }

    void Validate() const {
        Require(values.rows() > 0 && values.cols() > 0, "vertex tokens are empty");
        Require(values.allFinite(), "vertex tokens contain non-finite values");
    }
};

inline VertexTokens SeededTokens(uint64_t seed, int count, int dim = kTokenDim) {
    Require(count > 0, "token count must be positive");
    Require(dim > 0, "token dim must be positive");
    Rng rng = Rng(seed).Substream("volume.tokens");
    VertexTokens tokens;
    tokens.values.resize(count, dim);
    for (int i = 0; i < count; ++i)
        for (int j = 0; j < dim; ++j) tokens.values(i, j) = rng.Normal();
    return tokens;
}

namespace volumedetail {

inline int64_t LinearCell(int ix, int iy, int iz, int res) {
    return ix + static_cast<int64_t>(res) * (iy + static_cast<int64_t>(res) * iz);
}

}  // namespace volumedetail

struct SparseVoxelGrid {
    int resolution = kVolumeResolution;
    BoundingBox box;
    std::vector<int64_t> cells;  // sorted unique linear indices, x-fastest
    Eigen::MatrixXd features;    // one row per entry of cells

    int CellCount() const { return static_cast<int>(cells.size()); }
    int Dim() const { return static_cast<int>(features.cols()); }
    Vec3 CellSize() const { return box.Extent() / resolution; }

    Vec3 CellCenter(int64_t linear) const {
        const int64_t res = resolution;
        const Vec3 cs = CellSize();
        const double ix = static_cast<double>(linear % res);
        const double iy = static_cast<double>((linear / res) % res);
        const double iz = static_cast<double>(linear / (res * res));
        return box.min + Vec3((ix + 0.5) * cs.x(), (iy + 0.5) * cs.y(), (iz + 0.5) * cs.z());
    }

    void Validate() const {
        Require(resolution > 0 && resolution <= 1024, "grid resolution out of range");
        Require((box.Extent().array() > 0.0).all(), "grid box is degenerate");
        Require(static_cast<int64_t>(features.rows()) == static_cast<int64_t>(cells.size()),
                "feature rows do not match cell count");
        const int64_t total = static_cast<int64_t>(resolution) * resolution * resolution;
        for (size_t i = 0; i < cells.size(); ++i) {
            Require(cells[i] >= 0 && cells[i] < total, "cell index out of range");
            Require(i == 0 || cells[i - 1] < cells[i], "cell indices not sorted unique");
        }
        Require(features.allFinite(), "grid features contain non-finite values");
    }
};

namespace volumedetail {

inline std::unordered_map<int64_t, int> CellRows(const SparseVoxelGrid& grid) {
    std::unordered_map<int64_t, int> rows;
    rows.reserve(grid.cells.size() * 2);
    for (size_t i = 0; i < grid.cells.size(); ++i)
        rows.emplace(grid.cells[i], static_cast<int>(i));
    return rows;
}

}  // namespace volumedetail

// Scatters per-vertex tokens into the grid cell containing each vertex.
// Cells touched by several vertices hold the average of their tokens.
// Vertices outside the box are clamped onto it and counted in clamped_count
// so callers can warn; an empty vertex list is an error.
inline SparseVoxelGrid VoxelizeTokens(const std::vector<Vec3>& points,
                                      const Eigen::MatrixXd& tokens,
                                      int resolution = kVolumeResolution,
                                      const BoundingBox& box = BoundingBox{},
                                      int* clamped_count = nullptr) {
    Require(!points.empty(), "voxelize needs at least one point");
    Require(static_cast<size_t>(tokens.rows()) == points.size(),
            "token rows must match point count");
    Require(tokens.cols() > 0, "tokens must have at least one channel");
    Require(tokens.allFinite(), "tokens contain non-finite values");
    Require(resolution > 0 && resolution <= 1024, "grid resolution out of range");
    Require((box.Extent().array() > 0.0).all(), "grid box is degenerate");
    for (const Vec3& p : points) {
        RequireFinite(p.x(), "voxelize point");
        RequireFinite(p.y(), "voxelize point");
        RequireFinite(p.z(), "voxelize point");
    }

    const Vec3 cs = box.Extent() / resolution;
    int clamped = 0;
    // Cell-ordered reduction: bin first, then accumulate sums in sorted cell
    // order so the result is independent of both input order perturbations
    // within a cell (ties keep input order) and thread count.
    std::vector<std::pair<int64_t, int>> bins(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        const Vec3& p = points[i];
        if (!box.Contains(p)) ++clamped;
        const Vec3 q = box.Clamp(p);
        int idx[3];
        for (int a = 0; a < 3; ++a) {
            int c = static_cast<int>(std::floor((q[a] - box.min[a]) / cs[a]));
            idx[a] = std::min(std::max(c, 0), resolution - 1);
        }
        bins[i] = {volumedetail::LinearCell(idx[0], idx[1], idx[2], resolution),
                   static_cast<int>(i)};
    }
    std::stable_sort(bins.begin(), bins.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });

    SparseVoxelGrid grid;
    grid.resolution = resolution;
    grid.box = box;
    const int dim = static_cast<int>(tokens.cols());
    std::vector<Eigen::VectorXd> sums;
    std::vector<int> counts;
    for (size_t i = 0; i < bins.size(); ++i) {
        if (grid.cells.empty() || grid.cells.back() != bins[i].first) {
            grid.cells.push_back(bins[i].first);
            sums.emplace_back(Eigen::VectorXd::Zero(dim));
            counts.push_back(0);
        }
        sums.back() += tokens.row(bins[i].second).transpose();
        ++counts.back();
    }
    grid.features.resize(static_cast<int>(grid.cells.size()), dim);
    for (size_t i = 0; i < grid.cells.size(); ++i)
        grid.features.row(static_cast<int>(i)) = (sums[i] / counts[i]).transpose();

    if (clamped_count) *clamped_count = clamped;
    return grid;
}

// One 3x3x3 convolution layer. taps[k] multiplies the neighbor at offset
// (dx, dy, dz) with k = (dx+1) + 3*((dy+1) + 3*(dz+1)), so the center tap is
// taps[13]. Output(c) = sum_k taps[k] * input(c + offset_k).
struct SparseConvLayer {
    std::array<Eigen::MatrixXd, 27> taps;
};

struct SparseConvStack {
    std::vector<SparseConvLayer> layers;

    int LayerCount() const { return static_cast<int>(layers.size()); }
    int Dim() const { return layers.empty() ? 0 : static_cast<int>(layers[0].taps[0].rows()); }

    void Validate() const {
        Require(!layers.empty(), "conv stack has no layers");
        const int dim = Dim();
        Require(dim > 0, "conv stack has zero channels");
        for (const SparseConvLayer& layer : layers)
            for (const Eigen::MatrixXd& tap : layer.taps) {
                Require(tap.rows() == dim && tap.cols() == dim,
                        "conv tap dimensions are inconsistent");
                Require(tap.allFinite(), "conv tap contains non-finite values");
            }
    }
};

// He-style initialization over the 27*dim fan-in keeps activations at unit
// scale through the stack.
inline SparseConvStack SeededConvStack(uint64_t seed, int layer_count = kConvLayers,
                                       int dim = kTokenDim) {
    Require(layer_count > 0, "conv stack needs at least one layer");
    Require(dim > 0, "conv dim must be positive");
    SparseConvStack stack;
    stack.layers.resize(layer_count);
    const double scale = std::sqrt(2.0 / (27.0 * dim));
    for (int l = 0; l < layer_count; ++l) {
        Rng rng = Rng(seed).Substream("volume.conv", static_cast<uint64_t>(l));
        for (int k = 0; k < 27; ++k) {
            Eigen::MatrixXd& tap = stack.layers[l].taps[k];
            tap.resize(dim, dim);
            for (int r = 0; r < dim; ++r)
                for (int c = 0; c < dim; ++c) tap(r, c) = scale * rng.Normal();
        }
    }
    return stack;
}

inline SparseConvStack IdentityConvStack(int layer_count, int dim) {
    Require(layer_count > 0, "conv stack needs at least one layer");
    SparseConvStack stack;
    stack.layers.resize(layer_count);
    for (SparseConvLayer& layer : stack.layers) {
        for (Eigen::MatrixXd& tap : layer.taps) tap = Eigen::MatrixXd::Zero(dim, dim);
        layer.taps[13] = Eigen::MatrixXd::Identity(dim, dim);
    }
    return stack;
}

// Runs the conv stack over the sparse grid. Each layer dilates occupancy by
// the 3x3x3 neighborhood (clipped to the grid bounds), convolves with absent
// cells contributing zero, and applies ReLU between layers (not after the
// final one, so a single-layer stack is linear).
inline SparseVoxelGrid SparseConv(const SparseVoxelGrid& grid, const SparseConvStack& stack) {
    grid.Validate();
    stack.Validate();
    Require(stack.Dim() == grid.Dim(), "conv channels do not match grid channels");

    const int res = grid.resolution;
    const int dim = grid.Dim();
    SparseVoxelGrid cur = grid;
    for (int l = 0; l < stack.LayerCount(); ++l) {
        const SparseConvLayer& layer = stack.layers[l];
        const std::unordered_map<int64_t, int> rows = volumedetail::CellRows(cur);

        std::vector<int64_t> out_cells;
        out_cells.reserve(cur.cells.size() * 8);
        for (int64_t cell : cur.cells) {
            const int ix = static_cast<int>(cell % res);
            const int iy = static_cast<int>((cell / res) % res);
            const int iz = static_cast<int>(cell / (static_cast<int64_t>(res) * res));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = ix + dx, ny = iy + dy, nz = iz + dz;
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= res || ny >= res || nz >= res)
                            continue;
                        out_cells.push_back(volumedetail::LinearCell(nx, ny, nz, res));
                    }
        }
        std::sort(out_cells.begin(), out_cells.end());
        out_cells.erase(std::unique(out_cells.begin(), out_cells.end()), out_cells.end());

        SparseVoxelGrid next;
        next.resolution = res;
        next.box = cur.box;
        next.cells = std::move(out_cells);
        next.features = Eigen::MatrixXd::Zero(static_cast<int>(next.cells.size()), dim);
        const bool relu = l + 1 < stack.LayerCount();

        ParallelFor(next.cells.size(), 64, [&](size_t i) {
            const int64_t cell = next.cells[i];
            const int ix = static_cast<int>(cell % res);
            const int iy = static_cast<int>((cell / res) % res);
            const int iz = static_cast<int>(cell / (static_cast<int64_t>(res) * res));
            Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
            for (int k = 0; k < 27; ++k) {
                const int dx = k % 3 - 1;
                const int dy = (k / 3) % 3 - 1;
                const int dz = k / 9 - 1;
                const int nx = ix + dx, ny = iy + dy, nz = iz + dz;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= res || ny >= res || nz >= res)
                    continue;
                const auto it = rows.find(volumedetail::LinearCell(nx, ny, nz, res));
                if (it == rows.end()) continue;
                acc.noalias() += layer.taps[k] * cur.features.row(it->second).transpose();
            }
            if (relu) acc = acc.cwiseMax(0.0);
            next.features.row(static_cast<int>(i)) = acc.transpose();
        });
        cur = std::move(next);
    }
    return cur;
}

namespace volumedetail {

// Trilinear stencil over the 8 cell centers surrounding p. Corner weights are
// the usual tent products; weight derivatives are with respect to the query
// point. Corners that fall outside the grid get row -1 and contribute zero.
struct Stencil {
    int rows[8];
    double weight[8];
    Vec3 dweight[8];
};

inline Stencil MakeStencil(const SparseVoxelGrid& grid,
                           const std::unordered_map<int64_t, int>& rows, const Vec3& p) {
    Stencil st;
    const Vec3 cs = grid.CellSize();
    int base[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        const double c = (p[a] - grid.box.min[a]) / cs[a] - 0.5;
        const double f = std::floor(c);
        base[a] = static_cast<int>(f);
        t[a] = c - f;
    }
    const int res = grid.resolution;
    for (int corner = 0; corner < 8; ++corner) {
        const int bx = (corner & 1) ? 1 : 0;
        const int by = (corner & 2) ? 1 : 0;
        const int bz = (corner & 4) ? 1 : 0;
        const double wx = bx ? t[0] : 1.0 - t[0];
        const double wy = by ? t[1] : 1.0 - t[1];
        const double wz = bz ? t[2] : 1.0 - t[2];
        st.weight[corner] = wx * wy * wz;
        st.dweight[corner] = Vec3((bx ? 1.0 : -1.0) * wy * wz / cs.x(),
                                  (by ? 1.0 : -1.0) * wx * wz / cs.y(),
                                  (bz ? 1.0 : -1.0) * wx * wy / cs.z());
        const int ix = base[0] + bx, iy = base[1] + by, iz = base[2] + bz;
        if (ix < 0 || iy < 0 || iz < 0 || ix >= res || iy >= res || iz >= res) {
            st.rows[corner] = -1;
            continue;
        }
        const auto it = rows.find(LinearCell(ix, iy, iz, res));
        st.rows[corner] = it == rows.end() ? -1 : it->second;
    }
    return st;
}

}  // namespace volumedetail

// Trilinear interpolation of grid features at each query point, treating
// absent cells as zero. Points outside the box return a zero row.
inline Eigen::MatrixXd SampleVolume(const SparseVoxelGrid& grid, const std::vector<Vec3>& points) {
    grid.Validate();
    const std::unordered_map<int64_t, int> rows = volumedetail::CellRows(grid);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<int>(points.size()), grid.Dim());
    ParallelFor(points.size(), 256, [&](size_t i) {
        if (!grid.box.Contains(points[i])) return;
        const volumedetail::Stencil st = volumedetail::MakeStencil(grid, rows, points[i]);
        for (int corner = 0; corner < 8; ++corner) {
            if (st.rows[corner] < 0) continue;
            out.row(static_cast<int>(i)) += st.weight[corner] * grid.features.row(st.rows[corner]);
        }
    });
    return out;
}

// Gradient of sum(upstream .* SampleVolume(grid, points)) with respect to the
// points. Piecewise constant per cell octant; callers probing with finite
// differences should keep points away from cell-center planes.
inline std::vector<Vec3> SampleVolumePointGradients(const SparseVoxelGrid& grid,
                                                    const std::vector<Vec3>& points,
                                                    const Eigen::MatrixXd& upstream) {
    grid.Validate();
    Require(static_cast<size_t>(upstream.rows()) == points.size(),
            "upstream rows must match point count");
    Require(upstream.cols() == grid.features.cols(), "upstream channels do not match grid");
    const std::unordered_map<int64_t, int> rows = volumedetail::CellRows(grid);
    std::vector<Vec3> grads(points.size(), Vec3::Zero());
    ParallelFor(points.size(), 256, [&](size_t i) {
        if (!grid.box.Contains(points[i])) return;
        const volumedetail::Stencil st = volumedetail::MakeStencil(grid, rows, points[i]);
        Vec3 g = Vec3::Zero();
        for (int corner = 0; corner < 8; ++corner) {
            if (st.rows[corner] < 0) continue;
            const double coef = upstream.row(static_cast<int>(i))
                                    .dot(grid.features.row(st.rows[corner]));
            g += coef * st.dweight[corner];
        }
        grads[i] = g;
    });
    return grads;
}

// Linear fusion of image-branch and volume-branch per-Gaussian features into
// residual channels: out = W * [f_u; f_s] + b, one row per Gaussian.
struct FeatureFusion {
    Eigen::MatrixXd weight;  // out_dim x (image_dim + volume_dim)
    Eigen::VectorXd bias;    // out_dim

    int OutDim() const { return static_cast<int>(weight.rows()); }
    int InDim() const { return static_cast<int>(weight.cols()); }

    void Validate() const {
        Require(weight.rows() > 0 && weight.cols() > 0, "fusion weight is empty");
        Require(bias.size() == weight.rows(), "fusion bias size does not match weight rows");
        Require(weight.allFinite() && bias.allFinite(), "fusion contains non-finite values");
    }
};

inline FeatureFusion SeededFusion(uint64_t seed, int image_dim, int volume_dim,
                                  int out_dim = kResidualChannels) {
    Require(image_dim > 0 && volume_dim > 0 && out_dim > 0, "fusion dims must be positive");
    Rng rng = Rng(seed).Substream("volume.fusion");
    FeatureFusion fusion;
    const int in_dim = image_dim + volume_dim;
    const double scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
    fusion.weight.resize(out_dim, in_dim);
    for (int r = 0; r < out_dim; ++r)
        for (int c = 0; c < in_dim; ++c) fusion.weight(r, c) = scale * rng.Normal();
    fusion.bias.resize(out_dim);
    for (int r = 0; r < out_dim; ++r) fusion.bias[r] = 0.1 * rng.Normal();
    return fusion;
}

inline Eigen::MatrixXd FuseFeatures(const Eigen::MatrixXd& f_u, const Eigen::MatrixXd& f_s,
                                    const FeatureFusion& fusion) {
    fusion.Validate();
    Require(f_u.rows() == f_s.rows(), "fusion inputs must have matching row counts");
    Require(f_u.cols() + f_s.cols() == fusion.weight.cols(),
            "fusion weight columns do not match concatenated input dims");
    Eigen::MatrixXd out = f_u * fusion.weight.leftCols(f_u.cols()).transpose();
    out.noalias() += f_s * fusion.weight.rightCols(f_s.cols()).transpose();
    out.rowwise() += fusion.bias.transpose();
    return out;
}

// ---- file formats ----------------------------------------------------------
//
// Tokens and weights are stored as raw float dumps (the GFIM container) with
// a JSON sidecar at <path>.json declaring the logical shape, so external
// tooling can produce them without linking this library.

namespace volumedetail {

inline void WriteSidecar(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path + ".json");
    if (!out) throw IoError("cannot open for writing: " + path + ".json");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + path + ".json");
}

inline nlohmann::json ReadSidecar(const std::string& path, const std::string& kind) {
    std::ifstream in(path + ".json");
    if (!in) throw IoError("missing sidecar: " + path + ".json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad sidecar " + path + ".json: " + e.what());
    }
    if (!j.contains("kind") || j["kind"] != kind)
        throw IoError("sidecar kind mismatch in " + path + ".json, expected " + kind);
    return j;
}

inline ImageBuffer MatrixDump(const Eigen::MatrixXd& m) {
    ImageBuffer img(static_cast<int>(m.cols()), static_cast<int>(m.rows()), 1,
                    ImageSemantics::kFeature);
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) img.At(c, r, 0) = m(r, c);
    return img;
}

}  // namespace volumedetail

inline void SaveVertexTokens(const std::string& path, const VertexTokens& tokens) {
    tokens.Validate();
    SaveRawImage(path, volumedetail::MatrixDump(tokens.values));
    volumedetail::WriteSidecar(
        path, {{"kind", "vertex_tokens"}, {"count", tokens.Count()}, {"dim", tokens.Dim()}});
}

inline VertexTokens LoadVertexTokens(const std::string& path) {
    const nlohmann::json j = volumedetail::ReadSidecar(path, "vertex_tokens");
    const ImageBuffer img = LoadRawImage(path);
    if (img.channels != 1 || j.value("count", -1) != img.height || j.value("dim", -1) != img.width)
        throw IoError("token sidecar does not match dump shape: " + path);
    VertexTokens tokens;
    tokens.values.resize(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c) tokens.values(r, c) = img.At(c, r, 0);
    tokens.Validate();
    return tokens;
}

inline void SaveConvStack(const std::string& path, const SparseConvStack& stack) {
    stack.Validate();
    const int dim = stack.Dim();
    Eigen::MatrixXd flat(static_cast<int64_t>(stack.LayerCount()) * 27 * dim, dim);
    for (int l = 0; l < stack.LayerCount(); ++l)
        for (int k = 0; k < 27; ++k)
            flat.middleRows((static_cast<int64_t>(l) * 27 + k) * dim, dim) = stack.layers[l].taps[k];
    SaveRawImage(path, volumedetail::MatrixDump(flat));
    volumedetail::WriteSidecar(
        path, {{"kind", "sparse_conv"}, {"layers", stack.LayerCount()}, {"channels", dim}});
}

inline SparseConvStack LoadConvStack(const std::string& path) {
    const nlohmann::json j = volumedetail::ReadSidecar(path, "sparse_conv");
    const ImageBuffer img = LoadRawImage(path);
    const int layers = j.value("layers", -1);
    const int dim = j.value("channels", -1);
    if (layers <= 0 || layers > 64 || dim <= 0 || dim > 4096 || img.channels != 1 ||
        img.width != dim || img.height != layers * 27 * dim) {
        throw IoError("conv sidecar does not match dump shape: " + path);
    }
    SparseConvStack stack;
    stack.layers.resize(layers);
    for (int l = 0; l < layers; ++l)
        for (int k = 0; k < 27; ++k) {
            Eigen::MatrixXd& tap = stack.layers[l].taps[k];
            tap.resize(dim, dim);
            const int row0 = (l * 27 + k) * dim;
            for (int r = 0; r < dim; ++r)
                for (int c = 0; c < dim; ++c) tap(r, c) = img.At(c, row0 + r, 0);
        }
    stack.Validate();
    return stack;
}

inline void SaveFusion(const std::string& path, const FeatureFusion& fusion) {
    fusion.Validate();
    Eigen::MatrixXd flat(fusion.weight.rows(), fusion.weight.cols() + 1);
    flat.leftCols(fusion.weight.cols()) = fusion.weight;
    flat.rightCols(1) = fusion.bias;
    SaveRawImage(path, volumedetail::MatrixDump(flat));
    volumedetail::WriteSidecar(
        path, {{"kind", "feature_fusion"}, {"out", fusion.OutDim()}, {"in", fusion.InDim()}});
}

inline FeatureFusion LoadFusion(const std::string& path) {
    const nlohmann::json j = volumedetail::ReadSidecar(path, "feature_fusion");
    const ImageBuffer img = LoadRawImage(path);
    const int out_dim = j.value("out", -1);
    const int in_dim = j.value("in", -1);
    if (out_dim <= 0 || in_dim <= 0 || img.channels != 1 || img.height != out_dim ||
        img.width != in_dim + 1) {
        throw IoError("fusion sidecar does not match dump shape: " + path);
    }
    FeatureFusion fusion;
    fusion.weight.resize(out_dim, in_dim);
    fusion.bias.resize(out_dim);
    for (int r = 0; r < out_dim; ++r) {
        for (int c = 0; c < in_dim; ++c) fusion.weight(r, c) = img.At(c, r, 0);
        fusion.bias[r] = img.At(in_dim, r, 0);
    }
    fusion.Validate();
    return fusion;
}

// Debug export: occupied cell centers as a PLY point cloud with the feature
// norm per cell, viewable in any point cloud tool.
inline void SaveGridPly(const std::string& path, const SparseVoxelGrid& grid) {
    grid.Validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << grid.CellCount() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "property float feature_norm\n";
    out << "end_header\n";
    for (int i = 0; i < grid.CellCount(); ++i) {
        const Vec3 c = grid.CellCenter(grid.cells[i]);
        const float row[4] = {static_cast<float>(c.x()), static_cast<float>(c.y()),
                              static_cast<float>(c.z()),
                              static_cast<float>(grid.features.row(i).norm())};
        out.write(reinterpret_cast<const char*>(row), sizeof(row));
    }
    if (!out) throw IoError("short write: " + path);
}

}  // namespace gf
