// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gaussforge/camera.hpp"
#include "gaussforge/common.hpp"
#include "gaussforge/gaussian.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/marching_cubes.hpp"
#include "gaussforge/mesh.hpp"
#include "gaussforge/parallel.hpp"
#include "gaussforge/render.hpp"

namespace gf {

constexpr double kTsdfTruncationVoxels = 3.0;

// Truncated signed distance over a lattice of resolution³ sample points
// spanning the bounding box. Distances are signed along the viewing axis
// (positive in front of the observed surface), truncated and normalized to
// [-1, 1]; weight 0 marks voxels no view has touched.
struct TsdfVolume {
    int resolution = 256;
    BoundingBox box;
    std::vector<double> tsdf;
    std::vector<double> weight;

    TsdfVolume() : TsdfVolume(256, BoundingBox{}) {}
    TsdfVolume(int res, const BoundingBox& b) : resolution(res), box(b) {
        Require(res >= 2 && res <= 1024, "tsdf resolution out of range");
        Require((box.Extent().array() > 0.0).all(), "tsdf bounding box is empty");
        const std::size_t n = static_cast<std::size_t>(res) * static_cast<std::size_t>(res) *
                              static_cast<std::size_t>(res);
        tsdf.assign(n, 1.0);
        weight.assign(n, 0.0);
    }

    Vec3 Spacing() const { return box.Extent() / (resolution - 1); }
    double TruncationDistance() const { return kTsdfTruncationVoxels * Spacing().mean(); }

    std::size_t Index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * static_cast<std::size_t>(resolution) +
                static_cast<std::size_t>(y)) *
                   static_cast<std::size_t>(resolution) +
               static_cast<std::size_t>(x);
    }
    Vec3 Point(int x, int y, int z) const {
        return box.min + Spacing().cwiseProduct(Vec3(x, y, z));
    }

    // Fuses one depth map. Each voxel projects into the view and reads the
    // nearest pixel; background (sentinel) depths and voxels more than one
    // truncation band behind the surface leave the voxel untouched. Updates
    // are independent per voxel, so parallel order cannot matter.
    void Integrate(const ImageBuffer& depth, const CameraView& view) {
        Require(depth.channels == 1, "depth map must have one channel");
        Require(depth.width == view.width && depth.height == view.height,
                "depth map does not match the view");
        const double trunc = TruncationDistance();
        const int res = resolution;
        const Vec3 spacing = Spacing();
        const std::int64_t n = static_cast<std::int64_t>(res) * res * res;
        ParallelFor(n, 8192, [&](std::int64_t flat) {
            const int x = static_cast<int>(flat % res);
            const int y = static_cast<int>((flat / res) % res);
            const int z = static_cast<int>(flat / (static_cast<std::int64_t>(res) * res));
            const Vec3 p = box.min + spacing.cwiseProduct(Vec3(x, y, z));
            const Vec3 pc = view.ToCamera(p);
            if (pc.z() < view.near) return;
            const Vec2 uv = view.ProjectCamera(pc);
            const int px = static_cast<int>(std::floor(uv.x()));
            const int py = static_cast<int>(std::floor(uv.y()));
            if (!depth.Contains(px, py)) return;
            const double d_map = depth.At(px, py, 0);
            if (!IsValidDepth(d_map, view)) return;
            const double sdf = d_map - pc.z();
            if (sdf < -trunc) return;
            const double sample = std::min(sdf / trunc, 1.0);
            const std::size_t i = Index(x, y, z);
            const double w = weight[i];
            tsdf[i] = (tsdf[i] * w + sample) / (w + 1.0);
            weight[i] = w + 1.0;
        });
    }

    Mesh ExtractSurface(double iso = 0.0) const {
        auto field = [this](int x, int y, int z) { return tsdf[Index(x, y, z)]; };
        auto valid = [this](int x, int y, int z) { return weight[Index(x, y, z)] > 0.0; };
        return MarchingCubes(resolution, resolution, resolution, field, valid, iso, box.min,
                             Vec3(Spacing()));
    }
};

// Debug dump in the raw image format: one z-slice per image row block,
// channel 0 = tsdf, channel 1 = weight.
inline void SaveTsdfRaw(const std::string& path, const TsdfVolume& volume) {
    const int res = volume.resolution;
    ImageBuffer img(res, res * res, 2, ImageSemantics::kFeature);
    for (int z = 0; z < res; ++z) {
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                const std::size_t i = volume.Index(x, y, z);
                img.At(x, z * res + y, 0) = volume.tsdf[i];
                img.At(x, z * res + y, 1) = volume.weight[i];
            }
        }
    }
    SaveRawImage(path, img);
}

inline TsdfVolume LoadTsdfRaw(const std::string& path, const BoundingBox& box) {
    const ImageBuffer img = LoadRawImage(path, ImageSemantics::kFeature);
    const int res = img.width;
    Require(img.channels == 2 && img.height == res * res, "not a tsdf dump: " + path);
    TsdfVolume volume(res, box);
    for (int z = 0; z < res; ++z) {
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                const std::size_t i = volume.Index(x, y, z);
                volume.tsdf[i] = img.At(x, z * res + y, 0);
                volume.weight[i] = img.At(x, z * res + y, 1);
            }
        }
    }
    return volume;
}

// ---------------------------------------------------------------------------
// Depth sweep

struct SweepConfig {
    int per_ring = 20;
    std::vector<double> elevations_deg = {0.0, 30.0, -30.0};
    bool include_poles = false;
    double radius = 2.5;
    CameraModel model = CameraModel::kPerspective;
    int width = 512;
    int height = 512;
    // 0 picks the camera factory default.
    double focal_or_scale = 0.0;
    Vec3 center = Vec3::Zero();
};

inline CameraRig MakeSweepRig(const SweepConfig& config) {
    Require(config.per_ring >= 1, "sweep needs at least one view per ring");
    Require(!config.elevations_deg.empty(), "sweep needs at least one ring");
    CameraRig rig;
    for (const double elevation : config.elevations_deg) {
        const CameraRig ring =
            MakeCameraRing(config.per_ring, config.radius, config.model, config.width,
                           config.height, config.focal_or_scale, elevation, config.center);
        rig.views.insert(rig.views.end(), ring.views.begin(), ring.views.end());
        rig.azimuth_deg.insert(rig.azimuth_deg.end(), ring.azimuth_deg.begin(),
                               ring.azimuth_deg.end());
    }
    if (config.include_poles) {
        for (const double sign : {1.0, -1.0}) {
            const Vec3 eye = config.center + Vec3(0.0, sign * config.radius, 0.0);
            double focal = config.focal_or_scale;
            if (focal <= 0.0) {
                focal = config.model == CameraModel::kPerspective
                            ? 1.2 * config.width
                            : 0.44 * config.width / 0.9;
            }
            rig.views.push_back(LookAtCamera(config.model, eye, config.center, Vec3(0, 0, 1),
                                             config.width, config.height, focal));
            rig.azimuth_deg.push_back(0.0);
        }
    }
    return rig;
}

// Renders one depth map per rig view with the Gaussian rasterizer.
inline std::vector<std::pair<ImageBuffer, CameraView>> DepthSweep(const GaussianCloud& cloud,
                                                                  const CameraRig& rig) {
    cloud.Validate();
    std::vector<std::pair<ImageBuffer, CameraView>> out;
    out.reserve(rig.views.size());
    for (const CameraView& view : rig.views) {
        RenderOutput rendered = RasterizeTiled(cloud, view);
        out.emplace_back(std::move(rendered.depth), view);
    }
    return out;
}

inline TsdfVolume FuseDepthSweep(const std::vector<std::pair<ImageBuffer, CameraView>>& sweep,
                                 int resolution, const BoundingBox& box) {
    TsdfVolume volume(resolution, box);
    for (const auto& [depth, view] : sweep) volume.Integrate(depth, view);
    return volume;
}

}  // namespace gf
