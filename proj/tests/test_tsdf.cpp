// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "gaussforge/mesh_refine.hpp"
#include "gaussforge/rng.hpp"
#include "gaussforge/tsdf.hpp"

namespace gf {
namespace {

constexpr double kRadius = 0.5;

// Exact depth map of a centered sphere; background keeps the sentinel.
ImageBuffer AnalyticSphereDepth(const CameraView& view, double radius) {
    ImageBuffer depth(view.width, view.height, 1, ImageSemantics::kDepth, DepthSentinel(view));
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            const Ray ray = view.PixelRay(x + 0.5, y + 0.5);
            const double b = ray.origin.dot(ray.direction);
            const double c = ray.origin.squaredNorm() - radius * radius;
            const double disc = b * b - c;
            if (disc < 0.0) continue;
            const double t = -b - std::sqrt(disc);
            if (t < 0.0) continue;
            const Vec3 hit = ray.origin + t * ray.direction;
            depth.At(x, y, 0) = view.ToCamera(hit).z();
        }
    }
    return depth;
}

// World-space normals of a centered sphere; zero on background.
ImageBuffer AnalyticSphereNormals(const CameraView& view, double radius) {
    ImageBuffer normals(view.width, view.height, 3, ImageSemantics::kNormal);
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            const Ray ray = view.PixelRay(x + 0.5, y + 0.5);
            const double b = ray.origin.dot(ray.direction);
            const double c = ray.origin.squaredNorm() - radius * radius;
            const double disc = b * b - c;
            if (disc < 0.0) continue;
            const double t = -b - std::sqrt(disc);
            if (t < 0.0) continue;
            const Vec3 n = (ray.origin + t * ray.direction).normalized();
            normals.At(x, y, 0) = n.x();
            normals.At(x, y, 1) = n.y();
            normals.At(x, y, 2) = n.z();
        }
    }
    return normals;
}

CameraView FrontView(int res = 64) {
    return LookAtCamera(CameraModel::kWeakPerspective, Vec3(0, 0, 2.5), Vec3::Zero(),
                        Vec3(0, 1, 0), res, res, res * 0.45);
}

TEST(Tsdf, PlaneZeroCrossingWithinHalfVoxel) {
    const CameraView view = FrontView();
    const double plane_z = 0.2;
    ImageBuffer depth(view.width, view.height, 1, ImageSemantics::kDepth, 2.5 - plane_z);

    TsdfVolume volume(32, BoundingBox{});
    volume.Integrate(depth, view);
    const double voxel = volume.Spacing().z();
    const double trunc = volume.TruncationDistance();

    const int mid = 16;
    bool found_crossing = false;
    for (int z = 0; z + 1 < 32; ++z) {
        const double w0 = volume.weight[volume.Index(mid, mid, z)];
        const double w1 = volume.weight[volume.Index(mid, mid, z + 1)];
        const double t0 = volume.tsdf[volume.Index(mid, mid, z)];
        const double t1 = volume.tsdf[volume.Index(mid, mid, z + 1)];
        if (w0 > 0.0 && w1 > 0.0 && t0 <= 0.0 && t1 > 0.0) {
            const double z0 = volume.Point(mid, mid, z).z();
            const double cross = z0 + voxel * (0.0 - t0) / (t1 - t0);
            EXPECT_NEAR(cross, plane_z, 0.5 * voxel);
            found_crossing = true;
        }
    }
    EXPECT_TRUE(found_crossing);

    // Beyond one truncation band behind the plane, voxels stay untouched;
    // in front of it, free space is carved at +1.
    for (int z = 0; z < 32; ++z) {
        const double wz = volume.weight[volume.Index(mid, mid, z)];
        const double pz = volume.Point(mid, mid, z).z();
        const double sdf = pz - plane_z;
        if (sdf < -trunc - 1e-9) {
            EXPECT_EQ(wz, 0.0) << "z " << z;
        } else if (sdf > -trunc + 1e-9) {
            EXPECT_GT(wz, 0.0) << "z " << z;
            if (sdf > trunc) {
                EXPECT_EQ(volume.tsdf[volume.Index(mid, mid, z)], 1.0);
            }
        }
        EXPECT_LE(std::abs(volume.tsdf[volume.Index(mid, mid, z)]), 1.0);
    }
}

TEST(Tsdf, RepeatedIntegrationIsIdempotent) {
    const CameraView view = FrontView();
    const ImageBuffer depth = AnalyticSphereDepth(view, kRadius);

    TsdfVolume once(24, BoundingBox{});
    once.Integrate(depth, view);
    TsdfVolume twice(24, BoundingBox{});
    twice.Integrate(depth, view);
    twice.Integrate(depth, view);

    for (std::size_t i = 0; i < once.tsdf.size(); ++i) {
        EXPECT_NEAR(twice.tsdf[i], once.tsdf[i], 1e-14);
        EXPECT_EQ(twice.weight[i], 2.0 * once.weight[i]);
    }
}

TEST(Tsdf, BackgroundDepthLeavesVolumeUntouched) {
    const CameraView view = FrontView();
    const ImageBuffer depth(view.width, view.height, 1, ImageSemantics::kDepth,
                            DepthSentinel(view));
    TsdfVolume volume(16, BoundingBox{});
    volume.Integrate(depth, view);
    for (const double w : volume.weight) EXPECT_EQ(w, 0.0);
    for (const double t : volume.tsdf) EXPECT_EQ(t, 1.0);
}

TEST(Tsdf, IntegrationOrderCommutesWithinTolerance) {
    SweepConfig config;
    config.per_ring = 3;
    config.elevations_deg = {0.0, 30.0};
    config.width = config.height = 48;
    std::vector<std::pair<ImageBuffer, CameraView>> sweep;
    for (const CameraView& view : MakeSweepRig(config).views) {
        sweep.emplace_back(AnalyticSphereDepth(view, kRadius), view);
    }

    TsdfVolume forward(24, BoundingBox{});
    for (const auto& [depth, view] : sweep) forward.Integrate(depth, view);

    TsdfVolume reversed(24, BoundingBox{});
    for (auto it = sweep.rbegin(); it != sweep.rend(); ++it) {
        reversed.Integrate(it->first, it->second);
    }

    double max_diff = 0.0;
    for (std::size_t i = 0; i < forward.tsdf.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(forward.tsdf[i] - reversed.tsdf[i]));
        EXPECT_EQ(forward.weight[i], reversed.weight[i]);
    }
    EXPECT_LE(max_diff, 1e-7);
}

TEST(Tsdf, ValuesStayNormalizedAndWeightsGrow) {
    const CameraView view = FrontView();
    TsdfVolume volume(16, BoundingBox{});
    Rng rng(99);
    std::vector<double> prev_weight = volume.weight;
    for (int round = 0; round < 4; ++round) {
        ImageBuffer depth(view.width, view.height, 1, ImageSemantics::kDepth);
        for (auto& d : depth.data) d = rng.Uniform(1.0, 4.0);
        volume.Integrate(depth, view);
        for (std::size_t i = 0; i < volume.tsdf.size(); ++i) {
            EXPECT_LE(std::abs(volume.tsdf[i]), 1.0);
            EXPECT_GE(volume.weight[i], prev_weight[i]);
        }
        prev_weight = volume.weight;
    }
}

TEST(Tsdf, RawDumpRoundTrips) {
    const CameraView view = FrontView();
    TsdfVolume volume(16, BoundingBox{});
    volume.Integrate(AnalyticSphereDepth(view, kRadius), view);

    const auto dir = std::filesystem::temp_directory_path() / "gf_tsdf_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "volume.tsdf").string();
    SaveTsdfRaw(path, volume);
    const TsdfVolume back = LoadTsdfRaw(path, volume.box);
    std::filesystem::remove_all(dir);

    ASSERT_EQ(back.resolution, volume.resolution);
    for (std::size_t i = 0; i < volume.tsdf.size(); ++i) {
        EXPECT_NEAR(back.tsdf[i], volume.tsdf[i], 1e-6);
        EXPECT_EQ(back.weight[i], volume.weight[i]);
    }
}

TEST(Tsdf, AnalyticSphereSweepReconstructsSurface) {
    SweepConfig config;
    config.per_ring = 10;
    config.width = config.height = 128;
    const CameraRig rig = MakeSweepRig(config);
    ASSERT_EQ(rig.views.size(), 30u);

    std::vector<std::pair<ImageBuffer, CameraView>> sweep;
    for (const CameraView& view : rig.views) {
        sweep.emplace_back(AnalyticSphereDepth(view, kRadius), view);
    }
    const TsdfVolume volume = FuseDepthSweep(sweep, 64, BoundingBox{});
    Mesh mesh = volume.ExtractSurface();
    mesh.Validate();

    const double voxel = volume.Spacing().mean();
    EXPECT_GT(static_cast<int>(mesh.vertices.size()), 2000);
    EXPECT_TRUE(IsWatertight(mesh));
    EXPECT_EQ(EulerCharacteristic(mesh), 2);

    double err_sum = 0.0;
    for (const auto& v : mesh.vertices) err_sum += std::abs(v.norm() - kRadius);
    EXPECT_LE(err_sum / static_cast<double>(mesh.vertices.size()), voxel);

    ComputeVertexNormals(mesh);
    double cos_sum = 0.0;
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        cos_sum += mesh.normals[i].dot(mesh.vertices[i].normalized());
    }
    EXPECT_GE(cos_sum / static_cast<double>(mesh.vertices.size()), 0.99);
}

TEST(Tsdf, SweepRigLayoutAndSerialization) {
    SweepConfig config;
    const CameraRig rig = MakeSweepRig(config);
    EXPECT_EQ(rig.views.size(), 60u);
    EXPECT_EQ(rig.azimuth_deg.size(), 60u);

    SweepConfig with_poles = config;
    with_poles.include_poles = true;
    EXPECT_EQ(MakeSweepRig(with_poles).views.size(), 62u);

    const auto dir = std::filesystem::temp_directory_path() / "gf_sweep_rig_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "rig.json").string();
    SaveCameraRig(path, MakeSweepRig(with_poles));
    const CameraRig back = LoadCameraRig(path);
    std::filesystem::remove_all(dir);

    ASSERT_EQ(back.views.size(), 62u);
    for (std::size_t i = 0; i < back.views.size(); ++i) {
        EXPECT_EQ(back.views[i].rotation, MakeSweepRig(with_poles).views[i].rotation);
        EXPECT_EQ(back.views[i].translation, MakeSweepRig(with_poles).views[i].translation);
    }
}

TEST(Tsdf, GaussianSphereSweepDepthMatchesGeometry) {
    // An opaque unit sphere of small surface splats: from every ring camera
    // at distance 3 the center-pixel depth must be close to 2.
    GaussianCloud cloud;
    const int count = 4000;
    for (int i = 0; i < count; ++i) {
        // Fibonacci sphere layout.
        const double u = (i + 0.5) / count;
        const double phi = std::acos(1.0 - 2.0 * u);
        const double theta = kPi * (1.0 + std::sqrt(5.0)) * i;
        Gaussian g;
        g.center = Vec3(std::sin(phi) * std::cos(theta), std::sin(phi) * std::sin(theta),
                        std::cos(phi));
        g.log_scale = Vec3::Constant(std::log(0.05));
        g.rotation = Vec4(1, 0, 0, 0);
        g.logit_opacity = 6.0;
        g.color = Vec3(0.7, 0.7, 0.7);
        cloud.Append(g);
    }

    SweepConfig config;
    config.radius = 3.0;
    config.width = config.height = 128;
    const CameraRig rig = MakeSweepRig(config);
    const auto sweep = DepthSweep(cloud, rig);
    ASSERT_EQ(sweep.size(), 60u);

    for (std::size_t i = 0; i < sweep.size(); ++i) {
        const double d = sweep[i].first.At(64, 64, 0);
        EXPECT_TRUE(IsValidDepth(d, sweep[i].second)) << "view " << i;
        EXPECT_NEAR(d, 2.0, 0.04) << "view " << i;
    }
}

TEST(MeshRefine, ExactStationaryPointWithoutRegularizer) {
    SweepConfig config;
    config.per_ring = 4;
    config.width = config.height = 96;
    const CameraRig rig = MakeSweepRig(config);

    const Mesh sphere = [] {
        SweepConfig c;
        c.per_ring = 8;
        c.width = c.height = 96;
        std::vector<std::pair<ImageBuffer, CameraView>> sweep;
        for (const CameraView& view : MakeSweepRig(c).views) {
            sweep.emplace_back(AnalyticSphereDepth(view, kRadius), view);
        }
        return FuseDepthSweep(sweep, 48, BoundingBox{}).ExtractSurface();
    }();

    // Targets are the mesh's own rendered normals, so the data term sits at
    // an exact fixed point of the sign gradient.
    std::vector<std::pair<ImageBuffer, CameraView>> targets;
    for (const CameraView& view : rig.views) {
        targets.emplace_back(RasterizeMesh(sphere, view).normal, view);
    }
    const Mesh refined = RefineMesh(sphere, targets, 100, 0.0);
    double max_disp = 0.0;
    for (std::size_t i = 0; i < sphere.vertices.size(); ++i) {
        max_disp = std::max(max_disp, (refined.vertices[i] - sphere.vertices[i]).norm());
    }
    EXPECT_LE(max_disp, 1e-5);
    EXPECT_EQ(refined.faces, sphere.faces);
}

TEST(MeshRefine, HugeLaplacianWeightReducesToSmoothing) {
    const Mesh sphere = [] {
        SweepConfig c;
        c.per_ring = 8;
        c.width = c.height = 96;
        std::vector<std::pair<ImageBuffer, CameraView>> sweep;
        for (const CameraView& view : MakeSweepRig(c).views) {
            sweep.emplace_back(AnalyticSphereDepth(view, kRadius), view);
        }
        return FuseDepthSweep(sweep, 48, BoundingBox{}).ExtractSurface();
    }();

    // Zero-valued target maps carry no valid normals, so only the Laplacian
    // term acts.
    const CameraView view = FrontView(64);
    std::vector<std::pair<ImageBuffer, CameraView>> targets;
    targets.emplace_back(ImageBuffer(64, 64, 3, ImageSemantics::kNormal), view);

    auto smoothing_energy = [](const Mesh& m) {
        const auto adj = VertexAdjacency(m);
        double total = 0.0;
        for (std::size_t v = 0; v < m.vertices.size(); ++v) {
            Vec3 mean = Vec3::Zero();
            for (const int u : adj[v]) mean += m.vertices[static_cast<std::size_t>(u)];
            total += (m.vertices[v] - mean / static_cast<double>(adj[v].size())).norm();
        }
        return total;
    };

    Mesh current = sphere;
    double prev = smoothing_energy(current);
    for (int round = 0; round < 8; ++round) {
        current = RefineMesh(current, targets, 1, 1e6);
        const double now = smoothing_energy(current);
        EXPECT_LT(now, prev) << "round " << round;
        prev = now;
    }
}

TEST(MeshRefine, NoisySphereRadialErrorDecreases) {
    Mesh noisy = [] {
        SweepConfig c;
        c.per_ring = 8;
        c.width = c.height = 96;
        std::vector<std::pair<ImageBuffer, CameraView>> sweep;
        for (const CameraView& view : MakeSweepRig(c).views) {
            sweep.emplace_back(AnalyticSphereDepth(view, kRadius), view);
        }
        return FuseDepthSweep(sweep, 48, BoundingBox{}).ExtractSurface();
    }();
    Rng rng(17);
    for (auto& v : noisy.vertices) {
        v += (0.005 * rng.Normal()) * v.normalized();
    }

    SweepConfig config;
    config.per_ring = 6;
    config.width = config.height = 128;
    std::vector<std::pair<ImageBuffer, CameraView>> targets;
    for (const CameraView& view : MakeSweepRig(config).views) {
        targets.emplace_back(AnalyticSphereNormals(view, kRadius), view);
    }

    auto radial_error = [](const Mesh& m) {
        double sum = 0.0;
        for (const auto& v : m.vertices) sum += std::abs(v.norm() - kRadius);
        return sum / static_cast<double>(m.vertices.size());
    };

    const double err0 = radial_error(noisy);
    const Mesh half = RefineMesh(noisy, targets, 50);
    const double err1 = radial_error(half);
    const Mesh full = RefineMesh(half, targets, 50);
    const double err2 = radial_error(full);
    EXPECT_LT(err1, err0);
    EXPECT_LT(err2, err1);
}

}  // namespace
}  // namespace gf
