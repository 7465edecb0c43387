// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "gaussforge/render.hpp"
#include "test_support.hpp"

using namespace gf;
using namespace gftest;

namespace {

constexpr double kEps = 1e-4;

// Checks every parameter of every Gaussian in an FD-vetted scene.
void CheckSceneGradients(uint64_t seed, bool color, bool alpha, bool depth) {
    const auto scene_opt = BuildFdScene(seed, 6, color, alpha, depth);
    ASSERT_TRUE(scene_opt.has_value()) << "no FD-safe scene found near seed " << seed;
    const FdScene& scene = *scene_opt;

    RenderContext ctx(scene.cloud, scene.view);
    ctx.Forward();
    const RenderGradients grads = ctx.Backward(scene.upstream);

    int checked = 0;
    for (size_t gi = 0; gi < scene.cloud.Size(); ++gi) {
        for (int k = 0; k < 3; ++k) {
            const double fd = CentralDifference(scene, kEps, [&](GaussianCloud& c, double e) {
                c.gaussians[gi].center[k] += e;
            });
            EXPECT_TRUE(GradientsMatch(grads.d_center[gi][k], fd))
                    << "center g" << gi << " axis " << k << " analytic "
                    << grads.d_center[gi][k] << " fd " << fd << " seed " << seed;
            ++checked;
        }
        for (int k = 0; k < 3; ++k) {
            const double fd = CentralDifference(scene, kEps, [&](GaussianCloud& c, double e) {
                c.gaussians[gi].log_scale[k] += e;
            });
            EXPECT_TRUE(GradientsMatch(grads.d_log_scale[gi][k], fd))
                    << "log_scale g" << gi << " axis " << k << " analytic "
                    << grads.d_log_scale[gi][k] << " fd " << fd << " seed " << seed;
            ++checked;
        }
        for (int k = 0; k < 4; ++k) {
            const double fd = CentralDifference(scene, kEps, [&](GaussianCloud& c, double e) {
                c.gaussians[gi].rotation[k] += e;
            });
            EXPECT_TRUE(GradientsMatch(grads.d_rotation[gi][k], fd))
                    << "rotation g" << gi << " comp " << k << " analytic "
                    << grads.d_rotation[gi][k] << " fd " << fd << " seed " << seed;
            ++checked;
        }
        {
            const double fd = CentralDifference(scene, kEps, [&](GaussianCloud& c, double e) {
                c.gaussians[gi].logit_opacity += e;
            });
            EXPECT_TRUE(GradientsMatch(grads.d_logit_opacity[gi], fd))
                    << "opacity g" << gi << " analytic " << grads.d_logit_opacity[gi] << " fd "
                    << fd << " seed " << seed;
            ++checked;
        }
        for (int k = 0; k < 3; ++k) {
            const double fd = CentralDifference(scene, kEps, [&](GaussianCloud& c, double e) {
                c.gaussians[gi].color[k] += e;
            });
            EXPECT_TRUE(GradientsMatch(grads.d_color[gi][k], fd))
                    << "color g" << gi << " ch " << k << " analytic " << grads.d_color[gi][k]
                    << " fd " << fd << " seed " << seed;
            ++checked;
        }
    }
    EXPECT_EQ(checked, static_cast<int>(scene.cloud.Size()) * 14);
}

}  // namespace

TEST(RenderBackward, AllChannelsAllParams) {
    CheckSceneGradients(1000, true, true, true);
    CheckSceneGradients(2000, true, true, true);
    CheckSceneGradients(3000, true, true, true);
}

TEST(RenderBackward, ColorChannelOnly) { CheckSceneGradients(4000, true, false, false); }

TEST(RenderBackward, AlphaChannelOnly) { CheckSceneGradients(5000, false, true, false); }

TEST(RenderBackward, DepthChannelOnly) { CheckSceneGradients(6000, false, false, true); }

TEST(RenderBackward, RequiresForwardPass) {
    Rng rng(6100);
    const CameraView view = LookAtCamera(CameraModel::kWeakPerspective, Vec3(0, 0, 2.5),
                                         Vec3::Zero(), Vec3(0, 1, 0), 16, 16, 8.0);
    const GaussianCloud cloud = RandomBoxCloud(rng, 4, std::log(0.05), std::log(0.1));
    RenderContext ctx(cloud, view);
    RenderUpstream up;
    up.d_alpha = ImageBuffer(16, 16, 1, ImageSemantics::kFeature, 1.0);
    EXPECT_THROW(ctx.Backward(up), std::logic_error);
    ctx.Forward();
    EXPECT_NO_THROW(ctx.Backward(up));
}

TEST(RenderBackward, CulledSplatsGetExactZeros) {
    const CameraView view = LookAtCamera(CameraModel::kWeakPerspective, Vec3(0, 0, 2.5),
                                         Vec3::Zero(), Vec3(0, 1, 0), 24, 24, 10.0);
    GaussianCloud cloud;
    Gaussian visible;
    visible.center = Vec3::Zero();
    visible.log_scale = Vec3::Constant(std::log(0.1));
    visible.logit_opacity = 1.0;
    cloud.Append(visible);
    Gaussian behind = visible;
    behind.center = Vec3(0, 0, 5.0);  // past the camera
    cloud.Append(behind);
    Gaussian offscreen = visible;
    offscreen.center = Vec3(50.0, 0, 0);
    cloud.Append(offscreen);

    RenderContext ctx(cloud, view);
    ctx.Forward();
    RenderUpstream up;
    up.d_color = ImageBuffer(24, 24, 3, ImageSemantics::kFeature, 0.7);
    up.d_alpha = ImageBuffer(24, 24, 1, ImageSemantics::kFeature, -0.3);
    const RenderGradients grads = ctx.Backward(up);

    EXPECT_GT(grads.d_center[0].norm() + grads.d_color[0].norm(), 0.0);
    for (size_t i : {size_t(1), size_t(2)}) {
        EXPECT_EQ(grads.d_center[i], Vec3::Zero());
        EXPECT_EQ(grads.d_log_scale[i], Vec3::Zero());
        EXPECT_EQ(grads.d_rotation[i], Vec4::Zero());
        EXPECT_EQ(grads.d_logit_opacity[i], 0.0);
        EXPECT_EQ(grads.d_color[i], Vec3::Zero());
    }
}

TEST(RenderBackward, ClampedAlphaBlocksShapeGradients) {
    // One numerically opaque splat: pixels near its center clamp at 0.999
    // where the gradient into opacity and shape must vanish exactly.
    const CameraView view = LookAtCamera(CameraModel::kWeakPerspective, Vec3(0, 0, 2.5),
                                         Vec3::Zero(), Vec3(0, 1, 0), 24, 24, 10.0);
    GaussianCloud cloud;
    Gaussian g;
    // Mean on a pixel center, footprint wide enough that the center pixel
    // and its 4-neighborhood all evaluate above the clamp.
    g.center = Vec3(0.05, 0.05, 0.0);
    g.log_scale = Vec3::Constant(std::log(2.5));
    g.logit_opacity = 20.0;
    cloud.Append(g);

    RenderContext ctx(cloud, view);
    const RenderOutput& out = ctx.Forward();
    RenderUpstream up;
    up.d_alpha = ImageBuffer(24, 24, 1, ImageSemantics::kFeature, 0.0);
    int clamped_px = 0;
    for (int y = 0; y < 24; ++y) {
        for (int x = 0; x < 24; ++x) {
            if (out.alpha.At(x, y) >= kAlphaClamp) {
                up.d_alpha.At(x, y) = 1.0;
                ++clamped_px;
            }
        }
    }
    ASSERT_GT(clamped_px, 4);
    const RenderGradients grads = ctx.Backward(up);
    EXPECT_EQ(grads.d_logit_opacity[0], 0.0);
    EXPECT_EQ(grads.d_log_scale[0], Vec3::Zero());
    EXPECT_EQ(grads.d_center[0], Vec3::Zero());

    FdScene scene;
    scene.cloud = cloud;
    scene.view = view;
    scene.upstream.d_alpha = up.d_alpha;
    const double fd = CentralDifference(
            scene, kEps, [&](GaussianCloud& c, double e) { c.gaussians[0].logit_opacity += e; });
    EXPECT_EQ(fd, 0.0);
}

TEST(RenderBackward, GradientsAreThreadCountInvariant) {
    const auto scene_opt = BuildFdScene(7000, 8, true, true, true);
    ASSERT_TRUE(scene_opt.has_value());
    const FdScene& scene = *scene_opt;

    auto run = [&](int threads) {
        SetThreadCount(threads);
        RenderContext ctx(scene.cloud, scene.view);
        ctx.Forward();
        RenderGradients g = ctx.Backward(scene.upstream);
        SetThreadCount(0);
        return g;
    };
    const RenderGradients g1 = run(1);
    const RenderGradients g4 = run(4);
    const RenderGradients g8 = run(8);
    for (size_t i = 0; i < scene.cloud.Size(); ++i) {
        EXPECT_EQ(g1.d_center[i], g4.d_center[i]);
        EXPECT_EQ(g1.d_center[i], g8.d_center[i]);
        EXPECT_EQ(g1.d_log_scale[i], g4.d_log_scale[i]);
        EXPECT_EQ(g1.d_rotation[i], g8.d_rotation[i]);
        EXPECT_EQ(g1.d_logit_opacity[i], g4.d_logit_opacity[i]);
        EXPECT_EQ(g1.d_color[i], g8.d_color[i]);
    }
}

TEST(RenderBackward, ConvenienceWrapperMatchesContext) {
    const auto scene_opt = BuildFdScene(8000, 5, true, true, false);
    ASSERT_TRUE(scene_opt.has_value());
    const FdScene& scene = *scene_opt;

    RenderOutput forward;
    const RenderGradients a = RenderBackward(scene.cloud, scene.view, scene.upstream, &forward);
    RenderContext ctx(scene.cloud, scene.view);
    ctx.Forward();
    const RenderGradients b = ctx.Backward(scene.upstream);
    const RenderOutput tiled = RasterizeTiled(scene.cloud, scene.view);
    EXPECT_EQ(forward.color.data, tiled.color.data);
    for (size_t i = 0; i < scene.cloud.Size(); ++i) {
        EXPECT_EQ(a.d_center[i], b.d_center[i]);
        EXPECT_EQ(a.d_rotation[i], b.d_rotation[i]);
    }
}
