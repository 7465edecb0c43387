// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gaussforge/refine.hpp"
#include "gaussforge/rng.hpp"

namespace gf {
namespace {

const BodyTemplate& SharedTemplate() {
    static const BodyTemplate tpl = ProceduralTemplate(11);
    return tpl;
}

CameraRig SmallRing(int views, int res) {
    return MakeCameraRing(views, 2.5, CameraModel::kWeakPerspective, res, res);
}

ImageBuffer TemplateMask(const BodyParams& params, const CameraView& view) {
    return RasterizeTiled(SplatTemplate(SharedTemplate(), params), view).alpha;
}

CloudPredictor FixedCloudPredictor(const BodyParams& params, int* calls = nullptr,
                                   int* with_body = nullptr) {
    const GaussianCloud cloud = SplatTemplate(SharedTemplate(), params);
    return [cloud, calls, with_body](const Mesh* posed) {
        if (calls != nullptr) ++*calls;
        if (with_body != nullptr && posed != nullptr) ++*with_body;
        return cloud;
    };
}

ImageBuffer RandomMask(int width, int height, std::uint64_t seed) {
    ImageBuffer mask(width, height, 1, ImageSemantics::kMask, 0.0);
    Rng rng(seed);
    for (double& v : mask.data) v = rng.Uniform();
    return mask;
}

BodyParams PerturbedPose(const BodyParams& base, double sigma, std::uint64_t seed) {
    BodyParams params = base;
    Rng rng(seed);
    for (auto& joint : params.pose) {
        joint += sigma * Vec3(rng.Normal(), rng.Normal(), rng.Normal());
    }
    return params;
}

double JointError(const BodyParams& a, const BodyParams& b) {
    const auto ja = Keypoints3d(SharedTemplate(), a);
    const auto jb = Keypoints3d(SharedTemplate(), b);
    double total = 0.0;
    for (std::size_t k = 0; k < ja.size(); ++k) total += (ja[k] - jb[k]).norm();
    return total / static_cast<double>(ja.size());
}

// ---------------------------------------------------------------------------

TEST(MaskMseLossTest, IdenticalMasksScoreZero) {
    const ImageBuffer mask = RandomMask(24, 18, 1);
    const MaskLoss loss = MaskMseLoss(mask, mask);
    EXPECT_DOUBLE_EQ(loss.value, 0.0);
    for (double g : loss.d_mask.data) EXPECT_DOUBLE_EQ(g, 0.0);
}

TEST(MaskMseLossTest, ComplementMasksScoreOne) {
    const ImageBuffer ones(16, 16, 1, ImageSemantics::kMask, 1.0);
    const ImageBuffer zeros(16, 16, 1, ImageSemantics::kMask, 0.0);
    EXPECT_DOUBLE_EQ(MaskMseLoss(ones, zeros).value, 1.0);
}

TEST(MaskMseLossTest, MatchesBruteForceMseAndGradient) {
    const ImageBuffer a = RandomMask(21, 17, 2);
    const ImageBuffer b = RandomMask(21, 17, 3);
    const MaskLoss loss = MaskMseLoss(a, b);
    double expected = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        expected += d * d;
    }
    expected /= static_cast<double>(a.data.size());
    EXPECT_NEAR(loss.value, expected, 1e-10);
    const double inv_n = 1.0 / static_cast<double>(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        EXPECT_NEAR(loss.d_mask.data[i], 2.0 * (a.data[i] - b.data[i]) * inv_n, 1e-12);
    }
}

TEST(MaskMseLossTest, RejectsResolutionMismatch) {
    const ImageBuffer a = RandomMask(8, 8, 4);
    const ImageBuffer b = RandomMask(8, 9, 4);
    EXPECT_THROW(MaskMseLoss(a, b), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(KeypointMseLossTest, IdenticalPointsScoreZero) {
    std::vector<Vec2> points(22, Vec2(4.0, 7.0));
    const Eigen::VectorXd conf = Eigen::VectorXd::Ones(22);
    EXPECT_DOUBLE_EQ(KeypointMseLoss(points, points, conf).value, 0.0);
}

TEST(KeypointMseLossTest, ZeroConfidenceIsVacuous) {
    std::vector<Vec2> a(22, Vec2::Zero());
    std::vector<Vec2> b(22, Vec2(100.0, -50.0));
    const Eigen::VectorXd conf = Eigen::VectorXd::Zero(22);
    const KeypointLoss loss = KeypointMseLoss(a, b, conf);
    EXPECT_DOUBLE_EQ(loss.value, 0.0);
    for (const auto& g : loss.d_points) EXPECT_DOUBLE_EQ(g.norm(), 0.0);
}

TEST(KeypointMseLossTest, SinglePixelOffsetIsClosedForm) {
    std::vector<Vec2> a(22, Vec2(10.0, 10.0));
    std::vector<Vec2> b = a;
    b[5] += Vec2(3.0, 4.0);
    const Eigen::VectorXd conf = Eigen::VectorXd::Ones(22);
    EXPECT_DOUBLE_EQ(KeypointMseLoss(a, b, conf).value, 25.0 / 22.0);
}

TEST(KeypointMseLossTest, GradientMatchesFiniteDifference) {
    Rng rng(5);
    std::vector<Vec2> a(22), b(22);
    Eigen::VectorXd conf(22);
    for (int k = 0; k < 22; ++k) {
        a[static_cast<std::size_t>(k)] = Vec2(rng.Uniform(0, 64), rng.Uniform(0, 64));
        b[static_cast<std::size_t>(k)] = Vec2(rng.Uniform(0, 64), rng.Uniform(0, 64));
        conf[k] = rng.Uniform();
    }
    const KeypointLoss loss = KeypointMseLoss(a, b, conf);
    const double h = 1e-6;
    for (int k : {0, 7, 21}) {
        for (int axis = 0; axis < 2; ++axis) {
            auto plus = a;
            auto minus = a;
            plus[static_cast<std::size_t>(k)][axis] += h;
            minus[static_cast<std::size_t>(k)][axis] -= h;
            const double fd = (KeypointMseLoss(plus, b, conf).value -
                               KeypointMseLoss(minus, b, conf).value) /
                              (2.0 * h);
            EXPECT_NEAR(loss.d_points[static_cast<std::size_t>(k)][axis], fd, 1e-6);
        }
    }
}

TEST(KeypointMseLossTest, RejectsBadInputs) {
    std::vector<Vec2> a(22, Vec2::Zero());
    std::vector<Vec2> short_list(21, Vec2::Zero());
    const Eigen::VectorXd conf = Eigen::VectorXd::Ones(22);
    EXPECT_THROW(KeypointMseLoss(short_list, a, conf), std::invalid_argument);
    EXPECT_THROW(KeypointMseLoss(a, short_list, conf), std::invalid_argument);
    Eigen::VectorXd negative = conf;
    negative[3] = -0.5;
    EXPECT_THROW(KeypointMseLoss(a, a, negative), std::invalid_argument);
}

// ---------------------------------------------------------------------------

ImageBuffer RandomUnitNormals(int width, int height, std::uint64_t seed) {
    ImageBuffer normals(width, height, 3, ImageSemantics::kNormal, 0.0);
    Rng rng(seed);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            Vec3 n(rng.Normal(), rng.Normal(), rng.Normal());
            while (n.norm() < 1e-3) n = Vec3(rng.Normal(), rng.Normal(), rng.Normal());
            n.normalize();
            for (int c = 0; c < 3; ++c) normals.At(x, y, c) = n[c];
        }
    }
    return normals;
}

TEST(NormalCosineLossTest, IdenticalNormalsScoreZero) {
    const ImageBuffer normals = RandomUnitNormals(12, 9, 6);
    const ImageBuffer fg(12, 9, 1, ImageSemantics::kMask, 1.0);
    EXPECT_NEAR(NormalCosineLoss(normals, normals, fg).value, 0.0, 1e-12);
}

TEST(NormalCosineLossTest, OppositeNormalsScoreTwo) {
    const ImageBuffer normals = RandomUnitNormals(12, 9, 7);
    ImageBuffer flipped = normals;
    for (double& v : flipped.data) v = -v;
    const ImageBuffer fg(12, 9, 1, ImageSemantics::kMask, 1.0);
    EXPECT_NEAR(NormalCosineLoss(normals, flipped, fg).value, 2.0, 1e-12);
}

TEST(NormalCosineLossTest, EmptyForegroundScoresZero) {
    const ImageBuffer a = RandomUnitNormals(12, 9, 8);
    const ImageBuffer b = RandomUnitNormals(12, 9, 9);
    const ImageBuffer fg(12, 9, 1, ImageSemantics::kMask, 0.0);
    const NormalLoss loss = NormalCosineLoss(a, b, fg);
    EXPECT_DOUBLE_EQ(loss.value, 0.0);
}

TEST(NormalCosineLossTest, MatchesBruteForcePerPixelOracle) {
    const ImageBuffer a = RandomUnitNormals(15, 11, 10);
    const ImageBuffer b = RandomUnitNormals(15, 11, 11);
    ImageBuffer fg(15, 11, 1, ImageSemantics::kMask, 0.0);
    Rng rng(12);
    for (double& v : fg.data) v = rng.Uniform() < 0.6 ? 1.0 : 0.0;
    double expected = 0.0;
    int count = 0;
    for (int y = 0; y < 11; ++y) {
        for (int x = 0; x < 15; ++x) {
            if (fg.At(x, y) < 0.5) continue;
            double dot = 0.0;
            for (int c = 0; c < 3; ++c) dot += a.At(x, y, c) * b.At(x, y, c);
            expected += 1.0 - dot;
            ++count;
        }
    }
    ASSERT_GT(count, 0);
    EXPECT_NEAR(NormalCosineLoss(a, b, fg).value, expected / count, 1e-10);
}

// ---------------------------------------------------------------------------

TEST(NormalFromDepthBackwardTest, MatchesFiniteDifferences) {
    const CameraView view = SmallRing(1, 24).views[0];
    ImageBuffer depth(24, 24, 1, ImageSemantics::kDepth, 0.0);
    for (int y = 0; y < 24; ++y) {
        for (int x = 0; x < 24; ++x) {
            depth.At(x, y) = 2.5 + 0.15 * std::sin(0.7 * x) + 0.12 * std::cos(0.5 * y + 0.3);
        }
    }
    const ImageBuffer upstream = RandomUnitNormals(24, 24, 13);
    const auto objective = [&](const ImageBuffer& d) {
        const ImageBuffer normals = RenderNormalFromDepth(d, view);
        double total = 0.0;
        for (std::size_t i = 0; i < normals.data.size(); ++i) {
            total += normals.data[i] * upstream.data[i];
        }
        return total;
    };
    const ImageBuffer d_depth = NormalFromDepthBackward(depth, view, upstream);
    const double h = 1e-6;
    Rng rng(14);
    for (int trial = 0; trial < 25; ++trial) {
        const int x = static_cast<int>(rng.NextBelow(24));
        const int y = static_cast<int>(rng.NextBelow(24));
        ImageBuffer plus = depth, minus = depth;
        plus.At(x, y) += h;
        minus.At(x, y) -= h;
        const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
        EXPECT_NEAR(d_depth.At(x, y), fd, 1e-4 * std::max({std::abs(fd), 1.0}))
            << "pixel (" << x << ", " << y << ")";
    }
}

// ---------------------------------------------------------------------------

TEST(ComputeRefineLossesTest, StationaryAtSelfConsistentTarget) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams params = IdentityParams(tpl);
    const CameraRig ring = SmallRing(1, 128);
    const ImageBuffer front = TemplateMask(params, ring.views[0]);
    RefineConfig config;
    config.lambda_side = 0.0;
    config.lambda_normal = 0.0;
    const RefineIteration it = ComputeRefineLosses(tpl, params, front, ring, {}, {}, config);
    EXPECT_DOUBLE_EQ(it.l_front, 0.0);
    EXPECT_LE(it.grad.Flatten().norm(), 1e-6);
}

TEST(ComputeRefineLossesTest, TotalEqualsWeightedSumOfTerms) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const BodyParams params = PerturbedPose(gt, 0.05, 15);
    const CameraRig ring = SmallRing(4, 96);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);
    std::vector<ImageBuffer> side_masks;
    for (int v = 1; v < 4; ++v) side_masks.push_back(TemplateMask(gt, ring.views[v]));

    RefineProviders providers;
    const RenderOutput gt_render = RasterizeTiled(SplatTemplate(tpl, gt), ring.views[0]);
    providers.normals[0] = RenderNormalFromDepth(gt_render.depth, ring.views[0]);
    providers.keypoints.assign(22, Vec2(48.0, 48.0));
    providers.keypoint_confidence = Eigen::VectorXd::Ones(22);

    RefineConfig config;
    config.lambda_keypoint = 0.25;
    const RefineIteration it =
        ComputeRefineLosses(tpl, params, front, ring, side_masks, providers, config);
    EXPECT_GT(it.l_front, 0.0);
    EXPECT_GT(it.l_side, 0.0);
    EXPECT_GT(it.l_normal, 0.0);
    EXPECT_GT(it.l_keypoint, 0.0);
    EXPECT_DOUBLE_EQ(it.total,
                     config.lambda_front * it.l_front + config.lambda_side * it.l_side +
                         config.lambda_normal * it.l_normal +
                         config.lambda_keypoint * it.l_keypoint);
}

// A two-joint blob keeps the splat count low enough that the renderer's
// footprint truncation does not contaminate finite differences; on the full
// body the truncation flux is comparable to the silhouette gradient itself.
BodyTemplate TinyTemplate() {
    BodyTemplate tpl;
    Rng rng(42);
    tpl.rest_joints = {Vec3(0.0, 0.0, 0.0), Vec3(0.0, 0.4, 0.0)};
    tpl.parents = {-1, 0};
    for (int i = 0; i < 24; ++i) {
        const double t = i / 23.0;
        const Vec3 center(0.0, 0.55 * t - 0.05, 0.0);
        tpl.rest_vertices.push_back(center +
                                    0.22 * Vec3(rng.Normal(), rng.Normal(), rng.Normal()));
    }
    tpl.faces = {{0, 1, 2}, {3, 4, 5}};
    tpl.weights.resize(24, 2);
    for (int i = 0; i < 24; ++i) {
        const double w = std::clamp((tpl.rest_vertices[static_cast<std::size_t>(i)].y() + 0.05) /
                                        0.55,
                                    0.0, 1.0);
        tpl.weights(i, 0) = 1.0 - w;
        tpl.weights(i, 1) = w;
    }
    Eigen::Matrix<double, Eigen::Dynamic, 3> basis(24, 3);
    for (int i = 0; i < 24; ++i) {
        basis.row(i) = 0.05 * Vec3(rng.Normal(), rng.Normal(), rng.Normal()).transpose();
    }
    tpl.shape_basis.push_back(basis);
    tpl.Validate();
    return tpl;
}

TEST(ComputeRefineLossesTest, MaskGradientMatchesFiniteDifferences) {
    const BodyTemplate tpl = TinyTemplate();
    const BodyParams gt = IdentityParams(tpl);
    BodyParams params = gt;
    Rng rng(16);
    for (auto& joint : params.pose) {
        joint += 0.05 * Vec3(rng.Normal(), rng.Normal(), rng.Normal());
    }
    params.shape[0] = 0.3;

    const CameraRig ring = SmallRing(3, 64);
    RefineConfig config;
    config.lambda_normal = 0.0;
    config.splat_sigma = 0.1;
    const ImageBuffer front =
        RasterizeTiled(SplatTemplate(tpl, gt, config.splat_sigma), ring.views[0]).alpha;
    std::vector<ImageBuffer> side_masks;
    for (int v = 1; v < 3; ++v) {
        side_masks.push_back(
            RasterizeTiled(SplatTemplate(tpl, gt, config.splat_sigma), ring.views[v]).alpha);
    }
    const auto losses = [&](const BodyParams& p) {
        return ComputeRefineLosses(tpl, p, front, ring, side_masks, {}, config);
    };
    const Eigen::VectorXd grad = losses(params).grad.Flatten();
    EXPECT_GT(grad.norm(), 1e-3);

    const double h = 1e-5;
    const int dim = BodyParamCount(tpl.JointCount(), tpl.ShapeCount());
    for (int index = 0; index < dim; ++index) {
        Eigen::VectorXd xp = FlattenParams(params), xm = xp;
        xp[index] += h;
        xm[index] -= h;
        const double lp =
            losses(UnflattenParams(tpl.JointCount(), tpl.ShapeCount(), xp)).total;
        const double lm =
            losses(UnflattenParams(tpl.JointCount(), tpl.ShapeCount(), xm)).total;
        const double fd = (lp - lm) / (2.0 * h);
        EXPECT_NEAR(grad[index], fd, 0.03 * std::max(std::abs(fd), 0.01))
            << "parameter " << index;
    }
}

TEST(ComputeRefineLossesTest, KeypointGradientMatchesFiniteDifferences) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams params = PerturbedPose(IdentityParams(tpl), 0.02, 17);
    const CameraRig ring = SmallRing(1, 64);
    const ImageBuffer front = TemplateMask(params, ring.views[0]);

    RefineProviders providers;
    providers.keypoints.assign(22, Vec2(20.0, 30.0));
    providers.keypoint_confidence = Eigen::VectorXd::Ones(22);

    RefineConfig config;
    config.lambda_front = 0.0;
    config.lambda_side = 0.0;
    config.lambda_normal = 0.0;
    config.lambda_keypoint = 1.0;
    const auto losses = [&](const BodyParams& p) {
        return ComputeRefineLosses(tpl, p, front, ring, {}, providers, config);
    };
    const Eigen::VectorXd grad = losses(params).grad.Flatten();
    EXPECT_GT(grad.norm(), 0.0);

    const double h = 1e-6;
    const int global_base = 3 * tpl.JointCount() + tpl.ShapeCount();
    for (int index : {3, 10, global_base + 3, global_base + 4}) {
        Eigen::VectorXd xp = FlattenParams(params), xm = xp;
        xp[index] += h;
        xm[index] -= h;
        const double lp =
            losses(UnflattenParams(tpl.JointCount(), tpl.ShapeCount(), xp)).total;
        const double lm =
            losses(UnflattenParams(tpl.JointCount(), tpl.ShapeCount(), xm)).total;
        const double fd = (lp - lm) / (2.0 * h);
        EXPECT_NEAR(grad[index], fd, 1e-4 * std::max(std::abs(fd), 1.0)) << "parameter " << index;
    }
}

// ---------------------------------------------------------------------------

TEST(RefineBodyTest, ZeroNoiseStartIsAFixedPoint) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const CameraRig ring = SmallRing(12, 128);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);
    const RefineConfig config;
    const RefineResult result =
        RefineBody(tpl, gt, front, ring, FixedCloudPredictor(gt), config);

    ASSERT_EQ(result.trace.size(), 45u);
    for (const auto& row : result.trace) EXPECT_DOUBLE_EQ(row.total, 0.0);
    const Eigen::VectorXd drift = FlattenParams(result.params) - FlattenParams(gt);
    for (int j = 0; j < tpl.JointCount(); ++j) {
        EXPECT_LT(drift.segment<3>(3 * j).norm(), 1e-3) << "joint " << j;
    }
    EXPECT_DOUBLE_EQ(drift.norm(), 0.0);
}

TEST(RefineBodyTest, RecoversFromPerturbedPose) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const BodyParams noisy = PerturbedPose(gt, 0.1, 18);
    const CameraRig ring = SmallRing(12, 128);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);
    const std::vector<Vec3> gt_joints = Keypoints3d(tpl, gt);

    const double initial_error = JointError(noisy, gt);
    const RefineConfig config;
    const RefineResult result = RefineBody(tpl, noisy, front, ring, FixedCloudPredictor(gt),
                                           config, {}, &gt_joints);
    const double final_error = JointError(result.params, gt);
    EXPECT_LT(final_error, 0.5 * initial_error);
    ASSERT_EQ(result.trace.size(), 45u);
    EXPECT_NEAR(result.trace.front().mpjpe, initial_error, 1e-12);
    EXPECT_LT(result.trace.back().total, result.trace.front().total);
}

TEST(RefineBodyTest, PredictorRefreshFollowsTheSchedule) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const BodyParams noisy = PerturbedPose(gt, 0.05, 19);
    const CameraRig ring = SmallRing(4, 64);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);

    int calls = 0;
    int with_body = 0;
    RefineConfig config;
    config.iterations = 31;
    config.gs_update_every = 15;
    RefineBody(tpl, noisy, front, ring, FixedCloudPredictor(gt, &calls, &with_body), config);
    EXPECT_EQ(calls, 3);
    EXPECT_EQ(with_body, 2);
}

TEST(RefineBodyTest, AblationDisablesSideSupervision) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const BodyParams noisy = PerturbedPose(gt, 0.05, 20);
    const CameraRig ring = SmallRing(4, 64);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);

    int calls = 0;
    RefineConfig config;
    config.iterations = 8;
    config.gs_update_every = 9;
    ASSERT_FALSE(config.SideViewsEnabled());
    const RefineResult result =
        RefineBody(tpl, noisy, front, ring, FixedCloudPredictor(gt, &calls), config);
    EXPECT_EQ(calls, 1);
    EXPECT_GT(result.cloud.Size(), 0u);
    for (const auto& row : result.trace) {
        EXPECT_DOUBLE_EQ(row.l_side, 0.0);
        EXPECT_DOUBLE_EQ(row.total,
                         config.lambda_front * row.l_front + config.lambda_side * row.l_side +
                             config.lambda_normal * row.l_normal);
    }
}

TEST(RefineBodyTest, PredictorFailuresCarryTheIterationIndex) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const CameraRig ring = SmallRing(2, 64);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);
    const CloudPredictor failing = [](const Mesh*) -> GaussianCloud {
        throw std::runtime_error("backend offline");
    };
    RefineConfig config;
    config.iterations = 4;
    try {
        RefineBody(tpl, gt, front, ring, failing, config);
        FAIL() << "expected the predictor failure to propagate";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 0"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("backend offline"), std::string::npos);
    }
}

TEST(RefineBodyTest, ConfigValidationRejectsBadValues) {
    RefineConfig config;
    config.iterations = 0;
    EXPECT_THROW(config.Validate(), std::invalid_argument);
    config = RefineConfig{};
    config.lambda_side = -1.0;
    EXPECT_THROW(config.Validate(), std::invalid_argument);
    config = RefineConfig{};
    config.step = 0.0;
    EXPECT_THROW(config.Validate(), std::invalid_argument);
    config = RefineConfig{};
    config.beta2 = 1.0;
    EXPECT_THROW(config.Validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------

class RefineTraceTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() / "gf_refine_trace_test";
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }
    std::filesystem::path dir_;
};

TEST_F(RefineTraceTest, CsvCarriesLossColumnsAndOptionalMpjpe) {
    const BodyTemplate& tpl = SharedTemplate();
    const BodyParams gt = IdentityParams(tpl);
    const BodyParams noisy = PerturbedPose(gt, 0.05, 21);
    const CameraRig ring = SmallRing(3, 64);
    const ImageBuffer front = TemplateMask(gt, ring.views[0]);
    const std::vector<Vec3> gt_joints = Keypoints3d(tpl, gt);

    RefineConfig config;
    config.iterations = 3;
    const RefineResult with_gt = RefineBody(tpl, noisy, front, ring, FixedCloudPredictor(gt),
                                            config, {}, &gt_joints);
    const std::string path = (dir_ / "trace.csv").string();
    SaveRefineTrace(path, with_gt.trace);

    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "iteration,l_front,l_side,l_normal,total,mpjpe");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        std::stringstream row(lines[i]);
        std::string field;
        int fields = 0;
        while (std::getline(row, field, ',')) ++fields;
        EXPECT_EQ(fields, 6);
    }

    const RefineResult without_gt =
        RefineBody(tpl, noisy, front, ring, FixedCloudPredictor(gt), config);
    const std::string path2 = (dir_ / "trace_plain.csv").string();
    SaveRefineTrace(path2, without_gt.trace);
    std::ifstream in2(path2);
    std::string header;
    std::getline(in2, header);
    EXPECT_EQ(header, "iteration,l_front,l_side,l_normal,total");
}

}  // namespace
}  // namespace gf
