// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "gaussforge/metrics.hpp"
#include "gaussforge/rng.hpp"

namespace gf {
namespace {

ImageBuffer RandomImage(int width, int height, int channels, std::uint64_t seed) {
    ImageBuffer image(width, height, channels, ImageSemantics::kFeature);
    Rng rng(seed);
    for (double& v : image.data) v = rng.Uniform();
    return image;
}

std::vector<Vec3> RandomPoints(int count, std::uint64_t seed, double radius = 1.0) {
    Rng rng(seed);
    std::vector<Vec3> points(static_cast<std::size_t>(count));
    for (auto& p : points) {
        p = Vec3(rng.Uniform(-radius, radius), rng.Uniform(-radius, radius),
                 rng.Uniform(-radius, radius));
    }
    return points;
}

Mesh UvSphere(double radius, int rings, int segments) {
    Mesh mesh;
    mesh.vertices.push_back(Vec3(0.0, radius, 0.0));
    for (int i = 1; i < rings; ++i) {
        const double theta = kPi * i / rings;
        for (int j = 0; j < segments; ++j) {
            const double phi = 2.0 * kPi * j / segments;
            mesh.vertices.push_back(radius * Vec3(std::sin(theta) * std::cos(phi),
                                                  std::cos(theta),
                                                  std::sin(theta) * std::sin(phi)));
        }
    }
    mesh.vertices.push_back(Vec3(0.0, -radius, 0.0));
    const auto ring_vertex = [&](int ring, int seg) {
        return 1 + (ring - 1) * segments + (seg % segments);
    };
    const int bottom = static_cast<int>(mesh.vertices.size()) - 1;
    for (int j = 0; j < segments; ++j) {
        mesh.faces.push_back({0, ring_vertex(1, j), ring_vertex(1, j + 1)});
    }
    for (int i = 1; i < rings - 1; ++i) {
        for (int j = 0; j < segments; ++j) {
            const int a = ring_vertex(i, j);
            const int b = ring_vertex(i, j + 1);
            const int c = ring_vertex(i + 1, j);
            const int d = ring_vertex(i + 1, j + 1);
            mesh.faces.push_back({a, d, b});
            mesh.faces.push_back({a, c, d});
        }
    }
    for (int j = 0; j < segments; ++j) {
        mesh.faces.push_back({bottom, ring_vertex(rings - 1, j + 1), ring_vertex(rings - 1, j)});
    }
    return mesh;
}

Mesh FlipFaces(Mesh mesh) {
    for (auto& face : mesh.faces) std::swap(face[1], face[2]);
    return mesh;
}

Mesh TransformMesh(const Mesh& mesh, const Mat3& rotation, const Vec3& translation) {
    Mesh out = mesh;
    for (auto& v : out.vertices) v = rotation * v + translation;
    return out;
}

Mat3 TestRotation() {
    return Eigen::AngleAxisd(0.7, Vec3(0.3, -1.0, 0.5).normalized()).toRotationMatrix();
}

// ---------------------------------------------------------------------------

TEST(PsnrTest, IdenticalImagesHitTheCap) {
    const ImageBuffer a = RandomImage(17, 13, 3, 1);
    EXPECT_DOUBLE_EQ(Psnr(a, a), kPsnrCap);
}

TEST(PsnrTest, UniformHalfStepIsClosedForm) {
    const ImageBuffer a(8, 8, 1, ImageSemantics::kFeature, 0.0);
    const ImageBuffer b(8, 8, 1, ImageSemantics::kFeature, 0.5);
    EXPECT_NEAR(Psnr(a, b), 10.0 * std::log10(4.0), 1e-9);
    EXPECT_NEAR(Psnr(a, b), 6.0205999132796239, 1e-9);
}

TEST(PsnrTest, MatchesBruteForceMse) {
    const ImageBuffer a = RandomImage(23, 19, 3, 2);
    const ImageBuffer b = RandomImage(23, 19, 3, 3);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sum += d * d;
    }
    const double expected = 10.0 * std::log10(static_cast<double>(a.data.size()) / sum);
    EXPECT_NEAR(Psnr(a, b), expected, 1e-9);
}

TEST(PsnrTest, MaskRestrictsThePixelSet) {
    ImageBuffer a = RandomImage(16, 16, 3, 4);
    ImageBuffer b = a;
    ImageBuffer mask(16, 16, 1, ImageSemantics::kMask, 0.0);
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 8; ++x) mask.At(x, y) = 1.0;
    }
    for (int y = 0; y < 16; ++y) {
        for (int x = 8; x < 16; ++x) b.At(x, y, 0) += 0.25;
    }
    EXPECT_DOUBLE_EQ(Psnr(a, b, &mask), kPsnrCap);
    EXPECT_LT(Psnr(a, b), kPsnrCap);

    double sum = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < 16; ++y) {
        for (int x = 0; x < 16; ++x) {
            if (mask.At(x, y) < 0.5) continue;
            for (int c = 0; c < 3; ++c) {
                const double d = a.At(x, y, c) - b.At(x, y, c);
                sum += d * d;
            }
            count += 3;
        }
    }
    b.At(2, 3, 1) += 0.1;
    sum += 0.1 * 0.1;
    EXPECT_NEAR(Psnr(a, b, &mask), 10.0 * std::log10(static_cast<double>(count) / sum), 1e-9);
}

TEST(PsnrTest, RejectsBadInputs) {
    const ImageBuffer a = RandomImage(8, 8, 3, 5);
    const ImageBuffer wrong = RandomImage(8, 9, 3, 5);
    EXPECT_THROW(Psnr(a, wrong), std::invalid_argument);
    const ImageBuffer bad_mask = RandomImage(8, 8, 3, 5);
    EXPECT_THROW(Psnr(a, a, &bad_mask), std::invalid_argument);
    const ImageBuffer empty_mask(8, 8, 1, ImageSemantics::kMask, 0.0);
    EXPECT_THROW(Psnr(a, a, &empty_mask), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(SsimTest, IdenticalImagesScoreOne) {
    const ImageBuffer a = RandomImage(20, 14, 3, 6);
    EXPECT_NEAR(Ssim(a, a), 1.0, 1e-12);
}

TEST(SsimTest, NegativeImageScoresBelowZero) {
    const ImageBuffer a = RandomImage(32, 32, 1, 7);
    ImageBuffer b = a;
    for (double& v : b.data) v = 1.0 - v;
    EXPECT_LT(Ssim(a, b), 0.0);
}

TEST(SsimTest, MatchesPerWindowOracle) {
    const ImageBuffer a = RandomImage(32, 24, 3, 8);
    const ImageBuffer b = RandomImage(32, 24, 3, 9);

    const auto luma = [](const ImageBuffer& img, int x, int y) {
        return 0.299 * img.At(x, y, 0) + 0.587 * img.At(x, y, 1) + 0.114 * img.At(x, y, 2);
    };
    std::vector<double> kernel(11);
    double kernel_total = 0.0;
    for (int i = 0; i < 11; ++i) {
        kernel[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 5) * (i - 5) / 2.25);
        kernel_total += kernel[static_cast<std::size_t>(i)];
    }
    for (double& v : kernel) v /= kernel_total;

    double total = 0.0;
    int windows = 0;
    for (int cy = 5; cy < a.height - 5; ++cy) {
        for (int cx = 5; cx < a.width - 5; ++cx) {
            double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (int dy = -5; dy <= 5; ++dy) {
                for (int dx = -5; dx <= 5; ++dx) {
                    const double w = kernel[static_cast<std::size_t>(dy + 5)] *
                                     kernel[static_cast<std::size_t>(dx + 5)];
                    const double va = luma(a, cx + dx, cy + dy);
                    const double vb = luma(b, cx + dx, cy + dy);
                    mu_a += w * va;
                    mu_b += w * vb;
                    aa += w * va * va;
                    bb += w * vb * vb;
                    ab += w * va * vb;
                }
            }
            const double c1 = 1e-4;
            const double c2 = 9e-4;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * (ab - mu_a * mu_b) + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) *
                      (aa - mu_a * mu_a + bb - mu_b * mu_b + c2));
            ++windows;
        }
    }
    EXPECT_NEAR(Ssim(a, b), total / windows, 1e-6);
}

TEST(SsimTest, RejectsImagesSmallerThanTheWindow) {
    const ImageBuffer small = RandomImage(10, 16, 1, 10);
    EXPECT_THROW(Ssim(small, small), std::invalid_argument);
    const ImageBuffer a = RandomImage(16, 16, 1, 10);
    const ImageBuffer wrong = RandomImage(16, 17, 1, 10);
    EXPECT_THROW(Ssim(a, wrong), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(MaskIouTest, HandlesIdenticalDisjointAndPartialMasks) {
    ImageBuffer a(4, 1, 1, ImageSemantics::kMask, 0.0);
    ImageBuffer b(4, 1, 1, ImageSemantics::kMask, 0.0);
    a.At(0, 0) = a.At(1, 0) = 1.0;
    b.At(0, 0) = b.At(1, 0) = b.At(2, 0) = b.At(3, 0) = 1.0;
    EXPECT_DOUBLE_EQ(MaskIou(a, a), 1.0);
    EXPECT_DOUBLE_EQ(MaskIou(a, b), 0.5);

    ImageBuffer c(4, 1, 1, ImageSemantics::kMask, 0.0);
    c.At(2, 0) = c.At(3, 0) = 1.0;
    EXPECT_DOUBLE_EQ(MaskIou(a, c), 0.0);

    const ImageBuffer empty(4, 1, 1, ImageSemantics::kMask, 0.0);
    EXPECT_DOUBLE_EQ(MaskIou(empty, empty), 1.0);
    EXPECT_THROW(MaskIou(a, RandomImage(4, 1, 3, 1)), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(ChamferTest, UnitSeparationScoresOneCentimeterPerUnit) {
    const std::vector<Vec3> a{Vec3(0.0, 0.0, 0.0)};
    const std::vector<Vec3> b{Vec3(1.0, 0.0, 0.0)};
    EXPECT_DOUBLE_EQ(ChamferDistance(a, b, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(ChamferDistance(a, b, 100.0), 100.0);
}

TEST(ChamferTest, MatchesBruteForceOnRandomClouds) {
    const std::vector<Vec3> a = RandomPoints(600, 11);
    const std::vector<Vec3> b = RandomPoints(700, 12);
    const auto brute_mean = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        double total = 0.0;
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
            total += std::sqrt(best);
        }
        return total / static_cast<double>(from.size());
    };
    const double expected = 0.5 * (brute_mean(a, b) + brute_mean(b, a)) * 100.0;
    EXPECT_NEAR(ChamferDistance(a, b, 100.0), expected, 1e-9);
}

TEST(ChamferTest, IndexNearestEqualsLinearScan) {
    const std::vector<Vec3> cloud = RandomPoints(1500, 13);
    const metricsdetail::KdTree3 tree(cloud);
    const std::vector<Vec3> queries = RandomPoints(200, 14, 1.5);
    for (const auto& q : queries) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& p : cloud) best = std::min(best, (p - q).squaredNorm());
        EXPECT_DOUBLE_EQ(tree.Nearest(q).distance_squared, best);
    }
}

TEST(ChamferTest, SymmetryIsExact) {
    const std::vector<Vec3> a = RandomPoints(400, 15);
    const std::vector<Vec3> b = RandomPoints(350, 16);
    EXPECT_EQ(ChamferDistance(a, b, 37.5), ChamferDistance(b, a, 37.5));
}

TEST(ChamferTest, InvariantUnderRigidTransforms) {
    const std::vector<Vec3> a = RandomPoints(500, 17);
    const std::vector<Vec3> b = RandomPoints(450, 18);
    const Mat3 rotation = TestRotation();
    const Vec3 translation(0.3, -0.2, 0.5);
    std::vector<Vec3> ra(a.size()), rb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ra[i] = rotation * a[i] + translation;
    for (std::size_t i = 0; i < b.size(); ++i) rb[i] = rotation * b[i] + translation;
    EXPECT_NEAR(ChamferDistance(a, b, 100.0), ChamferDistance(ra, rb, 100.0), 1e-8);
}

TEST(ChamferTest, MeshOverloadMatchesSampledPoints) {
    const Mesh sphere = UvSphere(0.8, 10, 14);
    const Mesh shifted = TransformMesh(sphere, Mat3::Identity(), Vec3(0.05, 0.0, 0.0));
    const Rng rng(0);
    const double direct = ChamferDistance(
        metricsdetail::SamplePositions(sphere, 2000, rng.Substream("metrics.chamfer", 0)),
        metricsdetail::SamplePositions(shifted, 2000, rng.Substream("metrics.chamfer", 1)),
        100.0);
    EXPECT_DOUBLE_EQ(ChamferDistance(sphere, shifted, 100.0, 2000, 0), direct);
}

TEST(ChamferTest, RejectsEmptySetsAndBadScale) {
    const std::vector<Vec3> a = RandomPoints(4, 19);
    EXPECT_THROW(ChamferDistance(a, {}, 1.0), std::invalid_argument);
    EXPECT_THROW(ChamferDistance({}, a, 1.0), std::invalid_argument);
    EXPECT_THROW(ChamferDistance(a, a, 0.0), std::invalid_argument);
    EXPECT_THROW(ChamferDistance(a, a, -1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------

TEST(PointToSurfaceTest, SurfaceSamplesScoreZero) {
    const Mesh sphere = UvSphere(0.7, 12, 16);
    const Rng rng(1);
    const auto points = metricsdetail::SamplePositions(sphere, 500, rng.Substream("pts"));
    EXPECT_NEAR(PointToSurface(points, sphere, 100.0), 0.0, 1e-10);
}

TEST(PointToSurfaceTest, KnownOffsetsFromAUnitSquare) {
    Mesh square;
    square.vertices = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1, 1, 0), Vec3(0, 1, 0)};
    square.faces = {{0, 1, 2}, {0, 2, 3}};
    const std::vector<Vec3> above{Vec3(0.25, 0.25, 0.7)};
    EXPECT_NEAR(PointToSurface(above, square, 1.0), 0.7, 1e-12);
    const std::vector<Vec3> beside{Vec3(2.0, 0.5, 0.0)};
    EXPECT_NEAR(PointToSurface(beside, square, 10.0), 10.0, 1e-12);
}

TEST(PointToSurfaceTest, MatchesBruteForceTriangleLoop) {
    const Mesh sphere = UvSphere(0.6, 9, 12);
    const std::vector<Vec3> points = RandomPoints(300, 20, 1.2);
    double total = 0.0;
    for (const auto& p : points) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& face : sphere.faces) {
            const Vec3 q = ClosestPointOnTriangle(
                p, sphere.vertices[static_cast<std::size_t>(face[0])],
                sphere.vertices[static_cast<std::size_t>(face[1])],
                sphere.vertices[static_cast<std::size_t>(face[2])]);
            best = std::min(best, (p - q).norm());
        }
        total += best;
    }
    const double expected = total / static_cast<double>(points.size()) * 100.0;
    EXPECT_NEAR(PointToSurface(points, sphere, 100.0), expected, 1e-9);
}

TEST(PointToSurfaceTest, InvariantUnderRigidTransforms) {
    const Mesh sphere = UvSphere(0.6, 9, 12);
    const std::vector<Vec3> points = RandomPoints(200, 21, 1.2);
    const Mat3 rotation = TestRotation();
    const Vec3 translation(-0.4, 0.1, 0.8);
    std::vector<Vec3> moved(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) moved[i] = rotation * points[i] + translation;
    EXPECT_NEAR(PointToSurface(points, sphere, 100.0),
                PointToSurface(moved, TransformMesh(sphere, rotation, translation), 100.0), 1e-8);
}

// ---------------------------------------------------------------------------

TEST(NormalConsistencyTest, IdenticalMeshesScoreOne) {
    const Mesh sphere = UvSphere(0.8, 12, 16);
    EXPECT_NEAR(NormalConsistency(sphere, sphere, 2000, 0), 1.0, 1e-12);
}

TEST(NormalConsistencyTest, FlippedNormalsScoreMinusOne) {
    const Mesh sphere = UvSphere(0.8, 12, 16);
    EXPECT_NEAR(NormalConsistency(sphere, FlipFaces(sphere), 2000, 0), -1.0, 1e-12);
}

TEST(NormalConsistencyTest, NearbySpheresScoreCloseToOne) {
    const Mesh a = UvSphere(0.8, 16, 24);
    const Mesh b = UvSphere(0.82, 17, 23);
    const double nc = NormalConsistency(a, b, 2000, 0);
    EXPECT_GT(nc, 0.98);
    EXPECT_LE(nc, 1.0);
}

// ---------------------------------------------------------------------------

TEST(MpjpeTest, IdenticalJointsScoreZero) {
    const std::vector<Vec3> joints = RandomPoints(22, 22);
    EXPECT_DOUBLE_EQ(Mpjpe(joints, joints, 1000.0), 0.0);
}

TEST(MpjpeTest, UniformOffsetIsExactInMillimeters) {
    const std::vector<Vec3> a = RandomPoints(22, 23);
    std::vector<Vec3> b = a;
    for (auto& p : b) p += Vec3(0.003, 0.0, 0.004);
    EXPECT_NEAR(Mpjpe(a, b, 1000.0), 5.0, 1e-9);
}

TEST(MpjpeTest, NoAlignmentIsApplied) {
    const std::vector<Vec3> a = RandomPoints(22, 24);
    std::vector<Vec3> b(a.size());
    const Mat3 rotation = TestRotation();
    for (std::size_t i = 0; i < a.size(); ++i) b[i] = rotation * a[i];
    EXPECT_GT(Mpjpe(a, b, 1000.0), 1.0);
}

TEST(MpjpeTest, InvariantUnderSharedRigidTransforms) {
    const std::vector<Vec3> a = RandomPoints(22, 25);
    const std::vector<Vec3> b = RandomPoints(22, 26);
    const Mat3 rotation = TestRotation();
    const Vec3 translation(1.0, -2.0, 0.5);
    std::vector<Vec3> ra(a.size()), rb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ra[i] = rotation * a[i] + translation;
    for (std::size_t i = 0; i < b.size(); ++i) rb[i] = rotation * b[i] + translation;
    EXPECT_NEAR(Mpjpe(a, b, 1000.0), Mpjpe(ra, rb, 1000.0), 1e-8);
}

TEST(MpjpeTest, RejectsMismatchedAndEmptyInputs) {
    const std::vector<Vec3> a = RandomPoints(22, 27);
    const std::vector<Vec3> shorter = RandomPoints(21, 27);
    EXPECT_THROW(Mpjpe(a, shorter, 1000.0), std::invalid_argument);
    EXPECT_THROW(Mpjpe({}, {}, 1000.0), std::invalid_argument);
    EXPECT_THROW(Mpjpe(a, a, 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------

class MetricsIoTest : public ::testing::Test {
  protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() / "gf_metrics_io_test";
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }

    std::string Path(const std::string& name) const { return (dir_ / name).string(); }

    std::filesystem::path dir_;
};

TEST_F(MetricsIoTest, AggregateAveragesPerMetric) {
    MetricReport report;
    report.For("item0")["psnr"] = 10.0;
    report.For("item0")["ssim"] = 0.5;
    report.For("item1")["psnr"] = 20.0;
    const MetricValues mean = report.Aggregate();
    EXPECT_DOUBLE_EQ(mean.at("psnr"), 15.0);
    EXPECT_DOUBLE_EQ(mean.at("ssim"), 0.5);
}

TEST_F(MetricsIoTest, CsvHasOneRowPerItemPerMetric) {
    MetricReport report;
    report.For("a")["psnr"] = 31.25;
    report.For("a")["iou"] = 0.75;
    report.For("b")["psnr"] = 28.5;
    const std::string path = Path("metrics.csv");
    SaveMetricsCsv(path, report);

    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "item,metric,value");
    EXPECT_EQ(lines[1], "a,iou,0.75");
    EXPECT_EQ(lines[2], "a,psnr,31.25");
    EXPECT_EQ(lines[3], "b,psnr,28.5");
}

TEST_F(MetricsIoTest, JsonSummaryCarriesCountsAndMeans) {
    MetricReport report;
    report.For("a")["chamfer_cm"] = 1.5;
    report.For("b")["chamfer_cm"] = 2.5;
    const std::string path = Path("metrics.json");
    SaveMetricsJson(path, report);

    std::ifstream in(path);
    const nlohmann::json j = nlohmann::json::parse(in);
    EXPECT_EQ(j.at("items").get<int>(), 2);
    EXPECT_DOUBLE_EQ(j.at("mean").at("chamfer_cm").get<double>(), 2.0);
}

TEST_F(MetricsIoTest, ValidationRejectsOutOfRangeValues) {
    MetricReport bad_ssim;
    bad_ssim.For("a")["ssim"] = 1.5;
    EXPECT_THROW(bad_ssim.Validate(), std::invalid_argument);

    MetricReport bad_chamfer;
    bad_chamfer.For("a")["chamfer_cm"] = -0.1;
    EXPECT_THROW(bad_chamfer.Validate(), std::invalid_argument);

    MetricReport bad_psnr;
    bad_psnr.For("a")["psnr"] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(bad_psnr.Validate(), std::invalid_argument);

    MetricReport unknown;
    unknown.For("a")["custom_metric"] = -123.0;
    unknown.Validate();
}

TEST_F(MetricsIoTest, ScorePluginParsesChildProcessJson) {
    const std::string script = Path("scorer.sh");
    {
        std::ofstream out(script);
        out << "#!/bin/sh\n"
               "[ \"$1\" = \"score\" ] || exit 9\n"
               "[ \"$2\" = \"--a\" ] || exit 9\n"
               "[ \"$4\" = \"--b\" ] || exit 9\n"
               "echo '{\"lpips\": 0.125, \"kid\": 0.5}'\n";
    }
    std::filesystem::permissions(script, std::filesystem::perms::owner_all |
                                             std::filesystem::perms::group_read |
                                             std::filesystem::perms::others_read);
    const MetricValues values = RunScorePlugin(script, Path("dir_a"), Path("dir_b"));
    EXPECT_DOUBLE_EQ(values.at("lpips"), 0.125);
    EXPECT_DOUBLE_EQ(values.at("kid"), 0.5);
}

TEST_F(MetricsIoTest, ScorePluginFailuresRaiseIoErrors) {
    const std::string failing = Path("failing.sh");
    {
        std::ofstream out(failing);
        out << "#!/bin/sh\nexit 3\n";
    }
    std::filesystem::permissions(failing, std::filesystem::perms::owner_all);
    EXPECT_THROW(RunScorePlugin(failing, Path("a"), Path("b")), IoError);

    const std::string garbled = Path("garbled.sh");
    {
        std::ofstream out(garbled);
        out << "#!/bin/sh\necho 'not json'\n";
    }
    std::filesystem::permissions(garbled, std::filesystem::perms::owner_all);
    EXPECT_THROW(RunScorePlugin(garbled, Path("a"), Path("b")), IoError);
}

}  // namespace
}  // namespace gf
