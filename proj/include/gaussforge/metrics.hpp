#pragma once

// Reconstruction quality metrics: image fidelity (PSNR, SSIM), geometry
// (chamfer, point-to-surface, normal consistency), pose error (MPJPE), mask
// IoU, and the report plumbing the evaluation harness writes to disk.
//
// Distance metrics operate in world units and convert through an explicit
// scale argument supplied by the caller; nothing in this file guesses a unit.
// Nearest-neighbour queries go through exact spatial indices, so every value
// here equals its brute-force counterpart up to summation order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "gaussforge/bvh.hpp"
#include "gaussforge/common.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/mesh.hpp"
#include "gaussforge/parallel.hpp"
#include "gaussforge/rng.hpp"

namespace gf {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;
inline constexpr int kDefaultSurfaceSamples = 100000;

namespace metricsdetail {

// Rec. 601 luma weights.
inline ImageBuffer Luminance(const ImageBuffer& image) {
    Require(image.channels == 1 || image.channels == 3,
            "luminance conversion expects a 1- or 3-channel image");
    if (image.channels == 1) return image;
    ImageBuffer gray(image.width, image.height, 1, ImageSemantics::kFeature);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            gray.At(x, y) = 0.299 * image.At(x, y, 0) + 0.587 * image.At(x, y, 1) +
                            0.114 * image.At(x, y, 2);
        }
    }
    return gray;
}

inline std::array<double, kSsimWindow> SsimKernel1d() {
    std::array<double, kSsimWindow> k{};
    const int half = kSsimWindow / 2;
    double total = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = static_cast<double>(i - half);
        k[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d / (kSsimSigma * kSsimSigma));
        total += k[static_cast<std::size_t>(i)];
    }
    for (double& v : k) v /= total;
    return k;
}

// Exact nearest-neighbour index over a fixed point set. Median-split kd-tree
// with plane pruning; results match a linear scan bit for bit.
class KdTree3 {
  public:
    explicit KdTree3(const std::vector<Vec3>& points) : points_(points) {
        Require(!points_.empty(), "kd-tree needs at least one point");
        order_.resize(points_.size());
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(2 * points_.size() / kLeafSize + 2);
        Build(0, static_cast<int>(points_.size()));
    }

    struct Result {
        int index = -1;
        double distance_squared = std::numeric_limits<double>::infinity();
    };

    Result Nearest(const Vec3& query) const {
        Result best;
        Search(0, query, best);
        return best;
    }

  private:
    static constexpr int kLeafSize = 8;

    struct Node {
        int axis = -1;
        double split = 0.0;
        int left = -1;
        int right = -1;
        int begin = 0;
        int count = 0;
    };

    int Build(int begin, int end) {
        const int node_index = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        if (end - begin <= kLeafSize) {
            nodes_[static_cast<std::size_t>(node_index)].begin = begin;
            nodes_[static_cast<std::size_t>(node_index)].count = end - begin;
            return node_index;
        }
        Vec3 lo = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin)])];
        Vec3 hi = lo;
        for (int i = begin + 1; i < end; ++i) {
            const Vec3& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        int axis = 0;
        const Vec3 extent = hi - lo;
        extent.maxCoeff(&axis);
        const int mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                         [&](int a, int b) {
                             return points_[static_cast<std::size_t>(a)][axis] <
                                    points_[static_cast<std::size_t>(b)][axis];
                         });
        const double split =
            points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
        const int left = Build(begin, mid);
        const int right = Build(mid, end);
        Node& node = nodes_[static_cast<std::size_t>(node_index)];
        node.axis = axis;
        node.split = split;
        node.left = left;
        node.right = right;
        return node_index;
    }

    void Search(int node_index, const Vec3& query, Result& best) const {
        const Node& node = nodes_[static_cast<std::size_t>(node_index)];
        if (node.count > 0) {
            for (int i = node.begin; i < node.begin + node.count; ++i) {
                const int point_index = order_[static_cast<std::size_t>(i)];
                const double d2 =
                    (points_[static_cast<std::size_t>(point_index)] - query).squaredNorm();
                if (d2 < best.distance_squared) {
                    best.distance_squared = d2;
                    best.index = point_index;
                }
            }
            return;
        }
        const double delta = query[node.axis] - node.split;
        const int near = delta < 0.0 ? node.left : node.right;
        const int far = delta < 0.0 ? node.right : node.left;
        Search(near, query, best);
        if (delta * delta < best.distance_squared) Search(far, query, best);
    }

    const std::vector<Vec3>& points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

inline std::vector<Vec3> SamplePositions(const Mesh& mesh, int count, Rng rng) {
    const auto samples = SampleMeshSurface(mesh, count, rng);
    std::vector<Vec3> points(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) points[i] = samples[i].position;
    return points;
}

}  // namespace metricsdetail

// ---------------------------------------------------------------------------
// Image metrics

// Peak signal-to-noise ratio in dB over all channels, assuming a [0, 1] value
// range. An optional single-channel mask (values >= 0.5 select) restricts the
// pixel set. Identical images score the 99 dB cap.
inline double Psnr(const ImageBuffer& a, const ImageBuffer& b, const ImageBuffer* mask = nullptr) {
    Require(a.SameShape(b), "psnr: image shapes differ");
    if (mask != nullptr) {
        Require(mask->width == a.width && mask->height == a.height && mask->channels == 1,
                "psnr: mask must be single-channel and match the image size");
    }
    double sum = 0.0;
    std::int64_t count = 0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            if (mask != nullptr && mask->At(x, y) < 0.5) continue;
            for (int c = 0; c < a.channels; ++c) {
                const double d = a.At(x, y, c) - b.At(x, y, c);
                sum += d * d;
            }
            count += a.channels;
        }
    }
    Require(count > 0, "psnr: mask selects no pixels");
    const double mse = sum / static_cast<double>(count);
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5,
// k1 = 0.01, k2 = 0.03, value range 1). Colour images are compared on
// luminance. Only windows fully inside the image contribute, so inputs
// smaller than the window are rejected.
inline double Ssim(const ImageBuffer& a, const ImageBuffer& b) {
    Require(a.SameShape(b), "ssim: image shapes differ");
    Require(a.width >= kSsimWindow && a.height >= kSsimWindow,
            "ssim: image is smaller than the filter window");
    const ImageBuffer ga = metricsdetail::Luminance(a);
    const ImageBuffer gb = metricsdetail::Luminance(b);
    const auto kernel = metricsdetail::SsimKernel1d();
    const int half = kSsimWindow / 2;
    const double c1 = kSsimK1 * kSsimK1;
    const double c2 = kSsimK2 * kSsimK2;

    const int rows = a.height - kSsimWindow + 1;
    const int cols = a.width - kSsimWindow + 1;
    std::vector<double> row_sums(static_cast<std::size_t>(rows), 0.0);
    ParallelFor(rows, 4, [&](std::int64_t r) {
        const int cy = static_cast<int>(r) + half;
        double row_sum = 0.0;
        for (int cx = half; cx < half + cols; ++cx) {
            double mu_a = 0.0, mu_b = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (int dy = -half; dy <= half; ++dy) {
                const double wy = kernel[static_cast<std::size_t>(dy + half)];
                for (int dx = -half; dx <= half; ++dx) {
                    const double w = wy * kernel[static_cast<std::size_t>(dx + half)];
                    const double va = ga.At(cx + dx, cy + dy);
                    const double vb = gb.At(cx + dx, cy + dy);
                    mu_a += w * va;
                    mu_b += w * vb;
                    aa += w * va * va;
                    bb += w * vb * vb;
                    ab += w * va * vb;
                }
            }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            row_sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
        row_sums[static_cast<std::size_t>(r)] = row_sum;
    });
    double total = 0.0;
    for (double v : row_sums) total += v;
    return total / (static_cast<double>(rows) * static_cast<double>(cols));
}

// Intersection over union of two binary masks; values >= threshold count as
// set. Two empty masks are identical, so they score 1.
inline double MaskIou(const ImageBuffer& a, const ImageBuffer& b, double threshold = 0.5) {
    Require(a.SameShape(b), "iou: mask shapes differ");
    Require(a.channels == 1, "iou: masks must be single-channel");
    std::int64_t inter = 0;
    std::int64_t uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool va = a.data[i] >= threshold;
        const bool vb = b.data[i] >= threshold;
        inter += (va && vb) ? 1 : 0;
        uni += (va || vb) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// Geometry metrics

// Symmetric chamfer distance in centimeters:
//   0.5 * (mean_a min_b |a - b| + mean_b min_a |b - a|) * world_to_cm.
inline double ChamferDistance(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                              double world_to_cm) {
    Require(!a.empty() && !b.empty(), "chamfer: point sets must be non-empty");
    Require(world_to_cm > 0.0, "chamfer: world_to_cm must be positive");
    const metricsdetail::KdTree3 tree_a(a);
    const metricsdetail::KdTree3 tree_b(b);
    const auto mean_nearest = [](const std::vector<Vec3>& from,
                                 const metricsdetail::KdTree3& to) {
        std::vector<double> dist(from.size(), 0.0);
        ParallelFor(static_cast<std::int64_t>(from.size()), 256, [&](std::int64_t i) {
            dist[static_cast<std::size_t>(i)] =
                std::sqrt(to.Nearest(from[static_cast<std::size_t>(i)]).distance_squared);
        });
        double total = 0.0;
        for (double d : dist) total += d;
        return total / static_cast<double>(from.size());
    };
    return 0.5 * (mean_nearest(a, tree_b) + mean_nearest(b, tree_a)) * world_to_cm;
}

// Chamfer distance between two meshes via area-weighted surface samples.
inline double ChamferDistance(const Mesh& a, const Mesh& b, double world_to_cm,
                              int samples = kDefaultSurfaceSamples, std::uint64_t seed = 0) {
    const Rng rng(seed);
    return ChamferDistance(
        metricsdetail::SamplePositions(a, samples, rng.Substream("metrics.chamfer", 0)),
        metricsdetail::SamplePositions(b, samples, rng.Substream("metrics.chamfer", 1)),
        world_to_cm);
}

// Mean exact point-to-triangle distance from the points to the mesh surface,
// in centimeters. Deliberately one-sided: it reports how far the points sit
// from the reference surface and says nothing about coverage of that surface.
inline double PointToSurface(const std::vector<Vec3>& points, const Mesh& mesh,
                             double world_to_cm) {
    Require(!points.empty(), "point-to-surface: point set must be non-empty");
    Require(world_to_cm > 0.0, "point-to-surface: world_to_cm must be positive");
    const TriangleBvh bvh(mesh);
    std::vector<double> dist(points.size(), 0.0);
    ParallelFor(static_cast<std::int64_t>(points.size()), 256, [&](std::int64_t i) {
        dist[static_cast<std::size_t>(i)] = bvh.ClosestPoint(points[static_cast<std::size_t>(i)]).distance;
    });
    double total = 0.0;
    for (double d : dist) total += d;
    return total / static_cast<double>(points.size()) * world_to_cm;
}

// Point-to-surface distance from samples of mesh a to the surface of mesh b.
inline double PointToSurface(const Mesh& a, const Mesh& b, double world_to_cm,
                             int samples = kDefaultSurfaceSamples, std::uint64_t seed = 0) {
    const Rng rng(seed);
    return PointToSurface(metricsdetail::SamplePositions(a, samples, rng.Substream("metrics.p2s")),
                          b, world_to_cm);
}

// Symmetrised mean cosine between sample normals on one mesh and the normal
// at the nearest surface point of the other. Ranges over [-1, 1]; identical
// meshes score 1, flipping every face of one mesh scores -1.
inline double NormalConsistency(const Mesh& a, const Mesh& b,
                                int samples = kDefaultSurfaceSamples, std::uint64_t seed = 0) {
    Require(samples > 0, "normal consistency: sample count must be positive");
    const Rng rng(seed);
    const auto one_way = [samples](const Mesh& from, const Mesh& to, Rng stream) {
        const auto points = SampleMeshSurface(from, samples, stream);
        const TriangleBvh bvh(to);
        std::vector<double> cosine(points.size(), 0.0);
        ParallelFor(static_cast<std::int64_t>(points.size()), 256, [&](std::int64_t i) {
            const auto& sample = points[static_cast<std::size_t>(i)];
            const auto hit = bvh.ClosestPoint(sample.position);
            cosine[static_cast<std::size_t>(i)] = sample.normal.dot(FaceNormal(to, hit.face));
        });
        double total = 0.0;
        for (double c : cosine) total += c;
        return total / static_cast<double>(points.size());
    };
    return 0.5 * (one_way(a, b, rng.Substream("metrics.nc", 0)) +
                  one_way(b, a, rng.Substream("metrics.nc", 1)));
}

// Mean per-joint position error in millimeters. No alignment is applied: the
// joints are compared in the frame they come in.
inline double Mpjpe(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double world_to_mm) {
    Require(a.size() == b.size(), "mpjpe: joint counts differ");
    Require(!a.empty(), "mpjpe: joint sets must be non-empty");
    Require(world_to_mm > 0.0, "mpjpe: world_to_mm must be positive");
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += (a[i] - b[i]).norm();
    return total / static_cast<double>(a.size()) * world_to_mm;
}

// ---------------------------------------------------------------------------
// Reports

// Named scalar values for one evaluated item.
using MetricValues = std::map<std::string, double>;

// Range checks for the metric names this library produces; unknown names just
// have to be finite.
inline void ValidateMetricValues(const MetricValues& values) {
    for (const auto& [name, value] : values) {
        Require(std::isfinite(value), "metric '" + name + "' is not finite");
        if (name == "psnr") {
            Require(value >= 0.0 && value <= kPsnrCap, "psnr out of range");
        } else if (name == "ssim" || name == "normal_consistency") {
            Require(value >= -1.0 && value <= 1.0, "metric '" + name + "' out of [-1, 1]");
        } else if (name == "chamfer_cm" || name == "p2s_cm" || name == "mpjpe_mm" ||
                   name == "lpips" || name == "kid") {
            Require(value >= 0.0, "metric '" + name + "' must be non-negative");
        } else if (name == "iou") {
            Require(value >= 0.0 && value <= 1.0, "iou out of [0, 1]");
        }
    }
}

// Per-item metric rows plus a mean aggregate, in insertion order.
struct MetricReport {
    std::vector<std::pair<std::string, MetricValues>> items;

    MetricValues& For(const std::string& item) {
        for (auto& [name, values] : items) {
            if (name == item) return values;
        }
        items.emplace_back(item, MetricValues{});
        return items.back().second;
    }

    // Mean of each metric over the items that report it.
    MetricValues Aggregate() const {
        MetricValues sums;
        std::map<std::string, int> counts;
        for (const auto& [item, values] : items) {
            for (const auto& [name, value] : values) {
                sums[name] += value;
                counts[name] += 1;
            }
        }
        for (auto& [name, value] : sums) value /= static_cast<double>(counts[name]);
        return sums;
    }

    void Validate() const {
        for (const auto& [item, values] : items) {
            Require(!item.empty(), "metric report has an unnamed item");
            ValidateMetricValues(values);
        }
    }
};

namespace metricsdetail {

inline std::string FormatValue(double value) {
    std::ostringstream out;
    out.precision(17);
    out << value;
    return out.str();
}

}  // namespace metricsdetail

// CSV with one row per item per metric: item,metric,value.
inline void SaveMetricsCsv(const std::string& path, const MetricReport& report) {
    report.Validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "item,metric,value\n";
    for (const auto& [item, values] : report.items) {
        for (const auto& [name, value] : values) {
            out << item << "," << name << "," << metricsdetail::FormatValue(value) << "\n";
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

// JSON aggregate: item count plus the mean of each metric.
inline nlohmann::json MetricsSummaryJson(const MetricReport& report) {
    report.Validate();
    nlohmann::json j;
    j["items"] = report.items.size();
    nlohmann::json mean = nlohmann::json::object();
    for (const auto& [name, value] : report.Aggregate()) mean[name] = value;
    j["mean"] = mean;
    return j;
}

inline void SaveMetricsJson(const std::string& path, const MetricReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << MetricsSummaryJson(report).dump(2) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

// ---------------------------------------------------------------------------
// External perceptual metrics

namespace metricsdetail {

inline std::string ShellQuote(const std::string& arg) {
    std::string quoted = "'";
    for (char c : arg) {
        if (c == '\'') {
            quoted += "'\\''";
        } else {
            quoted += c;
        }
    }
    quoted += "'";
    return quoted;
}

}  // namespace metricsdetail

// Runs an external scorer as `<command> score --a <dir_a> --b <dir_b>` and
// parses the JSON object of named scalars it prints on stdout. Used for
// learned metrics (LPIPS, KID) that live outside this library.
inline MetricValues RunScorePlugin(const std::string& command, const std::string& dir_a,
                                   const std::string& dir_b) {
    Require(!command.empty(), "score plugin: command must be non-empty");
    const std::string line = metricsdetail::ShellQuote(command) + " score --a " +
                             metricsdetail::ShellQuote(dir_a) + " --b " +
                             metricsdetail::ShellQuote(dir_b);
    FILE* pipe = popen(line.c_str(), "r");
    if (pipe == nullptr) throw IoError("score plugin: failed to launch " + command);
    std::string output;
    char buffer[4096];
    std::size_t got = 0;
    while ((got = fread(buffer, 1, sizeof(buffer), pipe)) > 0) output.append(buffer, got);
    const int raw_status = pclose(pipe);
    const int status = WIFEXITED(raw_status) ? WEXITSTATUS(raw_status) : raw_status;
    if (status != 0) {
        throw IoError("score plugin exited with status " + std::to_string(status) + ": " +
                      command);
    }
    MetricValues values;
    try {
        const nlohmann::json j = nlohmann::json::parse(output);
        Require(j.is_object(), "score plugin output is not a JSON object");
        for (const auto& [name, value] : j.items()) {
            Require(value.is_number(), "score plugin value '" + name + "' is not a number");
            values[name] = value.get<double>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("score plugin printed invalid JSON: ") + e.what());
    }
    return values;
}

}  // namespace gf
