// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gaussforge/common.hpp"
#include "gaussforge/mathutil.hpp"

namespace gf {

struct BoundingBox {
    Vec3 min = Vec3(-0.9, -0.9, -0.9);
    Vec3 max = Vec3(0.9, 0.9, 0.9);

    Vec3 Extent() const { return max - min; }
    Vec3 Center() const { return 0.5 * (min + max); }
    double MaxExtent() const { return Extent().maxCoeff(); }

    bool Contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Vec3 Clamp(const Vec3& p) const { return p.cwiseMax(min).cwiseMin(max); }
};

// One anisotropic Gaussian primitive. Scale is stored in log space and
// opacity as a logit so optimizer steps stay unconstrained; color is kept
// activated in [0, 1]. The quaternion is (w, x, y, z) and is expected to
// stay unit length to within 1e-6 (renderers re-normalize defensively).
struct Gaussian {
    Vec3 center = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 rotation = Vec4(1, 0, 0, 0);
    double logit_opacity = 0.0;
    Vec3 color = Vec3(0.5, 0.5, 0.5);

    Vec3 Scale() const { return log_scale.array().exp(); }
    double Opacity() const { return Sigmoid(logit_opacity); }
    Mat3 RotationMatrix() const { return QuaternionToMatrix(NormalizeQuaternion(rotation)); }
};

// World-space covariance R diag(s^2) R^T from linear scales and a quaternion.
inline Mat3 CovarianceFromScaleRotation(const Vec3& scale, const Vec4& rotation) {
    const Mat3 r = QuaternionToMatrix(NormalizeQuaternion(rotation));
    const Mat3 m = r * scale.asDiagonal();
    return m * m.transpose();
}

constexpr int kGaussiansPerView = 65536;
constexpr int kMaxCloudSize = 2 * kGaussiansPerView;

// A set of Gaussians plus the index of the source view each one was decoded
// from (0 for single-view and procedural clouds).
struct GaussianCloud {
    std::vector<Gaussian> gaussians;
    std::vector<uint16_t> source_view;

    size_t Size() const { return gaussians.size(); }

    void Append(const Gaussian& g, uint16_t view = 0) {
        gaussians.push_back(g);
        source_view.push_back(view);
    }

    void Validate() const {
        Require(gaussians.size() == source_view.size(), "source view tags out of sync");
        Require(gaussians.size() <= kMaxCloudSize, "cloud exceeds capacity");
        for (const Gaussian& g : gaussians) {
            for (int i = 0; i < 3; ++i) {
                RequireFinite(g.center[i], "gaussian center must be finite");
                RequireFinite(g.log_scale[i], "gaussian scale must be finite");
                RequireFinite(g.color[i], "gaussian color must be finite");
                Require(g.color[i] >= 0.0 && g.color[i] <= 1.0, "gaussian color out of range");
            }
            RequireFinite(g.logit_opacity, "gaussian opacity must be finite");
            Require(std::abs(g.rotation.norm() - 1.0) <= 1e-6,
                    "gaussian quaternion must be unit length");
        }
    }
};

// Binary little-endian PLY with the splat layout used across the ecosystem:
// x y z, log scales, quaternion (w x y z), opacity logit, pre-activation
// color. The reader resolves properties by name so files with extra fields
// or shuffled order still load.
inline void SavePly(const std::string& path, const GaussianCloud& cloud) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    static const char* kProps[] = {"x",     "y",     "z",     "scale_0", "scale_1",
                                   "scale_2", "rot_0", "rot_1", "rot_2",   "rot_3",
                                   "opacity", "f_dc_0", "f_dc_1", "f_dc_2"};
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << cloud.Size() << "\n";
    for (const char* p : kProps) out << "property float " << p << "\n";
    out << "end_header\n";
    std::vector<float> row(14);
    for (const Gaussian& g : cloud.gaussians) {
        row[0] = static_cast<float>(g.center.x());
        row[1] = static_cast<float>(g.center.y());
        row[2] = static_cast<float>(g.center.z());
        for (int i = 0; i < 3; ++i) row[3 + i] = static_cast<float>(g.log_scale[i]);
        for (int i = 0; i < 4; ++i) row[6 + i] = static_cast<float>(g.rotation[i]);
        row[10] = static_cast<float>(g.logit_opacity);
        for (int i = 0; i < 3; ++i) row[11 + i] = static_cast<float>(Logit(g.color[i], 1e-6));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write: " + path);
}

inline GaussianCloud LoadPly(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);

    std::string line;
    std::getline(in, line);
    if (line != "ply" && line != "ply\r") throw IoError("not a PLY file: " + path);

    struct Property {
        std::string name;
        int bytes = 4;
        bool is_double = false;
    };
    struct Element {
        std::string name;
        size_t count = 0;
        std::vector<Property> props;
    };
    std::vector<Element> elements;
    bool binary_le = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
            if (!binary_le) throw IoError("unsupported PLY format (need binary LE): " + path);
        } else if (tok == "element") {
            Element e;
            ls >> e.name >> e.count;
            elements.push_back(e);
        } else if (tok == "property") {
            if (elements.empty()) throw IoError("PLY property before element: " + path);
            std::string type;
            ls >> type;
            if (type == "list") throw IoError("PLY list properties unsupported here: " + path);
            Property p;
            if (type == "float" || type == "float32" || type == "int" || type == "int32" ||
                type == "uint" || type == "uint32") {
                p.bytes = 4;
            } else if (type == "double" || type == "float64") {
                p.bytes = 8;
                p.is_double = true;
            } else if (type == "uchar" || type == "uint8" || type == "char" || type == "int8") {
                p.bytes = 1;
            } else if (type == "short" || type == "ushort" || type == "int16" ||
                       type == "uint16") {
                p.bytes = 2;
            } else {
                throw IoError("unsupported PLY property type '" + type + "': " + path);
            }
            ls >> p.name;
            elements.back().props.push_back(p);
        } else if (tok == "end_header") {
            break;
        }
    }
    if (!binary_le) throw IoError("missing PLY format line: " + path);

    GaussianCloud cloud;
    for (const Element& e : elements) {
        size_t row_bytes = 0;
        for (const Property& p : e.props) row_bytes += p.bytes;
        if (e.name != "vertex") {
            in.seekg(static_cast<std::streamoff>(row_bytes * e.count), std::ios::cur);
            continue;
        }
        static const char* kNames[] = {"x",     "y",     "z",     "scale_0", "scale_1",
                                       "scale_2", "rot_0", "rot_1", "rot_2",   "rot_3",
                                       "opacity", "f_dc_0", "f_dc_1", "f_dc_2"};
        int index_of[14];
        for (int k = 0; k < 14; ++k) {
            index_of[k] = -1;
            for (size_t i = 0; i < e.props.size(); ++i) {
                if (e.props[i].name == kNames[k]) {
                    index_of[k] = static_cast<int>(i);
                    break;
                }
            }
            if (index_of[k] < 0) {
                throw IoError(std::string("PLY missing property '") + kNames[k] + "': " + path);
            }
        }
        std::vector<size_t> offsets(e.props.size());
        size_t off = 0;
        for (size_t i = 0; i < e.props.size(); ++i) {
            offsets[i] = off;
            off += e.props[i].bytes;
        }
        Require(e.count <= kMaxCloudSize, "PLY cloud exceeds capacity: " + path);
        std::vector<char> row(row_bytes);
        cloud.gaussians.reserve(e.count);
        for (size_t r = 0; r < e.count; ++r) {
            in.read(row.data(), static_cast<std::streamsize>(row_bytes));
            if (!in) throw IoError("truncated PLY data: " + path);
            double v[14];
            for (int k = 0; k < 14; ++k) {
                const Property& p = e.props[index_of[k]];
                const char* src = row.data() + offsets[index_of[k]];
                if (p.is_double) {
                    double d;
                    std::memcpy(&d, src, 8);
                    v[k] = d;
                } else if (p.bytes == 4) {
                    float f;
                    std::memcpy(&f, src, 4);
                    v[k] = f;
                } else {
                    throw IoError("splat property has non-float type: " + path);
                }
            }
            Gaussian g;
            g.center = Vec3(v[0], v[1], v[2]);
            g.log_scale = Vec3(v[3], v[4], v[5]);
            g.rotation = NormalizeQuaternion(Vec4(v[6], v[7], v[8], v[9]));
            g.logit_opacity = v[10];
            g.color = Vec3(Sigmoid(v[11]), Sigmoid(v[12]), Sigmoid(v[13]));
            cloud.Append(g, 0);
        }
    }
    return cloud;
}

}  // namespace gf
