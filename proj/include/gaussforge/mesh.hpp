// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaussforge/common.hpp"
#include "gaussforge/gaussian.hpp"
#include "gaussforge/mathutil.hpp"
#include "gaussforge/rng.hpp"

namespace gf {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    // Optional per-vertex normals: either empty or one per vertex.
    std::vector<Vec3> normals;

    bool Empty() const { return faces.empty(); }

    void Validate() const {
        Require(normals.empty() || normals.size() == vertices.size(),
                "mesh normals must be empty or one per vertex");
        const int n = static_cast<int>(vertices.size());
        for (const auto& f : faces) {
            for (int k = 0; k < 3; ++k) {
                Require(f[k] >= 0 && f[k] < n, "mesh face index out of range");
            }
            Require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2],
                    "mesh face repeats a vertex");
        }
        for (const auto& v : vertices) RequireFinite(v.sum(), "mesh vertex");
    }
};

inline Vec3 FaceAreaVector(const Mesh& mesh, int face) {
    const auto& f = mesh.faces[static_cast<std::size_t>(face)];
    const Vec3 a = mesh.vertices[static_cast<std::size_t>(f[1])] -
                   mesh.vertices[static_cast<std::size_t>(f[0])];
    const Vec3 b = mesh.vertices[static_cast<std::size_t>(f[2])] -
                   mesh.vertices[static_cast<std::size_t>(f[0])];
    return 0.5 * a.cross(b);
}

inline double FaceArea(const Mesh& mesh, int face) {
    return FaceAreaVector(mesh, face).norm();
}

// Unit normal, zero vector for degenerate faces.
inline Vec3 FaceNormal(const Mesh& mesh, int face) {
    const Vec3 av = FaceAreaVector(mesh, face);
    const double n = av.norm();
    return n > 1e-300 ? Vec3(av / n) : Vec3::Zero();
}

inline double SurfaceArea(const Mesh& mesh) {
    double total = 0.0;
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) total += FaceArea(mesh, f);
    return total;
}

// Area-weighted vertex normals (cross-product accumulation).
inline void ComputeVertexNormals(Mesh& mesh) {
    mesh.normals.assign(mesh.vertices.size(), Vec3::Zero());
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
        const Vec3 av = FaceAreaVector(mesh, f);
        for (int k = 0; k < 3; ++k) {
            mesh.normals[static_cast<std::size_t>(mesh.faces[static_cast<std::size_t>(f)][k])] += av;
        }
    }
    for (auto& n : mesh.normals) {
        const double len = n.norm();
        if (len > 1e-300) n /= len;
    }
}

inline BoundingBox MeshBounds(const Mesh& mesh) {
    Require(!mesh.vertices.empty(), "mesh has no vertices");
    BoundingBox box;
    box.min = box.max = mesh.vertices[0];
    for (const auto& v : mesh.vertices) {
        box.min = box.min.cwiseMin(v);
        box.max = box.max.cwiseMax(v);
    }
    return box;
}

namespace meshdetail {

inline std::uint64_t UndirectedEdgeKey(int a, int b) {
    const std::uint64_t lo = static_cast<std::uint64_t>(std::min(a, b));
    const std::uint64_t hi = static_cast<std::uint64_t>(std::max(a, b));
    return (hi << 32) | lo;
}

}  // namespace meshdetail

inline std::int64_t CountEdges(const Mesh& mesh) {
    std::unordered_map<std::uint64_t, int> edges;
    edges.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            ++edges[meshdetail::UndirectedEdgeKey(f[k], f[(k + 1) % 3])];
        }
    }
    return static_cast<std::int64_t>(edges.size());
}

inline std::int64_t EulerCharacteristic(const Mesh& mesh) {
    return static_cast<std::int64_t>(mesh.vertices.size()) - CountEdges(mesh) +
           static_cast<std::int64_t>(mesh.faces.size());
}

// Closed, consistently oriented 2-manifold: every undirected edge is used by
// exactly two faces, once in each direction.
inline bool IsWatertight(const Mesh& mesh) {
    if (mesh.faces.empty()) return false;
    std::unordered_map<std::uint64_t, std::pair<int, int>> edges;
    edges.reserve(mesh.faces.size() * 3);
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            const int a = f[k];
            const int b = f[(k + 1) % 3];
            auto& slot = edges[meshdetail::UndirectedEdgeKey(a, b)];
            if (a < b) {
                ++slot.first;
            } else {
                ++slot.second;
            }
        }
    }
    for (const auto& [key, counts] : edges) {
        if (counts.first != 1 || counts.second != 1) return false;
    }
    return true;
}

inline std::vector<std::vector<int>> VertexAdjacency(const Mesh& mesh) {
    std::vector<std::vector<int>> adj(mesh.vertices.size());
    for (const auto& f : mesh.faces) {
        for (int k = 0; k < 3; ++k) {
            adj[static_cast<std::size_t>(f[k])].push_back(f[(k + 1) % 3]);
            adj[static_cast<std::size_t>(f[k])].push_back(f[(k + 2) % 3]);
        }
    }
    for (auto& nbrs : adj) {
        std::sort(nbrs.begin(), nbrs.end());
        nbrs.erase(std::unique(nbrs.begin(), nbrs.end()), nbrs.end());
    }
    return adj;
}

// Drops zero-area faces and unreferenced vertices; keeps relative order.
inline Mesh CompactMesh(const Mesh& mesh, double min_area = 1e-14) {
    Mesh out;
    std::vector<int> remap(mesh.vertices.size(), -1);
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
        if (FaceArea(mesh, f) <= min_area) continue;
        std::array<int, 3> nf{};
        for (int k = 0; k < 3; ++k) {
            const int v = mesh.faces[static_cast<std::size_t>(f)][k];
            if (remap[static_cast<std::size_t>(v)] < 0) {
                remap[static_cast<std::size_t>(v)] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[static_cast<std::size_t>(v)]);
                if (!mesh.normals.empty()) {
                    out.normals.push_back(mesh.normals[static_cast<std::size_t>(v)]);
                }
            }
            nf[static_cast<std::size_t>(k)] = remap[static_cast<std::size_t>(v)];
        }
        if (nf[0] == nf[1] || nf[1] == nf[2] || nf[0] == nf[2]) continue;
        out.faces.push_back(nf);
    }
    return out;
}

// ---------------------------------------------------------------------------
// OBJ (ASCII)

inline void SaveMeshObj(const std::string& path, const Mesh& mesh) {
    mesh.Validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.precision(17);
    const bool with_normals = !mesh.normals.empty();
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
        if (with_normals) {
            const Vec3& n = mesh.normals[i];
            out << "vn " << n.x() << " " << n.y() << " " << n.z() << "\n";
        }
    }
    for (const auto& f : mesh.faces) {
        if (with_normals) {
            out << "f " << f[0] + 1 << "//" << f[0] + 1 << " " << f[1] + 1 << "//" << f[1] + 1
                << " " << f[2] + 1 << "//" << f[2] + 1 << "\n";
        } else {
            out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
        }
    }
    if (!out) throw IoError("failed writing " + path);
}

inline Mesh LoadMeshObj(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    Mesh mesh;
    std::vector<Vec3> file_normals;
    std::string line;
    auto face_index = [&](const std::string& token, std::size_t count) {
        const long idx = std::strtol(token.c_str(), nullptr, 10);
        if (idx == 0) throw IoError("obj face index 0 in " + path);
        const long resolved = idx > 0 ? idx - 1 : static_cast<long>(count) + idx;
        if (resolved < 0 || resolved >= static_cast<long>(count)) {
            throw IoError("obj face index out of range in " + path);
        }
        return static_cast<int>(resolved);
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "v") {
            Vec3 v;
            if (!(ls >> v.x() >> v.y() >> v.z())) throw IoError("bad obj vertex in " + path);
            mesh.vertices.push_back(v);
        } else if (tag == "vn") {
            Vec3 n;
            if (!(ls >> n.x() >> n.y() >> n.z())) throw IoError("bad obj normal in " + path);
            file_normals.push_back(n);
        } else if (tag == "f") {
            std::vector<int> poly;
            std::string token;
            while (ls >> token) {
                poly.push_back(face_index(token, mesh.vertices.size()));
            }
            if (poly.size() < 3) throw IoError("obj face with <3 vertices in " + path);
            for (std::size_t k = 2; k < poly.size(); ++k) {
                mesh.faces.push_back({poly[0], poly[k - 1], poly[k]});
            }
        }
    }
    if (file_normals.size() == mesh.vertices.size()) mesh.normals = std::move(file_normals);
    mesh.Validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// PLY (binary little-endian)

inline void SaveMeshPly(const std::string& path, const Mesh& mesh) {
    mesh.Validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const bool with_normals = !mesh.normals.empty();
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (with_normals) {
        out << "property float nx\nproperty float ny\nproperty float nz\n";
    }
    out << "element face " << mesh.faces.size() << "\n";
    out << "property list uchar int vertex_indices\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        float row[6];
        int count = 3;
        row[0] = static_cast<float>(mesh.vertices[i].x());
        row[1] = static_cast<float>(mesh.vertices[i].y());
        row[2] = static_cast<float>(mesh.vertices[i].z());
        if (with_normals) {
            row[3] = static_cast<float>(mesh.normals[i].x());
            row[4] = static_cast<float>(mesh.normals[i].y());
            row[5] = static_cast<float>(mesh.normals[i].z());
            count = 6;
        }
        out.write(reinterpret_cast<const char*>(row), count * static_cast<int>(sizeof(float)));
    }
    for (const auto& f : mesh.faces) {
        const unsigned char n = 3;
        std::int32_t idx[3] = {f[0], f[1], f[2]};
        out.write(reinterpret_cast<const char*>(&n), 1);
        out.write(reinterpret_cast<const char*>(idx), sizeof(idx));
    }
    if (!out) throw IoError("failed writing " + path);
}

inline Mesh LoadMeshPly(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || (line != "ply" && line != "ply\r")) {
        throw IoError(path + " is not a PLY file");
    }

    struct Prop {
        std::string name;
        int size = 0;
        bool is_float = false;
        bool is_list = false;
        int count_size = 0;
        int entry_size = 0;
    };
    auto scalar_size = [&](const std::string& t) -> std::pair<int, bool> {
        if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return {1, false};
        if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return {2, false};
        if (t == "int" || t == "uint" || t == "int32" || t == "uint32") return {4, false};
        if (t == "float" || t == "float32") return {4, true};
        if (t == "double" || t == "float64") return {8, true};
        throw IoError("unsupported PLY type " + t + " in " + path);
    };

    struct Element {
        std::string name;
        std::size_t count = 0;
        std::vector<Prop> props;
    };
    std::vector<Element> elements;
    bool binary_le = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "comment") continue;
        if (tag == "format") {
            std::string fmt;
            ls >> fmt;
            binary_le = fmt == "binary_little_endian";
            if (!binary_le) throw IoError("unsupported PLY format in " + path);
        } else if (tag == "element") {
            Element e;
            ls >> e.name >> e.count;
            elements.push_back(e);
        } else if (tag == "property") {
            Require(!elements.empty(), "PLY property before element");
            std::string type;
            ls >> type;
            Prop p;
            if (type == "list") {
                std::string count_type, entry_type;
                ls >> count_type >> entry_type >> p.name;
                p.is_list = true;
                p.count_size = scalar_size(count_type).first;
                auto [esz, efloat] = scalar_size(entry_type);
                p.entry_size = esz;
                p.is_float = efloat;
            } else {
                ls >> p.name;
                auto [sz, flt] = scalar_size(type);
                p.size = sz;
                p.is_float = flt;
            }
            elements.back().props.push_back(p);
        } else if (tag == "end_header") {
            break;
        }
    }

    auto read_scalar = [&](int size, bool is_float) -> double {
        unsigned char buf[8];
        in.read(reinterpret_cast<char*>(buf), size);
        if (!in) throw IoError("truncated PLY data in " + path);
        if (is_float && size == 4) {
            float v;
            std::memcpy(&v, buf, 4);
            return v;
        }
        if (is_float && size == 8) {
            double v;
            std::memcpy(&v, buf, 8);
            return v;
        }
        std::int64_t v = 0;
        for (int b = size - 1; b >= 0; --b) v = (v << 8) | buf[b];
        return static_cast<double>(v);
    };

    Mesh mesh;
    for (const auto& elem : elements) {
        if (elem.name == "vertex") {
            int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
            for (int p = 0; p < static_cast<int>(elem.props.size()); ++p) {
                const std::string& n = elem.props[static_cast<std::size_t>(p)].name;
                if (n == "x") ix = p;
                if (n == "y") iy = p;
                if (n == "z") iz = p;
                if (n == "nx") inx = p;
                if (n == "ny") iny = p;
                if (n == "nz") inz = p;
            }
            Require(ix >= 0 && iy >= 0 && iz >= 0, "PLY vertex element lacks x/y/z");
            const bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;
            mesh.vertices.resize(elem.count);
            if (with_normals) mesh.normals.resize(elem.count);
            std::vector<double> row(elem.props.size());
            for (std::size_t i = 0; i < elem.count; ++i) {
                for (std::size_t p = 0; p < elem.props.size(); ++p) {
                    const Prop& prop = elem.props[p];
                    if (prop.is_list) throw IoError("unexpected list property on PLY vertex");
                    row[p] = read_scalar(prop.size, prop.is_float);
                }
                mesh.vertices[i] = Vec3(row[static_cast<std::size_t>(ix)],
                                        row[static_cast<std::size_t>(iy)],
                                        row[static_cast<std::size_t>(iz)]);
                if (with_normals) {
                    mesh.normals[i] = Vec3(row[static_cast<std::size_t>(inx)],
                                           row[static_cast<std::size_t>(iny)],
                                           row[static_cast<std::size_t>(inz)]);
                }
            }
        } else if (elem.name == "face") {
            for (std::size_t i = 0; i < elem.count; ++i) {
                for (const Prop& prop : elem.props) {
                    if (!prop.is_list) {
                        read_scalar(prop.size, prop.is_float);
                        continue;
                    }
                    const int n = static_cast<int>(read_scalar(prop.count_size, false));
                    Require(n >= 3, "PLY face with <3 vertices");
                    std::vector<int> poly(static_cast<std::size_t>(n));
                    for (int k = 0; k < n; ++k) {
                        poly[static_cast<std::size_t>(k)] =
                            static_cast<int>(read_scalar(prop.entry_size, prop.is_float));
                    }
                    for (int k = 2; k < n; ++k) {
                        mesh.faces.push_back({poly[0], poly[static_cast<std::size_t>(k - 1)],
                                              poly[static_cast<std::size_t>(k)]});
                    }
                }
            }
        } else {
            // Skip unknown fixed-size elements.
            std::size_t stride = 0;
            for (const Prop& prop : elem.props) {
                Require(!prop.is_list, "cannot skip PLY element with list property");
                stride += static_cast<std::size_t>(prop.size);
            }
            in.seekg(static_cast<std::streamoff>(stride * elem.count), std::ios::cur);
        }
    }
    mesh.Validate();
    return mesh;
}

// ---------------------------------------------------------------------------
// Surface sampling

struct SurfaceSample {
    Vec3 position;
    Vec3 normal;
    int face = -1;
};

// Area-weighted uniform surface samples; draw order is fixed, so results are
// deterministic for a given rng state.
inline std::vector<SurfaceSample> SampleMeshSurface(const Mesh& mesh, int count, Rng& rng) {
    Require(count >= 0, "sample count must be non-negative");
    if (count == 0) return {};
    Require(!mesh.faces.empty(), "cannot sample an empty mesh");
    std::vector<double> cumulative(mesh.faces.size());
    double total = 0.0;
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
        total += FaceArea(mesh, f);
        cumulative[static_cast<std::size_t>(f)] = total;
    }
    Require(total > 0.0, "mesh has zero surface area");

    std::vector<SurfaceSample> samples(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double target = rng.Uniform() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
        const int f = static_cast<int>(std::min<std::ptrdiff_t>(
            it - cumulative.begin(), static_cast<std::ptrdiff_t>(cumulative.size()) - 1));
        const auto& face = mesh.faces[static_cast<std::size_t>(f)];
        const double r1 = std::sqrt(rng.Uniform());
        const double r2 = rng.Uniform();
        const double w0 = 1.0 - r1;
        const double w1 = r1 * (1.0 - r2);
        const double w2 = r1 * r2;
        SurfaceSample& s = samples[static_cast<std::size_t>(i)];
        s.position = w0 * mesh.vertices[static_cast<std::size_t>(face[0])] +
                     w1 * mesh.vertices[static_cast<std::size_t>(face[1])] +
                     w2 * mesh.vertices[static_cast<std::size_t>(face[2])];
        s.normal = FaceNormal(mesh, f);
        s.face = f;
    }
    return samples;
}

}  // namespace gf
