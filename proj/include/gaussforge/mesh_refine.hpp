// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "gaussforge/camera.hpp"
#include "gaussforge/common.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/mesh.hpp"
#include "gaussforge/mesh_raster.hpp"

namespace gf {

// Normal-guided refinement: gradient descent on vertex positions minimizing
//
//   mean over covered pixels of |rendered normal - target normal|_1
//   + lambda_lap * mean over vertices of |v - mean(neighbors)|^2
//
// Rendered normals are flat face normals from the mesh rasterizer; a pixel
// counts when the mesh covers it and the target map holds a unit normal
// there. Pixel coverage is treated as fixed within a step. Both terms are
// means so the pinned step size is stable across mesh and image sizes.
// Connectivity never changes.
inline Mesh RefineMesh(const Mesh& input,
                       const std::vector<std::pair<ImageBuffer, CameraView>>& targets,
                       int steps = 100, double lambda_lap = 10.0, double step_size = 1e-3) {
    input.Validate();
    Require(!input.faces.empty(), "cannot refine an empty mesh");
    Require(!targets.empty(), "mesh refinement needs at least one target normal map");
    Require(steps >= 0, "step count must be non-negative");
    for (const auto& [map, view] : targets) {
        Require(map.channels == 3, "target normal map must have three channels");
        Require(map.width == view.width && map.height == view.height,
                "target normal map does not match its view");
    }

    Mesh mesh = input;
    const int n_vertices = static_cast<int>(mesh.vertices.size());
    const int n_faces = static_cast<int>(mesh.faces.size());
    const auto adjacency = VertexAdjacency(mesh);

    auto sign = [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); };

    std::vector<Vec3> face_sign(static_cast<std::size_t>(n_faces));
    std::vector<Vec3> gradient(static_cast<std::size_t>(n_vertices));
    std::vector<Vec3> lap(static_cast<std::size_t>(n_vertices));

    for (int step = 0; step < steps; ++step) {
        for (auto& s : face_sign) s.setZero();
        std::int64_t covered = 0;
        for (const auto& [map, view] : targets) {
            const MeshRasterResult raster = RasterizeMesh(mesh, view);
            for (int y = 0; y < view.height; ++y) {
                for (int x = 0; x < view.width; ++x) {
                    const int f = raster.face_id[static_cast<std::size_t>(y) *
                                                     static_cast<std::size_t>(view.width) +
                                                 static_cast<std::size_t>(x)];
                    if (f < 0) continue;
                    const Vec3 target(map.At(x, y, 0), map.At(x, y, 1), map.At(x, y, 2));
                    if (target.squaredNorm() < 0.25) continue;
                    const Vec3 rendered(raster.normal.At(x, y, 0), raster.normal.At(x, y, 1),
                                        raster.normal.At(x, y, 2));
                    Vec3& s = face_sign[static_cast<std::size_t>(f)];
                    for (int c = 0; c < 3; ++c) s[c] += sign(rendered[c] - target[c]);
                    ++covered;
                }
            }
        }

        for (auto& g : gradient) g.setZero();
        if (covered > 0) {
            for (int f = 0; f < n_faces; ++f) {
                const Vec3& s = face_sign[static_cast<std::size_t>(f)];
                if (s.isZero()) continue;
                const auto& face = mesh.faces[static_cast<std::size_t>(f)];
                const Vec3& v0 = mesh.vertices[static_cast<std::size_t>(face[0])];
                const Vec3 e1 = mesh.vertices[static_cast<std::size_t>(face[1])] - v0;
                const Vec3 e2 = mesh.vertices[static_cast<std::size_t>(face[2])] - v0;
                const Vec3 cr = e1.cross(e2);
                const double len = cr.norm();
                if (len < 1e-300) continue;
                const Vec3 n = cr / len;
                const Vec3 up = s / static_cast<double>(covered);
                const Vec3 g_cross = (up - n * n.dot(up)) / len;
                gradient[static_cast<std::size_t>(face[0])] += (e1 - e2).cross(g_cross);
                gradient[static_cast<std::size_t>(face[1])] += e2.cross(g_cross);
                gradient[static_cast<std::size_t>(face[2])] += -e1.cross(g_cross);
            }
        }

        if (lambda_lap != 0.0) {
            for (int v = 0; v < n_vertices; ++v) {
                const auto& nbrs = adjacency[static_cast<std::size_t>(v)];
                if (nbrs.empty()) {
                    lap[static_cast<std::size_t>(v)].setZero();
                    continue;
                }
                Vec3 mean = Vec3::Zero();
                for (const int u : nbrs) mean += mesh.vertices[static_cast<std::size_t>(u)];
                lap[static_cast<std::size_t>(v)] =
                    mesh.vertices[static_cast<std::size_t>(v)] -
                    mean / static_cast<double>(nbrs.size());
            }
            const double scale = 2.0 * lambda_lap / static_cast<double>(n_vertices);
            for (int v = 0; v < n_vertices; ++v) {
                Vec3 g = lap[static_cast<std::size_t>(v)];
                for (const int u : adjacency[static_cast<std::size_t>(v)]) {
                    g -= lap[static_cast<std::size_t>(u)] /
                         static_cast<double>(adjacency[static_cast<std::size_t>(u)].size());
                }
                gradient[static_cast<std::size_t>(v)] += scale * g;
            }
        }

        for (int v = 0; v < n_vertices; ++v) {
            mesh.vertices[static_cast<std::size_t>(v)] -=
                step_size * gradient[static_cast<std::size_t>(v)];
        }
    }
    if (!mesh.normals.empty()) ComputeVertexNormals(mesh);
    return mesh;
}

}  // namespace gf
