// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "gaussforge/camera.hpp"
#include "gaussforge/common.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/mathutil.hpp"
#include "gaussforge/mesh.hpp"
#include "gaussforge/parallel.hpp"
#include "gaussforge/render.hpp"

namespace gf {

struct MeshRasterResult {
    ImageBuffer mask;
    ImageBuffer depth;
    ImageBuffer normal;
    // Covering face per pixel, -1 for background.
    std::vector<int> face_id;
};

// Flat-shaded z-buffer rasterizer. Depth is camera-space z with the same
// background sentinel as the Gaussian renderer; normals are world-space face
// normals. Ties at equal depth go to the lower face index, and each tile is
// owned by one task, so output is identical for any thread count.
inline MeshRasterResult RasterizeMesh(const Mesh& mesh, const CameraView& view) {
    mesh.Validate();
    view.Validate();
    const int w = view.width;
    const int h = view.height;

    MeshRasterResult out;
    out.mask = ImageBuffer(w, h, 1, ImageSemantics::kMask);
    out.depth = ImageBuffer(w, h, 1, ImageSemantics::kDepth, DepthSentinel(view));
    out.normal = ImageBuffer(w, h, 3, ImageSemantics::kNormal);
    out.face_id.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
    if (mesh.faces.empty()) return out;

    const bool perspective = view.model == CameraModel::kPerspective;
    const int n_vertices = static_cast<int>(mesh.vertices.size());
    std::vector<Vec2> screen(static_cast<std::size_t>(n_vertices));
    std::vector<double> depth_cam(static_cast<std::size_t>(n_vertices));
    std::vector<char> in_front(static_cast<std::size_t>(n_vertices), 1);
    for (int i = 0; i < n_vertices; ++i) {
        const Vec3 pc = view.ToCamera(mesh.vertices[static_cast<std::size_t>(i)]);
        depth_cam[static_cast<std::size_t>(i)] = pc.z();
        if (perspective && pc.z() < view.near) {
            in_front[static_cast<std::size_t>(i)] = 0;
            continue;
        }
        screen[static_cast<std::size_t>(i)] = view.ProjectCamera(pc);
    }

    const int tiles_x = (w + kTileSize - 1) / kTileSize;
    const int tiles_y = (h + kTileSize - 1) / kTileSize;
    std::vector<std::vector<int>> bins(static_cast<std::size_t>(tiles_x) *
                                       static_cast<std::size_t>(tiles_y));
    for (int f = 0; f < static_cast<int>(mesh.faces.size()); ++f) {
        const auto& face = mesh.faces[static_cast<std::size_t>(f)];
        if (!in_front[static_cast<std::size_t>(face[0])] ||
            !in_front[static_cast<std::size_t>(face[1])] ||
            !in_front[static_cast<std::size_t>(face[2])]) {
            continue;
        }
        Vec2 lo = screen[static_cast<std::size_t>(face[0])];
        Vec2 hi = lo;
        for (int k = 1; k < 3; ++k) {
            const Vec2& p = screen[static_cast<std::size_t>(face[k])];
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        if (hi.x() < 0.0 || hi.y() < 0.0 || lo.x() > w || lo.y() > h) continue;
        const int tx0 = std::clamp(static_cast<int>(std::floor((lo.x() - 0.5) / kTileSize)), 0,
                                   tiles_x - 1);
        const int tx1 = std::clamp(static_cast<int>(std::floor((hi.x() - 0.5) / kTileSize)), 0,
                                   tiles_x - 1);
        const int ty0 = std::clamp(static_cast<int>(std::floor((lo.y() - 0.5) / kTileSize)), 0,
                                   tiles_y - 1);
        const int ty1 = std::clamp(static_cast<int>(std::floor((hi.y() - 0.5) / kTileSize)), 0,
                                   tiles_y - 1);
        for (int ty = ty0; ty <= ty1; ++ty) {
            for (int tx = tx0; tx <= tx1; ++tx) {
                bins[static_cast<std::size_t>(ty) * static_cast<std::size_t>(tiles_x) +
                     static_cast<std::size_t>(tx)]
                    .push_back(f);
            }
        }
    }

    ParallelFor(static_cast<std::int64_t>(bins.size()), 1, [&](std::int64_t tile) {
        const int tx = static_cast<int>(tile % tiles_x);
        const int ty = static_cast<int>(tile / tiles_x);
        const int x0 = tx * kTileSize;
        const int y0 = ty * kTileSize;
        const int x1 = std::min(x0 + kTileSize, w);
        const int y1 = std::min(y0 + kTileSize, h);
        for (const int f : bins[static_cast<std::size_t>(tile)]) {
            const auto& face = mesh.faces[static_cast<std::size_t>(f)];
            const Vec2& p0 = screen[static_cast<std::size_t>(face[0])];
            const Vec2& p1 = screen[static_cast<std::size_t>(face[1])];
            const Vec2& p2 = screen[static_cast<std::size_t>(face[2])];
            const double area =
                (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p1.y() - p0.y()) * (p2.x() - p0.x());
            if (std::abs(area) < 1e-300) continue;
            const double z0 = depth_cam[static_cast<std::size_t>(face[0])];
            const double z1 = depth_cam[static_cast<std::size_t>(face[1])];
            const double z2 = depth_cam[static_cast<std::size_t>(face[2])];

            const int px0 = std::max(x0, static_cast<int>(std::floor(
                                             std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
            const int px1 = std::min(x1 - 1, static_cast<int>(std::ceil(
                                                 std::max({p0.x(), p1.x(), p2.x()}) - 0.5)));
            const int py0 = std::max(y0, static_cast<int>(std::floor(
                                             std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
            const int py1 = std::min(y1 - 1, static_cast<int>(std::ceil(
                                                 std::max({p0.y(), p1.y(), p2.y()}) - 0.5)));
            for (int py = py0; py <= py1; ++py) {
                for (int px = px0; px <= px1; ++px) {
                    const double sx = px + 0.5;
                    const double sy = py + 0.5;
                    const double e0 = (p2.x() - p1.x()) * (sy - p1.y()) -
                                      (p2.y() - p1.y()) * (sx - p1.x());
                    const double e1 = (p0.x() - p2.x()) * (sy - p2.y()) -
                                      (p0.y() - p2.y()) * (sx - p2.x());
                    const double e2 = (p1.x() - p0.x()) * (sy - p0.y()) -
                                      (p1.y() - p0.y()) * (sx - p0.x());
                    const double w0 = e0 / area;
                    const double w1 = e1 / area;
                    const double w2 = e2 / area;
                    if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;

                    double z;
                    if (perspective) {
                        z = 1.0 / (w0 / z0 + w1 / z1 + w2 / z2);
                    } else {
                        z = w0 * z0 + w1 * z1 + w2 * z2;
                    }
                    const std::size_t pix = static_cast<std::size_t>(py) *
                                                static_cast<std::size_t>(w) +
                                            static_cast<std::size_t>(px);
                    const int prev = out.face_id[pix];
                    const double prev_z = out.depth.At(px, py, 0);
                    const bool wins =
                        prev < 0 || z < prev_z || (z == prev_z && f < prev);
                    if (!wins) continue;
                    out.face_id[pix] = f;
                    out.depth.At(px, py, 0) = z;
                }
            }
        }
        // Normals and mask in a second sweep so each pixel is written once.
        for (int py = y0; py < y1; ++py) {
            for (int px = x0; px < x1; ++px) {
                const std::size_t pix = static_cast<std::size_t>(py) *
                                            static_cast<std::size_t>(w) +
                                        static_cast<std::size_t>(px);
                const int f = out.face_id[pix];
                if (f < 0) continue;
                out.mask.At(px, py, 0) = 1.0;
                const Vec3 n = FaceNormal(mesh, f);
                out.normal.At(px, py, 0) = n.x();
                out.normal.At(px, py, 1) = n.y();
                out.normal.At(px, py, 2) = n.z();
            }
        }
    });
    return out;
}

}  // namespace gf
