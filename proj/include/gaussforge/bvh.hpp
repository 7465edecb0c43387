// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "gaussforge/common.hpp"
#include "gaussforge/mathutil.hpp"
#include "gaussforge/mesh.hpp"

namespace gf {

struct RayHit {
    bool hit = false;
    double t = std::numeric_limits<double>::infinity();
    int face = -1;
    // Barycentric weights of the hit point: (1-u-v, u, v).
    double u = 0.0;
    double v = 0.0;
};

struct ClosestPointResult {
    Vec3 point = Vec3::Zero();
    double distance = std::numeric_limits<double>::infinity();
    int face = -1;
};

// Ericson-style exact closest point on a triangle.
inline Vec3 ClosestPointOnTriangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 ab = b - a;
    const Vec3 ac = c - a;
    const Vec3 ap = p - a;
    const double d1 = ab.dot(ap);
    const double d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return a;

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp);
    const double d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return b;

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return Vec3(a + v * ab);
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp);
    const double d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return c;

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return Vec3(a + w * ac);
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return Vec3(b + w * (c - b));
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom;
    const double w = vc * denom;
    return Vec3(a + v * ab + w * ac);
}

// Binary BVH over mesh triangles: median split on the longest centroid axis,
// small leaves. Build and queries are deterministic.
class TriangleBvh {
  public:
    explicit TriangleBvh(const Mesh& mesh) {
        Require(!mesh.faces.empty(), "cannot build a BVH over an empty mesh");
        const int n = static_cast<int>(mesh.faces.size());
        tris_.resize(static_cast<std::size_t>(n));
        order_.resize(static_cast<std::size_t>(n));
        for (int f = 0; f < n; ++f) {
            const auto& face = mesh.faces[static_cast<std::size_t>(f)];
            Triangle& t = tris_[static_cast<std::size_t>(f)];
            t.a = mesh.vertices[static_cast<std::size_t>(face[0])];
            t.b = mesh.vertices[static_cast<std::size_t>(face[1])];
            t.c = mesh.vertices[static_cast<std::size_t>(face[2])];
            t.centroid = (t.a + t.b + t.c) / 3.0;
            order_[static_cast<std::size_t>(f)] = f;
        }
        nodes_.reserve(static_cast<std::size_t>(2 * n));
        BuildNode(0, n);
    }

    RayHit Raycast(const Vec3& origin, const Vec3& direction, double t_min = 0.0,
                   double t_max = std::numeric_limits<double>::infinity()) const {
        RayHit best;
        best.t = t_max;
        const Vec3 inv_dir(1.0 / direction.x(), 1.0 / direction.y(), 1.0 / direction.z());
        int stack[64];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const Node& node = nodes_[static_cast<std::size_t>(stack[--top])];
            if (!BoxHit(node, origin, inv_dir, t_min, best.t)) continue;
            if (node.count > 0) {
                for (int i = node.first; i < node.first + node.count; ++i) {
                    IntersectTriangle(order_[static_cast<std::size_t>(i)], origin, direction,
                                      t_min, best);
                }
            } else {
                stack[top++] = node.right;
                stack[top++] = node.left;
            }
        }
        best.hit = best.face >= 0;
        if (!best.hit) best.t = std::numeric_limits<double>::infinity();
        return best;
    }

    ClosestPointResult ClosestPoint(const Vec3& query) const {
        ClosestPointResult best;
        SearchClosest(0, query, best);
        return best;
    }

  private:
    struct Triangle {
        Vec3 a, b, c;
        Vec3 centroid;
    };
    struct Node {
        Vec3 bmin, bmax;
        int left = -1;
        int right = -1;
        int first = 0;
        int count = 0;
    };

    static constexpr int kLeafSize = 4;

    int BuildNode(int first, int last) {
        const int index = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        Vec3 bmin = Vec3::Constant(std::numeric_limits<double>::infinity());
        Vec3 bmax = -bmin;
        Vec3 cmin = bmin;
        Vec3 cmax = bmax;
        for (int i = first; i < last; ++i) {
            const Triangle& t = tris_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
            bmin = bmin.cwiseMin(t.a).cwiseMin(t.b).cwiseMin(t.c);
            bmax = bmax.cwiseMax(t.a).cwiseMax(t.b).cwiseMax(t.c);
            cmin = cmin.cwiseMin(t.centroid);
            cmax = cmax.cwiseMax(t.centroid);
        }
        nodes_[static_cast<std::size_t>(index)].bmin = bmin;
        nodes_[static_cast<std::size_t>(index)].bmax = bmax;

        const int count = last - first;
        int axis = 0;
        const Vec3 extent = cmax - cmin;
        if (extent.y() > extent.x()) axis = 1;
        if (extent.z() > extent[axis]) axis = 2;
        if (count <= kLeafSize || extent[axis] <= 0.0) {
            nodes_[static_cast<std::size_t>(index)].first = first;
            nodes_[static_cast<std::size_t>(index)].count = count;
            return index;
        }

        const int mid = first + count / 2;
        std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + last,
                         [&](int lhs, int rhs) {
                             const double cl = tris_[static_cast<std::size_t>(lhs)].centroid[axis];
                             const double cr = tris_[static_cast<std::size_t>(rhs)].centroid[axis];
                             if (cl != cr) return cl < cr;
                             return lhs < rhs;
                         });
        const int left = BuildNode(first, mid);
        const int right = BuildNode(mid, last);
        nodes_[static_cast<std::size_t>(index)].left = left;
        nodes_[static_cast<std::size_t>(index)].right = right;
        return index;
    }

    static bool BoxHit(const Node& node, const Vec3& origin, const Vec3& inv_dir, double t_min,
                       double t_max) {
        for (int k = 0; k < 3; ++k) {
            double t0 = (node.bmin[k] - origin[k]) * inv_dir[k];
            double t1 = (node.bmax[k] - origin[k]) * inv_dir[k];
            if (inv_dir[k] < 0.0) std::swap(t0, t1);
            t_min = std::max(t_min, t0);
            t_max = std::min(t_max, t1);
            if (t_max < t_min) return false;
        }
        return true;
    }

    void IntersectTriangle(int face, const Vec3& origin, const Vec3& direction, double t_min,
                           RayHit& best) const {
        const Triangle& tri = tris_[static_cast<std::size_t>(face)];
        const Vec3 e1 = tri.b - tri.a;
        const Vec3 e2 = tri.c - tri.a;
        const Vec3 pvec = direction.cross(e2);
        const double det = e1.dot(pvec);
        if (std::abs(det) < 1e-300) return;
        const double inv_det = 1.0 / det;
        const Vec3 tvec = origin - tri.a;
        const double u = tvec.dot(pvec) * inv_det;
        if (u < 0.0 || u > 1.0) return;
        const Vec3 qvec = tvec.cross(e1);
        const double v = direction.dot(qvec) * inv_det;
        if (v < 0.0 || u + v > 1.0) return;
        const double t = e2.dot(qvec) * inv_det;
        if (t < t_min || t >= best.t) return;
        best.t = t;
        best.face = face;
        best.u = u;
        best.v = v;
    }

    static double BoxDistanceSquared(const Node& node, const Vec3& p) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
            const double lo = node.bmin[k] - p[k];
            const double hi = p[k] - node.bmax[k];
            const double d = std::max({lo, hi, 0.0});
            d2 += d * d;
        }
        return d2;
    }

    void SearchClosest(int index, const Vec3& query, ClosestPointResult& best) const {
        const Node& node = nodes_[static_cast<std::size_t>(index)];
        if (BoxDistanceSquared(node, query) >= best.distance * best.distance) return;
        if (node.count > 0) {
            for (int i = node.first; i < node.first + node.count; ++i) {
                const int face = order_[static_cast<std::size_t>(i)];
                const Triangle& tri = tris_[static_cast<std::size_t>(face)];
                const Vec3 cp = ClosestPointOnTriangle(query, tri.a, tri.b, tri.c);
                const double d = (cp - query).norm();
                if (d < best.distance || (d == best.distance && face < best.face)) {
                    best.distance = d;
                    best.point = cp;
                    best.face = face;
                }
            }
            return;
        }
        const double dl = BoxDistanceSquared(nodes_[static_cast<std::size_t>(node.left)], query);
        const double dr = BoxDistanceSquared(nodes_[static_cast<std::size_t>(node.right)], query);
        if (dl <= dr) {
            SearchClosest(node.left, query, best);
            SearchClosest(node.right, query, best);
        } else {
            SearchClosest(node.right, query, best);
            SearchClosest(node.left, query, best);
        }
    }

    std::vector<Triangle> tris_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
};

}  // namespace gf
