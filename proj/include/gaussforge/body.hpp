// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaussforge/common.hpp"
#include "gaussforge/gaussian.hpp"
#include "gaussforge/marching_cubes.hpp"
#include "gaussforge/mathutil.hpp"
#include "gaussforge/mesh.hpp"
#include "gaussforge/parallel.hpp"
#include "gaussforge/rng.hpp"

namespace gf {

// Articulated body template: a skinned mesh over a joint tree with linear
// shape blendshapes. Joints are stored in topological order (every parent
// precedes its children, root at index 0) and rotations are axis-angle.
struct BodyTemplate {
    std::vector<Vec3> rest_vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<int> parents;
    std::vector<Vec3> rest_joints;
    std::vector<std::string> joint_names;
    // N x J skinning weights, rows non-negative and summing to 1.
    Eigen::MatrixXd weights;
    // Per-blendshape N x 3 vertex offsets.
    std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3>> shape_basis;
    // Joint indices reported by Keypoints3d; 22 entries for full bodies.
    std::vector<int> keypoints;

    int VertexCount() const { return static_cast<int>(rest_vertices.size()); }
    int JointCount() const { return static_cast<int>(rest_joints.size()); }
    int ShapeCount() const { return static_cast<int>(shape_basis.size()); }

    void Validate() const {
        const int nv = VertexCount();
        const int nj = JointCount();
        Require(nv > 0, "body template has no vertices");
        Require(nj > 0, "body template has no joints");
        Require(static_cast<int>(parents.size()) == nj, "parent table size mismatch");
        Require(parents[0] == -1, "joint 0 must be the root");
        for (int j = 1; j < nj; ++j) {
            Require(parents[j] >= 0 && parents[j] < j,
                    "joints must be stored parent-before-child");
        }
        Require(joint_names.empty() || static_cast<int>(joint_names.size()) == nj,
                "joint names must be empty or one per joint");
        Require(weights.rows() == nv && weights.cols() == nj, "weight matrix shape mismatch");
        for (int i = 0; i < nv; ++i) {
            double sum = 0.0;
            for (int j = 0; j < nj; ++j) {
                const double w = weights(i, j);
                Require(w >= 0.0, "skinning weights must be non-negative");
                sum += w;
            }
            Require(std::abs(sum - 1.0) <= 1e-6, "skinning weight row must sum to 1");
        }
        for (const auto& f : faces) {
            for (int k = 0; k < 3; ++k) {
                Require(f[k] >= 0 && f[k] < nv, "face index out of range");
            }
        }
        for (const auto& basis : shape_basis) {
            Require(basis.rows() == nv, "blendshape vertex count mismatch");
        }
        for (int k : keypoints) Require(k >= 0 && k < nj, "keypoint joint index out of range");
    }

    Mesh RestMesh() const {
        Mesh m;
        m.vertices = rest_vertices;
        m.faces = faces;
        return m;
    }

    double MeanEdgeLength() const {
        if (faces.empty()) return 0.0;
        double total = 0.0;
        for (const auto& f : faces) {
            for (int k = 0; k < 3; ++k) {
                total += (rest_vertices[f[k]] - rest_vertices[f[(k + 1) % 3]]).norm();
            }
        }
        return total / (3.0 * static_cast<double>(faces.size()));
    }
};

struct BodyParams {
    // Axis-angle per joint, radians.
    std::vector<Vec3> pose;
    Eigen::VectorXd shape;
    Vec3 global_rotation = Vec3::Zero();
    Vec3 global_translation = Vec3::Zero();
    double global_scale = 1.0;
};

inline BodyParams IdentityParams(const BodyTemplate& tpl) {
    BodyParams p;
    p.pose.assign(tpl.JointCount(), Vec3::Zero());
    p.shape = Eigen::VectorXd::Zero(tpl.ShapeCount());
    return p;
}

inline void ValidateParams(const BodyTemplate& tpl, const BodyParams& params) {
    Require(static_cast<int>(params.pose.size()) == tpl.JointCount(),
            "pose size does not match joint count");
    Require(params.shape.size() == tpl.ShapeCount(),
            "shape size does not match blendshape count");
    Require(params.global_scale > 0.0, "global scale must be positive");
    for (const Vec3& p : params.pose) RequireFinite(p.sum(), "pose");
    RequireFinite(params.shape.sum() + params.global_rotation.sum() +
                      params.global_translation.sum() + params.global_scale,
                  "body params");
}

// Flat layout shared by params and gradients:
// [pose (3J) | shape (B) | global rotation (3) | translation (3) | scale (1)].
inline int BodyParamCount(int joints, int shapes) { return 3 * joints + shapes + 7; }

inline Eigen::VectorXd FlattenParams(const BodyParams& params) {
    const int nj = static_cast<int>(params.pose.size());
    const int nb = static_cast<int>(params.shape.size());
    Eigen::VectorXd x(BodyParamCount(nj, nb));
    for (int j = 0; j < nj; ++j) x.segment<3>(3 * j) = params.pose[j];
    x.segment(3 * nj, nb) = params.shape;
    x.segment<3>(3 * nj + nb) = params.global_rotation;
    x.segment<3>(3 * nj + nb + 3) = params.global_translation;
    x[3 * nj + nb + 6] = params.global_scale;
    return x;
}

inline BodyParams UnflattenParams(int joints, int shapes, const Eigen::VectorXd& x) {
    Require(x.size() == BodyParamCount(joints, shapes), "flat param size mismatch");
    BodyParams p;
    p.pose.resize(joints);
    for (int j = 0; j < joints; ++j) p.pose[j] = x.segment<3>(3 * j);
    p.shape = x.segment(3 * joints, shapes);
    p.global_rotation = x.segment<3>(3 * joints + shapes);
    p.global_translation = x.segment<3>(3 * joints + shapes + 3);
    p.global_scale = x[3 * joints + shapes + 6];
    return p;
}

struct PosedBody {
    std::vector<Vec3> vertices;
    std::vector<Vec3> joints;
};

struct BodyGrad {
    std::vector<Vec3> pose;
    Eigen::VectorXd shape;
    Vec3 global_rotation = Vec3::Zero();
    Vec3 global_translation = Vec3::Zero();
    double global_scale = 0.0;

    Eigen::VectorXd Flatten() const {
        const int nj = static_cast<int>(pose.size());
        const int nb = static_cast<int>(shape.size());
        Eigen::VectorXd x(BodyParamCount(nj, nb));
        for (int j = 0; j < nj; ++j) x.segment<3>(3 * j) = pose[j];
        x.segment(3 * nj, nb) = shape;
        x.segment<3>(3 * nj + nb) = global_rotation;
        x.segment<3>(3 * nj + nb + 3) = global_translation;
        x[3 * nj + nb + 6] = global_scale;
        return x;
    }
};

namespace bodydetail {

// Forward kinematics in world-rotation / joint-origin form. rest_org is the
// identity-pose origin chain computed with the same recursion, so the skinning
// transform of an unposed joint is exactly the identity.
struct Fk {
    std::vector<Mat3> local;
    std::vector<Mat3> rot;
    std::vector<Vec3> org;
    std::vector<Vec3> rest_org;
};

inline Fk RunFk(const BodyTemplate& tpl, const BodyParams& params) {
    const int nj = tpl.JointCount();
    Fk fk;
    fk.local.resize(nj);
    fk.rot.resize(nj);
    fk.org.resize(nj);
    fk.rest_org.resize(nj);
    for (int j = 0; j < nj; ++j) fk.local[j] = Rodrigues(params.pose[j]);
    fk.rot[0] = fk.local[0];
    fk.org[0] = tpl.rest_joints[0];
    fk.rest_org[0] = tpl.rest_joints[0];
    for (int j = 1; j < nj; ++j) {
        const int p = tpl.parents[j];
        const Vec3 d = tpl.rest_joints[j] - tpl.rest_joints[p];
        fk.rot[j] = fk.rot[p] * fk.local[j];
        fk.org[j] = fk.org[p] + fk.rot[p] * d;
        fk.rest_org[j] = fk.rest_org[p] + d;
    }
    return fk;
}

inline std::vector<Vec3> ShapedVertices(const BodyTemplate& tpl, const BodyParams& params) {
    std::vector<Vec3> shaped = tpl.rest_vertices;
    for (int b = 0; b < tpl.ShapeCount(); ++b) {
        const double beta = params.shape[b];
        if (beta == 0.0) continue;
        const auto& basis = tpl.shape_basis[b];
        for (int i = 0; i < tpl.VertexCount(); ++i) {
            shaped[i] += beta * basis.row(i).transpose();
        }
    }
    return shaped;
}

}  // namespace bodydetail

// Linear blend skinning in delta form: v' = v + sum_j w_j (G_j v - v), then the
// global similarity. With identity params the deltas vanish exactly, so the
// output reproduces the rest vertices bit for bit.
inline PosedBody PoseBody(const BodyTemplate& tpl, const BodyParams& params) {
    ValidateParams(tpl, params);
    const int nv = tpl.VertexCount();
    const int nj = tpl.JointCount();
    const bodydetail::Fk fk = bodydetail::RunFk(tpl, params);
    const std::vector<Vec3> shaped = bodydetail::ShapedVertices(tpl, params);

    std::vector<Vec3> trans(nj);
    for (int j = 0; j < nj; ++j) trans[j] = fk.org[j] - fk.rot[j] * fk.rest_org[j];

    const Mat3 rg = Rodrigues(params.global_rotation);
    const double s = params.global_scale;
    const Vec3 t = params.global_translation;

    PosedBody out;
    out.vertices.resize(nv);
    out.joints.resize(nj);
    ParallelFor(nv, 2048, [&](int64_t i) {
        const Vec3& v = shaped[i];
        Vec3 acc = v;
        for (int j = 0; j < nj; ++j) {
            const double w = tpl.weights(i, j);
            if (w == 0.0) continue;
            acc += w * (fk.rot[j] * v + trans[j] - v);
        }
        out.vertices[i] = s * (rg * acc) + t;
    });
    for (int j = 0; j < nj; ++j) out.joints[j] = s * (rg * fk.org[j]) + t;
    return out;
}

inline Mesh PosedMesh(const BodyTemplate& tpl, const BodyParams& params) {
    Mesh m;
    m.vertices = PoseBody(tpl, params).vertices;
    m.faces = tpl.faces;
    return m;
}

// Pulls world-space vertex and joint gradients back onto the parameter vector.
// Either gradient list may be empty. Per-vertex work is folded into per-joint
// 3x3 accumulators first, so the pose loop is O(J^2) regardless of mesh size.
inline BodyGrad PoseBodyBackward(const BodyTemplate& tpl, const BodyParams& params,
                                 const std::vector<Vec3>& d_vertices,
                                 const std::vector<Vec3>& d_joints = {}) {
    ValidateParams(tpl, params);
    const int nv = tpl.VertexCount();
    const int nj = tpl.JointCount();
    const int nb = tpl.ShapeCount();
    Require(d_vertices.empty() || static_cast<int>(d_vertices.size()) == nv,
            "vertex gradient size mismatch");
    Require(d_joints.empty() || static_cast<int>(d_joints.size()) == nj,
            "joint gradient size mismatch");

    const bodydetail::Fk fk = bodydetail::RunFk(tpl, params);
    const std::vector<Vec3> shaped = bodydetail::ShapedVertices(tpl, params);
    std::vector<Vec3> trans(nj);
    for (int j = 0; j < nj; ++j) trans[j] = fk.org[j] - fk.rot[j] * fk.rest_org[j];

    const Mat3 rg = Rodrigues(params.global_rotation);
    const double s = params.global_scale;

    struct Partial {
        Vec3 sum_g = Vec3::Zero();
        Mat3 outer = Mat3::Zero();
        Eigen::VectorXd shape;
        std::vector<Mat3> q_outer;
        std::vector<Vec3> q_vec;
    };
    const int64_t grain = 2048;
    const int64_t chunks = d_vertices.empty() ? 0 : (nv + grain - 1) / grain;
    std::vector<Partial> partials(chunks);
    ParallelForChunked(d_vertices.empty() ? 0 : nv, grain,
                       [&](int64_t c, int64_t begin, int64_t end) {
        Partial& part = partials[c];
        part.shape = Eigen::VectorXd::Zero(nb);
        part.q_outer.assign(nj, Mat3::Zero());
        part.q_vec.assign(nj, Vec3::Zero());
        for (int64_t i = begin; i < end; ++i) {
            const Vec3& g = d_vertices[i];
            const Vec3& vbar = shaped[i];
            Vec3 vprime = vbar;
            for (int j = 0; j < nj; ++j) {
                const double w = tpl.weights(i, j);
                if (w == 0.0) continue;
                vprime += w * (fk.rot[j] * vbar + trans[j] - vbar);
            }
            part.sum_g += g;
            part.outer += g * vprime.transpose();
            const Vec3 gt = s * (rg.transpose() * g);
            Vec3 h = gt;
            for (int j = 0; j < nj; ++j) {
                const double w = tpl.weights(i, j);
                if (w == 0.0) continue;
                part.q_outer[j] += w * gt * vbar.transpose();
                part.q_vec[j] += w * gt;
                h += w * (fk.rot[j].transpose() * gt - gt);
            }
            for (int b = 0; b < nb; ++b) {
                part.shape[b] += tpl.shape_basis[b].row(i).dot(h);
            }
        }
    });

    BodyGrad grad;
    grad.pose.assign(nj, Vec3::Zero());
    grad.shape = Eigen::VectorXd::Zero(nb);
    Vec3 sum_g = Vec3::Zero();
    Mat3 outer = Mat3::Zero();
    std::vector<Mat3> q_outer(nj, Mat3::Zero());
    std::vector<Vec3> q_vec(nj, Vec3::Zero());
    for (const Partial& part : partials) {
        sum_g += part.sum_g;
        outer += part.outer;
        grad.shape += part.shape;
        for (int j = 0; j < nj; ++j) {
            q_outer[j] += part.q_outer[j];
            q_vec[j] += part.q_vec[j];
        }
    }
    std::vector<Vec3> r(nj);
    for (int j = 0; j < nj; ++j) r[j] = q_vec[j];
    if (!d_joints.empty()) {
        for (int j = 0; j < nj; ++j) {
            sum_g += d_joints[j];
            outer += d_joints[j] * fk.org[j].transpose();
            r[j] += s * (rg.transpose() * d_joints[j]);
        }
    }

    grad.global_translation = sum_g;
    grad.global_scale = rg.cwiseProduct(outer).sum();
    for (int a = 0; a < 3; ++a) {
        grad.global_rotation[a] =
            s * RodriguesJacobian(params.global_rotation, a).cwiseProduct(outer).sum();
    }
    std::vector<Mat3> q_hat(nj);
    for (int j = 0; j < nj; ++j) {
        q_hat[j] = q_outer[j] - q_vec[j] * fk.rest_org[j].transpose();
    }

    std::vector<Mat3> drot(nj);
    std::vector<Vec3> dorg(nj);
    std::vector<char> in_subtree(nj);
    for (int j = 0; j < nj; ++j) {
        for (int a = 0; a < 3; ++a) {
            std::fill(in_subtree.begin(), in_subtree.end(), 0);
            const Mat3 dr = RodriguesJacobian(params.pose[j], a);
            drot[j] = j == 0 ? dr : Mat3(fk.rot[tpl.parents[j]] * dr);
            dorg[j] = Vec3::Zero();
            in_subtree[j] = 1;
            double acc = drot[j].cwiseProduct(q_hat[j]).sum();
            for (int k = j + 1; k < nj; ++k) {
                const int p = tpl.parents[k];
                if (!in_subtree[p]) continue;
                in_subtree[k] = 1;
                drot[k] = drot[p] * fk.local[k];
                dorg[k] = dorg[p] + drot[p] * (tpl.rest_joints[k] - tpl.rest_joints[p]);
                acc += drot[k].cwiseProduct(q_hat[k]).sum() + r[k].dot(dorg[k]);
            }
            grad.pose[j][a] = acc;
        }
    }
    return grad;
}

inline std::vector<Vec3> Keypoints3d(const BodyTemplate& tpl, const BodyParams& params) {
    Require(tpl.keypoints.size() == 22, "template does not define the 22 body keypoints");
    ValidateParams(tpl, params);
    const bodydetail::Fk fk = bodydetail::RunFk(tpl, params);
    const Mat3 rg = Rodrigues(params.global_rotation);
    std::vector<Vec3> out(tpl.keypoints.size());
    for (size_t k = 0; k < tpl.keypoints.size(); ++k) {
        out[k] = params.global_scale * (rg * fk.org[tpl.keypoints[k]]) + params.global_translation;
    }
    return out;
}

// One isotropic gray Gaussian per posed vertex; the default sigma is 0.8x the
// rest mesh's mean edge length. Only the centers depend on the parameters, so
// the render gradient w.r.t. centers feeds PoseBodyBackward directly.
inline GaussianCloud SplatTemplate(const BodyTemplate& tpl, const BodyParams& params,
                                   double sigma = 0.0) {
    if (sigma <= 0.0) sigma = 0.8 * tpl.MeanEdgeLength();
    Require(sigma > 0.0, "splat sigma must be positive");
    const PosedBody posed = PoseBody(tpl, params);
    GaussianCloud cloud;
    cloud.gaussians.reserve(posed.vertices.size());
    cloud.source_view.reserve(posed.vertices.size());
    const double log_sigma = std::log(sigma);
    for (const Vec3& v : posed.vertices) {
        Gaussian g;
        g.center = v;
        g.log_scale = Vec3::Constant(log_sigma);
        g.logit_opacity = Logit(0.95);
        g.color = Vec3(0.5, 0.5, 0.5);
        cloud.Append(g);
    }
    return cloud;
}

namespace bodydetail {

struct Capsule {
    int owner;
    Vec3 a;
    Vec3 b;
    double radius;
};

inline double CapsuleSurfaceDistance(const Capsule& c, const Vec3& p) {
    const Vec3 ab = c.b - c.a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? (p - c.a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (c.a + t * ab)).norm() - c.radius;
}

inline double SmoothMin(double a, double b, double k) {
    const double h = std::clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0);
    return b + (a - b) * h - k * h * (1.0 - h);
}

}  // namespace bodydetail

// Procedural capsule humanoid: 22 joints in the usual body order (pelvis,
// hips, spine chain, knees, ankles, feet, neck, collars, head, shoulders,
// elbows, wrists), a watertight skin extracted from a smooth-min capsule
// field, inverse-square skinning falloff over the four nearest bones, and
// height/girth blendshapes. Proportions jitter a few percent per seed.
inline BodyTemplate ProceduralTemplate(uint64_t seed, int detail = 0) {
    Require(detail >= 0 && detail <= 3, "detail level must be in [0, 3]");
    const Rng rng(seed);
    auto dim = [&](int index, double base) {
        const double n = std::clamp(Rng(rng).Substream("body.dims", index).Normal(), -2.5, 2.5);
        return base * (1.0 + 0.04 * n);
    };
    auto rad = [&](int index, double base) {
        const double n = std::clamp(Rng(rng).Substream("body.radii", index).Normal(), -2.5, 2.5);
        return base * (1.0 + 0.08 * n);
    };

    const double hip_half = dim(0, 0.09);
    const double hip_drop = dim(1, 0.05);
    const double knee_half = dim(2, 0.10);
    const double thigh = dim(3, 0.38);
    const double calf = dim(4, 0.36);
    const double foot_drop = dim(5, 0.055);
    const double foot_forward = dim(6, 0.10);
    const double spine_seg = dim(7, 0.12);
    const double neck_len = dim(8, 0.12);
    const double head_len = dim(9, 0.09);
    const double collar_half = dim(10, 0.05);
    const double shoulder_half = dim(11, 0.17);
    const double upper_arm = dim(12, 0.27);
    const double forearm = dim(13, 0.24);
    const double hand_len = dim(14, 0.09);

    BodyTemplate tpl;
    tpl.joint_names = {"pelvis",        "left_hip",      "right_hip",      "spine1",
                       "left_knee",     "right_knee",    "spine2",         "left_ankle",
                       "right_ankle",   "spine3",        "left_foot",      "right_foot",
                       "neck",          "left_collar",   "right_collar",   "head",
                       "left_shoulder", "right_shoulder", "left_elbow",    "right_elbow",
                       "left_wrist",    "right_wrist"};
    tpl.parents = {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
    tpl.rest_joints.resize(22);
    const double hip_y = -hip_drop;
    const double spine3_y = 3.0 * spine_seg;
    const double neck_y = spine3_y + neck_len;
    const double shoulder_y = neck_y - 0.01;
    tpl.rest_joints[0] = Vec3(0, 0, 0);
    tpl.rest_joints[1] = Vec3(hip_half, hip_y, 0);
    tpl.rest_joints[2] = Vec3(-hip_half, hip_y, 0);
    tpl.rest_joints[3] = Vec3(0, spine_seg, 0);
    tpl.rest_joints[4] = Vec3(knee_half, hip_y - thigh, 0);
    tpl.rest_joints[5] = Vec3(-knee_half, hip_y - thigh, 0);
    tpl.rest_joints[6] = Vec3(0, 2.0 * spine_seg, 0);
    tpl.rest_joints[7] = Vec3(knee_half, hip_y - thigh - calf, 0);
    tpl.rest_joints[8] = Vec3(-knee_half, hip_y - thigh - calf, 0);
    tpl.rest_joints[9] = Vec3(0, spine3_y, 0);
    tpl.rest_joints[10] = Vec3(knee_half, hip_y - thigh - calf - foot_drop, foot_forward);
    tpl.rest_joints[11] = Vec3(-knee_half, hip_y - thigh - calf - foot_drop, foot_forward);
    tpl.rest_joints[12] = Vec3(0, neck_y, 0);
    tpl.rest_joints[13] = Vec3(collar_half, shoulder_y - 0.02, 0);
    tpl.rest_joints[14] = Vec3(-collar_half, shoulder_y - 0.02, 0);
    tpl.rest_joints[15] = Vec3(0, neck_y + head_len, 0);
    tpl.rest_joints[16] = Vec3(shoulder_half, shoulder_y, 0);
    tpl.rest_joints[17] = Vec3(-shoulder_half, shoulder_y, 0);
    tpl.rest_joints[18] = Vec3(shoulder_half + upper_arm, shoulder_y, 0);
    tpl.rest_joints[19] = Vec3(-shoulder_half - upper_arm, shoulder_y, 0);
    tpl.rest_joints[20] = Vec3(shoulder_half + upper_arm + forearm, shoulder_y, 0);
    tpl.rest_joints[21] = Vec3(-shoulder_half - upper_arm - forearm, shoulder_y, 0);

    const auto& js = tpl.rest_joints;
    std::vector<bodydetail::Capsule> caps;
    auto add = [&](int owner, const Vec3& a, const Vec3& b, int rindex, double rbase) {
        caps.push_back({owner, a, b, rad(rindex, rbase)});
    };
    add(0, js[0], js[3], 0, 0.105);
    add(0, js[0], js[1], 1, 0.075);
    add(0, js[0], js[2], 1, 0.075);
    add(3, js[3], js[6], 2, 0.115);
    add(6, js[6], js[9], 3, 0.11);
    add(9, js[9], js[12], 4, 0.085);
    add(9, js[9], js[13], 5, 0.055);
    add(9, js[9], js[14], 5, 0.055);
    add(12, js[12], js[15], 6, 0.045);
    add(15, js[15], js[15] + Vec3(0, 1.55 * head_len, 0.02), 7, 0.085);
    add(13, js[13], js[16], 8, 0.05);
    add(14, js[14], js[17], 8, 0.05);
    add(16, js[16], js[18], 9, 0.047);
    add(17, js[17], js[19], 9, 0.047);
    add(18, js[18], js[20], 10, 0.04);
    add(19, js[19], js[21], 10, 0.04);
    add(20, js[20], js[20] + Vec3(hand_len, 0, 0), 11, 0.034);
    add(21, js[21], js[21] + Vec3(-hand_len, 0, 0), 11, 0.034);
    add(1, js[1], js[4], 12, 0.075);
    add(2, js[2], js[5], 12, 0.075);
    add(4, js[4], js[7], 13, 0.055);
    add(5, js[5], js[8], 13, 0.055);
    add(7, js[7], js[10], 14, 0.042);
    add(8, js[8], js[11], 14, 0.042);
    add(10, js[10], js[10] + Vec3(0, -0.005, 0.085), 15, 0.035);
    add(11, js[11], js[11] + Vec3(0, -0.005, 0.085), 15, 0.035);

    const double blend = 0.025;
    const double h = 0.021 / static_cast<double>(1 << detail);
    Vec3 lo = Vec3::Constant(1e30);
    Vec3 hi = Vec3::Constant(-1e30);
    for (const auto& c : caps) {
        const Vec3 pad = Vec3::Constant(c.radius + blend + 3.0 * h);
        lo = lo.cwiseMin(c.a.cwiseMin(c.b) - pad);
        hi = hi.cwiseMax(c.a.cwiseMax(c.b) + pad);
    }
    const Vec3 extent = hi - lo;
    const int nx = std::max(2, static_cast<int>(std::ceil(extent.x() / h)) + 1);
    const int ny = std::max(2, static_cast<int>(std::ceil(extent.y() / h)) + 1);
    const int nz = std::max(2, static_cast<int>(std::ceil(extent.z() / h)) + 1);

    std::vector<double> field(static_cast<size_t>(nx) * ny * nz);
    ParallelFor(static_cast<int64_t>(field.size()), 4096, [&](int64_t idx) {
        const int ix = static_cast<int>(idx % nx);
        const int iy = static_cast<int>((idx / nx) % ny);
        const int iz = static_cast<int>(idx / (static_cast<int64_t>(nx) * ny));
        const Vec3 p = lo + Vec3(ix * h, iy * h, iz * h);
        double f = 1e30;
        for (const auto& c : caps) {
            f = bodydetail::SmoothMin(f, bodydetail::CapsuleSurfaceDistance(c, p), blend);
        }
        field[idx] = f;
    });
    const Mesh skin = MarchingCubes(
        nx, ny, nz,
        [&](int ix, int iy, int iz) {
            return field[static_cast<size_t>(iz) * nx * ny + static_cast<size_t>(iy) * nx + ix];
        },
        0.0, lo, h);

    tpl.rest_vertices = skin.vertices;
    tpl.faces = skin.faces;
    const int nv = tpl.VertexCount();
    tpl.weights = Eigen::MatrixXd::Zero(nv, 22);
    ParallelFor(nv, 1024, [&](int64_t i) {
        const Vec3& p = tpl.rest_vertices[i];
        std::array<double, 22> dist;
        dist.fill(1e30);
        for (const auto& c : caps) {
            dist[c.owner] =
                std::min(dist[c.owner], bodydetail::CapsuleSurfaceDistance(c, p));
        }
        std::array<int, 22> order;
        for (int j = 0; j < 22; ++j) order[j] = j;
        std::partial_sort(order.begin(), order.begin() + 4, order.end(),
                          [&](int a, int b) { return dist[a] < dist[b]; });
        double total = 0.0;
        std::array<double, 4> score;
        for (int k = 0; k < 4; ++k) {
            const double d = std::max(dist[order[k]], 0.004);
            score[k] = 1.0 / (d * d);
            total += score[k];
        }
        for (int k = 0; k < 4; ++k) tpl.weights(i, order[k]) = score[k] / total;
    });

    Mesh with_normals = skin;
    ComputeVertexNormals(with_normals);
    tpl.shape_basis.resize(2);
    tpl.shape_basis[0].resize(nv, 3);
    tpl.shape_basis[1].resize(nv, 3);
    for (int i = 0; i < nv; ++i) {
        tpl.shape_basis[0].row(i) = Vec3(0, 0.10 * tpl.rest_vertices[i].y(), 0);
        tpl.shape_basis[1].row(i) = 0.06 * with_normals.normals[i];
    }
    tpl.keypoints.resize(22);
    for (int j = 0; j < 22; ++j) tpl.keypoints[j] = j;
    tpl.Validate();
    return tpl;
}

// Template container: "GFBT" magic, a JSON header carrying the joint tree and
// counts, then little-endian float32/uint32 blobs for vertices, faces,
// skinning weights and blendshapes.
inline void SaveBodyTemplate(const std::string& path, const BodyTemplate& tpl) {
    tpl.Validate();
    nlohmann::json header;
    header["vertex_count"] = tpl.VertexCount();
    header["face_count"] = tpl.faces.size();
    header["joint_count"] = tpl.JointCount();
    header["shape_count"] = tpl.ShapeCount();
    header["parents"] = tpl.parents;
    header["joint_names"] = tpl.joint_names;
    header["keypoints"] = tpl.keypoints;
    nlohmann::json joints = nlohmann::json::array();
    for (const Vec3& j : tpl.rest_joints) joints.push_back({j.x(), j.y(), j.z()});
    header["rest_joints"] = joints;
    const std::string text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write("GFBT", 4);
    const uint32_t len = static_cast<uint32_t>(text.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));

    std::vector<float> fbuf;
    auto flush = [&]() {
        out.write(reinterpret_cast<const char*>(fbuf.data()),
                  static_cast<std::streamsize>(fbuf.size() * sizeof(float)));
        fbuf.clear();
    };
    for (const Vec3& v : tpl.rest_vertices) {
        for (int k = 0; k < 3; ++k) fbuf.push_back(static_cast<float>(v[k]));
    }
    flush();
    std::vector<uint32_t> ibuf;
    for (const auto& f : tpl.faces) {
        for (int k = 0; k < 3; ++k) ibuf.push_back(static_cast<uint32_t>(f[k]));
    }
    out.write(reinterpret_cast<const char*>(ibuf.data()),
              static_cast<std::streamsize>(ibuf.size() * sizeof(uint32_t)));
    for (int i = 0; i < tpl.VertexCount(); ++i) {
        for (int j = 0; j < tpl.JointCount(); ++j) {
            fbuf.push_back(static_cast<float>(tpl.weights(i, j)));
        }
    }
    flush();
    for (const auto& basis : tpl.shape_basis) {
        for (int i = 0; i < basis.rows(); ++i) {
            for (int k = 0; k < 3; ++k) fbuf.push_back(static_cast<float>(basis(i, k)));
        }
        flush();
    }
    if (!out) throw IoError("short write: " + path);
}

inline BodyTemplate LoadBodyTemplate(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GFBT", 4) != 0) {
        throw IoError("bad body template magic: " + path);
    }
    uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    if (!in || len > (1u << 24)) throw IoError("bad body template header: " + path);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw IoError("truncated body template header: " + path);

    BodyTemplate tpl;
    int nv = 0;
    int nf = 0;
    int nj = 0;
    int nb = 0;
    try {
        const nlohmann::json header = nlohmann::json::parse(text);
        nv = header.at("vertex_count").get<int>();
        nf = header.at("face_count").get<int>();
        nj = header.at("joint_count").get<int>();
        nb = header.at("shape_count").get<int>();
        tpl.parents = header.at("parents").get<std::vector<int>>();
        tpl.joint_names = header.value("joint_names", std::vector<std::string>{});
        tpl.keypoints = header.at("keypoints").get<std::vector<int>>();
        for (const auto& j : header.at("rest_joints")) {
            tpl.rest_joints.emplace_back(j.at(0).get<double>(), j.at(1).get<double>(),
                                         j.at(2).get<double>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed body template header: " + std::string(e.what()));
    }
    if (nv <= 0 || nf < 0 || nj <= 0 || nb < 0 || static_cast<int>(tpl.rest_joints.size()) != nj) {
        throw IoError("inconsistent body template counts: " + path);
    }

    std::vector<float> fbuf(static_cast<size_t>(nv) * 3);
    auto read_floats = [&](size_t count) {
        fbuf.resize(count);
        in.read(reinterpret_cast<char*>(fbuf.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) throw IoError("truncated body template blob: " + path);
    };
    read_floats(static_cast<size_t>(nv) * 3);
    tpl.rest_vertices.resize(nv);
    for (int i = 0; i < nv; ++i) {
        tpl.rest_vertices[i] = Vec3(fbuf[3 * i], fbuf[3 * i + 1], fbuf[3 * i + 2]);
    }
    std::vector<uint32_t> ibuf(static_cast<size_t>(nf) * 3);
    in.read(reinterpret_cast<char*>(ibuf.data()),
            static_cast<std::streamsize>(ibuf.size() * sizeof(uint32_t)));
    if (!in) throw IoError("truncated body template faces: " + path);
    tpl.faces.resize(nf);
    for (int i = 0; i < nf; ++i) {
        tpl.faces[i] = {static_cast<int>(ibuf[3 * i]), static_cast<int>(ibuf[3 * i + 1]),
                        static_cast<int>(ibuf[3 * i + 2])};
    }
    read_floats(static_cast<size_t>(nv) * nj);
    tpl.weights.resize(nv, nj);
    for (int i = 0; i < nv; ++i) {
        for (int j = 0; j < nj; ++j) tpl.weights(i, j) = fbuf[static_cast<size_t>(i) * nj + j];
    }
    tpl.shape_basis.resize(nb);
    for (int b = 0; b < nb; ++b) {
        read_floats(static_cast<size_t>(nv) * 3);
        tpl.shape_basis[b].resize(nv, 3);
        for (int i = 0; i < nv; ++i) {
            tpl.shape_basis[b].row(i) = Vec3(fbuf[3 * i], fbuf[3 * i + 1], fbuf[3 * i + 2]);
        }
    }
    tpl.Validate();
    return tpl;
}

inline void SaveBodyParams(const std::string& path, const BodyParams& params) {
    nlohmann::json j;
    std::vector<double> pose;
    pose.reserve(params.pose.size() * 3);
    for (const Vec3& p : params.pose) {
        pose.push_back(p.x());
        pose.push_back(p.y());
        pose.push_back(p.z());
    }
    j["pose"] = pose;
    j["shape"] = std::vector<double>(params.shape.data(), params.shape.data() + params.shape.size());
    j["global_rotation"] = {params.global_rotation.x(), params.global_rotation.y(),
                            params.global_rotation.z()};
    j["global_translation"] = {params.global_translation.x(), params.global_translation.y(),
                               params.global_translation.z()};
    j["global_scale"] = params.global_scale;
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw IoError("short write: " + path);
}

inline BodyParams LoadBodyParams(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    BodyParams params;
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        const auto pose = j.at("pose").get<std::vector<double>>();
        if (pose.size() % 3 != 0) throw IoError("pose length must be a multiple of 3");
        params.pose.resize(pose.size() / 3);
        for (size_t k = 0; k < params.pose.size(); ++k) {
            params.pose[k] = Vec3(pose[3 * k], pose[3 * k + 1], pose[3 * k + 2]);
        }
        const auto shape = j.at("shape").get<std::vector<double>>();
        params.shape = Eigen::Map<const Eigen::VectorXd>(shape.data(),
                                                         static_cast<int>(shape.size()));
        const auto rot = j.at("global_rotation").get<std::vector<double>>();
        const auto tr = j.at("global_translation").get<std::vector<double>>();
        if (rot.size() != 3 || tr.size() != 3) throw IoError("global terms must have 3 entries");
        params.global_rotation = Vec3(rot[0], rot[1], rot[2]);
        params.global_translation = Vec3(tr[0], tr[1], tr[2]);
        params.global_scale = j.at("global_scale").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed body params: " + std::string(e.what()));
    }
    return params;
}

}  // namespace gf
