// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaussforge/common.hpp"
#include "gaussforge/image.hpp"
#include "gaussforge/mathutil.hpp"

namespace gf {

enum class CameraModel : uint8_t { kPerspective, kWeakPerspective };

inline std::string CameraModelName(CameraModel m) {
    return m == CameraModel::kPerspective ? "perspective" : "weak_perspective";
}

inline CameraModel CameraModelFromName(const std::string& name) {
    if (name == "perspective") return CameraModel::kPerspective;
    if (name == "weak_perspective") return CameraModel::kWeakPerspective;
    throw IoError("unknown camera model: " + name);
}

struct Ray {
    Vec3 origin;
    Vec3 direction;
};

// Camera with OpenCV-style axes: x right, y down, z forward. `rotation` and
// `translation` map world points into that frame (p_cam = R p + t). Pixel
// (i, j) covers the unit square whose center is at continuous coordinates
// (i + 0.5, j + 0.5).
//
// The weak-perspective model drops the depth divide: u = scale * x_cam + cx.
// It keeps z_cam as the reported depth so depth maps and sorting still work.
struct CameraView {
    CameraModel model = CameraModel::kPerspective;
    int width = 0;
    int height = 0;
    double fx = 0, fy = 0;     // perspective focal lengths, pixels
    double scale = 0;          // weak-perspective pixels per world unit
    double cx = 0, cy = 0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double near = 0.01;
    double far = 100.0;

    void Validate() const {
        Require(width > 0 && height > 0, "camera image size must be positive");
        Require(near > 0 && far > near, "camera needs 0 < near < far");
        if (model == CameraModel::kPerspective) {
            Require(fx > 0 && fy > 0, "perspective camera needs fx, fy > 0");
        } else {
            Require(scale > 0, "weak-perspective camera needs scale > 0");
        }
        const Mat3 rrt = rotation * rotation.transpose();
        Require((rrt - Mat3::Identity()).norm() < 1e-6, "camera rotation is not orthonormal");
    }

    Vec3 ToCamera(const Vec3& p_world) const { return rotation * p_world + translation; }
    Vec3 ToWorld(const Vec3& p_cam) const { return rotation.transpose() * (p_cam - translation); }
    Vec3 Center() const { return rotation.transpose() * (-translation); }

    // Projects a camera-space point; depth_out receives z_cam.
    Vec2 ProjectCamera(const Vec3& p_cam, double* depth_out = nullptr) const {
        if (depth_out) *depth_out = p_cam.z();
        if (model == CameraModel::kPerspective) {
            return Vec2(fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy);
        }
        return Vec2(scale * p_cam.x() + cx, scale * p_cam.y() + cy);
    }

    Vec2 Project(const Vec3& p_world, double* depth_out = nullptr) const {
        return ProjectCamera(ToCamera(p_world), depth_out);
    }

    // Camera-space point of a pixel coordinate at the given depth.
    Vec3 UnprojectCamera(const Vec2& px, double depth) const {
        if (model == CameraModel::kPerspective) {
            return Vec3((px.x() - cx) / fx * depth, (px.y() - cy) / fy * depth, depth);
        }
        return Vec3((px.x() - cx) / scale, (px.y() - cy) / scale, depth);
    }

    Vec3 Unproject(const Vec2& px, double depth) const {
        return ToWorld(UnprojectCamera(px, depth));
    }

    Ray PixelRay(double px, double py) const {
        if (model == CameraModel::kPerspective) {
            const Vec3 dir_cam((px - cx) / fx, (py - cy) / fy, 1.0);
            return Ray{Center(), (rotation.transpose() * dir_cam).normalized()};
        }
        const Vec3 origin = ToWorld(Vec3((px - cx) / scale, (py - cy) / scale, 0.0));
        return Ray{origin, rotation.row(2).transpose()};
    }

    // Same pose at a different resolution; intrinsics scale linearly.
    CameraView Scaled(double factor) const {
        CameraView v = *this;
        v.width = static_cast<int>(std::lround(width * factor));
        v.height = static_cast<int>(std::lround(height * factor));
        v.fx = fx * factor;
        v.fy = fy * factor;
        v.scale = scale * factor;
        v.cx = cx * factor;
        v.cy = cy * factor;
        return v;
    }
};

inline CameraView LookAtCamera(CameraModel model, const Vec3& eye, const Vec3& target,
                               const Vec3& up, int width, int height, double focal_or_scale,
                               double near = 0.01, double far = 100.0) {
    CameraView v;
    v.model = model;
    v.width = width;
    v.height = height;
    v.cx = width * 0.5;
    v.cy = height * 0.5;
    if (model == CameraModel::kPerspective) {
        v.fx = v.fy = focal_or_scale;
    } else {
        v.scale = focal_or_scale;
    }
    v.rotation = FrameFromForwardUp(target - eye, up);
    v.translation = -(v.rotation * eye);
    v.near = near;
    v.far = far;
    v.Validate();
    return v;
}

struct CameraRig {
    std::vector<CameraView> views;
    std::vector<double> azimuth_deg;
};

// Evenly spaced azimuth ring around `center`, all cameras looking at it.
// Azimuth 0 places the camera on the +z axis; azimuths increase toward +x.
// `focal_or_scale <= 0` picks a default that frames a unit-scale subject.
inline CameraRig MakeCameraRing(int count, double radius, CameraModel model, int width,
                                int height, double focal_or_scale = 0.0,
                                double elevation_deg = 0.0, const Vec3& center = Vec3::Zero()) {
    Require(count > 0, "ring needs at least one view");
    Require(radius > 0, "ring radius must be positive");
    Require(std::abs(elevation_deg) < 90.0, "ring elevation must stay below the poles");
    if (focal_or_scale <= 0.0) {
        focal_or_scale = model == CameraModel::kPerspective ? 1.2 * width
                                                            : 0.44 * width / 0.9;
    }
    CameraRig rig;
    const double el = DegToRad(elevation_deg);
    for (int k = 0; k < count; ++k) {
        const double az_deg = 360.0 * k / count;
        const double az = DegToRad(az_deg);
        const Vec3 eye = center + radius * Vec3(std::cos(el) * std::sin(az), std::sin(el),
                                                std::cos(el) * std::cos(az));
        rig.views.push_back(LookAtCamera(model, eye, center, Vec3(0, 1, 0), width, height,
                                         focal_or_scale));
        rig.azimuth_deg.push_back(az_deg);
    }
    return rig;
}

// Per-pixel ray origins and directions, evaluated at pixel centers.
struct RayMap {
    ImageBuffer origins;
    ImageBuffer directions;
};

inline RayMap PixelRays(const CameraView& view) {
    view.Validate();
    RayMap rm{ImageBuffer(view.width, view.height, 3, ImageSemantics::kFeature),
              ImageBuffer(view.width, view.height, 3, ImageSemantics::kFeature)};
    for (int y = 0; y < view.height; ++y) {
        for (int x = 0; x < view.width; ++x) {
            const Ray r = view.PixelRay(x + 0.5, y + 0.5);
            for (int c = 0; c < 3; ++c) {
                rm.origins.At(x, y, c) = r.origin[c];
                rm.directions.At(x, y, c) = r.direction[c];
            }
        }
    }
    return rm;
}

inline nlohmann::json CameraRigToJson(const CameraRig& rig) {
    Require(!rig.views.empty(), "rig has no views");
    Require(rig.views.size() == rig.azimuth_deg.size(), "rig azimuth list mismatch");
    const CameraView& v0 = rig.views.front();
    nlohmann::json j;
    j["model"] = CameraModelName(v0.model);
    j["width"] = v0.width;
    j["height"] = v0.height;
    nlohmann::json intr;
    if (v0.model == CameraModel::kPerspective) {
        intr["fx"] = v0.fx;
        intr["fy"] = v0.fy;
    } else {
        intr["scale"] = v0.scale;
    }
    intr["cx"] = v0.cx;
    intr["cy"] = v0.cy;
    j["intrinsics"] = intr;
    j["near"] = v0.near;
    j["far"] = v0.far;
    nlohmann::json views = nlohmann::json::array();
    for (size_t i = 0; i < rig.views.size(); ++i) {
        const CameraView& v = rig.views[i];
        nlohmann::json jv;
        jv["azimuth_deg"] = rig.azimuth_deg[i];
        std::vector<double> rot(9);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) rot[r * 3 + c] = v.rotation(r, c);
        jv["rotation"] = rot;
        jv["translation"] = std::vector<double>{v.translation.x(), v.translation.y(),
                                                v.translation.z()};
        views.push_back(jv);
    }
    j["views"] = views;
    return j;
}

inline CameraRig CameraRigFromJson(const nlohmann::json& j) {
    CameraRig rig;
    CameraView base;
    try {
        base.model = CameraModelFromName(j.at("model").get<std::string>());
        base.width = j.at("width").get<int>();
        base.height = j.at("height").get<int>();
        const auto& intr = j.at("intrinsics");
        if (base.model == CameraModel::kPerspective) {
            base.fx = intr.at("fx").get<double>();
            base.fy = intr.at("fy").get<double>();
        } else {
            base.scale = intr.at("scale").get<double>();
        }
        base.cx = intr.at("cx").get<double>();
        base.cy = intr.at("cy").get<double>();
        base.near = j.value("near", 0.01);
        base.far = j.value("far", 100.0);
        for (const auto& jv : j.at("views")) {
            CameraView v = base;
            const auto rot = jv.at("rotation").get<std::vector<double>>();
            const auto tr = jv.at("translation").get<std::vector<double>>();
            if (rot.size() != 9 || tr.size() != 3) throw IoError("bad rig view shape");
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) v.rotation(r, c) = rot[r * 3 + c];
            v.translation = Vec3(tr[0], tr[1], tr[2]);
            v.Validate();
            rig.views.push_back(v);
            rig.azimuth_deg.push_back(jv.value("azimuth_deg", 0.0));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed camera rig: ") + e.what());
    }
    Require(!rig.views.empty(), "camera rig has no views");
    return rig;
}

inline void SaveCameraRig(const std::string& path, const CameraRig& rig) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << CameraRigToJson(rig).dump(2) << "\n";
    if (!out) throw IoError("short write: " + path);
}

inline CameraRig LoadCameraRig(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed camera rig JSON: ") + e.what());
    }
    return CameraRigFromJson(j);
}

}  // namespace gf
