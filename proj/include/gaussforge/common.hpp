// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace gf {

// Thrown when an input file is missing, truncated or malformed.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when numeric state degenerates (NaN/Inf where finite values are required).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

inline void Require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void RequireState(bool cond, const std::string& msg) {
    if (!cond) throw std::logic_error(msg);
}

inline void RequireFinite(double v, const std::string& msg) {
    if (!std::isfinite(v)) throw NumericError(msg);
}

constexpr double kPi = 3.14159265358979323846;

inline double DegToRad(double deg) { return deg * kPi / 180.0; }
inline double RadToDeg(double rad) { return rad * 180.0 / kPi; }

}  // namespace gf
