// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gaussforge/common.hpp"

namespace gf {

// What the channels of an ImageBuffer mean. Values are unit-range for color,
// alpha and mask buffers, positive distances (plus a far sentinel) for depth,
// unit vectors for normals and unconstrained for feature planes.
enum class ImageSemantics : uint8_t {
    kColor,
    kAlpha,
    kDepth,
    kNormal,
    kMask,
    kFeature,
};

// Dense row-major H x W x C image of doubles, channels interleaved.
struct ImageBuffer {
    int width = 0;
    int height = 0;
    int channels = 0;
    ImageSemantics semantics = ImageSemantics::kFeature;
    std::vector<double> data;

    ImageBuffer() = default;
    ImageBuffer(int w, int h, int c, ImageSemantics s, double fill = 0.0)
        : width(w), height(h), channels(c), semantics(s) {
        Require(w > 0 && h > 0 && c > 0, "ImageBuffer dimensions must be positive");
        data.assign(static_cast<size_t>(w) * h * c, fill);
    }

    double& At(int x, int y, int c = 0) {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double At(int x, int y, int c = 0) const {
        return data[(static_cast<size_t>(y) * width + x) * channels + c];
    }

    bool Contains(int x, int y) const {
        return x >= 0 && x < width && y >= 0 && y < height;
    }

    size_t Size() const { return data.size(); }

    bool SameShape(const ImageBuffer& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

// 2x2 box downsample; requires even dimensions.
inline ImageBuffer Downsample2x(const ImageBuffer& src) {
    Require(src.width % 2 == 0 && src.height % 2 == 0,
            "Downsample2x needs even dimensions");
    ImageBuffer dst(src.width / 2, src.height / 2, src.channels, src.semantics);
    for (int y = 0; y < dst.height; ++y) {
        for (int x = 0; x < dst.width; ++x) {
            for (int c = 0; c < src.channels; ++c) {
                const double s = src.At(2 * x, 2 * y, c) + src.At(2 * x + 1, 2 * y, c) +
                                 src.At(2 * x, 2 * y + 1, c) + src.At(2 * x + 1, 2 * y + 1, c);
                dst.At(x, y, c) = 0.25 * s;
            }
        }
    }
    return dst;
}

inline double MaxAbsDifference(const ImageBuffer& a, const ImageBuffer& b) {
    Require(a.SameShape(b), "image shape mismatch");
    double m = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    }
    return m;
}

// Raw float dump: magic "GFIM", then u32 width/height/channels, then
// width*height*channels float32 samples, everything little-endian.
inline void SaveRawImage(const std::string& path, const ImageBuffer& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write("GFIM", 4);
    const uint32_t dims[3] = {static_cast<uint32_t>(img.width),
                              static_cast<uint32_t>(img.height),
                              static_cast<uint32_t>(img.channels)};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    std::vector<float> samples(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) samples[i] = static_cast<float>(img.data[i]);
    out.write(reinterpret_cast<const char*>(samples.data()),
              static_cast<std::streamsize>(samples.size() * sizeof(float)));
    if (!out) throw IoError("short write: " + path);
}

inline ImageBuffer LoadRawImage(const std::string& path,
                                ImageSemantics semantics = ImageSemantics::kFeature) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "GFIM", 4) != 0) throw IoError("bad raw image magic: " + path);
    uint32_t dims[3] = {};
    in.read(reinterpret_cast<char*>(dims), sizeof(dims));
    if (!in) throw IoError("truncated raw image header: " + path);
    constexpr uint32_t kMaxDim = 1u << 20;
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || dims[0] > kMaxDim ||
        dims[1] > kMaxDim || dims[2] > 4096) {
        throw IoError("implausible raw image dimensions: " + path);
    }
    ImageBuffer img(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                    static_cast<int>(dims[2]), semantics);
    std::vector<float> samples(img.data.size());
    in.read(reinterpret_cast<char*>(samples.data()),
            static_cast<std::streamsize>(samples.size() * sizeof(float)));
    if (!in) throw IoError("truncated raw image data: " + path);
    for (size_t i = 0; i < samples.size(); ++i) img.data[i] = samples[i];
    return img;
}

}  // namespace gf
