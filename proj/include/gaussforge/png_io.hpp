// Copyright Contributors to the GaussForge Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "gaussforge/common.hpp"
#include "gaussforge/image.hpp"

// Minimal PNG codec over zlib. Supports what the pipeline emits and consumes:
// 8-bit RGB/RGBA and gray, 16-bit grayscale, no palette, no interlacing.
// Scanlines are written with filter 0; the reader handles all five filters.

namespace gf {
namespace pngdetail {

inline void PutU32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

inline uint32_t GetU32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline void WriteChunk(std::vector<uint8_t>& out, const char type[4],
                       const std::vector<uint8_t>& payload) {
    PutU32(out, static_cast<uint32_t>(payload.size()));
    const size_t type_at = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(0, out.data() + type_at, static_cast<uInt>(4 + payload.size()));
    PutU32(out, crc);
}

inline uint8_t Paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return static_cast<uint8_t>(a);
    if (pb <= pc) return static_cast<uint8_t>(b);
    return static_cast<uint8_t>(c);
}

}  // namespace pngdetail

// Encodes raw samples (already 8- or 16-bit big-endian packed) as a PNG file.
inline void WritePngSamples(const std::string& path, int width, int height, int channels,
                            int bit_depth, const std::vector<uint8_t>& raw) {
    Require(bit_depth == 8 || bit_depth == 16, "bit depth must be 8 or 16");
    Require(channels >= 1 && channels <= 4 && channels != 2, "unsupported channel count");
    const size_t row_bytes = static_cast<size_t>(width) * channels * (bit_depth / 8);
    Require(raw.size() == row_bytes * height, "sample buffer size mismatch");

    std::vector<uint8_t> filtered((row_bytes + 1) * height);
    for (int y = 0; y < height; ++y) {
        filtered[y * (row_bytes + 1)] = 0;
        std::memcpy(&filtered[y * (row_bytes + 1) + 1], &raw[y * row_bytes], row_bytes);
    }
    uLongf comp_bound = compressBound(static_cast<uLong>(filtered.size()));
    std::vector<uint8_t> compressed(comp_bound);
    if (compress2(compressed.data(), &comp_bound, filtered.data(),
                  static_cast<uLong>(filtered.size()), 6) != Z_OK) {
        throw IoError("deflate failed for " + path);
    }
    compressed.resize(comp_bound);

    std::vector<uint8_t> out;
    static const uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    out.insert(out.end(), kSig, kSig + 8);
    std::vector<uint8_t> ihdr;
    pngdetail::PutU32(ihdr, static_cast<uint32_t>(width));
    pngdetail::PutU32(ihdr, static_cast<uint32_t>(height));
    ihdr.push_back(static_cast<uint8_t>(bit_depth));
    const uint8_t color_type = channels == 1 ? 0 : (channels == 3 ? 2 : 6);
    ihdr.push_back(color_type);
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    pngdetail::WriteChunk(out, "IHDR", ihdr);
    pngdetail::WriteChunk(out, "IDAT", compressed);
    pngdetail::WriteChunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write: " + path);
}

// Unit-range image -> 8-bit PNG (gray, RGB or RGBA by channel count).
inline void SavePng8(const std::string& path, const ImageBuffer& img) {
    std::vector<uint8_t> raw(img.data.size());
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        raw[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    WritePngSamples(path, img.width, img.height, img.channels, 8, raw);
}

// Unit-range single-channel image -> 16-bit grayscale PNG.
inline void SavePng16(const std::string& path, const ImageBuffer& img) {
    Require(img.channels == 1, "16-bit PNG writer is single channel");
    std::vector<uint8_t> raw(img.data.size() * 2);
    for (size_t i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        const uint16_t s = static_cast<uint16_t>(std::lround(v * 65535.0));
        raw[2 * i] = static_cast<uint8_t>(s >> 8);
        raw[2 * i + 1] = static_cast<uint8_t>(s & 0xff);
    }
    WritePngSamples(path, img.width, img.height, 1, 16, raw);
}

inline ImageBuffer LoadPng(const std::string& path,
                           ImageSemantics semantics = ImageSemantics::kColor) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    static const uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kSig, 8) != 0) {
        throw IoError("not a PNG file: " + path);
    }

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    bool saw_end = false;
    while (pos + 8 <= bytes.size() && !saw_end) {
        const uint32_t len = pngdetail::GetU32(&bytes[pos]);
        if (pos + 12 + len > bytes.size()) throw IoError("truncated PNG chunk: " + path);
        const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
        const uint8_t* payload = &bytes[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw IoError("bad IHDR: " + path);
            width = static_cast<int>(pngdetail::GetU32(payload));
            height = static_cast<int>(pngdetail::GetU32(payload + 4));
            bit_depth = payload[8];
            color_type = payload[9];
            if (payload[12] != 0) throw IoError("interlaced PNG unsupported: " + path);
            if (bit_depth != 8 && bit_depth != 16) {
                throw IoError("unsupported PNG bit depth: " + path);
            }
            if (color_type != 0 && color_type != 2 && color_type != 4 && color_type != 6) {
                throw IoError("unsupported PNG color type: " + path);
            }
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), payload, payload + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_end = true;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw IoError("missing IHDR: " + path);
    if (idat.empty()) throw IoError("missing IDAT: " + path);

    const int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : (color_type == 4 ? 2 : 4));
    const int sample_bytes = bit_depth / 8;
    const size_t bpp = static_cast<size_t>(channels) * sample_bytes;
    const size_t row_bytes = static_cast<size_t>(width) * bpp;
    std::vector<uint8_t> decoded((row_bytes + 1) * height);
    uLongf decoded_len = static_cast<uLongf>(decoded.size());
    const int zrc = uncompress(decoded.data(), &decoded_len, idat.data(),
                               static_cast<uLong>(idat.size()));
    if (zrc != Z_OK || decoded_len != decoded.size()) {
        throw IoError("inflate failed for " + path);
    }

    // Undo per-row filters in place, writing the reconstructed rows tightly.
    std::vector<uint8_t> recon(row_bytes * height);
    for (int y = 0; y < height; ++y) {
        const uint8_t filter = decoded[y * (row_bytes + 1)];
        const uint8_t* src = &decoded[y * (row_bytes + 1) + 1];
        uint8_t* dst = &recon[y * row_bytes];
        const uint8_t* prev = y > 0 ? &recon[(y - 1) * row_bytes] : nullptr;
        for (size_t i = 0; i < row_bytes; ++i) {
            const int a = i >= bpp ? dst[i - bpp] : 0;
            const int b = prev ? prev[i] : 0;
            const int c = (prev && i >= bpp) ? prev[i - bpp] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += pngdetail::Paeth(a, b, c); break;
                default: throw IoError("bad PNG filter byte: " + path);
            }
            dst[i] = static_cast<uint8_t>(v & 0xff);
        }
    }

    ImageBuffer img(width, height, channels, semantics);
    const double scale = bit_depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
    for (size_t i = 0; i < img.data.size(); ++i) {
        uint32_t s = recon[i * sample_bytes];
        if (bit_depth == 16) s = (s << 8) | recon[i * sample_bytes + 1];
        img.data[i] = s * scale;
    }
    return img;
}

}  // namespace gf
