#ifndef ZAUG_VOLIO_HPP
#define ZAUG_VOLIO_HPP

#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zaug/tensor.hpp"
#include "zaug/tiff.hpp"

// Loading, normalization, tiling and persistence of 3D image stacks.

namespace zaug::volio {

using nlohmann::json;

constexpr int kModelSize = 256;
constexpr int kMinSliceSize = 32;  // below this, flow estimation has nothing to work with

// Whole-stack min/max recorded at normalization time so predictions can be
// rescaled to the original intensity range.
struct NormInfo {
    double vmin = 0.0;
    double vmax = 0.0;
};

struct VolumeStack {
    int width = 0;
    int height = 0;
    int depth = 0;
    int bit_depth = 8;                              // 8 or 16
    std::vector<double> voxels;                     // (z, y, x) order
    std::optional<std::array<double, 3>> spacing;   // (dx, dy, dz) in micrometers
    std::optional<NormInfo> norm;                   // present once normalized
    std::string meta;                               // extra metadata carried through save (JSON)

    double& at(int z, int y, int x) {
        return voxels[(static_cast<std::size_t>(z) * height + y) * width + x];
    }
    double at(int z, int y, int x) const {
        return voxels[(static_cast<std::size_t>(z) * height + y) * width + x];
    }

    static VolumeStack blank(int w, int h, int d, int bits = 8) {
        VolumeStack s;
        s.width = w;
        s.height = h;
        s.depth = d;
        s.bit_depth = bits;
        s.voxels.assign(static_cast<std::size_t>(w) * h * d, 0.0);
        return s;
    }

    // one slice as a [1,1,h,w] tensor
    Tensor slice_tensor(int z) const {
        ZAUG_CHECK(z >= 0 && z < depth, "slice index ", z, " out of range");
        Tensor t(1, 1, height, width);
        std::copy(voxels.begin() + static_cast<std::ptrdiff_t>(z) * height * width,
                  voxels.begin() + static_cast<std::ptrdiff_t>(z + 1) * height * width, t.begin());
        return t;
    }

    void set_slice(int z, const Tensor& t) {
        ZAUG_CHECK(t.h() == height && t.w() == width && t.n() == 1 && t.c() == 1, "set_slice: shape mismatch");
        std::copy(t.begin(), t.end(), voxels.begin() + static_cast<std::ptrdiff_t>(z) * height * width);
    }
};

inline VolumeStack load_stack(const std::string& path) {
    auto pages = tiff::read_file(path);
    VolumeStack s;
    s.width = static_cast<int>(pages[0].width);
    s.height = static_cast<int>(pages[0].height);
    s.depth = static_cast<int>(pages.size());
    s.bit_depth = pages[0].bits;
    s.voxels.resize(static_cast<std::size_t>(s.width) * s.height * s.depth);

    for (std::size_t p = 0; p < pages.size(); ++p) {
        const auto& pg = pages[p];
        ZAUG_CHECK(static_cast<int>(pg.width) == s.width && static_cast<int>(pg.height) == s.height,
                   "page ", p + 1, ": dimensions ", pg.width, "x", pg.height,
                   " differ from page 1 (", s.width, "x", s.height, ")");
        ZAUG_CHECK(pg.bits == s.bit_depth, "page ", p + 1, ": bit depth ", pg.bits,
                   " differs from page 1 (", s.bit_depth, ")");
        double* dst = s.voxels.data() + p * static_cast<std::size_t>(s.width) * s.height;
        const std::size_t count = static_cast<std::size_t>(s.width) * s.height;
        if (pg.bits == 8) {
            for (std::size_t i = 0; i < count; ++i) dst[i] = pg.pixels[i];
        } else {
            for (std::size_t i = 0; i < count; ++i)
                dst[i] = static_cast<double>(pg.pixels[2 * i] | (pg.pixels[2 * i + 1] << 8));
        }
    }

    if (!pages[0].description.empty()) {
        json j = json::parse(pages[0].description, nullptr, false);
        if (!j.is_discarded()) {
            if (j.contains("spacing_um") && j["spacing_um"].is_array() && j["spacing_um"].size() == 3)
                s.spacing = {{j["spacing_um"][0].get<double>(), j["spacing_um"][1].get<double>(),
                              j["spacing_um"][2].get<double>()}};
            s.meta = pages[0].description;
        }
    }
    return s;
}

// Writes intensities as stored (rounded, clamped to the bit depth range).
inline void save_stack(const std::string& path, const VolumeStack& s, const json& extra_meta = json()) {
    ZAUG_CHECK(s.depth >= 1 && !s.voxels.empty(), "save_stack: empty stack");
    json desc = s.meta.empty() ? json::object() : json::parse(s.meta, nullptr, false);
    if (desc.is_discarded()) desc = json::object();
    if (s.spacing) desc["spacing_um"] = {(*s.spacing)[0], (*s.spacing)[1], (*s.spacing)[2]};
    if (!extra_meta.is_null())
        for (auto it = extra_meta.begin(); it != extra_meta.end(); ++it) desc[it.key()] = it.value();

    const double maxval = s.bit_depth == 8 ? 255.0 : 65535.0;
    std::vector<tiff::Page> pages(static_cast<std::size_t>(s.depth));
    const std::size_t count = static_cast<std::size_t>(s.width) * s.height;
    for (int z = 0; z < s.depth; ++z) {
        auto& pg = pages[static_cast<std::size_t>(z)];
        pg.width = static_cast<std::uint32_t>(s.width);
        pg.height = static_cast<std::uint32_t>(s.height);
        pg.bits = static_cast<std::uint16_t>(s.bit_depth);
        if (z == 0 && !desc.empty()) pg.description = desc.dump();
        pg.pixels.resize(count * (s.bit_depth / 8));
        const double* src = s.voxels.data() + static_cast<std::size_t>(z) * count;
        if (s.bit_depth == 8) {
            for (std::size_t i = 0; i < count; ++i)
                pg.pixels[i] = static_cast<std::uint8_t>(std::lround(std::min(std::max(src[i], 0.0), maxval)));
        } else {
            for (std::size_t i = 0; i < count; ++i) {
                const auto v = static_cast<std::uint16_t>(std::lround(std::min(std::max(src[i], 0.0), maxval)));
                pg.pixels[2 * i] = static_cast<std::uint8_t>(v & 0xff);
                pg.pixels[2 * i + 1] = static_cast<std::uint8_t>(v >> 8);
            }
        }
    }
    tiff::write_file(path, pages);
}

struct NormalizeResult {
    VolumeStack stack;
    bool constant_input = false;
};

// Whole-stack min-max normalization to [0,1]. A constant stack maps to all
// zeros with a warning instead of failing, so blank control volumes pass
// through pipelines.
inline NormalizeResult normalize_stack(const VolumeStack& s, std::ostream& warn = std::cerr) {
    ZAUG_CHECK(!s.voxels.empty(), "normalize_stack: empty stack");
    double vmin = s.voxels[0], vmax = s.voxels[0];
    for (double v : s.voxels) {
        vmin = std::min(vmin, v);
        vmax = std::max(vmax, v);
    }
    NormalizeResult r;
    r.stack = s;
    r.stack.norm = NormInfo{vmin, vmax};
    if (vmax == vmin) {
        r.constant_input = true;
        std::fill(r.stack.voxels.begin(), r.stack.voxels.end(), 0.0);
        warn << "warning: constant intensity stack (value " << vmin << "); normalized to zeros\n";
        return r;
    }
    const double inv = 1.0 / (vmax - vmin);
    for (double& v : r.stack.voxels) v = (v - vmin) * inv;
    return r;
}

inline double denormalize_value(double v, const NormInfo& n) { return v * (n.vmax - n.vmin) + n.vmin; }

inline void denormalize_stack(VolumeStack& s) {
    ZAUG_CHECK(s.norm.has_value(), "denormalize: stack carries no normalization record");
    for (double& v : s.voxels) v = denormalize_value(v, *s.norm);
    s.norm.reset();
}

// ---------------------------------------------------------------------------
// model frames and tiling
// ---------------------------------------------------------------------------

// A single slice resampled or cropped to the fixed network input size.
struct ModelFrame {
    Tensor data;        // [1,1,kModelSize,kModelSize], values in [0,1]
    int native_w = 0;
    int native_h = 0;
};

enum class FramePolicy { resize, tile };

struct TilePlan {
    int native_w = 0;
    int native_h = 0;
    int tile = kModelSize;
    FramePolicy policy = FramePolicy::tile;
    std::vector<std::array<int, 2>> offsets;  // (y, x), row-major; empty for resize

    json to_json() const {
        json j;
        j["native"] = {native_h, native_w};
        j["tile"] = tile;
        j["policy"] = policy == FramePolicy::tile ? "tile" : "resize";
        j["offsets"] = json::array();
        for (const auto& o : offsets) j["offsets"].push_back({o[0], o[1]});
        return j;
    }

    static TilePlan from_json(const json& j) {
        TilePlan p;
        p.native_h = j.at("native")[0].get<int>();
        p.native_w = j.at("native")[1].get<int>();
        p.tile = j.at("tile").get<int>();
        p.policy = j.at("policy").get<std::string>() == "tile" ? FramePolicy::tile : FramePolicy::resize;
        for (const auto& o : j.at("offsets")) p.offsets.push_back({o[0].get<int>(), o[1].get<int>()});
        return p;
    }
};

namespace detail {

inline std::vector<int> tile_offsets(int extent, int tile) {
    if (extent <= tile) return {0};
    std::vector<int> offs;
    int off = 0;
    while (off + tile < extent) {
        offs.push_back(off);
        off += tile;
    }
    offs.push_back(extent - tile);
    return offs;
}

}  // namespace detail

// Converts one normalized slice to network-sized frames. The tile policy
// covers the slice with overlapping patches (recorded offsets); slices
// smaller than the tile are reflect-padded and cropped back on reassembly.
inline std::pair<std::vector<ModelFrame>, TilePlan> to_model_frames(const Tensor& slice, FramePolicy policy) {
    ZAUG_CHECK(slice.n() == 1 && slice.c() == 1, "to_model_frames: expected [1,1,H,W]");
    const int H = slice.h(), W = slice.w();
    ZAUG_CHECK(H >= kMinSliceSize && W >= kMinSliceSize,
               "slice ", W, "x", H, " too small; minimum is ", kMinSliceSize, "x", kMinSliceSize);

    TilePlan plan;
    plan.native_w = W;
    plan.native_h = H;
    plan.policy = policy;
    std::vector<ModelFrame> frames;

    if (policy == FramePolicy::resize) {
        ModelFrame f;
        f.data = tensor_ops::resize_bilinear(slice, kModelSize, kModelSize);
        f.native_w = W;
        f.native_h = H;
        frames.push_back(std::move(f));
        return {frames, plan};
    }

    Tensor padded = slice;
    if (H < kModelSize || W < kModelSize)
        padded = tensor_ops::pad_reflect(slice, 0, std::max(0, kModelSize - H), 0, std::max(0, kModelSize - W));

    const auto ys = detail::tile_offsets(padded.h(), kModelSize);
    const auto xs = detail::tile_offsets(padded.w(), kModelSize);
    for (int y : ys)
        for (int x : xs) {
            plan.offsets.push_back({y, x});
            ModelFrame f;
            f.data = Tensor(1, 1, kModelSize, kModelSize);
            for (int yy = 0; yy < kModelSize; ++yy)
                for (int xx = 0; xx < kModelSize; ++xx) f.data.at(0, 0, yy, xx) = padded.at(0, 0, y + yy, x + xx);
            f.native_w = W;
            f.native_h = H;
            frames.push_back(std::move(f));
        }
    return {frames, plan};
}

// Inverse of to_model_frames; overlapping tile regions are averaged.
inline Tensor from_model_frames(const std::vector<Tensor>& frames, const TilePlan& plan) {
    if (plan.policy == FramePolicy::resize) {
        ZAUG_CHECK(frames.size() == 1, "from_model_frames: resize expects one frame");
        return tensor_ops::resize_bilinear(frames[0], plan.native_h, plan.native_w);
    }
    ZAUG_CHECK(frames.size() == plan.offsets.size(), "from_model_frames: frame count != offsets");
    const int ph = std::max(plan.native_h, plan.tile);
    const int pw = std::max(plan.native_w, plan.tile);
    Tensor acc(1, 1, ph, pw);
    Tensor cnt(1, 1, ph, pw);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto [oy, ox] = plan.offsets[i];
        ZAUG_CHECK(frames[i].h() == plan.tile && frames[i].w() == plan.tile, "from_model_frames: bad frame size");
        for (int y = 0; y < plan.tile; ++y)
            for (int x = 0; x < plan.tile; ++x) {
                acc.at(0, 0, oy + y, ox + x) += frames[i].at(0, 0, y, x);
                cnt.at(0, 0, oy + y, ox + x) += 1.0;
            }
    }
    Tensor out(1, 1, plan.native_h, plan.native_w);
    for (int y = 0; y < plan.native_h; ++y)
        for (int x = 0; x < plan.native_w; ++x) {
            ZAUG_CHECK(cnt.at(0, 0, y, x) > 0, "from_model_frames: uncovered pixel");
            out.at(0, 0, y, x) = acc.at(0, 0, y, x) / cnt.at(0, 0, y, x);
        }
    return out;
}

inline void save_tile_manifest(const std::string& path, const TilePlan& plan) {
    std::ofstream out(path, std::ios::trunc);
    ZAUG_CHECK(out.good(), "cannot write tile manifest: ", path);
    out << plan.to_json().dump(2) << "\n";
}

inline TilePlan load_tile_manifest(const std::string& path) {
    std::ifstream in(path);
    ZAUG_CHECK(in.good(), "cannot open tile manifest: ", path);
    json j;
    in >> j;
    return TilePlan::from_json(j);
}

}  // namespace zaug::volio

#endif
