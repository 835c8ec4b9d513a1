#ifndef ZAUG_TRIPLETS_HPP
#define ZAUG_TRIPLETS_HPP

#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "zaug/volio.hpp"

// Training-triplet synthesis: fixed-midpoint triplets for the standard model,
// windowed triplets with arbitrary relative positions for plus-mode training,
// plus joint data augmentation and the constant relative-distance plane fed
// to plus-mode models.

namespace zaug::triplets {

using nlohmann::json;
using volio::FramePolicy;
using volio::VolumeStack;

struct TripletSample {
    Tensor i0, ig, i1;  // [1,1,h,w], normalized intensities
    double z = 0.5;     // (n2-n1)/(n3-n1)
    std::string stack_id;
    int n1 = 0, n2 = 0, n3 = 0;  // 1-based slice indices
};

// Constant plane encoding the relative distance of the slice to synthesize:
// 0 is the first input plane, 1 the second.
inline Tensor make_dpm(double z, int h, int w) {
    ZAUG_CHECK(z >= 0.0 && z <= 1.0, "dpm: relative distance ", z, " outside [0,1]");
    return Tensor::full(1, 1, h, w, z);
}

namespace detail {

inline std::vector<Tensor> slice_frames(const VolumeStack& s, int z /*0-based*/, FramePolicy policy) {
    auto [frames, plan] = volio::to_model_frames(s.slice_tensor(z), policy);
    std::vector<Tensor> out;
    out.reserve(frames.size());
    for (auto& f : frames) out.push_back(f.data);
    return out;
}

inline void emit_triplet(const VolumeStack& s, const std::string& id, int n1, int n2, int n3,
                         FramePolicy policy, std::vector<TripletSample>& out) {
    auto f0 = slice_frames(s, n1 - 1, policy);
    auto fg = slice_frames(s, n2 - 1, policy);
    auto f1 = slice_frames(s, n3 - 1, policy);
    const double z = static_cast<double>(n2 - n1) / static_cast<double>(n3 - n1);
    for (std::size_t k = 0; k < f0.size(); ++k) {
        TripletSample t;
        t.i0 = f0[k];
        t.ig = fg[k];
        t.i1 = f1[k];
        t.z = z;
        t.stack_id = id;
        t.n1 = n1;
        t.n2 = n2;
        t.n3 = n3;
        out.push_back(std::move(t));
    }
}

}  // namespace detail

// One triplet per interior slice, midpoint held out: (i, i+1, i+2), z = 0.5.
inline std::vector<TripletSample> extract_fixed_triplets(const VolumeStack& normalized, const std::string& stack_id,
                                                         FramePolicy policy = FramePolicy::resize,
                                                         std::ostream& warn = std::cerr) {
    std::vector<TripletSample> out;
    if (normalized.depth < 3) {
        warn << "warning: stack " << stack_id << " has depth " << normalized.depth
             << " < 3; no triplets extracted\n";
        return out;
    }
    for (int i = 1; i <= normalized.depth - 2; ++i)
        detail::emit_triplet(normalized, stack_id, i, i + 1, i + 2, policy, out);
    return out;
}

// Strictly increasing (n1, n2, n3) inside sliding windows of `window` + 2
// slices, deduplicated across windows; z = (n2-n1)/(n3-n1). For stacks with
// N <= window + 2 this enumerates every combination C(N,3).
inline std::vector<std::tuple<int, int, int>> windowed_index_triplets(int depth, int window = 7) {
    ZAUG_CHECK(window >= 1, "windowed triplets: window must be >= 1");
    std::set<std::tuple<int, int, int>> seen;
    const int t_lo = std::min(window + 2, depth);
    for (int t = t_lo; t <= depth; ++t) {
        const int lo = std::max(1, t - window - 1);
        for (int n1 = lo; n1 <= t - 2; ++n1)
            for (int n2 = n1 + 1; n2 <= t - 1; ++n2)
                for (int n3 = n2 + 1; n3 <= t; ++n3) seen.insert({n1, n2, n3});
    }
    return {seen.begin(), seen.end()};
}

inline std::vector<TripletSample> extract_windowed_triplets(const VolumeStack& normalized, const std::string& stack_id,
                                                            int window = 7,
                                                            FramePolicy policy = FramePolicy::resize,
                                                            std::ostream& warn = std::cerr) {
    std::vector<TripletSample> out;
    if (normalized.depth < 3) {
        warn << "warning: stack " << stack_id << " has depth " << normalized.depth
             << " < 3; no triplets extracted\n";
        return out;
    }
    for (const auto& [n1, n2, n3] : windowed_index_triplets(normalized.depth, window))
        detail::emit_triplet(normalized, stack_id, n1, n2, n3, policy, out);
    return out;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

// quarter turn: pixel (y,x) maps to (x, H-1-y)
inline Tensor rot90(const Tensor& a) {
    Tensor out(a.n(), a.c(), a.w(), a.h());
    for (int n = 0; n < a.n(); ++n)
        for (int c = 0; c < a.c(); ++c)
            for (int y = 0; y < a.h(); ++y)
                for (int x = 0; x < a.w(); ++x) out.at(n, c, x, a.h() - 1 - y) = a.at(n, c, y, x);
    return out;
}

inline Tensor rotate_quarters(const Tensor& a, int k) {
    Tensor out = a.clone();
    for (int i = 0; i < ((k % 4) + 4) % 4; ++i) out = rot90(out);
    return out;
}

inline Tensor hflip(const Tensor& a) {
    Tensor out(a.n(), a.c(), a.h(), a.w());
    for (int n = 0; n < a.n(); ++n)
        for (int c = 0; c < a.c(); ++c)
            for (int y = 0; y < a.h(); ++y)
                for (int x = 0; x < a.w(); ++x) out.at(n, c, y, x) = a.at(n, c, y, a.w() - 1 - x);
    return out;
}

struct AugmentTransform {
    int rot_k = 0;     // quarter turns
    bool flip = false;
    double gain = 1.0;
    double offset = 0.0;

    static AugmentTransform sample(std::uint64_t seed, bool jitter) {
        Rng rng(seed);
        AugmentTransform t;
        t.rot_k = static_cast<int>(rng.below(4));
        t.flip = rng.below(2) != 0;
        if (jitter) {
            t.gain = rng.uniform(0.9, 1.1);
            t.offset = rng.uniform(-0.05, 0.05);
        }
        return t;
    }

    Tensor apply(const Tensor& frame) const {
        Tensor out = rotate_quarters(frame, rot_k);
        if (flip) out = hflip(out);
        if (gain != 1.0 || offset != 0.0)
            out = tensor_ops::clamp(tensor_ops::add_scalar(tensor_ops::scale(out, gain), offset), 0.0, 1.0);
        return out;
    }

    // geometric inverse; intensity jitter is not invertible once clipped
    Tensor apply_inverse_geometry(const Tensor& frame) const {
        Tensor out = flip ? hflip(frame) : frame.clone();
        return rotate_quarters(out, 4 - (rot_k % 4));
    }
};

// The same sampled transform is applied to all three frames; z is untouched.
inline TripletSample augment(const TripletSample& t, std::uint64_t seed, bool jitter = true) {
    const auto tr = AugmentTransform::sample(seed, jitter);
    TripletSample out = t;
    out.i0 = tr.apply(t.i0);
    out.ig = tr.apply(t.ig);
    out.i1 = tr.apply(t.i1);
    return out;
}

// ---------------------------------------------------------------------------
// dataset manifest
// ---------------------------------------------------------------------------

struct DatasetEntry {
    std::string path;
    std::string mode;  // "fixed" | "windowed"
};

struct DatasetManifest {
    std::vector<DatasetEntry> stacks;
    int window = 7;

    static DatasetManifest load(const std::string& path) {
        std::ifstream in(path);
        ZAUG_CHECK(in.good(), "cannot open dataset manifest: ", path);
        json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw Error(zaug::detail::format_msg("dataset manifest ", path, ": ", e.what()));
        }
        DatasetManifest m;
        if (j.contains("window")) m.window = j["window"].get<int>();
        ZAUG_CHECK(j.contains("stacks") && j["stacks"].is_array(), "dataset manifest: missing 'stacks' array");
        for (const auto& e : j["stacks"]) {
            DatasetEntry d;
            d.path = e.at("path").get<std::string>();
            d.mode = e.value("mode", "fixed");
            ZAUG_CHECK(d.mode == "fixed" || d.mode == "windowed", "dataset manifest: unknown mode '", d.mode, "'");
            m.stacks.push_back(std::move(d));
        }
        return m;
    }
};

struct DryRunRow {
    std::string path;
    std::string mode;
    int depth = 0;
    std::size_t triplet_count = 0;
};

// Counts triplets per stack without materializing any frames.
inline std::vector<DryRunRow> dataset_dryrun(const DatasetManifest& m) {
    std::vector<DryRunRow> rows;
    for (const auto& e : m.stacks) {
        DryRunRow r;
        r.path = e.path;
        r.mode = e.mode;
        auto s = volio::load_stack(e.path);
        r.depth = s.depth;
        if (s.depth < 3)
            r.triplet_count = 0;
        else if (e.mode == "fixed")
            r.triplet_count = static_cast<std::size_t>(s.depth - 2);
        else
            r.triplet_count = windowed_index_triplets(s.depth, m.window).size();
        rows.push_back(std::move(r));
    }
    return rows;
}

inline std::vector<TripletSample> build_dataset(const DatasetManifest& m,
                                                FramePolicy policy = FramePolicy::resize,
                                                std::ostream& warn = std::cerr) {
    std::vector<TripletSample> all;
    for (const auto& e : m.stacks) {
        auto raw = volio::load_stack(e.path);
        auto norm = volio::normalize_stack(raw, warn);
        auto part = e.mode == "fixed"
                        ? extract_fixed_triplets(norm.stack, e.path, policy, warn)
                        : extract_windowed_triplets(norm.stack, e.path, m.window, policy, warn);
        for (auto& t : part) all.push_back(std::move(t));
    }
    return all;
}

}  // namespace zaug::triplets

#endif
