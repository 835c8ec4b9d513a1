#ifndef ZAUG_ZAUGMENT_HPP
#define ZAUG_ZAUGMENT_HPP

#include <optional>
#include <string>
#include <vector>

#include "zaug/serialize.hpp"
#include "zaug/triplets.hpp"
#include "zaug/volio.hpp"

// Inference over whole stacks: iterative z-doubling with a fixed-distance
// model, or single-pass continuous interpolation at arbitrary relative
// distances with a plus-mode model. Native-size slices are tiled through the
// network and reassembled; original slices are carried through untouched.

namespace zaug::zaugment {

using flownet::Generator;
using flownet::Mode;
using volio::FramePolicy;
using volio::VolumeStack;

// Single-pair interpolation at relative distance z. Fixed-distance models
// only accept the midpoint.
inline Tensor interpolate_pair(const Generator& model, const Tensor& i0, const Tensor& i1, double z) {
    ZAUG_CHECK(z > 0.0 && z < 1.0, "interpolate_pair: relative distance ", z, " outside (0,1)");
    if (model.config().mode == Mode::fixed)
        ZAUG_CHECK(z == 0.5, "interpolate_pair: fixed-distance model only predicts z = 0.5, got ", z);
    ad::NoGradGuard ng;
    std::optional<ad::Var> dpm;
    if (model.config().mode == Mode::plus) dpm = ad::constant(triplets::make_dpm(z, i0.h(), i0.w()));
    auto out = model.student_forward(ad::constant(i0), ad::constant(i1), dpm);
    return out.student_frame->val;
}

namespace detail {

// Runs one slice pair through the network, tiling native sizes when needed.
// Tiles of the two inputs share the same plan by construction.
inline Tensor predict_native_pair(const Generator& model, const Tensor& s0, const Tensor& s1, double z,
                                  FramePolicy policy, volio::TilePlan* plan_out) {
    const bool direct = s0.h() % 32 == 0 && s0.w() % 32 == 0 && s0.h() >= 32 && s0.w() >= 32 &&
                        policy == FramePolicy::resize && s0.h() == volio::kModelSize &&
                        s0.w() == volio::kModelSize;
    if (direct) {
        if (plan_out) *plan_out = volio::TilePlan{s0.w(), s0.h(), volio::kModelSize, FramePolicy::resize, {}};
        return interpolate_pair(model, s0, s1, z);
    }
    auto [f0, plan] = volio::to_model_frames(s0, policy);
    auto [f1, plan1] = volio::to_model_frames(s1, policy);
    ZAUG_CHECK(f0.size() == f1.size(), "predict: tiling disagreement between consecutive slices");
    std::vector<Tensor> preds;
    preds.reserve(f0.size());
    for (std::size_t k = 0; k < f0.size(); ++k)
        preds.push_back(interpolate_pair(model, f0[k].data, f1[k].data, z));
    if (plan_out) *plan_out = plan;
    return volio::from_model_frames(preds, plan);
}

}  // namespace detail

struct PredictOptions {
    FramePolicy policy = FramePolicy::tile;  // how native-size slices reach the network
};

// One doubling pass: depth n -> 2n - 1. Original slices land at even output
// indices; the final slice is never extrapolated (it has no pair).
inline VolumeStack double_stack(const Generator& model, const VolumeStack& s,
                                const PredictOptions& opt = {}) {
    ZAUG_CHECK(s.depth >= 2, "double_stack: need at least 2 slices, got ", s.depth);
    ZAUG_CHECK(model.config().mode == Mode::fixed, "double_stack: expects a fixed-distance model");
    VolumeStack out = VolumeStack::blank(s.width, s.height, 2 * s.depth - 1, s.bit_depth);
    out.spacing = s.spacing;
    if (out.spacing) (*out.spacing)[2] /= 2.0;
    out.norm = s.norm;
    for (int z = 0; z < s.depth; ++z) out.set_slice(2 * z, s.slice_tensor(z));
    for (int z = 0; z + 1 < s.depth; ++z) {
        Tensor pred = detail::predict_native_pair(model, s.slice_tensor(z), s.slice_tensor(z + 1), 0.5,
                                                  opt.policy, nullptr);
        out.set_slice(2 * z + 1, pred);
    }
    return out;
}

// Continuous interpolation: per gap, predictions at every requested relative
// distance, inserted in ascending z order. Output depth n + (n-1)*|zs|.
inline VolumeStack upsample_continuous(const Generator& model, const VolumeStack& s,
                                       const std::vector<double>& zs, const PredictOptions& opt = {}) {
    ZAUG_CHECK(model.config().mode == Mode::plus, "upsample_continuous: expects a plus-mode model");
    ZAUG_CHECK(s.depth >= 2, "upsample_continuous: need at least 2 slices");
    ZAUG_CHECK(!zs.empty(), "upsample_continuous: empty relative-distance list");
    for (std::size_t i = 0; i < zs.size(); ++i) {
        ZAUG_CHECK(zs[i] > 0.0 && zs[i] < 1.0, "upsample_continuous: z = ", zs[i], " outside (0,1)");
        if (i > 0) ZAUG_CHECK(zs[i] > zs[i - 1], "upsample_continuous: distances must be strictly ascending");
    }
    const int per_gap = static_cast<int>(zs.size());
    VolumeStack out = VolumeStack::blank(s.width, s.height, s.depth + (s.depth - 1) * per_gap, s.bit_depth);
    out.spacing = s.spacing;
    if (out.spacing) (*out.spacing)[2] /= (per_gap + 1);
    out.norm = s.norm;
    const int period = per_gap + 1;
    for (int z = 0; z < s.depth; ++z) out.set_slice(period * z, s.slice_tensor(z));
    for (int z = 0; z + 1 < s.depth; ++z)
        for (int j = 0; j < per_gap; ++j) {
            Tensor pred = detail::predict_native_pair(model, s.slice_tensor(z), s.slice_tensor(z + 1),
                                                      zs[static_cast<std::size_t>(j)], opt.policy, nullptr);
            out.set_slice(period * z + j + 1, pred);
        }
    return out;
}

struct AugmentRequest {
    int passes = 1;                       // fixed mode: number of doubling passes
    std::vector<double> zs;               // plus mode: relative distances per gap
    PredictOptions options;
};

// The tile layout the request would use for this stack, when tiling applies.
inline std::optional<volio::TilePlan> tile_plan_for(const VolumeStack& s, const PredictOptions& opt) {
    if (opt.policy != FramePolicy::tile) return std::nullopt;
    if (s.width == volio::kModelSize && s.height == volio::kModelSize) return std::nullopt;
    auto [frames, plan] = volio::to_model_frames(s.slice_tensor(0), FramePolicy::tile);
    return plan;
}

// Whole-volume entry point used by the CLI: normalizes, runs the requested
// interpolation, rescales back to the original intensity range and
// requantizes to the stored bit depth.
inline VolumeStack augment_volume(const Generator& model, const VolumeStack& raw, const AugmentRequest& req,
                                  std::ostream& warn = std::cerr) {
    auto norm = volio::normalize_stack(raw, warn);
    VolumeStack work = std::move(norm.stack);
    if (model.config().mode == Mode::fixed) {
        ZAUG_CHECK(req.passes >= 1, "augment_volume: passes must be >= 1");
        for (int p = 0; p < req.passes; ++p) work = double_stack(model, work, req.options);
    } else {
        work = upsample_continuous(model, work, req.zs, req.options);
    }
    volio::denormalize_stack(work);
    const double maxval = work.bit_depth == 8 ? 255.0 : 65535.0;
    for (double& v : work.voxels) v = std::lround(std::min(std::max(v, 0.0), maxval));
    return work;
}

// after k doubling passes, depth = 2^k (n - 1) + 1
inline int doubled_depth(int n, int passes) {
    int d = n;
    for (int p = 0; p < passes; ++p) d = 2 * d - 1;
    return d;
}

}  // namespace zaug::zaugment

#endif
