#ifndef ZAUG_FLOWNET_HPP
#define ZAUG_FLOWNET_HPP

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "zaug/nn.hpp"

// The generator: a three-block student that estimates intermediate flows and
// a fusion mask at coarse-to-fine scales, backward-warps the two input slices
// and fuses them into the interpolated frame; a fourth block, conditioned on
// the ground-truth slice and sharing the first three blocks' weights, forms
// the teacher used during training.

namespace zaug::flownet {

using ad::Var;
using namespace ad::ops;

enum class Mode { fixed, plus };

inline const char* mode_name(Mode m) { return m == Mode::fixed ? "fixed" : "plus"; }

inline Mode mode_from_name(const std::string& s) {
    if (s == "fixed") return Mode::fixed;
    if (s == "plus") return Mode::plus;
    throw Error("unknown model mode '" + s + "'");
}

struct GenConfig {
    Mode mode = Mode::fixed;
    // Channel widths land the default student at ~10.69M parameters.
    std::array<int, 3> widths{256, 224, 152};
    int teacher_width = 208;
    std::array<int, 3> scales{4, 2, 1};
    bool teacher_full_backprop = true;  // teacher loss also trains shared blocks

    static GenConfig small(Mode m = Mode::fixed) {
        GenConfig c;
        c.mode = m;
        c.widths = {48, 32, 24};
        c.teacher_width = 32;
        return c;
    }
};

// Elementwise convex combination of the two warped candidates.
inline Var fuse(const Var& w0, const Var& w1, const Var& mask) {
    ZAUG_CHECK(w0->val.same_shape(w1->val) && w0->val.same_shape(mask->val),
               "fuse: shape mismatch ", w0->val.shape_str(), " / ", w1->val.shape_str(), " / ",
               mask->val.shape_str());
    for (std::size_t i = 0; i < mask->val.numel(); ++i)
        ZAUG_CHECK(mask->val[i] >= 0.0 && mask->val[i] <= 1.0, "fuse: mask value ", mask->val[i],
                   " outside [0,1]");
    return add(mul(mask, w0), mul(add_scalar(neg(mask), 1.0), w1));
}

inline Tensor fuse(const Tensor& w0, const Tensor& w1, const Tensor& mask) {
    return fuse(ad::constant(w0), ad::constant(w1), ad::constant(mask))->val;
}

// One estimation block: two stride-2 convs in, eight 3x3 convs, one
// transposed conv out to 4 flow channels + 1 mask logit. The block runs on
// inputs downsampled by `scale`; outputs are brought back to full resolution
// with flow displacements rescaled accordingly.
struct FlowBlock {
    nn::Conv2d c0a, c0b;
    nn::PReLU a0a, a0b;
    std::array<nn::Conv2d, 8> convs;
    std::array<nn::PReLU, 8> acts;
    nn::ConvT2d last;
    int scale = 1;
    int in_ch = 0;

    FlowBlock() = default;
    FlowBlock(int in_channels, int width, int scale_, Rng& rng) : scale(scale_), in_ch(in_channels) {
        c0a = nn::Conv2d(in_channels, width / 2, 3, 2, 1, rng);
        a0a = nn::PReLU(width / 2);
        c0b = nn::Conv2d(width / 2, width, 3, 2, 1, rng);
        a0b = nn::PReLU(width);
        for (int i = 0; i < 8; ++i) {
            convs[static_cast<std::size_t>(i)] = nn::Conv2d(width, width, 3, 1, 1, rng);
            acts[static_cast<std::size_t>(i)] = nn::PReLU(width);
        }
        last = nn::ConvT2d(width, 5, 4, 2, 1, rng);
    }

    struct Out {
        Var flow;        // [N,4,H,W], full resolution, full-resolution pixel units
        Var mask_logit;  // [N,1,H,W]
    };

    Out forward(const std::vector<Var>& parts) const {
        Var x = parts.size() == 1 ? parts[0] : concat_channels(parts);
        ZAUG_CHECK(x->val.c() == in_ch, "flow block: expected ", in_ch, " input channels, got ", x->val.c());
        const int H = x->val.h(), W = x->val.w();
        if (scale > 1) x = resize_bilinear(x, H / scale, W / scale);
        Var h = a0a(c0a(x));
        h = a0b(c0b(h));
        for (int i = 0; i < 8; ++i) h = acts[static_cast<std::size_t>(i)](convs[static_cast<std::size_t>(i)](h));
        Var o = last(h);  // [N,5,H/(2*scale),W/(2*scale)]
        o = resize_bilinear(o, H, W);
        Out out;
        out.flow = ad::ops::scale(slice_channels(o, 0, 4), 2.0 * scale);
        out.mask_logit = slice_channels(o, 4, 5);
        return out;
    }

    void collect(nn::ParamList& pl, const std::string& prefix) const {
        c0a.collect(pl, prefix + ".c0a");
        a0a.collect(pl, prefix + ".a0a");
        c0b.collect(pl, prefix + ".c0b");
        a0b.collect(pl, prefix + ".a0b");
        for (int i = 0; i < 8; ++i) {
            convs[static_cast<std::size_t>(i)].collect(pl, prefix + ".conv" + std::to_string(i));
            acts[static_cast<std::size_t>(i)].collect(pl, prefix + ".act" + std::to_string(i));
        }
        last.collect(pl, prefix + ".last");
    }
};

struct BlockProducts {
    Var flow0, flow1;     // [N,2,H,W] each: displacements toward slice 0 / slice 1
    Var mask;             // [N,1,H,W] in [0,1]
    Var warped0, warped1; // inputs warped by this block's flows
};

struct GeneratorOutput {
    std::array<BlockProducts, 3> blocks;
    Var student_frame;  // convex fusion of the final warped pair

    bool has_teacher = false;
    Var teacher_flow0, teacher_flow1, teacher_mask, teacher_warped0, teacher_warped1;
    Var teacher_frame;
};

class Generator {
public:
    explicit Generator(GenConfig cfg = GenConfig(), std::uint64_t seed = 1) : cfg_(cfg) {
        Rng rng(seed);
        const int base_in = cfg.mode == Mode::plus ? 3 : 2;
        blocks_[0] = FlowBlock(base_in, cfg.widths[0], cfg.scales[0], rng);
        blocks_[1] = FlowBlock(5, cfg.widths[1], cfg.scales[1], rng);
        blocks_[2] = FlowBlock(5, cfg.widths[2], cfg.scales[2], rng);
        teacher_ = FlowBlock(6, cfg.teacher_width, 1, rng);
    }

    const GenConfig& config() const { return cfg_; }

    // Chained coarse-to-fine estimation. Each block refines the accumulated
    // flow from what is still misaligned in the warped pair; warped frames
    // are recomputed from the original inputs after every block.
    GeneratorOutput student_forward(const Var& i0, const Var& i1,
                                    const std::optional<Var>& dpm = std::nullopt) const {
        check_frames(i0, i1);
        if (cfg_.mode == Mode::plus)
            ZAUG_CHECK(dpm.has_value(), "plus-mode model requires a relative-distance plane");
        else
            ZAUG_CHECK(!dpm.has_value(), "fixed-mode model does not accept a relative-distance plane");
        if (dpm)
            ZAUG_CHECK((*dpm)->val.same_shape(i0->val), "relative-distance plane shape mismatch");

        GeneratorOutput out;
        Var flow_acc;
        for (int b = 0; b < 3; ++b) {
            std::vector<Var> parts;
            if (b == 0) {
                parts = {i0, i1};
                if (dpm) parts.push_back(*dpm);
            } else {
                const auto& prev = out.blocks[static_cast<std::size_t>(b - 1)];
                parts = {i0, i1, prev.warped0, prev.warped1, prev.mask};
            }
            auto est = blocks_[static_cast<std::size_t>(b)].forward(parts);
            flow_acc = b == 0 ? est.flow : add(flow_acc, est.flow);

            auto& prod = out.blocks[static_cast<std::size_t>(b)];
            prod.flow0 = slice_channels(flow_acc, 0, 2);
            prod.flow1 = slice_channels(flow_acc, 2, 4);
            prod.mask = ad::ops::sigmoid(est.mask_logit);
            prod.warped0 = backward_warp(i0, prod.flow0);
            prod.warped1 = backward_warp(i1, prod.flow1);
        }
        const auto& final_blk = out.blocks[2];
        out.student_frame = fuse(final_blk.warped0, final_blk.warped1, final_blk.mask);
        return out;
    }

    // Fourth block; sees the ground-truth frame on top of the block-3
    // products. Shares blocks 0-2 with the student by construction. With
    // teacher_full_backprop off, the shared products enter detached so the
    // teacher reconstruction trains only the fourth block.
    void teacher_forward(GeneratorOutput& state, const Var& i0, const Var& i1, const Var& ig) const {
        ZAUG_CHECK(ig && ig->val.same_shape(i0->val), "teacher: ground-truth frame missing or mis-shaped");
        ZAUG_CHECK(state.blocks[2].flow0, "teacher: student products missing");
        const auto& b3 = state.blocks[2];
        Var w0 = b3.warped0, w1 = b3.warped1, m = b3.mask;
        Var flow3 = concat_channels({b3.flow0, b3.flow1});
        if (!cfg_.teacher_full_backprop) {
            w0 = detach(w0);
            w1 = detach(w1);
            m = detach(m);
            flow3 = detach(flow3);
        }
        auto est = teacher_.forward({i0, i1, w0, w1, m, ig});
        Var flow4 = add(flow3, est.flow);
        state.teacher_flow0 = slice_channels(flow4, 0, 2);
        state.teacher_flow1 = slice_channels(flow4, 2, 4);
        state.teacher_mask = ad::ops::sigmoid(est.mask_logit);
        state.teacher_warped0 = backward_warp(i0, state.teacher_flow0);
        state.teacher_warped1 = backward_warp(i1, state.teacher_flow1);
        state.teacher_frame = fuse(state.teacher_warped0, state.teacher_warped1, state.teacher_mask);
        state.has_teacher = true;
    }

    nn::ParamList student_params() const {
        nn::ParamList pl;
        for (int b = 0; b < 3; ++b) blocks_[static_cast<std::size_t>(b)].collect(pl, "gen.b" + std::to_string(b));
        return pl;
    }

    nn::ParamList teacher_params() const {
        nn::ParamList pl;
        teacher_.collect(pl, "gen.teacher");
        return pl;
    }

    // student blocks + teacher block; the checkpoint and optimizer order
    nn::ParamList all_params() const {
        nn::ParamList pl = student_params();
        nn::ParamList t = teacher_params();
        for (auto& item : t.items) pl.items.push_back(std::move(item));
        return pl;
    }

    std::size_t student_param_count() const { return student_params().count(); }
    std::size_t total_param_count() const { return all_params().count(); }

    FlowBlock& block(int i) { return blocks_[static_cast<std::size_t>(i)]; }

private:
    static void check_frames(const Var& i0, const Var& i1) {
        ZAUG_CHECK(i0 && i1, "generator: null input frame");
        ZAUG_CHECK(i0->val.same_shape(i1->val), "generator: input frames differ in shape: ",
                   i0->val.shape_str(), " vs ", i1->val.shape_str());
        ZAUG_CHECK(i0->val.c() == 1, "generator: frames must be single-channel");
        ZAUG_CHECK(i0->val.h() % 32 == 0 && i0->val.w() % 32 == 0,
                   "generator: frame size ", i0->val.w(), "x", i0->val.h(), " must be a multiple of 32");
    }

    GenConfig cfg_;
    std::array<FlowBlock, 3> blocks_;
    FlowBlock teacher_;
};

}  // namespace zaug::flownet

#endif
