#ifndef ZAUG_CRITIC_HPP
#define ZAUG_CRITIC_HPP

#include <functional>
#include <string>
#include <vector>

#include "zaug/nn.hpp"

// The WGAN-GP critic: strided convolutions with LeakyReLU, no normalization
// layers (they couple samples inside a batch, which breaks the per-sample
// gradient penalty), global average pooling and a linear scoring head.

namespace zaug::critic {

using ad::Var;
using namespace ad::ops;

struct CriticConfig {
    int base = 64;            // channel progression: base, 2b, 4b, 8b, 16b
    double leaky_slope = 0.2;

    static CriticConfig small() { return CriticConfig{8, 0.2}; }
};

class CriticNet {
public:
    explicit CriticNet(CriticConfig cfg = CriticConfig(), std::uint64_t seed = 2) : cfg_(cfg) {
        Rng rng(seed);
        const int b = cfg.base;
        layers_[0] = nn::Conv2d(1, b, 4, 2, 1, rng);
        layers_[1] = nn::Conv2d(b, 2 * b, 4, 2, 1, rng);
        layers_[2] = nn::Conv2d(2 * b, 4 * b, 4, 2, 1, rng);
        layers_[3] = nn::Conv2d(4 * b, 8 * b, 4, 2, 1, rng);
        layers_[4] = nn::Conv2d(8 * b, 16 * b, 4, 2, 1, rng);
        head_ = nn::Conv2d(16 * b, 1, 1, 1, 0, rng);
    }

    const CriticConfig& config() const { return cfg_; }

    // One unbounded real per frame, [N,1,1,1].
    Var forward(const Var& x) const {
        ZAUG_CHECK(x && x->val.c() == 1, "critic: expected single-channel frames");
        ZAUG_CHECK(x->val.h() % 32 == 0 && x->val.w() % 32 == 0 && x->val.h() >= 32 && x->val.w() >= 32,
                   "critic: frame size ", x->val.w(), "x", x->val.h(), " must be a multiple of 32");
        Var h = x;
        for (const auto& layer : layers_) h = leaky_relu(layer(h), cfg_.leaky_slope);
        return head_(spatial_mean(h));
    }

    std::vector<double> scores(const Tensor& frames) const {
        ad::NoGradGuard ng;
        Var s = forward(ad::constant(frames));
        std::vector<double> out(static_cast<std::size_t>(frames.n()));
        for (int i = 0; i < frames.n(); ++i) out[static_cast<std::size_t>(i)] = s->val[static_cast<std::size_t>(i)];
        return out;
    }

    nn::ParamList params() const {
        nn::ParamList pl;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            layers_[i].collect(pl, "critic.c" + std::to_string(i));
        head_.collect(pl, "critic.head");
        return pl;
    }

    std::size_t param_count() const { return params().count(); }

private:
    CriticConfig cfg_;
    std::array<nn::Conv2d, 5> layers_;
    nn::Conv2d head_;
};

// ---------------------------------------------------------------------------
// gradient penalty
// ---------------------------------------------------------------------------

// One mixing coefficient per sample, reproducible from (seed, global sample
// index) so chunked batches draw the same values as the whole batch.
inline std::vector<double> draw_mix_coefficients(std::uint64_t seed, std::size_t sample_offset, int count) {
    std::vector<double> out(static_cast<std::size_t>(count));
    Rng base(seed);
    for (int i = 0; i < count; ++i)
        out[static_cast<std::size_t>(i)] = base.fork(sample_offset + static_cast<std::size_t>(i)).uniform();
    return out;
}

// x = alpha * real + (1 - alpha) * fake, per sample
inline Tensor mix_on_line(const Tensor& real, const Tensor& fake, const std::vector<double>& alphas) {
    tensor_ops::check_same(real, fake, "gradient_penalty");
    ZAUG_CHECK(static_cast<int>(alphas.size()) == real.n(), "gradient_penalty: one alpha per sample required");
    Tensor out(real.n(), real.c(), real.h(), real.w());
    const std::size_t per = out.numel() / out.n();
    for (int n = 0; n < out.n(); ++n) {
        const double a = alphas[static_cast<std::size_t>(n)];
        for (std::size_t j = 0; j < per; ++j) {
            const std::size_t i = per * n + j;
            out[i] = a * real[i] + (1.0 - a) * fake[i];
        }
    }
    return out;
}

using CriticFn = std::function<Var(const Var&)>;

// E[(||grad_x D(x)||_2 - 1)^2] over per-sample mixtures of real and fake,
// before any lambda scaling. The result stays attached to the critic's
// parameters, one differentiation order above the score itself.
inline Var gradient_penalty_var(const CriticFn& critic_fn, const Tensor& real, const Tensor& fake,
                                std::uint64_t seed, std::size_t sample_offset = 0) {
    const auto alphas = draw_mix_coefficients(seed, sample_offset, real.n());
    Var mix = ad::param(mix_on_line(real, fake, alphas));
    Var scores = critic_fn(mix);
    ZAUG_CHECK(scores->val.n() == real.n() && scores->val.numel() == static_cast<std::size_t>(real.n()),
               "gradient_penalty: critic must return one score per frame");
    Var total = reduce_all(scores);
    Var g = ad::grad(total, {mix}, /*create_graph=*/true)[0];
    Var norms = ad::ops::sqrt(reduce_batch(square(g)));
    return mean_all(square(add_scalar(norms, -1.0)));
}

inline double gradient_penalty(const CriticFn& critic_fn, const Tensor& real, const Tensor& fake,
                               std::uint64_t seed, std::size_t sample_offset = 0) {
    return gradient_penalty_var(critic_fn, real, fake, seed, sample_offset)->val[0];
}

}  // namespace zaug::critic

#endif
