#ifndef ZAUG_NN_HPP
#define ZAUG_NN_HPP

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "zaug/autodiff.hpp"

namespace zaug::nn {

using ad::Var;

// Named parameter registry; ordering is the serialization order.
struct ParamList {
    std::vector<std::pair<std::string, Var>> items;

    void add(const std::string& name, const Var& v) { items.emplace_back(name, v); }

    std::size_t count() const {
        std::size_t c = 0;
        for (const auto& [name, v] : items) c += v->val.numel();
        return c;
    }

    std::vector<Var> vars() const {
        std::vector<Var> out;
        out.reserve(items.size());
        for (const auto& [name, v] : items) out.push_back(v);
        return out;
    }
};

inline void zero_grad(const ParamList& params) {
    for (const auto& [name, v] : params.items) v->grad.reset();
}

struct Conv2d {
    Var w, b;
    int stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng) : stride(stride_), pad(pad_) {
        const double bound = std::sqrt(6.0 / (static_cast<double>(in_ch) * k * k));
        w = ad::param(tensor_ops::uniform_init(out_ch, in_ch, k, k, -bound, bound, rng));
        b = ad::param(Tensor::zeros(1, out_ch, 1, 1));
    }

    Var operator()(const Var& x) const { return ad::ops::conv2d(x, w, b, stride, pad); }

    void collect(ParamList& pl, const std::string& prefix) const {
        pl.add(prefix + ".w", w);
        pl.add(prefix + ".b", b);
    }
};

// stride-2 upsampling layer (kernel 4, pad 1 doubles the spatial size)
struct ConvT2d {
    Var w, b;
    int stride = 2, pad = 1;

    ConvT2d() = default;
    ConvT2d(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng) : stride(stride_), pad(pad_) {
        const double bound = std::sqrt(6.0 / (static_cast<double>(in_ch) * k * k));
        // conv-layout weight [in_ch, out_ch, k, k]; forward is the conv adjoint
        w = ad::param(tensor_ops::uniform_init(in_ch, out_ch, k, k, -bound, bound, rng));
        b = ad::param(Tensor::zeros(1, out_ch, 1, 1));
    }

    Var operator()(const Var& x) const { return ad::ops::conv_transpose2d(x, w, b, stride, pad); }

    void collect(ParamList& pl, const std::string& prefix) const {
        pl.add(prefix + ".w", w);
        pl.add(prefix + ".b", b);
    }
};

struct PReLU {
    Var a;

    PReLU() = default;
    explicit PReLU(int channels) { a = ad::param(Tensor::full(1, channels, 1, 1, 0.25)); }

    Var operator()(const Var& x) const { return ad::ops::prelu(x, a); }

    void collect(ParamList& pl, const std::string& prefix) const { pl.add(prefix + ".a", a); }
};

}  // namespace zaug::nn

#endif
