#ifndef ZAUG_AUTODIFF_HPP
#define ZAUG_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "zaug/tensor.hpp"

namespace zaug::ad {

// Reverse-mode tape over 4D tensors. Backward rules emit new tape nodes, so
// a gradient is itself differentiable when requested (create_graph) — the
// WGAN-GP penalty needs exactly one extra order through the critic.

struct Node;
using Var = std::shared_ptr<Node>;

// backward(self, grad_out, needed) -> per-input grads; entries whose needed
// flag is false may be left empty.
using BackwardFn = std::function<std::vector<Var>(const Var&, const Var&, const std::vector<char>&)>;

struct Node {
    Tensor val;
    std::vector<Var> inputs;
    BackwardFn back;
    bool requires_grad = false;
    bool is_leaf = false;
    const char* op = "const";
    Var grad;  // populated by backward(); persistent on leaves until zeroed
};

inline bool& grad_enabled() {
    thread_local bool enabled = true;
    return enabled;
}

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(grad_enabled()) { grad_enabled() = false; }
    ~NoGradGuard() { grad_enabled() = prev; }
};

struct GradModeGuard {
    bool prev;
    explicit GradModeGuard(bool on) : prev(grad_enabled()) { grad_enabled() = on; }
    ~GradModeGuard() { grad_enabled() = prev; }
};

inline Var constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    return n;
}

inline Var scalar(double v) { return constant(Tensor::scalar(v)); }

inline Var param(Tensor t) {
    auto n = std::make_shared<Node>();
    n->val = std::move(t);
    n->requires_grad = true;
    n->is_leaf = true;
    n->op = "param";
    return n;
}

inline Var make_op(const char* name, Tensor val, std::vector<Var> inputs, BackwardFn back) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    bool need = false;
    if (grad_enabled())
        for (const auto& in : inputs)
            if (in && in->requires_grad) { need = true; break; }
    if (need) {
        n->inputs = std::move(inputs);
        n->back = std::move(back);
        n->requires_grad = true;
        n->op = name;
    }
    return n;
}

namespace detail {

inline void topo_collect(const Var& root, std::vector<Var>& order) {
    // iterative post-order over requires_grad nodes
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Var, std::size_t>> stack;
    if (!root->requires_grad) return;
    stack.emplace_back(root, 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->inputs.size()) {
            Var child = node->inputs[idx++];
            if (child && child->requires_grad && !visited.count(child.get())) {
                visited.insert(child.get());
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // order: inputs before consumers
}

}  // namespace detail

// Gradients of a scalar root w.r.t. `wrts`, without touching node->grad.
// Branches that cannot reach any wrt are skipped entirely.
inline std::vector<Var> grad(const Var& root, const std::vector<Var>& wrts, bool create_graph = false) {
    ZAUG_CHECK(root->val.numel() == 1, "grad: root must be scalar");
    ZAUG_CHECK(root->requires_grad, "grad: root does not require grad");
    std::vector<Var> order;
    detail::topo_collect(root, order);

    std::unordered_set<Node*> wrt_set;
    for (const auto& w : wrts) wrt_set.insert(w.get());

    std::unordered_map<Node*, char> useful;
    for (const auto& n : order) {  // inputs-before-consumers order
        char u = wrt_set.count(n.get()) ? 1 : 0;
        if (!u)
            for (const auto& in : n->inputs)
                if (in && useful.count(in.get()) && useful[in.get()]) { u = 1; break; }
        useful[n.get()] = u;
    }

    std::unordered_map<Node*, Var> grads;
    grads[root.get()] = constant(Tensor::scalar(1.0));

    GradModeGuard guard(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const Var& node = *it;
        auto git = grads.find(node.get());
        if (git == grads.end() || !useful[node.get()]) continue;
        if (!node->back) continue;
        std::vector<char> needed(node->inputs.size(), 0);
        bool any = false;
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const auto& in = node->inputs[i];
            if (in && in->requires_grad && useful.count(in.get()) && useful[in.get()]) {
                needed[i] = 1;
                any = true;
            }
        }
        if (!any) continue;
        std::vector<Var> gs = node->back(node, git->second, needed);
        ZAUG_CHECK(gs.size() == node->inputs.size(), "grad: backward arity mismatch for ", node->op);
        for (std::size_t i = 0; i < gs.size(); ++i) {
            if (!needed[i] || !gs[i]) continue;
            Node* key = node->inputs[i].get();
            auto ex = grads.find(key);
            if (ex == grads.end())
                grads[key] = gs[i];
            else
                ex->second = make_op("acc", tensor_ops::add(ex->second->val, gs[i]->val),
                                     {ex->second, gs[i]},
                                     [](const Var&, const Var& g, const std::vector<char>&) {
                                         return std::vector<Var>{g, g};
                                     });
        }
    }

    std::vector<Var> out;
    out.reserve(wrts.size());
    for (const auto& w : wrts) {
        auto it = grads.find(w.get());
        if (it != grads.end())
            out.push_back(it->second);
        else
            out.push_back(constant(Tensor::zeros(w->val.n(), w->val.c(), w->val.h(), w->val.w())));
    }
    return out;
}

// Accumulate d(root)/d(leaf) into every reachable leaf's ->grad.
inline void backward(const Var& root, bool create_graph = false) {
    std::vector<Var> order;
    detail::topo_collect(root, order);
    std::vector<Var> leaves;
    for (const auto& n : order)
        if (n->is_leaf) leaves.push_back(n);
    auto gs = grad(root, leaves, create_graph);
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        if (!leaves[i]->grad)
            leaves[i]->grad = gs[i];
        else
            leaves[i]->grad = constant(tensor_ops::add(leaves[i]->grad->val, gs[i]->val));
    }
}

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace ops {

using namespace tensor_ops;

inline Var add(const Var& a, const Var& b) {
    return make_op("add", tensor_ops::add(a->val, b->val), {a, b},
                   [](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{g, g};
                   });
}

inline Var sub(const Var& a, const Var& b);
inline Var neg(const Var& a) {
    return make_op("neg", tensor_ops::neg(a->val), {a},
                   [](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{neg(g)};
                   });
}

inline Var sub(const Var& a, const Var& b) {
    return make_op("sub", tensor_ops::sub(a->val, b->val), {a, b},
                   [](const Var&, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(2);
                       if (need[0]) out[0] = g;
                       if (need[1]) out[1] = neg(g);
                       return out;
                   });
}

inline Var mul(const Var& a, const Var& b) {
    return make_op("mul", tensor_ops::mul(a->val, b->val), {a, b},
                   [](const Var& self, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(2);
                       if (need[0]) out[0] = mul(g, self->inputs[1]);
                       if (need[1]) out[1] = mul(g, self->inputs[0]);
                       return out;
                   });
}

inline Var scale(const Var& a, double s) {
    return make_op("scale", tensor_ops::scale(a->val, s), {a},
                   [s](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{scale(g, s)};
                   });
}

inline Var add_scalar(const Var& a, double s) {
    return make_op("add_scalar", tensor_ops::add_scalar(a->val, s), {a},
                   [](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{g};
                   });
}

inline Var abs(const Var& a) {
    return make_op("abs", tensor_ops::abs(a->val), {a},
                   [](const Var& self, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{mul(g, constant(tensor_ops::sign(self->inputs[0]->val)))};
                   });
}

inline Var square(const Var& a) { return mul(a, a); }

inline Var recip0(const Var& a) {
    return make_op("recip0", tensor_ops::recip0(a->val), {a},
                   [](const Var& self, const Var& g, const std::vector<char>&) {
                       // d(1/x) = -1/x^2
                       Var y = constant(tensor_ops::recip0(self->inputs[0]->val));
                       return std::vector<Var>{neg(mul(g, mul(y, y)))};
                   });
}

inline Var sqrt(const Var& a) {
    Tensor y = tensor_ops::sqrt(a->val);
    return make_op("sqrt", y, {a},
                   [y](const Var&, const Var& g, const std::vector<char>&) {
                       // 0.5 / sqrt(x); subgradient 0 where x == 0
                       return std::vector<Var>{scale(mul(g, constant(tensor_ops::recip0(y))), 0.5)};
                   });
}

inline Var sigmoid(const Var& a) {
    Tensor y = tensor_ops::sigmoid(a->val);
    return make_op("sigmoid", y, {a},
                   [y](const Var&, const Var& g, const std::vector<char>&) {
                       Tensor dy = tensor_ops::mul(y, tensor_ops::map1(y, [](double v) { return 1.0 - v; }));
                       return std::vector<Var>{mul(g, constant(dy))};
                   });
}

inline Var leaky_relu(const Var& a, double slope) {
    Tensor mask = tensor_ops::leaky_mask(a->val, slope);
    return make_op("leaky_relu", tensor_ops::leaky_relu(a->val, slope), {a},
                   [mask](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{mul(g, constant(mask))};
                   });
}

// per-channel parametric relu; alpha shaped [1,C,1,1]
inline Var reduce_channel(const Var& a);
inline Var broadcast_channel(const Var& a, int n, int h, int w);

inline Var prelu(const Var& x, const Var& alpha) {
    ZAUG_CHECK(alpha->val.c() == x->val.c() && alpha->val.numel() == static_cast<std::size_t>(x->val.c()),
               "prelu: alpha must be [1,C,1,1]");
    Tensor pos_mask = tensor_ops::map1(x->val, [](double v) { return v > 0 ? 1.0 : 0.0; });
    Tensor neg_part = tensor_ops::map1(x->val, [](double v) { return v < 0 ? v : 0.0; });
    Tensor y = x->val.clone();
    for (int n = 0; n < y.n(); ++n)
        for (int c = 0; c < y.c(); ++c) {
            const double a = alpha->val[static_cast<std::size_t>(c)];
            for (int i = 0; i < y.h(); ++i)
                for (int j = 0; j < y.w(); ++j) {
                    double& v = y.at(n, c, i, j);
                    if (v < 0) v *= a;
                }
        }
    return make_op("prelu", y, {x, alpha},
                   [pos_mask, neg_part](const Var& self, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(2);
                       const Var& xin = self->inputs[0];
                       const Var& al = self->inputs[1];
                       if (need[0]) {
                           Var ab = broadcast_channel(al, xin->val.n(), xin->val.h(), xin->val.w());
                           Tensor neg_mask = tensor_ops::map1(pos_mask, [](double v) { return 1.0 - v; });
                           out[0] = add(mul(g, constant(pos_mask)), mul(mul(g, constant(neg_mask)), ab));
                       }
                       if (need[1]) out[1] = reduce_channel(mul(g, constant(neg_part)));
                       return out;
                   });
}

inline Var reduce_all(const Var& a) {
    Tensor v = tensor_ops::reduce_all(a->val);
    const int n = a->val.n(), c = a->val.c(), h = a->val.h(), w = a->val.w();
    return make_op("reduce_all", v, {a},
                   [n, c, h, w](const Var&, const Var& g, const std::vector<char>&) -> std::vector<Var> {
                       return {make_op("broadcast_all", tensor_ops::broadcast_all(g->val, n, c, h, w), {g},
                                       [](const Var& self, const Var& gg, const std::vector<char>&) -> std::vector<Var> {
                                           (void)self;
                                           return {make_op("reduce_all_b", tensor_ops::reduce_all(gg->val), {gg},
                                                           nullptr)};
                                       })};
                   });
}

inline Var mean_all(const Var& a) { return scale(reduce_all(a), 1.0 / static_cast<double>(a->val.numel())); }

inline Var broadcast_batch(const Var& a, int c, int h, int w);

inline Var reduce_batch(const Var& a) {
    Tensor v = tensor_ops::reduce_batch(a->val);
    const int c = a->val.c(), h = a->val.h(), w = a->val.w();
    return make_op("reduce_batch", v, {a},
                   [c, h, w](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{broadcast_batch(g, c, h, w)};
                   });
}

inline Var broadcast_batch(const Var& a, int c, int h, int w) {
    return make_op("broadcast_batch", tensor_ops::broadcast_batch(a->val, c, h, w), {a},
                   [](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{reduce_batch(g)};
                   });
}

inline Var reduce_channel(const Var& a) {
    const int n = a->val.n(), h = a->val.h(), w = a->val.w();
    return make_op("reduce_channel", tensor_ops::reduce_channel(a->val), {a},
                   [n, h, w](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{broadcast_channel(g, n, h, w)};
                   });
}

inline Var broadcast_channel(const Var& a, int n, int h, int w) {
    return make_op("broadcast_channel", tensor_ops::broadcast_channel(a->val, n, h, w), {a},
                   [](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{reduce_channel(g)};
                   });
}

inline Var broadcast_spatial(const Var& a, int h, int w);

inline Var reduce_spatial_sum(const Var& a) {
    const int h = a->val.h(), w = a->val.w();
    return make_op("reduce_spatial", tensor_ops::reduce_spatial(a->val), {a},
                   [h, w](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{broadcast_spatial(g, h, w)};
                   });
}

inline Var broadcast_spatial(const Var& a, int h, int w) {
    return make_op("broadcast_spatial", tensor_ops::broadcast_spatial(a->val, h, w), {a},
                   [](const Var&, const Var& g, const std::vector<char>&) {
                       return std::vector<Var>{reduce_spatial_sum(g)};
                   });
}

inline Var spatial_mean(const Var& a) {
    return scale(reduce_spatial_sum(a), 1.0 / static_cast<double>(a->val.h() * a->val.w()));
}

inline Var slice_channels(const Var& a, int c0, int c1);

inline Var concat_channels(const std::vector<Var>& parts) {
    std::vector<Tensor> ts;
    ts.reserve(parts.size());
    for (const auto& p : parts) ts.push_back(p->val);
    std::vector<int> widths;
    for (const auto& p : parts) widths.push_back(p->val.c());
    return make_op("concat", tensor_ops::concat_channels(ts), std::vector<Var>(parts.begin(), parts.end()),
                   [widths](const Var&, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(widths.size());
                       int c = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                           if (need[i]) out[i] = slice_channels(g, c, c + widths[i]);
                           c += widths[i];
                       }
                       return out;
                   });
}

inline Var slice_channels(const Var& a, int c0, int c1) {
    const int C = a->val.c();
    return make_op("slice", tensor_ops::slice_channels(a->val, c0, c1), {a},
                   [c0, c1, C](const Var&, const Var& g, const std::vector<char>&) -> std::vector<Var> {
                       std::vector<Var> parts;
                       const int n = g->val.n(), h = g->val.h(), w = g->val.w();
                       if (c0 > 0) parts.push_back(constant(Tensor::zeros(n, c0, h, w)));
                       parts.push_back(g);
                       if (c1 < C) parts.push_back(constant(Tensor::zeros(n, C - c1, h, w)));
                       return {parts.size() == 1 ? parts[0] : concat_channels(parts)};
                   });
}

// conv2d / transposed conv: mutually adjoint primitives, both differentiable
// (the gradient-penalty double backward walks conv -> deconv -> conv).
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

inline Var conv2d_weight_grad_op(const Var& x, const Var& dy, int k, int stride, int pad) {
    return make_op("conv_wgrad", tensor_ops::conv2d_weight_grad(x->val, dy->val, k, stride, pad), {x, dy},
                   [](const Var&, const Var&, const std::vector<char>&) -> std::vector<Var> {
                       throw Error("conv_wgrad: third-order differentiation not supported");
                   });
}

inline Var deconv2d(const Var& y, const Var& w, int out_h, int out_w, int stride, int pad) {
    return make_op("deconv", tensor_ops::conv2d_input_grad(y->val, w->val, out_h, out_w, stride, pad), {y, w},
                   [stride, pad](const Var& self, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(2);
                       const Var& yin = self->inputs[0];
                       const Var& win = self->inputs[1];
                       if (need[0]) out[0] = conv2d(g, win, nullptr, stride, pad);
                       if (need[1]) out[1] = conv2d_weight_grad_op(g, yin, win->val.h(), stride, pad);
                       return out;
                   });
}

inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    Tensor y = tensor_ops::conv2d(x->val, w->val, b ? &b->val : nullptr, stride, pad);
    std::vector<Var> ins = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    const int in_h = x->val.h(), in_w = x->val.w();
    return make_op("conv2d", y, std::move(ins),
                   [stride, pad, in_h, in_w](const Var& self, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(self->inputs.size());
                       const Var& xin = self->inputs[0];
                       const Var& win = self->inputs[1];
                       if (need[0]) out[0] = deconv2d(g, win, in_h, in_w, stride, pad);
                       if (need[1]) out[1] = conv2d_weight_grad_op(xin, g, win->val.h(), stride, pad);
                       if (self->inputs.size() > 2 && need[2]) {
                           // bias grad: sum over n,h,w
                           out[2] = reduce_channel(g);
                       }
                       return out;
                   });
}

// transposed conv, stride-2 upsampling layer: weight stored in conv layout
// [A, B, k, k] mapping B-channel output plane to A-channel input plane.
inline Var conv_transpose2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const int k = w->val.h();
    const int out_h = (x->val.h() - 1) * stride + k - 2 * pad;
    const int out_w = (x->val.w() - 1) * stride + k - 2 * pad;
    Var y = deconv2d(x, w, out_h, out_w, stride, pad);
    if (!b) return y;
    ZAUG_CHECK(b->val.c() == y->val.c(), "conv_transpose2d: bad bias");
    return add(y, broadcast_channel(b, y->val.n(), y->val.h(), y->val.w()));
}

inline Var resize_bilinear(const Var& x, int oh, int ow) {
    if (oh == x->val.h() && ow == x->val.w()) return x;
    const int ih = x->val.h(), iw = x->val.w();
    return make_op("resize", tensor_ops::resize_bilinear(x->val, oh, ow), {x},
                   [ih, iw](const Var&, const Var& g, const std::vector<char>&) -> std::vector<Var> {
                       return {make_op("resize_adj", tensor_ops::resize_bilinear_adjoint(g->val, ih, iw), {g},
                                       [](const Var& self2, const Var& gg, const std::vector<char>&) -> std::vector<Var> {
                                           const Tensor& up = self2->val;
                                           (void)up;
                                           return {resize_bilinear(gg, self2->inputs[0]->val.h(), self2->inputs[0]->val.w())};
                                       })};
                   });
}

inline Var pad_reflect(const Var& x, int p) {
    const int ih = x->val.h(), iw = x->val.w();
    return make_op("pad_reflect", tensor_ops::pad_reflect(x->val, p, p, p, p), {x},
                   [ih, iw, p](const Var&, const Var& g, const std::vector<char>&) -> std::vector<Var> {
                       return {constant(tensor_ops::pad_reflect_adjoint(g->val, ih, iw, p, p))};
                   });
}

// reflect-pad bottom/right only, to reach a target size
inline Var pad_reflect_to(const Var& x, int th, int tw) {
    const int ih = x->val.h(), iw = x->val.w();
    if (ih == th && iw == tw) return x;
    ZAUG_CHECK(th >= ih && tw >= iw, "pad_reflect_to: target smaller than input");
    return make_op("pad_to", tensor_ops::pad_reflect(x->val, 0, th - ih, 0, tw - iw), {x},
                   [ih, iw](const Var&, const Var& g, const std::vector<char>&) -> std::vector<Var> {
                       return {constant(tensor_ops::pad_reflect_adjoint(g->val, ih, iw, 0, 0))};
                   });
}

inline Var upsample_zero2(const Var& x) {
    return make_op("upsample_zero2", tensor_ops::upsample_zero2(x->val), {x},
                   [](const Var&, const Var& g, const std::vector<char>&) -> std::vector<Var> {
                       return {constant(tensor_ops::upsample_zero2_adjoint(g->val))};
                   });
}

inline Var backward_warp(const Var& img, const Var& flow) {
    return make_op("warp", tensor_ops::backward_warp(img->val, flow->val), {img, flow},
                   [](const Var& self, const Var& g, const std::vector<char>& need) {
                       std::vector<Var> out(2);
                       Tensor d_img, d_flow;
                       tensor_ops::backward_warp_grads(self->inputs[0]->val, self->inputs[1]->val, g->val,
                                                       need[0] ? &d_img : nullptr, need[1] ? &d_flow : nullptr);
                       if (need[0]) out[0] = constant(std::move(d_img));
                       if (need[1]) out[1] = constant(std::move(d_flow));
                       return out;
                   });
}

inline Var detach(const Var& a) { return constant(a->val); }

}  // namespace ops

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator*(const Var& a, double s) { return ops::scale(a, s); }
inline Var operator*(double s, const Var& a) { return ops::scale(a, s); }

}  // namespace zaug::ad

#endif
