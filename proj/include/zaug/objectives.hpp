#ifndef ZAUG_OBJECTIVES_HPP
#define ZAUG_OBJECTIVES_HPP

#include <json.hpp>

#include "zaug/flownet.hpp"

// Loss functions: Laplacian-pyramid reconstruction for student and teacher,
// flow distillation, and the assembled generator / critic objectives.

namespace zaug::objectives {

using ad::Var;
using namespace ad::ops;
using nlohmann::json;

struct LossWeights {
    double lambda_d = 0.01;
    double lambda_adv = 0.001;  // 0 for direct (generator-alone) training
    double lambda_gp = 10.0;
};

// ---------------------------------------------------------------------------
// Laplacian pyramid reconstruction loss
// ---------------------------------------------------------------------------

namespace pyramid {

constexpr int kLevels = 5;

inline Var gauss_kernel5() {
    // [1,4,6,4,1]/16 separable
    static const double k1[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    Tensor k(1, 1, 5, 5);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) k.at(0, 0, y, x) = k1[y] * k1[x];
    return ad::constant(k);
}

inline Var blur(const Var& x, double gain = 1.0) {
    Var padded = pad_reflect(x, 2);
    Var out = conv2d(padded, gauss_kernel5(), nullptr, 1, 0);
    return gain == 1.0 ? out : ad::ops::scale(out, gain);
}

inline Var down(const Var& x) {
    Var padded = pad_reflect(x, 2);
    return conv2d(padded, gauss_kernel5(), nullptr, 2, 0);
}

// zero-insert doubling followed by a gain-4 blur restores the DC level
inline Var up(const Var& x) { return blur(upsample_zero2(x), 4.0); }

// Bottom level is the residual against the re-expanded next level; the top
// retains the coarsest Gaussian.
inline std::vector<Var> build(const Var& x) {
    std::vector<Var> levels;
    Var g = x;
    for (int k = 0; k < kLevels - 1; ++k) {
        Var next = down(g);
        levels.push_back(sub(g, up(next)));
        g = next;
    }
    levels.push_back(g);
    return levels;
}

}  // namespace pyramid

// Sum over pyramid levels of 2^k-weighted mean absolute differences.
// Sizes that are not a multiple of 2^5 are reflect-padded up front.
inline Var lap_loss_var(const Var& a, const Var& b) {
    ZAUG_CHECK(a->val.same_shape(b->val), "lap_loss: shape mismatch ", a->val.shape_str(), " vs ",
               b->val.shape_str());
    const int mult = 1 << pyramid::kLevels;
    const int th = (a->val.h() + mult - 1) / mult * mult;
    const int tw = (a->val.w() + mult - 1) / mult * mult;
    Var pa = pad_reflect_to(a, th, tw);
    Var pb = pad_reflect_to(b, th, tw);
    auto la = pyramid::build(pa);
    auto lb = pyramid::build(pb);
    Var total;
    for (int k = 0; k < pyramid::kLevels; ++k) {
        Var term = ad::ops::scale(mean_all(abs(sub(la[static_cast<std::size_t>(k)], lb[static_cast<std::size_t>(k)]))),
                                  static_cast<double>(1 << k));
        total = k == 0 ? term : add(total, term);
    }
    return total;
}

inline double lap_loss(const Tensor& a, const Tensor& b) {
    ad::NoGradGuard ng;
    return lap_loss_var(ad::constant(a), ad::constant(b))->val[0];
}

// ---------------------------------------------------------------------------
// distillation loss
// ---------------------------------------------------------------------------

// sqrt of the summed per-block flow distances to the teacher flow, per sample,
// averaged over the batch. Teacher flows enter as constants: distillation
// supervises the student only, the teacher learns from its own reconstruction.
inline Var distill_loss_var(const flownet::GeneratorOutput& out) {
    ZAUG_CHECK(out.has_teacher, "distill_loss: teacher products missing");
    Var t0 = detach(out.teacher_flow0);
    Var t1 = detach(out.teacher_flow1);
    Var inner;
    for (int b = 0; b < 3; ++b) {
        const auto& blk = out.blocks[static_cast<std::size_t>(b)];
        ZAUG_CHECK(blk.flow0->val.same_shape(t0->val) && blk.flow1->val.same_shape(t1->val),
                   "distill_loss: flow shapes disagree after upsampling");
        Var n0 = ad::ops::sqrt(reduce_batch(square(sub(blk.flow0, t0))));
        Var n1 = ad::ops::sqrt(reduce_batch(square(sub(blk.flow1, t1))));
        Var term = add(n0, n1);
        inner = b == 0 ? term : add(inner, term);
    }
    return mean_all(ad::ops::sqrt(inner));
}

// Convenience form over bare flow fields (used by the oracles).
inline double distill_loss(const std::vector<std::pair<Tensor, Tensor>>& student_flows,
                           const std::pair<Tensor, Tensor>& teacher_flows) {
    ZAUG_CHECK(student_flows.size() == 3, "distill_loss: expected 3 student flow pairs");
    ad::NoGradGuard ng;
    Var t0 = ad::constant(teacher_flows.first);
    Var t1 = ad::constant(teacher_flows.second);
    Var inner;
    for (std::size_t b = 0; b < 3; ++b) {
        ZAUG_CHECK(student_flows[b].first.same_shape(t0->val) && student_flows[b].second.same_shape(t1->val),
                   "distill_loss: flow shapes disagree after upsampling");
        Var n0 = ad::ops::sqrt(reduce_batch(square(sub(ad::constant(student_flows[b].first), t0))));
        Var n1 = ad::ops::sqrt(reduce_batch(square(sub(ad::constant(student_flows[b].second), t1))));
        Var term = add(n0, n1);
        inner = b == 0 ? term : add(inner, term);
    }
    return mean_all(ad::ops::sqrt(inner))->val[0];
}

// ---------------------------------------------------------------------------
// assembled objectives
// ---------------------------------------------------------------------------

struct LossReport {
    double rec_student = 0.0;
    double rec_teacher = 0.0;
    double distill = 0.0;
    double adv_gen = 0.0;      // E[D(G(I0,I1))]
    double critic_wass = 0.0;  // E[D(fake)] - E[D(real)]
    double critic_gp = 0.0;    // penalty before lambda_gp
    double total_g = 0.0;
    double total_d = 0.0;

    json to_json() const {
        return json{{"rec_student", rec_student}, {"rec_teacher", rec_teacher}, {"distill", distill},
                    {"adv_gen", adv_gen},         {"critic_wass", critic_wass}, {"critic_gp", critic_gp},
                    {"total_G", total_g},         {"total_D", total_d}};
    }

    static LossReport from_json(const json& j) {
        LossReport r;
        r.rec_student = j.value("rec_student", 0.0);
        r.rec_teacher = j.value("rec_teacher", 0.0);
        r.distill = j.value("distill", 0.0);
        r.adv_gen = j.value("adv_gen", 0.0);
        r.critic_wass = j.value("critic_wass", 0.0);
        r.critic_gp = j.value("critic_gp", 0.0);
        r.total_g = j.value("total_G", 0.0);
        r.total_d = j.value("total_D", 0.0);
        return r;
    }
};

inline double assemble_generator_total(double rec_student, double rec_teacher, double distill, double adv_gen,
                                       const LossWeights& w) {
    return rec_student + rec_teacher + w.lambda_d * distill - w.lambda_adv * adv_gen;
}

struct GeneratorLoss {
    Var total;
    LossReport report;
};

// L_G = L_rec(student) + L_rec(teacher) + lambda_d * L_dis - lambda_adv * E[D(student)]
// `adv_scores` are the critic's scores of the student frames, still attached
// to the generator graph; required whenever lambda_adv > 0.
inline GeneratorLoss generator_loss(const flownet::GeneratorOutput& out, const Var& ig,
                                    const Var& adv_scores, const LossWeights& w) {
    ZAUG_CHECK(out.has_teacher, "generator_loss: training mode requires teacher products");
    GeneratorLoss gl;
    Var rec_s = lap_loss_var(out.student_frame, ig);
    Var rec_t = lap_loss_var(out.teacher_frame, ig);
    Var dis = distill_loss_var(out);
    gl.total = add(add(rec_s, rec_t), ad::ops::scale(dis, w.lambda_d));
    gl.report.rec_student = rec_s->val[0];
    gl.report.rec_teacher = rec_t->val[0];
    gl.report.distill = dis->val[0];
    if (w.lambda_adv > 0.0) {
        ZAUG_CHECK(adv_scores, "generator_loss: lambda_adv > 0 but no critic scores supplied");
        Var adv = mean_all(adv_scores);
        gl.total = sub(gl.total, ad::ops::scale(adv, w.lambda_adv));
        gl.report.adv_gen = adv->val[0];
    }
    gl.report.total_g = gl.total->val[0];
    return gl;
}

struct CriticLoss {
    Var total;
    double wasserstein = 0.0;
    double penalty = 0.0;
};

// L_D = E[D(fake)] - E[D(real)] + lambda_gp * penalty
inline CriticLoss critic_loss(const Var& real_scores, const Var& fake_scores, const Var& gp,
                              const LossWeights& w) {
    ZAUG_CHECK(real_scores->val.n() == fake_scores->val.n(), "critic_loss: batch size mismatch");
    CriticLoss cl;
    Var wass = sub(mean_all(fake_scores), mean_all(real_scores));
    cl.total = add(wass, ad::ops::scale(gp, w.lambda_gp));
    cl.wasserstein = wass->val[0];
    cl.penalty = gp->val[0];
    return cl;
}

inline double critic_loss(double mean_real, double mean_fake, double gp, const LossWeights& w) {
    return mean_fake - mean_real + w.lambda_gp * gp;
}

}  // namespace zaug::objectives

#endif
