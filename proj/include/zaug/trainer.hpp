#ifndef ZAUG_TRAINER_HPP
#define ZAUG_TRAINER_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "zaug/evalkit.hpp"
#include "zaug/objectives.hpp"
#include "zaug/serialize.hpp"
#include "zaug/triplets.hpp"

// The self-supervised training loop: alternating critic and generator
// updates, Adam optimizers, per-epoch checkpointing and simulated multi-
// device batch chunking (gradients accumulated chunk by chunk, weighted by
// chunk size, which reproduces single-device gradients exactly).

namespace zaug::trainer {

using nlohmann::json;
using triplets::TripletSample;

struct TrainConfig {
    int epochs = 100;
    int batch_size = 128;
    double lr = 1e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    objectives::LossWeights weights;
    flownet::GenConfig gen;
    critic::CriticConfig critic_cfg;
    int critic_steps_per_gen = 1;
    std::uint64_t seed = 0;
    int device_count = 1;
    std::string out_dir = "train_out";

    json to_json() const {
        json j;
        j["epochs"] = epochs;
        j["batch_size"] = batch_size;
        j["lr"] = lr;
        j["betas"] = {beta1, beta2};
        j["lambda_d"] = weights.lambda_d;
        j["lambda_adv"] = weights.lambda_adv;
        j["lambda_gp"] = weights.lambda_gp;
        j["mode"] = flownet::mode_name(gen.mode);
        j["widths"] = {gen.widths[0], gen.widths[1], gen.widths[2]};
        j["teacher_width"] = gen.teacher_width;
        j["teacher_full_backprop"] = gen.teacher_full_backprop;
        j["critic_base"] = critic_cfg.base;
        j["critic_steps_per_gen"] = critic_steps_per_gen;
        j["seed"] = seed;
        j["device_count"] = device_count;
        j["out_dir"] = out_dir;
        return j;
    }

    static TrainConfig from_json(const json& j) {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.lr = j.value("lr", c.lr);
        if (j.contains("betas")) {
            c.beta1 = j["betas"][0].get<double>();
            c.beta2 = j["betas"][1].get<double>();
        }
        c.weights.lambda_d = j.value("lambda_d", c.weights.lambda_d);
        c.weights.lambda_adv = j.value("lambda_adv", c.weights.lambda_adv);
        c.weights.lambda_gp = j.value("lambda_gp", c.weights.lambda_gp);
        if (j.contains("mode")) c.gen.mode = flownet::mode_from_name(j["mode"].get<std::string>());
        if (j.contains("widths"))
            for (int i = 0; i < 3; ++i) c.gen.widths[static_cast<std::size_t>(i)] = j["widths"][static_cast<std::size_t>(i)].get<int>();
        c.gen.teacher_width = j.value("teacher_width", c.gen.teacher_width);
        c.gen.teacher_full_backprop = j.value("teacher_full_backprop", c.gen.teacher_full_backprop);
        c.critic_cfg.base = j.value("critic_base", c.critic_cfg.base);
        c.critic_steps_per_gen = j.value("critic_steps_per_gen", c.critic_steps_per_gen);
        c.seed = j.value("seed", c.seed);
        c.device_count = j.value("device_count", c.device_count);
        c.out_dir = j.value("out_dir", c.out_dir);
        return c;
    }

    std::string hash() const { return hash_string(to_json().dump()); }
};

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    ZAUG_CHECK(in.good(), "cannot open training config: ", path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error(detail::format_msg("training config ", path, ": ", e.what()));
    }
    return TrainConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps = 1e-8)
        : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (const auto& p : params_) {
            m_.push_back(Tensor::zeros(p->val.n(), p->val.c(), p->val.h(), p->val.w()));
            v_.push_back(Tensor::zeros(p->val.n(), p->val.c(), p->val.h(), p->val.w()));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p->grad) continue;
            const Tensor& g = p->grad->val;
            for (std::size_t j = 0; j < g.numel(); ++j) {
                m_[i][j] = b1_ * m_[i][j] + (1 - b1_) * g[j];
                v_[i][j] = b2_ * v_[i][j] + (1 - b2_) * g[j] * g[j];
                p->val[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        }
    }

    void zero_grad() {
        for (const auto& p : params_) p->grad.reset();
    }

    int step_count() const { return t_; }

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
};

// ---------------------------------------------------------------------------
// batches and chunked gradient accumulation
// ---------------------------------------------------------------------------

struct Batch {
    Tensor i0, ig, i1;
    std::optional<Tensor> dpm;
    std::size_t sample_offset = 0;  // global index of the first sample, for seeded draws

    int size() const { return i0.n(); }

    Batch slice(int from, int count) const {
        Batch out;
        auto cut = [&](const Tensor& t) {
            Tensor r(count, t.c(), t.h(), t.w());
            const std::size_t per = t.numel() / t.n();
            std::copy(t.begin() + per * from, t.begin() + per * (from + count), r.begin());
            return r;
        };
        out.i0 = cut(i0);
        out.ig = cut(ig);
        out.i1 = cut(i1);
        if (dpm) out.dpm = cut(*dpm);
        out.sample_offset = sample_offset + static_cast<std::size_t>(from);
        return out;
    }
};

inline Batch make_batch(const std::vector<TripletSample>& data, const std::vector<std::size_t>& idx,
                        flownet::Mode mode, std::size_t sample_offset) {
    ZAUG_CHECK(!idx.empty(), "make_batch: empty index list");
    const auto& first = data[idx[0]];
    const int h = first.i0.h(), w = first.i0.w();
    Batch b;
    b.i0 = Tensor(static_cast<int>(idx.size()), 1, h, w);
    b.ig = Tensor(static_cast<int>(idx.size()), 1, h, w);
    b.i1 = Tensor(static_cast<int>(idx.size()), 1, h, w);
    if (mode == flownet::Mode::plus) b.dpm = Tensor(static_cast<int>(idx.size()), 1, h, w);
    b.sample_offset = sample_offset;
    const std::size_t per = static_cast<std::size_t>(h) * w;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& t = data[idx[k]];
        ZAUG_CHECK(t.i0.h() == h && t.i0.w() == w, "make_batch: frames of mixed sizes");
        std::copy(t.i0.begin(), t.i0.end(), b.i0.begin() + per * k);
        std::copy(t.ig.begin(), t.ig.end(), b.ig.begin() + per * k);
        std::copy(t.i1.begin(), t.i1.end(), b.i1.begin() + per * k);
        if (b.dpm) std::fill(b.dpm->begin() + per * k, b.dpm->begin() + per * (k + 1), t.z);
    }
    return b;
}

inline std::vector<int> chunk_sizes(int total, int devices) {
    std::vector<int> out;
    int done = 0;
    for (int d = 0; d < devices && done < total; ++d) {
        const int len = (total - done + (devices - d - 1)) / (devices - d);
        if (len > 0) out.push_back(len);
        done += len;
    }
    return out;
}

// Accumulates generator-objective gradients over device chunks into the
// parameter grads; chunk losses are weighted by chunk size so the result
// equals the single-chunk gradient of the whole-batch objective.
inline objectives::LossReport accumulate_generator_gradients(const flownet::Generator& gen,
                                                             const critic::CriticNet* crit,
                                                             const Batch& batch,
                                                             const objectives::LossWeights& w,
                                                             int device_count) {
    objectives::LossReport total{};
    const auto chunks = chunk_sizes(batch.size(), device_count);
    int from = 0;
    for (int len : chunks) {
        Batch c = batch.slice(from, len);
        from += len;
        const double share = static_cast<double>(len) / batch.size();

        std::optional<ad::Var> dpm;
        if (c.dpm) dpm = ad::constant(*c.dpm);
        auto out = gen.student_forward(ad::constant(c.i0), ad::constant(c.i1), dpm);
        gen.teacher_forward(out, ad::constant(c.i0), ad::constant(c.i1), ad::constant(c.ig));
        ad::Var scores;
        if (w.lambda_adv > 0.0) {
            ZAUG_CHECK(crit, "generator step: lambda_adv > 0 requires a critic");
            scores = crit->forward(out.student_frame);
        }
        auto gl = objectives::generator_loss(out, ad::constant(c.ig), scores, w);
        ad::backward(ad::ops::scale(gl.total, share));

        total.rec_student += share * gl.report.rec_student;
        total.rec_teacher += share * gl.report.rec_teacher;
        total.distill += share * gl.report.distill;
        total.adv_gen += share * gl.report.adv_gen;
        total.total_g += share * gl.report.total_g;
    }
    return total;
}

// Critic-objective gradients (generator frozen; fakes are detached).
inline void accumulate_critic_gradients(const critic::CriticNet& crit, const flownet::Generator& gen,
                                        const Batch& batch, const objectives::LossWeights& w,
                                        int device_count, std::uint64_t gp_seed, double* wass_out,
                                        double* gp_out) {
    double wass = 0, gp_total = 0;
    const auto chunks = chunk_sizes(batch.size(), device_count);
    int from = 0;
    for (int len : chunks) {
        Batch c = batch.slice(from, len);
        from += len;
        const double share = static_cast<double>(len) / batch.size();

        Tensor fake;
        {
            ad::NoGradGuard ng;
            std::optional<ad::Var> dpm;
            if (c.dpm) dpm = ad::constant(*c.dpm);
            fake = gen.student_forward(ad::constant(c.i0), ad::constant(c.i1), dpm).student_frame->val;
        }
        ad::Var real_scores = crit.forward(ad::constant(c.ig));
        ad::Var fake_scores = crit.forward(ad::constant(fake));
        ad::Var gp = critic::gradient_penalty_var([&](const ad::Var& x) { return crit.forward(x); }, c.ig,
                                                  fake, gp_seed, c.sample_offset);
        auto cl = objectives::critic_loss(real_scores, fake_scores, gp, w);
        ad::backward(ad::ops::scale(cl.total, share));
        wass += share * cl.wasserstein;
        gp_total += share * cl.penalty;
    }
    if (wass_out) *wass_out = wass;
    if (gp_out) *gp_out = gp_total;
}

// ---------------------------------------------------------------------------
// training session
// ---------------------------------------------------------------------------

class TrainSession {
public:
    TrainSession(TrainConfig cfg, std::vector<TripletSample> data)
        : cfg_(std::move(cfg)),
          data_(std::move(data)),
          gen_(cfg_.gen, cfg_.seed + 1),
          rng_(cfg_.seed) {
        ZAUG_CHECK(!data_.empty(), "train: dataset is empty");
        ZAUG_CHECK(cfg_.batch_size >= 1, "train: batch_size must be >= 1");
        ZAUG_CHECK(cfg_.device_count >= 1, "train: device_count must be >= 1");
        ZAUG_CHECK(cfg_.batch_size % cfg_.device_count == 0,
                   "train: batch_size ", cfg_.batch_size, " not divisible by device_count ", cfg_.device_count);
        if (cfg_.gen.mode == flownet::Mode::fixed)
            for (const auto& t : data_)
                ZAUG_CHECK(t.z == 0.5, "train: fixed-mode dataset contains a triplet with z = ", t.z,
                           " (stack ", t.stack_id, "); use plus mode for windowed triplets");
        for (const auto& t : data_)
            ZAUG_CHECK(t.z > 0.0 && t.z < 1.0, "train: triplet with out-of-range z = ", t.z);

        if (cfg_.weights.lambda_adv > 0.0) crit_.emplace(cfg_.critic_cfg, cfg_.seed + 2);

        gen_opt_.emplace(gen_.all_params().vars(), cfg_.lr, cfg_.beta1, cfg_.beta2);
        if (crit_) crit_opt_.emplace(crit_->params().vars(), cfg_.lr, cfg_.beta1, cfg_.beta2);
    }

    int steps_per_epoch() const {
        const int bs = effective_batch();
        return static_cast<int>((data_.size() + static_cast<std::size_t>(bs) - 1) / static_cast<std::size_t>(bs));
    }

    // One optimization round: critic step(s) on the next batch (when
    // adversarial), then one generator step on the same batch.
    objectives::LossReport run_step() {
        if (cursor_ >= order_.size()) start_epoch();
        const int bs = effective_batch();
        std::vector<std::size_t> idx;
        const std::size_t offset = cursor_;
        for (int i = 0; i < bs && cursor_ < order_.size(); ++i) idx.push_back(order_[cursor_++]);
        Batch batch = make_batch(data_, idx, cfg_.gen.mode, offset);

        objectives::LossReport rep{};
        if (crit_) {
            for (int cs = 0; cs < cfg_.critic_steps_per_gen; ++cs) {
                gen_opt_->zero_grad();
                crit_opt_->zero_grad();
                double wass = 0, gp = 0;
                const std::uint64_t gp_seed = Rng(cfg_.seed ^ 0x6770ULL).fork(static_cast<std::uint64_t>(step_)).next_u64();
                accumulate_critic_gradients(*crit_, gen_, batch, cfg_.weights, cfg_.device_count, gp_seed,
                                            &wass, &gp);
                rep.critic_wass = wass;
                rep.critic_gp = gp;
                rep.total_d = wass + cfg_.weights.lambda_gp * gp;
                ZAUG_CHECK(std::isfinite(rep.total_d), "train: non-finite critic loss at step ", step_ + 1,
                           " (total_D = ", rep.total_d, "); last good checkpoint retained");
                crit_opt_->step();
                ++critic_updates_;
            }
        }

        gen_opt_->zero_grad();
        if (crit_opt_) crit_opt_->zero_grad();
        auto g = accumulate_generator_gradients(gen_, crit_ ? &*crit_ : nullptr, batch, cfg_.weights,
                                                cfg_.device_count);
        rep.rec_student = g.rec_student;
        rep.rec_teacher = g.rec_teacher;
        rep.distill = g.distill;
        rep.adv_gen = g.adv_gen;
        rep.total_g = g.total_g;
        ZAUG_CHECK(std::isfinite(rep.total_g), "train: non-finite generator loss at step ", step_ + 1,
                   " (total_G = ", rep.total_g, "); last good checkpoint retained");
        gen_opt_->step();
        if (crit_opt_) crit_opt_->zero_grad();  // adversarial term leaks grads into the critic
        ++gen_updates_;
        ++step_;
        return rep;
    }

    const flownet::Generator& generator() const { return gen_; }
    critic::CriticNet* critic() { return crit_ ? &*crit_ : nullptr; }
    const TrainConfig& config() const { return cfg_; }
    int step_count() const { return step_; }
    int critic_updates() const { return critic_updates_; }
    int gen_updates() const { return gen_updates_; }
    int epoch() const { return epoch_; }

    void save_checkpoint(const std::string& path, const json& extra = json::object()) const {
        serialize::save_checkpoint(path, gen_, crit_ ? &*crit_ : nullptr, cfg_.hash(), epoch_, extra);
    }

private:
    int effective_batch() const {
        const int n = static_cast<int>(data_.size());
        int bs = std::min(cfg_.batch_size, n);
        if (bs > cfg_.device_count) bs -= bs % cfg_.device_count;
        return std::max(bs, 1);
    }

    void start_epoch() {
        order_.resize(data_.size());
        std::iota(order_.begin(), order_.end(), 0);
        Rng r = Rng(cfg_.seed).fork(static_cast<std::uint64_t>(epoch_) + 1);
        for (std::size_t i = order_.size(); i > 1; --i) {
            const std::size_t j = r.below(i);
            std::swap(order_[i - 1], order_[j]);
        }
        cursor_ = 0;
        ++epoch_;
    }

    TrainConfig cfg_;
    std::vector<TripletSample> data_;
    flownet::Generator gen_;
    std::optional<critic::CriticNet> crit_;
    std::optional<Adam> gen_opt_, crit_opt_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int step_ = 0;
    int epoch_ = 0;
    int critic_updates_ = 0;
    int gen_updates_ = 0;
};

struct TrainResult {
    std::string last_checkpoint;
    std::string log_path;
    int steps = 0;
    int critic_updates = 0;
    std::vector<double> epoch_total_g;
};

inline TrainResult train(const TrainConfig& cfg, const std::vector<TripletSample>& dataset,
                         std::ostream& info = std::cerr) {
    std::filesystem::create_directories(cfg.out_dir);
    TrainSession session(cfg, dataset);
    TrainResult res;
    res.log_path = cfg.out_dir + "/training_log.jsonl";
    std::ofstream log(res.log_path, std::ios::trunc);
    ZAUG_CHECK(log.good(), "cannot write training log: ", res.log_path);

    const auto t0 = std::chrono::steady_clock::now();
    for (int e = 0; e < cfg.epochs; ++e) {
        double epoch_g = 0;
        const int spe = session.steps_per_epoch();
        for (int s = 0; s < spe; ++s) {
            auto rep = session.run_step();  // throws on non-finite loss
            epoch_g += rep.total_g;
            json j = rep.to_json();
            j["step"] = session.step_count();
            j["epoch"] = e;
            log << j.dump() << "\n";
        }
        log.flush();
        res.epoch_total_g.push_back(epoch_g / spe);
        char name[64];
        std::snprintf(name, sizeof(name), "/ckpt_epoch_%04d.zckpt", e + 1);
        res.last_checkpoint = cfg.out_dir + name;
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        session.save_checkpoint(res.last_checkpoint,
                                json{{"training_seconds", elapsed}, {"trained_steps", session.step_count()}});
        info << "epoch " << e + 1 << "/" << cfg.epochs << ": mean total_G = " << res.epoch_total_g.back()
             << "\n";
    }
    res.steps = session.step_count();
    res.critic_updates = session.critic_updates();
    return res;
}

// ---------------------------------------------------------------------------
// overfit probe: desk-scale training sanity harness
// ---------------------------------------------------------------------------

struct ProbeData {
    std::vector<TripletSample> samples;          // stride-2 triplets, z = 0.5
    std::vector<volio::VolumeStack> raw_stacks;  // 8-bit source volumes
    std::vector<volio::NormInfo> norms;          // per-stack normalization records
};

// Small volumes of Gaussian blobs translating linearly through z; the kind
// of motion a flow-based interpolator should nail and plain z-interpolation
// ghosts on.
inline ProbeData make_translating_blob_data(int n_stacks, int depth, int frame, std::uint64_t seed) {
    ZAUG_CHECK(depth >= 3 && depth % 2 == 1, "probe data: depth must be odd and >= 3");
    ProbeData out;
    Rng rng(seed);
    for (int s = 0; s < n_stacks; ++s) {
        auto stack = volio::VolumeStack::blank(frame, frame, depth);
        struct Blob {
            double x, y, vx, vy, sigma, amp;
        };
        std::vector<Blob> blobs;
        for (int b = 0; b < 3; ++b) {
            Blob bl;
            bl.x = rng.uniform(frame * 0.3, frame * 0.7);
            bl.y = rng.uniform(frame * 0.3, frame * 0.7);
            // total travel 35-50% of the frame across the stack: fast enough
            // that plain z-interpolation ghosts, slow enough to stay in view
            const double speed = rng.uniform(0.35, 0.5) * frame / (depth - 1);
            const double angle = rng.uniform(0, 6.283185307179586);
            bl.vx = speed * std::cos(angle);
            bl.vy = speed * std::sin(angle);
            bl.sigma = rng.uniform(0.10, 0.16) * frame;
            bl.amp = rng.uniform(120.0, 230.0);
            blobs.push_back(bl);
        }
        for (int z = 0; z < depth; ++z)
            for (int y = 0; y < frame; ++y)
                for (int x = 0; x < frame; ++x) {
                    double v = 8.0;
                    for (const auto& bl : blobs) {
                        const double cx = bl.x + bl.vx * z, cy = bl.y + bl.vy * z;
                        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                        v += bl.amp * std::exp(-d2 / (2 * bl.sigma * bl.sigma));
                    }
                    stack.at(z, y, x) = std::floor(std::min(v, 255.0));
                }
        std::ostringstream sink;
        auto norm = volio::normalize_stack(stack, sink);
        out.norms.push_back(*norm.stack.norm);
        // stride-2 triplets: inputs are the odd (kept) slices, target the
        // removed slice between them
        for (int n1 = 1; n1 + 2 <= depth; n1 += 2) {
            TripletSample t;
            t.i0 = norm.stack.slice_tensor(n1 - 1);
            t.ig = norm.stack.slice_tensor(n1);
            t.i1 = norm.stack.slice_tensor(n1 + 1);
            t.z = 0.5;
            t.stack_id = "blob" + std::to_string(s);
            t.n1 = n1;
            t.n2 = n1 + 1;
            t.n3 = n1 + 2;
            out.samples.push_back(std::move(t));
        }
        out.raw_stacks.push_back(std::move(stack));
    }
    return out;
}

struct ProbeReport {
    double final_ssim = 0.0;
    double bicubic_ssim = 0.0;
    std::vector<double> epoch_rec;  // reconstruction loss per reported epoch group
    int epochs_per_point = 1;       // consecutive data passes averaged per entry
    int steps = 0;

    json to_json() const {
        return json{{"final_ssim", final_ssim},
                    {"bicubic_ssim", bicubic_ssim},
                    {"epoch_rec", epoch_rec},
                    {"epochs_per_point", epochs_per_point},
                    {"steps", steps}};
    }
};

namespace detail {

inline Tensor to_8bit(const Tensor& unit_frame, const volio::NormInfo& norm) {
    Tensor out = unit_frame.clone();
    for (double* p = out.begin(); p != out.end(); ++p)
        *p = std::lround(std::min(std::max(volio::denormalize_value(*p, norm), 0.0), 255.0));
    return out;
}

}  // namespace detail

// Trains briefly on the tiny dataset and scores student predictions on the
// training triplets against the cubic z-interpolation baseline, both on the
// requantized 8-bit domain.
inline ProbeReport overfit_probe(const TrainConfig& cfg, const ProbeData& data, int steps,
                                 std::ostream& info = std::cerr) {
    ZAUG_CHECK(data.samples.size() <= 32, "overfit_probe: dataset capped at 32 triplets, got ",
               data.samples.size());
    ZAUG_CHECK(steps >= 0 && steps <= 500, "overfit_probe: step budget is [0, 500], got ", steps);

    ProbeReport rep;
    rep.steps = steps;

    // bicubic baseline: interpolate the odd-slice substack back to full depth
    {
        double acc = 0;
        int count = 0;
        for (std::size_t s = 0; s < data.raw_stacks.size(); ++s) {
            const auto& raw = data.raw_stacks[s];
            auto low = volio::VolumeStack::blank(raw.width, raw.height, (raw.depth + 1) / 2, raw.bit_depth);
            for (int z = 0; z < low.depth; ++z)
                for (int y = 0; y < raw.height; ++y)
                    for (int x = 0; x < raw.width; ++x) low.at(z, y, x) = raw.at(2 * z, y, x);
            std::ostringstream sink;
            auto up = evalkit::bicubic_z(low, 2, sink);
            const std::string id = "blob" + std::to_string(s);
            for (const auto& t : data.samples) {
                if (t.stack_id != id) continue;
                Tensor pred = up.slice_tensor(t.n2 - 1);
                for (double* p = pred.begin(); p != pred.end(); ++p)
                    *p = std::lround(std::min(std::max(*p, 0.0), 255.0));
                acc += evalkit::ssim(pred, raw.slice_tensor(t.n2 - 1));
                ++count;
            }
        }
        ZAUG_CHECK(count > 0, "overfit_probe: no triplets matched the source stacks");
        rep.bicubic_ssim = acc / count;
    }

    TrainSession session(cfg, data.samples);
    const int spe = session.steps_per_epoch();
    std::vector<double> per_pass;
    double epoch_acc = 0;
    int in_epoch = 0;
    for (int s = 0; s < steps; ++s) {
        auto r = session.run_step();
        epoch_acc += r.rec_student + r.rec_teacher;
        if (++in_epoch == spe) {
            per_pass.push_back(epoch_acc / spe);
            epoch_acc = 0;
            in_epoch = 0;
        }
    }
    if (in_epoch > 0) per_pass.push_back(epoch_acc / in_epoch);

    // Individual passes over a tiny dataset are noisy under Adam; the curve
    // is reported as averages over consecutive epoch groups (at most 8
    // points across the run) so the trend is what gets asserted.
    constexpr int kMaxPoints = 8;
    rep.epochs_per_point = std::max(1, static_cast<int>((per_pass.size() + kMaxPoints - 1) / kMaxPoints));
    for (std::size_t i = 0; i < per_pass.size(); i += static_cast<std::size_t>(rep.epochs_per_point)) {
        double acc = 0;
        std::size_t n = 0;
        for (std::size_t j = i; j < per_pass.size() && j < i + static_cast<std::size_t>(rep.epochs_per_point); ++j, ++n)
            acc += per_pass[j];
        rep.epoch_rec.push_back(acc / static_cast<double>(n));
    }

    // student predictions on the training triplets
    {
        ad::NoGradGuard ng;
        double acc = 0;
        for (std::size_t s = 0; s < data.raw_stacks.size(); ++s) {
            const std::string id = "blob" + std::to_string(s);
            for (const auto& t : data.samples) {
                if (t.stack_id != id) continue;
                std::optional<ad::Var> dpm;
                if (cfg.gen.mode == flownet::Mode::plus)
                    dpm = ad::constant(triplets::make_dpm(t.z, t.i0.h(), t.i0.w()));
                auto out = session.generator().student_forward(ad::constant(t.i0), ad::constant(t.i1), dpm);
                Tensor pred = detail::to_8bit(out.student_frame->val, data.norms[s]);
                acc += evalkit::ssim(pred, data.raw_stacks[s].slice_tensor(t.n2 - 1));
            }
        }
        rep.final_ssim = acc / static_cast<double>(data.samples.size());
    }
    info << "probe: final_ssim = " << rep.final_ssim << ", bicubic_ssim = " << rep.bicubic_ssim << "\n";
    return rep;
}

}  // namespace zaug::trainer

#endif
