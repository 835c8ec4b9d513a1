#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>

#include "test_util.hpp"
#include "zaug/trainer.hpp"

using namespace zaug;
using namespace zaug::trainer;
using zaug_test::max_abs_diff;

TEST_SUITE_BEGIN("trainer");

namespace {

TrainConfig tiny_config(double lambda_adv) {
    TrainConfig cfg;
    cfg.gen = flownet::GenConfig::small();
    cfg.gen.widths = {16, 12, 8};
    cfg.gen.teacher_width = 12;
    cfg.critic_cfg = critic::CriticConfig::small();
    cfg.critic_cfg.base = 4;
    cfg.weights.lambda_adv = lambda_adv;
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.seed = 7;
    cfg.lr = 1e-4;
    cfg.out_dir = "/tmp/zaug_test_train";
    return cfg;
}

ProbeData tiny_blobs(int stacks = 2, int depth = 5, int frame = 32, std::uint64_t seed = 3) {
    return make_translating_blob_data(stacks, depth, frame, seed);
}

std::vector<Tensor> snapshot(const nn::ParamList& pl) {
    std::vector<Tensor> out;
    for (const auto& [name, v] : pl.items) out.push_back(v->val.clone());
    return out;
}

double max_param_diff(const nn::ParamList& pl, const std::vector<Tensor>& snap) {
    double m = 0;
    for (std::size_t i = 0; i < pl.items.size(); ++i)
        m = std::max(m, max_abs_diff(pl.items[i].second->val, snap[i]));
    return m;
}

}  // namespace

TEST_CASE("config json round trip and hashing") {
    TrainConfig cfg = tiny_config(0.001);
    cfg.device_count = 2;
    auto j = cfg.to_json();
    auto back = TrainConfig::from_json(j);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.weights.lambda_adv == cfg.weights.lambda_adv);
    CHECK(back.device_count == 2);
    CHECK(back.hash() == cfg.hash());
    auto other = cfg;
    other.lr = 2e-4;
    CHECK(other.hash() != cfg.hash());
}

TEST_CASE("chunk sizes: 128 over 2 devices is 64 per device") {
    CHECK(chunk_sizes(128, 2) == std::vector<int>{64, 64});
    CHECK(chunk_sizes(6, 3) == std::vector<int>{2, 2, 2});
    CHECK(chunk_sizes(5, 2) == std::vector<int>{3, 2});
    CHECK(chunk_sizes(2, 4) == std::vector<int>{1, 1});
}

TEST_CASE("session guards: divisibility, empty data, mode mismatch before step 1") {
    auto data = tiny_blobs();
    auto cfg = tiny_config(0.0);

    SUBCASE("batch not divisible by devices") {
        cfg.batch_size = 5;
        cfg.device_count = 2;
        CHECK_THROWS_AS(TrainSession(cfg, data.samples), Error);
    }
    SUBCASE("empty dataset") {
        CHECK_THROWS_AS(TrainSession(cfg, {}), Error);
    }
    SUBCASE("fixed mode rejects z != 0.5") {
        auto bad = data.samples;
        bad[0].z = 0.25;
        CHECK_THROWS_AS(TrainSession(cfg, bad), Error);
    }
    SUBCASE("plus mode accepts varying z") {
        auto cfg2 = tiny_config(0.0);
        cfg2.gen.mode = flownet::Mode::plus;
        auto varied = data.samples;
        varied[0].z = 0.25;
        TrainSession s(cfg2, varied);
        CHECK_NOTHROW(s.run_step());
    }
}

TEST_CASE("generator-alone training performs zero critic updates") {
    auto data = tiny_blobs();
    auto cfg = tiny_config(0.0);
    TrainSession session(cfg, data.samples);
    for (int i = 0; i < 2; ++i) session.run_step();
    CHECK(session.critic_updates() == 0);
    CHECK(session.gen_updates() == 2);
    CHECK(session.critic() == nullptr);
}

TEST_CASE("optimizer steps touch exactly the intended networks") {
    auto data = tiny_blobs();
    auto cfg = tiny_config(0.001);
    TrainSession session(cfg, data.samples);
    REQUIRE(session.critic() != nullptr);

    auto gen_before = snapshot(session.generator().all_params());
    auto crit_before = snapshot(session.critic()->params());
    session.run_step();  // one critic step + one generator step
    CHECK(max_param_diff(session.generator().all_params(), gen_before) > 0.0);
    CHECK(max_param_diff(session.critic()->params(), crit_before) > 0.0);
    CHECK(session.critic_updates() == 1);
    CHECK(session.gen_updates() == 1);
}

TEST_CASE("fixed seed, single device: bitwise-identical loss curves") {
    auto data = tiny_blobs();
    auto cfg = tiny_config(0.001);
    std::vector<double> curve1, curve2;
    {
        TrainSession s(cfg, data.samples);
        for (int i = 0; i < 3; ++i) curve1.push_back(s.run_step().total_g);
    }
    {
        TrainSession s(cfg, data.samples);
        for (int i = 0; i < 3; ++i) curve2.push_back(s.run_step().total_g);
    }
    REQUIRE(curve1.size() == curve2.size());
    for (std::size_t i = 0; i < curve1.size(); ++i) CHECK(curve1[i] == curve2[i]);
}

TEST_CASE("data-parallel equivalence: chunked gradients match single-device") {
    auto data = tiny_blobs(2, 5, 32, 11);
    auto cfg = tiny_config(0.001);

    std::vector<std::size_t> idx{0, 1, 2, 3};
    Batch batch = make_batch(data.samples, idx, flownet::Mode::fixed, 0);

    auto grads_with_devices = [&](int devices) {
        flownet::Generator gen(cfg.gen, 99);
        critic::CriticNet crit(cfg.critic_cfg, 98);
        accumulate_generator_gradients(gen, &crit, batch, cfg.weights, devices);
        std::vector<Tensor> gs;
        for (const auto& [name, v] : gen.all_params().items) {
            REQUIRE(v->grad);
            gs.push_back(v->grad->val.clone());
        }
        return gs;
    };

    auto g1 = grads_with_devices(1);
    auto g2 = grads_with_devices(2);
    auto g3 = grads_with_devices(3);
    REQUIRE(g1.size() == g2.size());
    double worst2 = 0, worst3 = 0;
    for (std::size_t i = 0; i < g1.size(); ++i) {
        worst2 = std::max(worst2, max_abs_diff(g1[i], g2[i]));
        worst3 = std::max(worst3, max_abs_diff(g1[i], g3[i]));
    }
    CHECK(worst2 < 1e-5);
    CHECK(worst3 < 1e-5);

    // critic side, including the per-sample penalty draws
    auto crit_grads = [&](int devices) {
        flownet::Generator gen(cfg.gen, 99);
        critic::CriticNet crit(cfg.critic_cfg, 98);
        double wass = 0, gp = 0;
        accumulate_critic_gradients(crit, gen, batch, cfg.weights, devices, 555, &wass, &gp);
        std::vector<Tensor> gs;
        for (const auto& [name, v] : crit.params().items) {
            REQUIRE(v->grad);
            gs.push_back(v->grad->val.clone());
        }
        gs.push_back(Tensor::scalar(wass));
        gs.push_back(Tensor::scalar(gp));
        return gs;
    };
    auto c1 = crit_grads(1);
    auto c2 = crit_grads(2);
    double worstc = 0;
    for (std::size_t i = 0; i < c1.size(); ++i) worstc = std::max(worstc, max_abs_diff(c1[i], c2[i]));
    CHECK(worstc < 1e-5);
}

TEST_CASE("adversarial switch is live: trajectories diverge, and lambda_adv=0 ignores the critic") {
    auto data = tiny_blobs(2, 5, 32, 13);

    // same init, 4 steps with and without the adversarial term
    auto run = [&](double lambda_adv) {
        auto cfg = tiny_config(lambda_adv);
        cfg.seed = 21;
        TrainSession s(cfg, data.samples);
        for (int i = 0; i < 4; ++i) s.run_step();
        return snapshot(s.generator().all_params());
    };
    auto w_adv = run(0.001);
    auto w_direct = run(0.0);
    double diff = 0;
    for (std::size_t i = 0; i < w_adv.size(); ++i) diff = std::max(diff, max_abs_diff(w_adv[i], w_direct[i]));
    CHECK(diff > 1e-6);

    // with lambda_adv = 0, generator steps are identical no matter the critic
    auto run_direct_vs_critic_seed = [&](std::uint64_t critic_seed) {
        auto cfg = tiny_config(0.0);
        cfg.seed = 22;
        TrainSession s(cfg, data.samples);
        // the critic is never built in direct mode; emulate "different critic
        // weights" by just running twice -- determinism covers equality
        (void)critic_seed;
        for (int i = 0; i < 2; ++i) s.run_step();
        return snapshot(s.generator().all_params());
    };
    auto a = run_direct_vs_critic_seed(1);
    auto b = run_direct_vs_critic_seed(2);
    double d2 = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d2 = std::max(d2, max_abs_diff(a[i], b[i]));
    CHECK(d2 == 0.0);
}

TEST_CASE("train(): epoch loop, log file, checkpoints, abort on divergence") {
    auto data = tiny_blobs();
    auto cfg = tiny_config(0.0);
    cfg.epochs = 2;
    cfg.out_dir = "/tmp/zaug_test_train_run";
    std::filesystem::remove_all(cfg.out_dir);

    std::ostringstream info;
    auto res = train(cfg, data.samples, info);
    CHECK(res.steps == 2 * TrainSession(cfg, data.samples).steps_per_epoch());
    CHECK(res.epoch_total_g.size() == 2);
    CHECK(std::filesystem::exists(res.last_checkpoint));
    auto log = evalkit::load_training_log(res.log_path);
    CHECK(static_cast<int>(log.size()) == res.steps);

    SUBCASE("non-finite loss aborts and retains the last checkpoint") {
        auto bad = cfg;
        bad.lr = 1e18;  // guaranteed blow-up
        bad.epochs = 50;
        bad.out_dir = "/tmp/zaug_test_train_blowup";
        std::filesystem::remove_all(bad.out_dir);
        CHECK_THROWS_AS(train(bad, data.samples, info), Error);
    }
    std::filesystem::remove_all(cfg.out_dir);
    std::filesystem::remove_all("/tmp/zaug_test_train_blowup");
}

TEST_CASE("checkpoint: save/load round trip gives identical predictions; corrupt files rejected") {
    auto data = tiny_blobs();
    auto cfg = tiny_config(0.001);
    TrainSession session(cfg, data.samples);
    session.run_step();

    const std::string path = "/tmp/zaug_test_ckpt.zckpt";
    session.save_checkpoint(path);
    auto loaded = serialize::load_checkpoint(path);
    CHECK(loaded.crit.has_value());
    CHECK(loaded.manifest.at("config_hash").get<std::string>() == cfg.hash());

    ad::NoGradGuard ng;
    const auto& t = data.samples[0];
    auto a = session.generator().student_forward(ad::constant(t.i0), ad::constant(t.i1));
    auto b = loaded.gen.student_forward(ad::constant(t.i0), ad::constant(t.i1));
    CHECK(max_abs_diff(a.student_frame->val, b.student_frame->val) <= 1e-6);

    SUBCASE("flipped payload byte is caught by the weight hash") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(-9, std::ios::end);
        char c;
        f.seekg(-9, std::ios::end);
        f.get(c);
        f.seekp(-9, std::ios::end);
        c = static_cast<char>(c ^ 0x40);
        f.put(c);
        f.close();
        CHECK_THROWS_AS(serialize::load_checkpoint(path), Error);
    }
    SUBCASE("wrong magic rejected") {
        std::ofstream bad("/tmp/zaug_test_bad.zckpt", std::ios::binary);
        bad << "NOTACKPTxxxxxxxxxxxxxxxx";
        bad.close();
        CHECK_THROWS_AS(serialize::load_checkpoint("/tmp/zaug_test_bad.zckpt"), Error);
        std::remove("/tmp/zaug_test_bad.zckpt");
    }
    std::remove(path.c_str());
}

TEST_CASE("probe: blob data layout, determinism, zero-step report") {
    auto data = tiny_blobs(2, 5, 32, 17);
    CHECK(data.samples.size() == 4);  // two triplets per 5-slice stack
    CHECK(data.raw_stacks.size() == 2);
    for (const auto& t : data.samples) {
        CHECK(t.z == 0.5);
        CHECK(t.n1 % 2 == 1);
    }

    auto cfg = tiny_config(0.0);
    cfg.batch_size = 4;
    std::ostringstream sink;
    auto r0 = overfit_probe(cfg, data, 0, sink);
    CHECK(r0.steps == 0);
    CHECK(r0.epoch_rec.empty());
    CHECK(r0.bicubic_ssim > 0.0);
    CHECK(std::isfinite(r0.final_ssim));

    auto r1 = overfit_probe(cfg, data, 3, sink);
    auto r2 = overfit_probe(cfg, data, 3, sink);
    CHECK(r1.final_ssim == r2.final_ssim);
    CHECK(r1.bicubic_ssim == r2.bicubic_ssim);
    REQUIRE(r1.epoch_rec.size() == r2.epoch_rec.size());
    for (std::size_t i = 0; i < r1.epoch_rec.size(); ++i) CHECK(r1.epoch_rec[i] == r2.epoch_rec[i]);

    SUBCASE("budget guards") {
        CHECK_THROWS_AS(overfit_probe(cfg, data, 501, sink), Error);
        ProbeData big = data;
        while (big.samples.size() <= 32) big.samples.push_back(big.samples[0]);
        CHECK_THROWS_AS(overfit_probe(cfg, big, 1, sink), Error);
    }
}

TEST_SUITE_END();
