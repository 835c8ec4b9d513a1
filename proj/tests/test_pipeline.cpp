#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "zaug/cli.hpp"

// End-to-end pipeline through the CLI and the filesystem: synthesize a
// volume, train adversarially, predict on its low-resolution half, score
// against the held-out slices and run the benchmark report.

using namespace zaug;

TEST_SUITE_BEGIN("pipeline");

namespace {

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
    std::vector<const char*> argv{"zaug"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return rc;
}

// a blob drifting through z, discretized to 8 bit
volio::VolumeStack blob_volume(int frame, int depth, std::uint64_t seed) {
    auto s = volio::VolumeStack::blank(frame, frame, depth);
    Rng rng(seed);
    const double x0 = rng.uniform(frame * 0.3, frame * 0.5);
    const double y0 = rng.uniform(frame * 0.3, frame * 0.5);
    const double vx = rng.uniform(1.0, 2.0), vy = rng.uniform(-2.0, -1.0);
    const double sigma = frame * 0.15;
    for (int z = 0; z < depth; ++z)
        for (int y = 0; y < frame; ++y)
            for (int x = 0; x < frame; ++x) {
                const double cx = x0 + vx * z, cy = y0 + vy * z;
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                s.at(z, y, x) = std::floor(std::min(10.0 + 220.0 * std::exp(-d2 / (2 * sigma * sigma)), 255.0));
            }
    return s;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("train -> predict -> eval -> bench chain" * doctest::timeout(900)) {
    const std::string dir = "/tmp/zaug_pipeline";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);

    // full-resolution volume; the low-resolution input keeps every second slice
    auto full = blob_volume(40, 5, 77);
    auto low = volio::VolumeStack::blank(40, 40, 3);
    for (int z = 0; z < 3; ++z)
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 40; ++x) low.at(z, y, x) = full.at(2 * z, y, x);
    const std::string full_path = dir + "/full.tif";
    const std::string low_path = dir + "/low.tif";
    volio::save_stack(full_path, full);
    volio::save_stack(low_path, low);

    nlohmann::json manifest;
    manifest["stacks"] = {{{"path", full_path}, {"mode", "fixed"}}};
    const std::string mpath = dir + "/dataset.json";
    std::ofstream(mpath) << manifest.dump();

    nlohmann::json cfg;
    cfg["epochs"] = 1;
    cfg["batch_size"] = 3;
    cfg["lr"] = 1e-4;
    cfg["mode"] = "fixed";
    cfg["widths"] = {8, 8, 8};
    cfg["teacher_width"] = 8;
    cfg["lambda_adv"] = 0.001;  // adversarial path, critic + penalty included
    cfg["critic_base"] = 4;
    cfg["seed"] = 11;
    cfg["out_dir"] = dir + "/run";
    const std::string cpath = dir + "/train.json";
    std::ofstream(cpath) << cfg.dump();

    std::string out, err;
    REQUIRE(run_cli({"train", "--config", cpath, "--input", mpath}, &out, &err) == 0);
    CHECK(out.find("1 critic updates") != std::string::npos);
    const std::string ckpt = dir + "/run/ckpt_epoch_0001.zckpt";
    REQUIRE(std::filesystem::exists(ckpt));

    // the training log holds one record per step with adversarial terms
    auto log = evalkit::load_training_log(dir + "/run/training_log.jsonl");
    REQUIRE(log.size() == 1);
    CHECK(std::isfinite(log[0].total_d));
    CHECK(log[0].rec_student > 0.0);

    // predict one doubling pass and compare against the held-out slices
    const std::string pred_path = dir + "/pred.tif";
    REQUIRE(run_cli({"predict", "--model", ckpt, "--input", low_path, "--output", pred_path, "--passes",
                     "1", "--policy", "resize"},
                    &out, &err) == 0);
    auto pred = volio::load_stack(pred_path);
    REQUIRE(pred.depth == 5);

    // prediction provenance matches the checkpoint weight hash
    auto ck = serialize::load_checkpoint(ckpt);
    auto meta = nlohmann::json::parse(pred.meta);
    CHECK(meta["provenance"]["model_hash"] == ck.manifest["weights_hash"]);

    const std::string eval_report = dir + "/eval.json";
    REQUIRE(run_cli({"eval", "--input", pred_path, "--ref", full_path, "--stride", "1", "--report",
                     eval_report},
                    &out, &err) == 0);
    auto ej = nlohmann::json::parse(slurp(eval_report));
    CHECK(ej["rmse"].get<double>() > 0.0);
    CHECK(ej["ssim"].get<double>() <= 1.0);
    CHECK(ej["gaps"].size() == 2);

    const std::string bench_report = dir + "/bench.json";
    REQUIRE(run_cli({"bench", "--model", ckpt, "--input", low_path, "--ref", full_path, "--stride", "1",
                     "--report", bench_report, "--policy", "resize"},
                    &out, &err) == 0);
    CHECK(out.find("bicubic") != std::string::npos);
    CHECK(out.find("Train(s)") != std::string::npos);
    auto bj = nlohmann::json::parse(slurp(bench_report));
    CHECK(bj["model"]["prediction_seconds"].get<double>() > 0.0);
    CHECK(bj["model"]["training_seconds"].get<double>() > 0.0);
    CHECK(bj["bicubic"]["rmse"].get<double>() > 0.0);
    CHECK(bj["provenance"]["model_hash"] == ck.manifest["weights_hash"]);

    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
