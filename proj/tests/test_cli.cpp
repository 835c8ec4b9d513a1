#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "zaug/cli.hpp"

using namespace zaug;

TEST_SUITE_BEGIN("cli");

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

std::string write_stack(const std::string& name, int w, int h, int d, std::uint64_t seed) {
    auto s = volio::VolumeStack::blank(w, h, d);
    Rng rng(seed);
    for (double& v : s.voxels) v = std::floor(rng.uniform(0.0, 256.0));
    const std::string path = "/tmp/zaug_cli_" + name;
    volio::save_stack(path, s);
    return path;
}

std::string write_tiny_checkpoint(const std::string& name, flownet::Mode mode) {
    flownet::GenConfig cfg;
    cfg.mode = mode;
    cfg.widths = {16, 12, 8};
    cfg.teacher_width = 12;
    flownet::Generator gen(cfg, 3);
    const std::string path = "/tmp/zaug_cli_" + name;
    serialize::save_checkpoint(path, gen, nullptr, "feedcafefeedcafe", 0);
    return path;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("usage errors: unknown subcommand, missing flags give nonzero + usage") {
    std::string out, err;
    CHECK(run_cli({"frobnicate"}, &out, &err) != 0);
    CHECK(err.find("error") != std::string::npos);

    CHECK(run_cli({"predict"}, &out, &err) != 0);  // required flags missing
    CHECK(err.find("error") != std::string::npos);
}

TEST_CASE("triplets-dryrun prints per-stack counts") {
    const std::string p1 = write_stack("dry_a.tif", 40, 40, 10, 1);
    const std::string p2 = write_stack("dry_b.tif", 40, 40, 9, 2);
    nlohmann::json j;
    j["stacks"] = {{{"path", p1}, {"mode", "fixed"}}, {{"path", p2}, {"mode", "windowed"}}};
    const std::string mpath = "/tmp/zaug_cli_manifest.json";
    std::ofstream(mpath) << j.dump();

    std::string out;
    CHECK(run_cli({"triplets-dryrun", "--input", mpath}, &out) == 0);
    CHECK(out.find("triplets=8") != std::string::npos);
    CHECK(out.find("triplets=84") != std::string::npos);
    CHECK(out.find("total triplets: 92") != std::string::npos);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(mpath.c_str());
}

TEST_CASE("predict: doubling pass, provenance metadata, idempotence, mode guard") {
    const std::string model = write_tiny_checkpoint("fixed.zckpt", flownet::Mode::fixed);
    const std::string input = write_stack("pred_in.tif", 64, 64, 3, 3);
    const std::string output = "/tmp/zaug_cli_pred_out.tif";

    std::string out, err;
    REQUIRE(run_cli({"predict", "--model", model, "--input", input, "--output", output, "--passes", "1",
                     "--policy", "resize"},
                    &out, &err) == 0);
    CHECK(out.find("5 slices") != std::string::npos);

    auto result = volio::load_stack(output);
    CHECK(result.depth == 5);
    nlohmann::json meta = nlohmann::json::parse(result.meta);
    CHECK(meta.contains("provenance"));
    CHECK(meta["provenance"]["passes"] == 1);
    CHECK(meta["provenance"].contains("model_hash"));
    CHECK(meta["provenance"].contains("toolkit"));

    // identical invocation writes byte-identical output
    const std::string bytes1 = slurp(output);
    REQUIRE(run_cli({"predict", "--model", model, "--input", input, "--output", output, "--passes", "1",
                     "--policy", "resize"},
                    &out, &err) == 0);
    CHECK(slurp(output) == bytes1);

    // plus-mode flags on a fixed model are rejected with a one-line error
    CHECK(run_cli({"predict", "--model", model, "--input", input, "--output", output, "--zs", "0.25,0.5"},
                  &out, &err) == 1);
    CHECK(err.rfind("error: ", 0) == 0);

    std::remove(model.c_str());
    std::remove(input.c_str());
    std::remove(output.c_str());
}

TEST_CASE("predict: tiled native sizes write a tile-offset sidecar") {
    const std::string model = write_tiny_checkpoint("tiled.zckpt", flownet::Mode::fixed);
    const std::string input = write_stack("pred_tiled_in.tif", 300, 300, 2, 9);
    const std::string output = "/tmp/zaug_cli_pred_tiled_out.tif";
    std::string out;
    REQUIRE(run_cli({"predict", "--model", model, "--input", input, "--output", output, "--passes", "1"},
                    &out) == 0);
    CHECK(out.find("tile offsets") != std::string::npos);
    auto plan = volio::load_tile_manifest(output + ".tiles.json");
    CHECK(plan.offsets.size() == 4);
    CHECK(plan.native_w == 300);
    std::remove(model.c_str());
    std::remove(input.c_str());
    std::remove(output.c_str());
    std::remove((output + ".tiles.json").c_str());
}

TEST_CASE("predict: plus model with multiple distances") {
    const std::string model = write_tiny_checkpoint("plus.zckpt", flownet::Mode::plus);
    const std::string input = write_stack("pred_plus_in.tif", 64, 64, 5, 4);
    const std::string output = "/tmp/zaug_cli_pred_plus_out.tif";
    std::string out;
    REQUIRE(run_cli({"predict", "--model", model, "--input", input, "--output", output, "--zs",
                     "0.25,0.5,0.75", "--policy", "resize"},
                    &out) == 0);
    CHECK(volio::load_stack(output).depth == 17);
    std::remove(model.c_str());
    std::remove(input.c_str());
    std::remove(output.c_str());
}

TEST_CASE("predict: three passes take 18 slices to 137" * doctest::timeout(600)) {
    const std::string model = write_tiny_checkpoint("p3.zckpt", flownet::Mode::fixed);
    const std::string input = write_stack("p3_in.tif", 64, 64, 18, 23);
    const std::string output = "/tmp/zaug_cli_p3_out.tif";
    std::string out;
    REQUIRE(run_cli({"predict", "--model", model, "--input", input, "--output", output, "--passes", "3",
                     "--policy", "resize"},
                    &out) == 0);
    CHECK(out.find("137 slices") != std::string::npos);
    CHECK(volio::load_stack(output).depth == 137);
    std::remove(model.c_str());
    std::remove(input.c_str());
    std::remove(output.c_str());
}

TEST_CASE("eval: identical stacks score zero error and write a report") {
    const std::string a = write_stack("eval_a.tif", 32, 32, 5, 5);
    const std::string report = "/tmp/zaug_cli_eval.json";
    std::string out;
    REQUIRE(run_cli({"eval", "--input", a, "--ref", a, "--stride", "1", "--report", report}, &out) == 0);
    CHECK(out.find("rmse 0") != std::string::npos);
    auto j = nlohmann::json::parse(slurp(report));
    CHECK(j["rmse"].get<double>() == 0.0);
    CHECK(j["psnr_db"] == "inf");
    CHECK(j["gaps"].size() == 2);
    CHECK(j.contains("provenance"));
    std::remove(a.c_str());
    std::remove(report.c_str());
}

TEST_CASE("bench: renders model and bicubic rows with runtimes") {
    const std::string model = write_tiny_checkpoint("bench.zckpt", flownet::Mode::fixed);
    const std::string low = write_stack("bench_low.tif", 64, 64, 3, 6);
    // ground truth must have 2*(n-1)+1 slices
    const std::string gt = write_stack("bench_gt.tif", 64, 64, 5, 7);
    const std::string report = "/tmp/zaug_cli_bench.json";
    std::string out;
    REQUIRE(run_cli({"bench", "--model", model, "--input", low, "--ref", gt, "--stride", "1", "--report",
                     report, "--policy", "resize"},
                    &out) == 0);
    CHECK(out.find("model") != std::string::npos);
    CHECK(out.find("bicubic") != std::string::npos);
    CHECK(out.find("Predict(s)") != std::string::npos);
    auto j = nlohmann::json::parse(slurp(report));
    CHECK(j["model"].contains("prediction_seconds"));
    CHECK(j["bicubic"].contains("prediction_seconds"));
    CHECK(j["provenance"].contains("model_hash"));
    std::remove(model.c_str());
    std::remove(low.c_str());
    std::remove(gt.c_str());
    std::remove(report.c_str());
}

TEST_CASE("shape tools: roughness, match, iou run end to end") {
    // labeled mask: one digitized ball
    auto m = volio::VolumeStack::blank(20, 20, 20);
    for (int z = 0; z < 20; ++z)
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x)
                if ((x - 10.0) * (x - 10.0) + (y - 10.0) * (y - 10.0) + (z - 10.0) * (z - 10.0) <= 36.0)
                    m.at(z, y, x) = 1;
    const std::string mask = "/tmp/zaug_cli_mask.tif";
    volio::save_stack(mask, m);

    std::string out;
    SUBCASE("roughness table") {
        const std::string report = "/tmp/zaug_cli_rough.json";
        REQUIRE(run_cli({"roughness", "--input", mask, "--report", report}, &out) == 0);
        auto j = nlohmann::json::parse(slurp(report));
        REQUIRE(j["rows"].size() == 1);
        CHECK(j["rows"][0]["label"] == 1);
        CHECK(j["rows"][0]["Ro"].get<double>() < 0.05);
        CHECK(j.contains("sh_convention"));
        std::remove(report.c_str());
    }
    SUBCASE("match against itself") {
        REQUIRE(run_cli({"match", "--input", mask, "--ref", mask}, &out) == 0);
        CHECK(out.find("label_a") != std::string::npos);
        CHECK(out.find("1  1  ") != std::string::npos);
    }
    SUBCASE("iou of identical masks is 1") {
        REQUIRE(run_cli({"iou", "--input", mask, "--ref", mask}, &out) == 0);
        CHECK(out.find("iou 1") != std::string::npos);
    }
    std::remove(mask.c_str());
}

TEST_CASE("ZAUG_DEVICES supplies the default device count") {
    const std::string stack = write_stack("env_stack.tif", 40, 40, 4, 18);
    nlohmann::json manifest;
    manifest["stacks"] = {{{"path", stack}, {"mode", "fixed"}}};
    const std::string mpath = "/tmp/zaug_cli_env_manifest.json";
    std::ofstream(mpath) << manifest.dump();

    nlohmann::json cfg;  // no device_count key: the env default applies
    cfg["epochs"] = 1;
    cfg["batch_size"] = 3;  // not divisible by 2
    cfg["mode"] = "fixed";
    cfg["widths"] = {8, 8, 8};
    cfg["teacher_width"] = 8;
    cfg["lambda_adv"] = 0.0;
    cfg["out_dir"] = "/tmp/zaug_cli_env_out";
    const std::string cpath = "/tmp/zaug_cli_env_cfg.json";
    std::ofstream(cpath) << cfg.dump();

    setenv("ZAUG_DEVICES", "2", 1);
    std::string out, err;
    const int rc = run_cli({"train", "--config", cpath, "--input", mpath}, &out, &err);
    unsetenv("ZAUG_DEVICES");
    CHECK(rc == 1);  // divisibility guard proves the env default was applied
    CHECK(err.find("not divisible by device_count 2") != std::string::npos);

    std::filesystem::remove_all("/tmp/zaug_cli_env_out");
    std::remove(stack.c_str());
    std::remove(mpath.c_str());
    std::remove(cpath.c_str());
}

TEST_CASE("train: end-to-end from config + manifest" * doctest::timeout(600)) {
    const std::string stack = write_stack("train_stack.tif", 40, 40, 4, 8);
    nlohmann::json manifest;
    manifest["stacks"] = {{{"path", stack}, {"mode", "fixed"}}};
    const std::string mpath = "/tmp/zaug_cli_train_manifest.json";
    std::ofstream(mpath) << manifest.dump();

    nlohmann::json cfg;
    cfg["epochs"] = 1;
    cfg["batch_size"] = 2;
    cfg["lr"] = 1e-4;
    cfg["mode"] = "fixed";
    cfg["widths"] = {8, 8, 8};
    cfg["teacher_width"] = 8;
    cfg["lambda_adv"] = 0.0;
    cfg["seed"] = 5;
    cfg["out_dir"] = "/tmp/zaug_cli_train_out";
    const std::string cpath = "/tmp/zaug_cli_train_cfg.json";
    std::ofstream(cpath) << cfg.dump();
    std::filesystem::remove_all("/tmp/zaug_cli_train_out");

    std::string out, err;
    REQUIRE(run_cli({"train", "--config", cpath, "--input", mpath}, &out, &err) == 0);
    CHECK(out.find("last checkpoint") != std::string::npos);
    CHECK(std::filesystem::exists("/tmp/zaug_cli_train_out/ckpt_epoch_0001.zckpt"));
    CHECK(std::filesystem::exists("/tmp/zaug_cli_train_out/training_log.jsonl"));

    // the checkpoint loads and predicts
    auto ck = serialize::load_checkpoint("/tmp/zaug_cli_train_out/ckpt_epoch_0001.zckpt");
    CHECK(ck.gen.config().widths[0] == 8);

    std::filesystem::remove_all("/tmp/zaug_cli_train_out");
    std::remove(stack.c_str());
    std::remove(mpath.c_str());
    std::remove(cpath.c_str());
}

TEST_SUITE_END();
