#ifndef ZAUG_CLI_HPP
#define ZAUG_CLI_HPP

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zaug/shapelab.hpp"
#include "zaug/trainer.hpp"
#include "zaug/zaugment.hpp"

// Single entry point orchestrating the pipelines: train, predict, eval,
// bench, roughness, match, iou, triplets-dryrun. One config file drives
// training; individual CLI flags override config keys.

namespace zaug::cli {

using nlohmann::json;

namespace detail {

inline std::vector<double> parse_zs(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw Error("cannot parse relative distance '" + item + "'");
        }
    }
    return out;
}

inline int env_default_devices() {
    // the only environment knob: default device count
    if (const char* v = std::getenv("ZAUG_DEVICES")) {
        const int n = std::atoi(v);
        if (n >= 1) return n;
    }
    return 1;
}

inline json provenance(const std::string& config_hash, const std::string& model_hash) {
    json j;
    j["toolkit"] = std::string(kToolkitName) + " " + kToolkitVersion;
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    if (!model_hash.empty()) j["model_hash"] = model_hash;
    return j;
}

inline void write_report(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    ZAUG_CHECK(out.good(), "cannot write report: ", path);
    out << j.dump(2) << "\n";
}

inline double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
    CLI::App app{"self-supervised axial super-resolution for volumetric image stacks"};
    app.require_subcommand(1);

    // ---- train -------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a model from a config file and dataset manifest");
    std::string t_config, t_data, t_out;
    std::int64_t t_seed = -1;
    int t_devices = 0;
    train_cmd->add_option("--config", t_config, "training config (JSON)")->required();
    train_cmd->add_option("--input", t_data, "dataset manifest (JSON); overrides the config's data key");
    train_cmd->add_option("--output", t_out, "output directory override");
    train_cmd->add_option("--seed", t_seed, "seed override");
    train_cmd->add_option("--devices", t_devices, "device count override (env ZAUG_DEVICES sets the default)");

    // ---- predict -----------------------------------------------------------
    auto* predict_cmd = app.add_subcommand("predict", "interpolate a stack with a trained model");
    std::string p_model, p_input, p_output, p_zs, p_policy = "tile";
    int p_passes = 1;
    predict_cmd->add_option("--model", p_model, "checkpoint file")->required();
    predict_cmd->add_option("--input", p_input, "input stack (multi-page TIFF)")->required();
    predict_cmd->add_option("--output", p_output, "output stack path")->required();
    predict_cmd->add_option("--passes", p_passes, "doubling passes (fixed-distance models)");
    predict_cmd->add_option("--zs", p_zs, "comma-separated relative distances (plus models)");
    predict_cmd->add_option("--policy", p_policy, "native-size handling: tile | resize")
        ->check(CLI::IsMember({"tile", "resize"}));

    // ---- eval ----------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "score an interpolated stack against ground truth");
    std::string e_input, e_ref, e_report;
    int e_stride = 1;
    bool e_fid = false;
    eval_cmd->add_option("--input", e_input, "predicted stack")->required();
    eval_cmd->add_option("--ref", e_ref, "ground-truth stack")->required();
    eval_cmd->add_option("--stride", e_stride, "generated slices per gap (1, 3 or 7)");
    eval_cmd->add_option("--report", e_report, "write the JSON report here");
    eval_cmd->add_flag("--fid", e_fid, "also compute the feature-distribution distance");

    // ---- bench ---------------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "model vs cubic baseline with runtimes");
    std::string b_model, b_input, b_ref, b_report;
    int b_stride = 1;
    bool b_fid = false;
    std::string b_policy = "tile";
    bench_cmd->add_option("--model", b_model, "checkpoint file")->required();
    bench_cmd->add_option("--input", b_input, "low-resolution stack")->required();
    bench_cmd->add_option("--ref", b_ref, "ground-truth stack")->required();
    bench_cmd->add_option("--stride", b_stride, "generated slices per gap (1, 3 or 7)");
    bench_cmd->add_option("--report", b_report, "write the JSON report here");
    bench_cmd->add_flag("--fid", b_fid, "also compute feature-distribution distances");
    bench_cmd->add_option("--policy", b_policy, "native-size handling: tile | resize")
        ->check(CLI::IsMember({"tile", "resize"}));

    // ---- roughness -----------------------------------------------------------
    auto* rough_cmd = app.add_subcommand("roughness", "spherical-harmonic roughness per labeled object");
    std::string r_input, r_report, r_spacing;
    rough_cmd->add_option("--input", r_input, "labeled mask (integer multi-page TIFF)")->required();
    rough_cmd->add_option("--report", r_report, "write the JSON table here");
    rough_cmd->add_option("--spacing", r_spacing, "voxel spacing dx,dy,dz (defaults to stack metadata)");

    // ---- match -----------------------------------------------------------------
    auto* match_cmd = app.add_subcommand("match", "match labels between two masks by maximal overlap");
    std::string m_input, m_ref, m_report;
    match_cmd->add_option("--input", m_input, "mask A")->required();
    match_cmd->add_option("--ref", m_ref, "mask B")->required();
    match_cmd->add_option("--report", m_report, "write the JSON table here");

    // ---- iou -------------------------------------------------------------------
    auto* iou_cmd = app.add_subcommand("iou", "IoU of two masks after dilation and smoothing");
    std::string i_input, i_ref;
    int i_dilate = 2;
    double i_sigma = 1.0, i_threshold = 0.5;
    iou_cmd->add_option("--input", i_input, "mask A")->required();
    iou_cmd->add_option("--ref", i_ref, "mask B")->required();
    iou_cmd->add_option("--dilate", i_dilate, "ball dilation radius");
    iou_cmd->add_option("--sigma", i_sigma, "Gaussian smoothing sigma");
    iou_cmd->add_option("--threshold", i_threshold, "re-binarization threshold");

    // ---- triplets-dryrun ---------------------------------------------------------
    auto* dry_cmd = app.add_subcommand("triplets-dryrun", "print triplet counts per stack for a manifest");
    std::string d_input;
    dry_cmd->add_option("--input", d_input, "dataset manifest (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) {
            err << "error: usage: " << e.what() << "\n";
            err << app.help();
            return e.get_exit_code();
        }
        out << app.help();
        return 0;
    }

    try {
        if (*train_cmd) {
            auto cfg = trainer::load_train_config(t_config);
            std::ifstream cf(t_config);
            json cj;
            cf >> cj;
            std::string data_path = t_data.empty() ? cj.value("data", "") : t_data;
            ZAUG_CHECK(!data_path.empty(), "train: no dataset manifest (give --input or a 'data' config key)");
            if (t_seed >= 0) cfg.seed = static_cast<std::uint64_t>(t_seed);
            cfg.device_count = t_devices > 0 ? t_devices : (cj.contains("device_count")
                                                                ? cfg.device_count
                                                                : detail::env_default_devices());
            if (!t_out.empty()) cfg.out_dir = t_out;

            auto manifest = triplets::DatasetManifest::load(data_path);
            auto dataset = triplets::build_dataset(manifest, volio::FramePolicy::resize, err);
            auto res = trainer::train(cfg, dataset, err);
            out << "trained " << res.steps << " steps (" << res.critic_updates
                << " critic updates); last checkpoint: " << res.last_checkpoint << "\n";
            out << "training log: " << res.log_path << "\n";
            return 0;
        }

        if (*predict_cmd) {
            auto ck = serialize::load_checkpoint(p_model);
            auto raw = volio::load_stack(p_input);
            zaugment::AugmentRequest req;
            req.options.policy = p_policy == "tile" ? volio::FramePolicy::tile : volio::FramePolicy::resize;
            if (!p_zs.empty())
                req.zs = detail::parse_zs(p_zs);
            else
                req.passes = p_passes;
            ZAUG_CHECK(ck.gen.config().mode == flownet::Mode::plus ? !req.zs.empty() : req.zs.empty(),
                       "predict: fixed-distance models take --passes, plus models take --zs");
            auto result = zaugment::augment_volume(ck.gen, raw, req, err);

            json prov = detail::provenance(ck.manifest.value("config_hash", ""),
                                           ck.manifest.value("weights_hash", ""));
            if (!req.zs.empty())
                prov["zs"] = req.zs;
            else
                prov["passes"] = req.passes;
            volio::save_stack(p_output, result, json{{"provenance", prov}});
            out << "wrote " << p_output << " (" << result.depth << " slices)\n";
            if (auto plan = zaugment::tile_plan_for(raw, req.options)) {
                const std::string sidecar = p_output + ".tiles.json";
                volio::save_tile_manifest(sidecar, *plan);
                out << "tile offsets: " << sidecar << "\n";
            }
            return 0;
        }

        if (*eval_cmd) {
            auto pred = volio::load_stack(e_input);
            auto gt = volio::load_stack(e_ref);
            auto rep = evalkit::interstack_report(pred, gt, e_stride);
            rep.dataset_id = e_ref;
            rep.model_id = e_input;
            if (e_fid) {
                std::vector<Tensor> pa, pb;
                for (int g = 0; g < static_cast<int>(rep.gaps.size()); ++g)
                    for (int j = 1; j <= e_stride; ++j) {
                        const int z = g * (e_stride + 1) + j;
                        pa.push_back(pred.slice_tensor(z));
                        pb.push_back(gt.slice_tensor(z));
                    }
                rep.fid = evalkit::fid(pa, pb);
            }
            json j = rep.to_json();
            j["provenance"] = detail::provenance("", "");
            if (!e_report.empty()) detail::write_report(e_report, j);
            out << "rmse " << rep.rmse << "  psnr "
                << (std::isinf(rep.psnr_db) ? std::string("inf") : std::to_string(rep.psnr_db)) << "  ssim "
                << rep.ssim;
            if (rep.fid) out << "  fid " << rep.fid->value;
            out << "\n";
            return 0;
        }

        if (*bench_cmd) {
            ZAUG_CHECK(b_stride == 1 || b_stride == 3 || b_stride == 7,
                       "bench: stride must be 1, 3 or 7 (2-, 4- or 8-fold)");
            const int factor = b_stride + 1;
            const int passes = factor == 2 ? 1 : (factor == 4 ? 2 : 3);
            auto ck = serialize::load_checkpoint(b_model);
            auto low = volio::load_stack(b_input);
            auto gt = volio::load_stack(b_ref);

            zaugment::AugmentRequest req;
            req.passes = passes;
            req.options.policy = b_policy == "tile" ? volio::FramePolicy::tile : volio::FramePolicy::resize;
            if (ck.gen.config().mode == flownet::Mode::plus) {
                req.zs.clear();
                for (int j = 1; j < factor; ++j) req.zs.push_back(static_cast<double>(j) / factor);
            }
            auto t0 = std::chrono::steady_clock::now();
            auto model_out = zaugment::augment_volume(ck.gen, low, req, err);
            const double model_time = detail::seconds_since(t0);

            t0 = std::chrono::steady_clock::now();
            auto cubic_out = evalkit::bicubic_z(low, factor, err);
            const double cubic_time = detail::seconds_since(t0);

            auto model_rep = evalkit::interstack_report(model_out, gt, b_stride);
            auto cubic_rep = evalkit::interstack_report(cubic_out, gt, b_stride);
            if (b_fid) {
                auto slices = [&](const volio::VolumeStack& s) {
                    std::vector<Tensor> v;
                    for (int g = 0; g * (b_stride + 1) + b_stride < s.depth; ++g)
                        for (int j = 1; j <= b_stride; ++j) v.push_back(s.slice_tensor(g * (b_stride + 1) + j));
                    return v;
                };
                auto gt_slices = slices(gt);
                model_rep.fid = evalkit::fid(slices(model_out), gt_slices);
                cubic_rep.fid = evalkit::fid(slices(cubic_out), gt_slices);
            }

            std::optional<double> train_s;
            if (ck.manifest.contains("training_seconds"))
                train_s = ck.manifest["training_seconds"].get<double>();
            std::vector<evalkit::BenchRow> rows;
            rows.push_back({"model", static_cast<double>(ck.gen.student_param_count()) / 1e6, train_s,
                            model_time, model_rep.rmse, model_rep.psnr_db, model_rep.ssim,
                            model_rep.fid ? std::optional<double>(model_rep.fid->value) : std::nullopt});
            rows.push_back({"bicubic", 0.0, std::nullopt, cubic_time, cubic_rep.rmse, cubic_rep.psnr_db,
                            cubic_rep.ssim,
                            cubic_rep.fid ? std::optional<double>(cubic_rep.fid->value) : std::nullopt});
            out << evalkit::render_bench_table(rows);

            if (!b_report.empty()) {
                json j;
                j["model"] = model_rep.to_json();
                j["bicubic"] = cubic_rep.to_json();
                j["model"]["prediction_seconds"] = model_time;
                if (train_s) j["model"]["training_seconds"] = *train_s;
                j["bicubic"]["prediction_seconds"] = cubic_time;
                j["provenance"] = detail::provenance(ck.manifest.value("config_hash", ""),
                                                     ck.manifest.value("weights_hash", ""));
                detail::write_report(b_report, j);
            }
            return 0;
        }

        if (*rough_cmd) {
            auto mask = volio::load_stack(r_input);
            std::array<double, 3> spacing{1, 1, 1};
            if (!r_spacing.empty()) {
                auto v = detail::parse_zs(r_spacing);
                ZAUG_CHECK(v.size() == 3, "roughness: --spacing expects dx,dy,dz");
                spacing = {v[0], v[1], v[2]};
            } else if (mask.spacing) {
                spacing = *mask.spacing;
            }
            std::vector<std::pair<int, std::string>> skipped;
            auto rows = shapelab::roughness_table(mask, spacing, &skipped, err);
            out << "label  mean_radius  P0..P5  Ro\n";
            json jrows = json::array();
            for (const auto& r : rows) {
                out << r.label << "  " << r.mean_radius << "  ";
                for (double p : r.power) out << p << " ";
                out << " " << r.ro << "\n";
                jrows.push_back(r.to_json());
            }
            for (const auto& [label, why] : skipped) err << "skipped label " << label << ": " << why << "\n";
            if (!r_report.empty()) {
                json j;
                j["rows"] = jrows;
                j["sh_convention"] = "real orthonormal basis, Condon-Shortley phase omitted, l_max 5";
                j["spacing_um"] = {spacing[0], spacing[1], spacing[2]};
                j["provenance"] = detail::provenance("", "");
                detail::write_report(r_report, j);
            }
            return 0;
        }

        if (*match_cmd) {
            auto a = volio::load_stack(m_input);
            auto b = volio::load_stack(m_ref);
            auto rows = shapelab::match_labels(a, b);
            out << "label_a  label_b  vol_a  vol_b  overlap  flags\n";
            json jrows = json::array();
            for (const auto& r : rows) {
                out << r.label_a << "  " << r.label_b << "  " << r.vol_a << "  " << r.vol_b << "  "
                    << r.overlap << "  " << (r.matched ? "" : "unmatched") << (r.tied ? " tied" : "") << "\n";
                jrows.push_back(r.to_json());
            }
            if (!m_report.empty()) {
                json j;
                j["rows"] = jrows;
                j["provenance"] = detail::provenance("", "");
                detail::write_report(m_report, j);
            }
            return 0;
        }

        if (*iou_cmd) {
            auto a = volio::load_stack(i_input);
            auto b = volio::load_stack(i_ref);
            auto r = shapelab::smoothed_iou(a, b, i_dilate, i_sigma, i_threshold);
            out << "iou " << r.value << (r.both_empty ? " (both masks empty after processing)" : "") << "\n";
            return 0;
        }

        if (*dry_cmd) {
            auto manifest = triplets::DatasetManifest::load(d_input);
            auto rows = triplets::dataset_dryrun(manifest);
            std::size_t total = 0;
            for (const auto& r : rows) {
                out << r.path << "  mode=" << r.mode << "  depth=" << r.depth
                    << "  triplets=" << r.triplet_count << "\n";
                total += r.triplet_count;
            }
            out << "total triplets: " << total << "\n";
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace zaug::cli

#endif
