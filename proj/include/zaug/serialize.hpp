#ifndef ZAUG_SERIALIZE_HPP
#define ZAUG_SERIALIZE_HPP

#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "zaug/critic.hpp"
#include "zaug/flownet.hpp"

// Versioned checkpoint container: one JSON manifest (mode, widths, parameter
// counts, config hash) followed by raw little-endian doubles in declared
// parameter order. Generator and critic live in distinct sections; a
// prediction-only checkpoint simply omits the critic.

namespace zaug::serialize {

using nlohmann::json;

constexpr char kMagic[8] = {'Z', 'A', 'U', 'G', 'C', 'K', 'P', '1'};
constexpr int kVersion = 1;

inline json gen_config_to_json(const flownet::GenConfig& c) {
    return json{{"mode", flownet::mode_name(c.mode)},
                {"widths", {c.widths[0], c.widths[1], c.widths[2]}},
                {"teacher_width", c.teacher_width},
                {"scales", {c.scales[0], c.scales[1], c.scales[2]}},
                {"teacher_full_backprop", c.teacher_full_backprop}};
}

inline flownet::GenConfig gen_config_from_json(const json& j) {
    flownet::GenConfig c;
    c.mode = flownet::mode_from_name(j.at("mode").get<std::string>());
    for (int i = 0; i < 3; ++i) {
        c.widths[static_cast<std::size_t>(i)] = j.at("widths")[static_cast<std::size_t>(i)].get<int>();
        c.scales[static_cast<std::size_t>(i)] = j.at("scales")[static_cast<std::size_t>(i)].get<int>();
    }
    c.teacher_width = j.at("teacher_width").get<int>();
    c.teacher_full_backprop = j.value("teacher_full_backprop", true);
    return c;
}

inline std::string weights_hash(const nn::ParamList& params) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, v] : params.items)
        h = fnv1a64(v->val.data(), v->val.numel() * sizeof(double), h);
    return hex64(h);
}

inline void save_checkpoint(const std::string& path, const flownet::Generator& gen,
                            const critic::CriticNet* crit, const std::string& config_hash, int epoch,
                            const json& extra = json::object()) {
    json manifest;
    manifest["format"] = "zaug-checkpoint";
    manifest["version"] = kVersion;
    manifest["toolkit"] = std::string(kToolkitName) + " " + kToolkitVersion;
    manifest["generator"] = gen_config_to_json(gen.config());
    manifest["generator"]["param_count_student"] = gen.student_param_count();
    manifest["generator"]["param_count_total"] = gen.total_param_count();
    if (crit) {
        manifest["critic"] = {{"base", crit->config().base},
                              {"leaky_slope", crit->config().leaky_slope},
                              {"param_count", crit->param_count()}};
    }
    manifest["config_hash"] = config_hash;
    manifest["epoch"] = epoch;
    for (auto it = extra.begin(); it != extra.end(); ++it) manifest[it.key()] = it.value();

    nn::ParamList all = gen.all_params();
    if (crit) {
        nn::ParamList cp = crit->params();
        for (auto& item : cp.items) all.items.push_back(std::move(item));
    }
    manifest["weights_hash"] = weights_hash(all);
    json tensors = json::array();
    for (const auto& [name, v] : all.items)
        tensors.push_back({{"name", name}, {"shape", {v->val.n(), v->val.c(), v->val.h(), v->val.w()}}});
    manifest["tensors"] = tensors;

    const std::string header = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    ZAUG_CHECK(out.good(), "cannot write checkpoint: ", path);
    out.write(kMagic, 8);
    const std::uint64_t hlen = header.size();
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, v] : all.items)
        out.write(reinterpret_cast<const char*>(v->val.data()),
                  static_cast<std::streamsize>(v->val.numel() * sizeof(double)));
    ZAUG_CHECK(out.good(), "checkpoint write failed: ", path);
}

struct Checkpoint {
    flownet::Generator gen;
    std::optional<critic::CriticNet> crit;
    json manifest;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    ZAUG_CHECK(in.good(), "cannot open checkpoint: ", path);
    char magic[8];
    in.read(magic, 8);
    ZAUG_CHECK(in.good() && std::memcmp(magic, kMagic, 8) == 0, "not a checkpoint file: ", path);
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    ZAUG_CHECK(in.good(), "checkpoint header truncated: ", path);
    json manifest = json::parse(header, nullptr, false);
    ZAUG_CHECK(!manifest.is_discarded(), "checkpoint manifest is not valid JSON: ", path);
    ZAUG_CHECK(manifest.value("version", -1) == kVersion, "unsupported checkpoint version in ", path);

    Checkpoint ck{flownet::Generator(gen_config_from_json(manifest.at("generator")), 0), std::nullopt,
                  manifest};
    if (manifest.contains("critic") && !manifest["critic"].is_null()) {
        critic::CriticConfig cc;
        cc.base = manifest["critic"].at("base").get<int>();
        cc.leaky_slope = manifest["critic"].value("leaky_slope", 0.2);
        ck.crit.emplace(cc, 0);
    }

    nn::ParamList all = ck.gen.all_params();
    if (ck.crit) {
        nn::ParamList cp = ck.crit->params();
        for (auto& item : cp.items) all.items.push_back(std::move(item));
    }
    const auto& tensors = manifest.at("tensors");
    ZAUG_CHECK(tensors.size() == all.items.size(), "checkpoint manifest mismatch: ", tensors.size(),
               " tensors declared, model expects ", all.items.size());
    for (std::size_t i = 0; i < all.items.size(); ++i) {
        auto& [name, v] = all.items[i];
        const auto& t = tensors[i];
        ZAUG_CHECK(t.at("name").get<std::string>() == name, "checkpoint manifest mismatch at tensor ", i,
                   ": '", t.at("name").get<std::string>(), "' vs expected '", name, "'");
        const auto& sh = t.at("shape");
        ZAUG_CHECK(sh[0].get<int>() == v->val.n() && sh[1].get<int>() == v->val.c() &&
                       sh[2].get<int>() == v->val.h() && sh[3].get<int>() == v->val.w(),
                   "checkpoint manifest mismatch: tensor '", name, "' shape differs");
        in.read(reinterpret_cast<char*>(v->val.data()),
                static_cast<std::streamsize>(v->val.numel() * sizeof(double)));
        ZAUG_CHECK(in.good(), "checkpoint payload truncated at tensor '", name, "'");
    }

    const std::string declared = manifest.value("weights_hash", "");
    if (!declared.empty())
        ZAUG_CHECK(weights_hash(all) == declared, "checkpoint weight hash mismatch (corrupt file?): ", path);
    return ck;
}

inline std::string model_hash(const flownet::Generator& gen) { return weights_hash(gen.all_params()); }

}  // namespace zaug::serialize

#endif
