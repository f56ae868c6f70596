// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

#include "crn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>

#include "crn/error.hpp"

namespace crn {

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
    T out{};
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw Error("bad value '" + std::string(v) + "' for " + std::string(key));
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("bad boolean '" + std::string(v) + "' for " + std::string(key));
}

std::vector<std::string> parse_list(std::string_view v) {
    std::vector<std::string> out;
    while (!v.empty()) {
        auto comma = v.find(',');
        auto item = trim(v.substr(0, comma));
        if (!item.empty()) out.emplace_back(item);
        if (comma == std::string_view::npos) break;
        v.remove_prefix(comma + 1);
    }
    return out;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    return out;
}

std::string num(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

struct Field {
    std::string_view key;
    std::function<void(RunConfig&, std::string_view, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define CRN_SIZE(KEY, MEMBER)                                                                            \
    Field{KEY, [](RunConfig& c, std::string_view k, std::string_view v) {                                \
              c.MEMBER = parse_number<std::size_t>(k, v); },                                             \
          [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define CRN_U64(KEY, MEMBER)                                                                             \
    Field{KEY, [](RunConfig& c, std::string_view k, std::string_view v) {                                \
              c.MEMBER = parse_number<std::uint64_t>(k, v); },                                           \
          [](const RunConfig& c) { return std::to_string(c.MEMBER); }}
#define CRN_REAL(KEY, MEMBER)                                                                            \
    Field{KEY, [](RunConfig& c, std::string_view k, std::string_view v) {                                \
              c.MEMBER = parse_number<double>(k, v); },                                                  \
          [](const RunConfig& c) { return num(c.MEMBER); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        CRN_U64("seed", seed),
        Field{"out", [](RunConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); },
              [](const RunConfig& c) { return c.out_dir; }},
        CRN_SIZE("jobs", jobs),
        CRN_SIZE("world.num_classes", world.num_classes),
        CRN_SIZE("world.num_categories", world.num_categories),
        CRN_SIZE("world.visual_dim", world.visual_dim),
        CRN_SIZE("world.embed_dim", world.embed_dim),
        CRN_SIZE("world.image_dim", world.image_dim),
        CRN_REAL("world.embed_spread", world.embed_spread),
        CRN_REAL("world.visual_spread", world.visual_spread),
        CRN_REAL("world.image_noise", world.image_noise),
        CRN_SIZE("data.train_scenes", data.train_scenes),
        CRN_SIZE("data.val_scenes", data.val_scenes),
        CRN_SIZE("data.test_scenes", data.test_scenes),
        CRN_SIZE("data.max_objects", data.max_objects),
        CRN_SIZE("data.captions_per_scene", data.captions_per_scene),
        Field{"data.held_out",
              [](RunConfig& c, std::string_view, std::string_view v) { c.data.held_out = parse_list(v); },
              [](const RunConfig& c) { return join(c.data.held_out); }},
        Field{"data.pseudo_sources",
              [](RunConfig& c, std::string_view, std::string_view v) { c.data.pseudo_sources = parse_list(v); },
              [](const RunConfig& c) { return join(c.data.pseudo_sources); }},
        CRN_SIZE("data.num_held_out", data.num_held_out),
        CRN_SIZE("data.num_pseudo_sources", data.num_pseudo_sources),
        CRN_REAL("detector.miss_rate", detector.miss_rate),
        CRN_REAL("detector.confusion_rate", detector.confusion_rate),
        CRN_REAL("detector.feature_sigma", detector.feature_sigma),
        CRN_SIZE("model.hidden", hidden_dim),
        CRN_REAL("train.lr", train.learning_rate),
        Field{"train.optimizer",
              [](RunConfig& c, std::string_view, std::string_view v) { c.train.optimizer = parse_optimizer(v); },
              [](const RunConfig& c) { return std::string(optimizer_name(c.train.optimizer)); }},
        CRN_SIZE("train.epochs", train.epochs),
        CRN_SIZE("train.batch_size", train.batch_size),
        CRN_REAL("train.clip_norm", train.clip_norm),
        CRN_REAL("train.lambda_det", train.lambda_det),
        CRN_REAL("train.beta1", train.beta1),
        CRN_REAL("train.beta2", train.beta2),
        CRN_REAL("train.epsilon", train.epsilon),
        CRN_REAL("revision.tau_p", revision.tau_p),
        CRN_REAL("revision.tau_s", revision.tau_s),
        Field{"revision.dedup",
              [](RunConfig& c, std::string_view k, std::string_view v) { c.revision.dedup = parse_bool(k, v); },
              [](const RunConfig& c) { return std::string(c.revision.dedup ? "true" : "false"); }},
        CRN_REAL("eval.feedback_tau_p", feedback_tau_p),
        CRN_SIZE("eval.max_len", max_len),
        CRN_SIZE("eval.fixed_positions", fixed_positions),
    };
    return all;
}

#undef CRN_SIZE
#undef CRN_U64
#undef CRN_REAL

} // namespace

void RunConfig::validate() const {
    world.validate();
    detector.validate();
    train.validate();
    revision.validate();
    if (jobs == 0) throw Error("config: jobs must be at least 1");
    if (hidden_dim == 0) throw Error("config: model.hidden must be at least 1");
    if (!(feedback_tau_p >= 0.0 && feedback_tau_p <= 1.0)) throw Error("config: eval.feedback_tau_p must lie in [0, 1]");
    if (max_len == 0) throw Error("config: eval.max_len must be at least 1");
    if (data.max_objects == 0) throw Error("config: data.max_objects must be at least 1");
    if (data.captions_per_scene == 0) throw Error("config: data.captions_per_scene must be at least 1");
}

EvalConfig RunConfig::eval_config() const {
    EvalConfig e;
    e.revision = revision;
    e.feedback_tau_p = feedback_tau_p;
    e.max_len = max_len;
    e.seed = seed;
    e.jobs = jobs;
    e.fixed_positions = fixed_positions;
    return e;
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(cfg, key, value);
            return;
        }
    }
    throw Error("unknown config key '" + std::string(key) + "'");
}

void read_config(std::istream& in, RunConfig& cfg, const std::string& source) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view v = line;
        if (auto hash = v.find('#'); hash != std::string_view::npos) v = v.substr(0, hash);
        v = trim(v);
        if (v.empty()) continue;
        const auto eq = v.find('=');
        if (eq == std::string_view::npos) throw ParseError(source, lineno, "expected 'key = value'");
        const auto key = trim(v.substr(0, eq));
        const auto value = trim(v.substr(eq + 1));
        if (key.empty()) throw ParseError(source, lineno, "empty key");
        try {
            apply_setting(cfg, key, value);
        } catch (const ParseError&) {
            throw;
        } catch (const Error& e) {
            throw ParseError(source, lineno, e.what());
        }
    }
}

void load_config(const std::string& path, RunConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    read_config(in, cfg, path);
}

std::string dump_config(const RunConfig& cfg) {
    std::ostringstream os;
    for (const auto& f : fields()) os << f.key << " = " << f.get(cfg) << '\n';
    return os.str();
}

} // namespace crn
