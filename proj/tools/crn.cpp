// Copyright (C) 2026 The CRN Authors
// SPDX-License-Identifier: Apache-2.0

// crn: command-line driver for generation, training, captioning, revision
// and evaluation. Run `crn <command> --help` for the flags of each command.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "crn/captioner.hpp"
#include "crn/config.hpp"
#include "crn/error.hpp"
#include "crn/evalbench.hpp"
#include "crn/log.hpp"
#include "crn/pipeline.hpp"
#include "crn/revision.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kParseFailure = 3, kDimensionFailure = 4 };

struct GlobalFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> jobs;
    std::vector<std::string> settings;
};

struct CommandFlags {
    std::string split = "test";
    std::string checkpoint;
    std::string detections;
    std::string captions;
    std::string name;
    std::optional<double> tau_p, tau_s;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<std::string> optimizer;
    std::vector<std::string> variants;
    std::vector<double> grid;
    bool plot_data = false;
};

crn::RunConfig resolve_config(const GlobalFlags& g, const CommandFlags& c) {
    crn::RunConfig cfg;
    if (!g.config_path.empty()) crn::load_config(g.config_path, cfg);
    for (const auto& s : g.settings) {
        auto eq = s.find('=');
        if (eq == std::string::npos) throw crn::Error("--set expects KEY=VALUE, got '" + s + "'");
        auto trim = [](std::string v) {
            v.erase(0, v.find_first_not_of(" \t"));
            v.erase(v.find_last_not_of(" \t") + 1);
            return v;
        };
        crn::apply_setting(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
    if (g.seed) cfg.seed = *g.seed;
    if (g.out) cfg.out_dir = *g.out;
    if (g.jobs) cfg.jobs = *g.jobs;
    if (c.tau_p) cfg.revision.tau_p = *c.tau_p;
    if (c.tau_s) cfg.revision.tau_s = *c.tau_s;
    if (c.epochs) cfg.train.epochs = *c.epochs;
    if (c.lr) cfg.train.learning_rate = *c.lr;
    if (c.optimizer) cfg.train.optimizer = crn::parse_optimizer(*c.optimizer);
    cfg.validate();
    return cfg;
}

fs::path out_path(const crn::RunConfig& cfg, const std::string& file) { return fs::path(cfg.out_dir) / file; }

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw crn::Error("cannot write " + path.string());
    out << text;
    crn::log::info("wrote " + path.string());
}

std::string checkpoint_path(const crn::RunConfig& cfg, const CommandFlags& c) {
    return c.checkpoint.empty() ? out_path(cfg, crn::kCheckpointFile).string() : c.checkpoint;
}

crn::CaptionerParams load_params(const crn::Artifacts& a, const crn::RunConfig& cfg, const CommandFlags& c) {
    const auto path = checkpoint_path(cfg, c);
    if (!fs::exists(path)) throw crn::Error("missing checkpoint " + path + " (run `crn train` first)");
    return crn::load_checkpoint(path, a.dims(cfg));
}

std::string caption_line(std::uint64_t scene_id, const std::vector<std::string>& tokens) {
    json j;
    j["scene_id"] = scene_id;
    j["tokens"] = tokens;
    return j.dump() + "\n";
}

std::vector<std::vector<std::string>> read_captions(const std::string& path, std::span<const crn::Scene> scenes) {
    std::ifstream in(path);
    if (!in) throw crn::Error("missing input file " + path);
    std::vector<std::vector<std::string>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            auto j = json::parse(line);
            const auto id = j.at("scene_id").get<std::uint64_t>();
            if (out.size() >= scenes.size() || scenes[out.size()].scene_id != id) {
                throw crn::Error("caption for scene " + std::to_string(id) + " out of order");
            }
            out.push_back(j.at("tokens").get<std::vector<std::string>>());
        } catch (const std::exception& e) {
            throw crn::ParseError(path, lineno, e.what());
        }
    }
    if (out.size() != scenes.size()) {
        throw crn::Error(path + ": " + std::to_string(out.size()) + " captions for " + std::to_string(scenes.size()) +
                         " scenes");
    }
    return out;
}

std::vector<crn::DetectionSet> read_detection_file(const std::string& path, const crn::Artifacts& a,
                                                   std::span<const crn::Scene> scenes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw crn::Error("missing input file " + path);
    crn::DetectionHeader expect{a.world.config.visual_dim, a.world.num_classes(), a.world.class_names()};
    auto sets = crn::read_detections_jsonl(in, expect, path);
    if (sets.size() != scenes.size()) {
        throw crn::Error(path + ": " + std::to_string(sets.size()) + " detection records for " +
                         std::to_string(scenes.size()) + " scenes");
    }
    return sets;
}

// --- Commands -------------------------------------------------------------------

void cmd_gen(const crn::RunConfig& cfg) {
    auto a = crn::build_artifacts(cfg);
    crn::save_artifacts(a, cfg.out_dir);
    write_file(out_path(cfg, "config.txt"), crn::dump_config(cfg));
    crn::log::info("generated " + std::to_string(a.data.train.size()) + "/" + std::to_string(a.data.val.size()) +
                   "/" + std::to_string(a.data.test.size()) + " scenes into " + cfg.out_dir);
}

void cmd_train(const crn::RunConfig& cfg) {
    auto a = crn::load_artifacts(cfg.out_dir);
    auto result = crn::train_captioner(a, cfg);
    crn::save_checkpoint(result.params, out_path(cfg, crn::kCheckpointFile).string());
    std::string losses = "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        losses += std::to_string(e + 1) + "," + std::to_string(result.epoch_losses[e]) + "\n";
    }
    write_file(out_path(cfg, "train_loss.csv"), losses);
}

void cmd_caption(const crn::RunConfig& cfg, const CommandFlags& c) {
    const auto split = crn::parse_split(c.split);
    auto a = crn::load_artifacts(cfg.out_dir);
    auto params = load_params(a, cfg, c);
    auto setup = crn::make_eval_setup(a, params, split);
    auto run = crn::run_variant(crn::Variant::crn_i, setup, cfg.eval_config());
    std::string text;
    for (std::size_t i = 0; i < setup.scenes.size(); ++i) {
        text += caption_line(setup.scenes[i].scene_id, run.revised[i].primary);
    }
    write_file(out_path(cfg, "captions_" + c.split + ".jsonl"), text);
}

void cmd_revise(const crn::RunConfig& cfg, const CommandFlags& c) {
    const auto split = crn::parse_split(c.split);
    auto a = crn::load_artifacts(cfg.out_dir);
    auto params = load_params(a, cfg, c);
    auto setup = crn::make_eval_setup(a, params, split);
    std::vector<crn::DetectionSet> external;
    if (!c.detections.empty()) {
        external = read_detection_file(c.detections, a, setup.scenes);
        setup.detections = external;
    }
    auto run = crn::run_variant(crn::Variant::crn_full, setup, cfg.eval_config());
    std::string revised, audit;
    for (std::size_t i = 0; i < setup.scenes.size(); ++i) {
        revised += caption_line(setup.scenes[i].scene_id, run.revised[i].final_tokens);
        audit += crn::audit_json(setup.scenes[i].scene_id, run.revised[i]) + "\n";
    }
    write_file(out_path(cfg, "revised_" + c.split + ".jsonl"), revised);
    write_file(out_path(cfg, "audit_" + c.split + ".jsonl"), audit);
}

void cmd_eval(const crn::RunConfig& cfg, const CommandFlags& c) {
    const auto split = crn::parse_split(c.split);
    auto a = crn::load_artifacts(cfg.out_dir);
    const std::string path =
        c.captions.empty() ? out_path(cfg, "revised_" + c.split + ".jsonl").string() : c.captions;
    const auto& scenes = a.data.split(split);
    auto captions = read_captions(path, scenes);
    auto novel = a.novel_words();
    auto report = crn::evaluate_captions(captions, scenes, a.world.class_names(), novel);
    const std::string name = c.name.empty() ? fs::path(path).stem().string() : c.name;
    write_file(out_path(cfg, "metrics_" + name + ".json"), crn::metrics_json(report));
    write_file(out_path(cfg, "metrics_" + name + ".csv"), crn::metrics_csv(report));
    std::cout << "average_f1 " << report.average_f1 << "\nfluency_surrogate " << report.fluency << "\n";
}

void cmd_ablate(const crn::RunConfig& cfg, const CommandFlags& c) {
    const auto split = crn::parse_split(c.split);
    std::vector<crn::Variant> variants;
    for (const auto& v : c.variants) variants.push_back(crn::parse_variant(v));
    if (variants.empty()) variants.assign(crn::all_variants().begin(), crn::all_variants().end());
    auto a = crn::load_artifacts(cfg.out_dir);
    auto params = load_params(a, cfg, c);
    auto setup = crn::make_eval_setup(a, params, split);
    auto rows = crn::run_ablation(variants, setup, cfg.eval_config());
    const auto csv = crn::ablation_csv(rows);
    write_file(out_path(cfg, "ablation.csv"), csv);
    std::cout << csv;
    if (c.plot_data) {
        std::string f1 = "# variant_index average_f1\n", fl = "# variant_index fluency_surrogate\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            f1 += std::to_string(i) + " " + std::to_string(rows[i].average_f1) + "  # " +
                  std::string(crn::variant_name(rows[i].variant)) + "\n";
            fl += std::to_string(i) + " " + std::to_string(rows[i].fluency) + "  # " +
                  std::string(crn::variant_name(rows[i].variant)) + "\n";
        }
        write_file(out_path(cfg, "plot_ablation_f1.dat"), f1);
        write_file(out_path(cfg, "plot_ablation_fluency.dat"), fl);
    }
}

void cmd_sweep(const crn::RunConfig& cfg, const CommandFlags& c) {
    const auto split = crn::parse_split(c.split);
    auto grid = c.grid.empty() ? crn::default_sweep_grid() : c.grid;
    auto a = crn::load_artifacts(cfg.out_dir);
    auto params = load_params(a, cfg, c);
    auto setup = crn::make_eval_setup(a, params, split);
    auto rows = crn::threshold_sweep(grid, setup, cfg.eval_config());
    const auto csv = crn::sweep_csv(rows);
    write_file(out_path(cfg, "sweep.csv"), csv);
    std::cout << csv;
    if (c.plot_data) {
        std::string f1 = "# tau_p average_f1\n", fl = "# tau_p fluency_surrogate\n";
        for (const auto& r : rows) {
            f1 += std::to_string(r.tau_p) + " " + std::to_string(r.average_f1) + "\n";
            fl += std::to_string(r.tau_p) + " " + std::to_string(r.fluency) + "\n";
        }
        write_file(out_path(cfg, "plot_sweep_f1.dat"), f1);
        write_file(out_path(cfg, "plot_sweep_fluency.dat"), fl);
    }
}

void report_error(std::string_view kind, const std::string& message, const crn::ParseError* pe = nullptr) {
    json j;
    j["error"] = kind;
    j["message"] = message;
    if (pe) {
        j["source"] = pe->source();
        j["line"] = pe->line();
    }
    std::cerr << "crn: " << j.dump() << std::endl;
}

} // namespace

int main(int argc, char** argv) {
    const crn::RunConfig defaults;
    GlobalFlags g;
    CommandFlags c;

    CLI::App app{"Desk-scale novel-object captioner: generate, train, caption, revise, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();
    app.add_option("--config", g.config_path, "key = value config file");
    app.add_option("--seed", g.seed, "root seed for every random stream")->default_str(std::to_string(defaults.seed));
    app.add_option("--out", g.out, "input/output directory")->default_str(defaults.out_dir);
    app.add_option("--jobs", g.jobs, "scene-parallel worker threads")->default_str(std::to_string(defaults.jobs));
    app.add_option("--set", g.settings, "override one config key (KEY=VALUE), repeatable");

    auto add_split = [&](CLI::App* sub) {
        sub->add_option("--split", c.split, "dataset split")->check(CLI::IsMember({"train", "val", "test"}));
    };
    auto add_checkpoint = [&](CLI::App* sub) {
        sub->add_option("--checkpoint", c.checkpoint, "checkpoint path")->default_str("<out>/checkpoint.bin");
    };
    auto add_tau_p = [&](CLI::App* sub) {
        sub->add_option("--tau-p", c.tau_p, "perplexity gate")
            ->default_str(std::to_string(defaults.revision.tau_p))
            ->check(CLI::Range(0.0, 1.0));
    };
    auto add_tau_s = [&](CLI::App* sub) {
        sub->add_option("--tau-s", c.tau_s, "semantic acceptance threshold")
            ->default_str(std::to_string(defaults.revision.tau_s))
            ->check(CLI::Range(-1.0, 1.0));
    };

    auto* gen = app.add_subcommand("gen", "generate world, embeddings, dataset and detections");

    auto* train = app.add_subcommand("train", "train the captioner on the train split");
    train->add_option("--epochs", c.epochs, "training epochs")->default_str(std::to_string(defaults.train.epochs));
    train->add_option("--lr", c.lr, "learning rate")->default_str(std::to_string(defaults.train.learning_rate));
    train->add_option("--optimizer", c.optimizer, "adam or sgd")->default_str("adam");

    auto* caption = app.add_subcommand("caption", "write primary captions");
    add_split(caption);
    add_checkpoint(caption);

    auto* revise = app.add_subcommand("revise", "revise primary captions and write an audit log");
    add_split(revise);
    add_checkpoint(revise);
    add_tau_p(revise);
    add_tau_s(revise);
    revise->add_option("--detections", c.detections, "detections JSONL")->default_str("<out>/detections_<split>.jsonl");

    auto* eval = app.add_subcommand("eval", "score a captions file");
    add_split(eval);
    eval->add_option("--captions", c.captions, "captions JSONL")->default_str("<out>/revised_<split>.jsonl");
    eval->add_option("--name", c.name, "report name suffix")->default_str("<captions file stem>");

    auto* ablate = app.add_subcommand("ablate", "run the variant table");
    add_split(ablate);
    add_checkpoint(ablate);
    add_tau_p(ablate);
    add_tau_s(ablate);
    ablate->add_option("--variants", c.variants, "variants to run")->default_str("all")->delimiter(',');
    ablate->add_flag("--plot-data", c.plot_data, "also write (x, y) series files");

    auto* sweep = app.add_subcommand("sweep", "sweep the perplexity gate");
    add_split(sweep);
    add_checkpoint(sweep);
    add_tau_s(sweep);
    sweep->add_option("--grid", c.grid, "tau_p values")->default_str("0,0.05,...,0.95")->delimiter(',');
    sweep->add_flag("--plot-data", c.plot_data, "also write (x, y) series files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const auto cfg = resolve_config(g, c);
        if (gen->parsed()) cmd_gen(cfg);
        else if (train->parsed()) cmd_train(cfg);
        else if (caption->parsed()) cmd_caption(cfg, c);
        else if (revise->parsed()) cmd_revise(cfg, c);
        else if (eval->parsed()) cmd_eval(cfg, c);
        else if (ablate->parsed()) cmd_ablate(cfg, c);
        else if (sweep->parsed()) cmd_sweep(cfg, c);
    } catch (const crn::ParseError& e) {
        report_error("parse", e.what(), &e);
        return kParseFailure;
    } catch (const crn::DimensionError& e) {
        report_error("dimension", e.what());
        return kDimensionFailure;
    } catch (const std::exception& e) {
        report_error("failure", e.what());
        return kFailure;
    }
    return kOk;
}
