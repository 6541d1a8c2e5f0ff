#include "fewshot/commands.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fewshot/errors.hpp"
#include "fewshot/eval_harness.hpp"

namespace fewshot::cli {

namespace {

// subsystem seed tags, all derived from the one master seed
constexpr std::uint64_t kSeedSynthetic = 0xA1;
constexpr std::uint64_t kSeedInit = 0xA2;
constexpr std::uint64_t kSeedTrain = 0xA3;
constexpr std::uint64_t kSeedEval = 0xA4;

namespace fs = std::filesystem;

void ensure_output_dir(const RunConfig& cfg) {
    std::error_code ec;
    fs::create_directories(cfg.output_dir, ec);
    if (ec) throw data_error("cannot create output directory " + cfg.output_dir + ": " + ec.message());
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
    return (fs::path(cfg.output_dir) / name).string();
}

// timestamps live here and only here, so every other artifact is
// byte-reproducible
void write_run_meta(const RunConfig& cfg, const std::string& command) {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    nlohmann::json meta{{"command", command},
                        {"timestamp", stamp},
                        {"fingerprint", fingerprint_of(cfg.json)}};
    std::ofstream out(out_path(cfg, "run_meta.json"), std::ios::binary);
    if (!out) throw data_error("cannot write run_meta.json");
    out << meta.dump(2) << "\n";
}

struct ResolvedData {
    std::optional<Dataset> train;
    std::optional<Dataset> eval;
};

ResolvedData resolve_data(const RunConfig& cfg, bool need_train, bool need_eval) {
    ResolvedData out;

    if (cfg.data.synthetic) {
        SyntheticSpec spec = *cfg.data.synthetic;
        if (!cfg.data.synthetic_seed_explicit) spec.seed = derive_seed(cfg.seed, kSeedSynthetic);
        Dataset full = generate_synthetic(spec);

        std::vector<std::string> train_rel, eval_rel;
        if (cfg.data.train_relations || cfg.data.eval_relations) {
            if (cfg.data.train_relations) train_rel = *cfg.data.train_relations;
            if (cfg.data.eval_relations) eval_rel = *cfg.data.eval_relations;
        } else {
            // default: first half of the relations train, second half eval
            const auto ids = full.relation_ids();
            const std::size_t half = (ids.size() + 1) / 2;
            train_rel.assign(ids.begin(), ids.begin() + half);
            eval_rel.assign(ids.begin() + half, ids.end());
        }
        if (need_train) {
            if (train_rel.empty()) throw data_error("no train relations configured");
            out.train = full.restricted_to(train_rel);
        }
        if (need_eval) {
            if (eval_rel.empty()) throw data_error("no eval relations configured");
            out.eval = full.restricted_to(eval_rel);
        }
        return out;
    }

    std::optional<Vocabulary> vocab;
    if (cfg.data.vocab_path) vocab = Vocabulary::load(*cfg.data.vocab_path);

    if (need_train) {
        if (!cfg.data.train_path) throw data_error("config data.train is required for this command");
        out.train = load_fewrel(*cfg.data.train_path, vocab);
        if (cfg.data.train_relations) out.train = out.train->restricted_to(*cfg.data.train_relations);
        if (!vocab) vocab = out.train->vocab;  // eval shares the training vocabulary
    }
    if (need_eval) {
        if (!cfg.data.eval_path) throw data_error("config data.eval is required for this command");
        out.eval = load_fewrel(*cfg.data.eval_path, vocab);
        if (cfg.data.eval_relations) out.eval = out.eval->restricted_to(*cfg.data.eval_relations);
    }
    return out;
}

EncoderParams initial_encoder(const RunConfig& cfg, std::size_t vocab_size) {
    EncoderConfig ec = EncoderConfig::preset(cfg.encoder_preset, vocab_size, cfg.max_len);
    ec.dropout_rate = cfg.dropout_rate;
    return init_encoder(ec, derive_seed(cfg.seed, kSeedInit));
}

void write_train_log(const std::string& path, const std::vector<MetaTrainRecord>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write training log: " + path);
    for (const auto& r : log) {
        nlohmann::json j{{"episode", r.episode}, {"ce", r.loss.ce},      {"reg", r.loss.reg},
                         {"cl", r.loss.cl},      {"total", r.loss.total}, {"query_acc", r.query_acc}};
        out << j.dump() << "\n";
    }
}

EvalOptions eval_options(const RunConfig& cfg) {
    EvalOptions opts;
    opts.protocol = cfg.protocol;
    opts.n_episodes = cfg.eval_episodes;
    opts.seed = derive_seed(cfg.seed, kSeedEval);
    opts.threads = cfg.threads;
    opts.config = cfg.json;
    opts.fingerprint = fingerprint_of(cfg.json);
    if (cfg.episode_dump) opts.episode_dump_path = *cfg.episode_dump;
    return opts;
}

// --- subcommands -----------------------------------------------------------

void cmd_make_synthetic(const RunConfig& cfg, std::ostream& out) {
    if (!cfg.data.synthetic) throw config_error("make-synthetic needs config data.synthetic");
    SyntheticSpec spec = *cfg.data.synthetic;
    if (!cfg.data.synthetic_seed_explicit) spec.seed = derive_seed(cfg.seed, kSeedSynthetic);
    ensure_output_dir(cfg);

    const auto doc = synthetic_fewrel_json(spec);
    const auto data_path = out_path(cfg, "synthetic.json");
    {
        std::ofstream f(data_path, std::ios::binary);
        if (!f) throw data_error("cannot write " + data_path);
        f << doc.dump() << "\n";
    }
    const Dataset ds = load_fewrel_json(doc, std::nullopt);
    ds.vocab.save(out_path(cfg, "vocab.txt"));
    write_run_meta(cfg, "make-synthetic");
    out << "wrote " << data_path << " (" << ds.n_relations() << " relations, " << ds.n_examples()
        << " examples, vocab " << ds.vocab.size() << ")\n";
}

void cmd_inspect_data(const RunConfig& cfg, std::ostream& out) {
    const bool want_train = cfg.data.synthetic.has_value() || cfg.data.train_path.has_value();
    const bool want_eval = cfg.data.synthetic.has_value() || cfg.data.eval_path.has_value();
    if (!want_train && !want_eval) throw data_error("no datasets configured under data.*");
    auto data = resolve_data(cfg, want_train, want_eval);
    auto describe = [&](const char* name, const Dataset& ds) {
        out << name << ": " << ds.n_relations() << " relations, " << ds.n_examples()
            << " examples, vocab " << ds.vocab.size() << "\n";
        for (const auto& [rel, xs] : ds.relations) {
            out << "  " << rel << ": " << xs.size() << " examples\n";
        }
    };
    if (data.train) describe("train", *data.train);
    if (data.eval) describe("eval", *data.eval);
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
    auto data = resolve_data(cfg, true, false);
    ensure_output_dir(cfg);
    auto initial = initial_encoder(cfg, data.train->vocab.size());
    TrainConfig tc = cfg.train;
    tc.meta_train_episodes = cfg.train.meta_train_episodes;

    auto result = meta_train(*data.train, cfg.protocol, tc, initial, derive_seed(cfg.seed, kSeedTrain));
    save_checkpoint(out_path(cfg, "checkpoint.json"), result.params);
    data.train->vocab.save(out_path(cfg, "vocab.txt"));
    write_train_log(out_path(cfg, "train_log.jsonl"), result.log);
    write_run_meta(cfg, "train");

    double final_acc = result.log.empty() ? 0.0 : result.log.back().query_acc;
    out << "meta-trained " << result.log.size() << " episodes; final query_acc "
        << std::fixed << std::setprecision(4) << final_acc << "; checkpoint "
        << out_path(cfg, "checkpoint.json") << "\n";
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
    auto data = resolve_data(cfg, false, true);
    ensure_output_dir(cfg);

    EncoderParams params = cfg.checkpoint ? load_checkpoint(*cfg.checkpoint)
                                          : initial_encoder(cfg, data.eval->vocab.size());
    if (params.config.vocab_size != data.eval->vocab.size()) {
        throw data_error("checkpoint vocab_size " + std::to_string(params.config.vocab_size) +
                         " does not match eval vocabulary " +
                         std::to_string(data.eval->vocab.size()) +
                         " (evaluate with the training vocabulary via data.vocab)");
    }

    auto report = evaluate(params, *data.eval, cfg.train, eval_options(cfg));
    write_report_json(out_path(cfg, "report.json"), report);
    write_protocol_csv(out_path(cfg, "protocol_results.csv"), cfg.encoder_preset, cfg.protocol,
                       report);
    write_per_class_csv(out_path(cfg, "per_class.csv"), report);
    write_run_meta(cfg, "eval");

    out << "evaluated " << report.n_episodes << " episodes: mean_acc " << std::fixed
        << std::setprecision(4) << report.mean_accuracy << " +- " << report.ci_half_width << "\n";
}

void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
    auto data = resolve_data(cfg, true, true);
    ensure_output_dir(cfg);
    auto initial = initial_encoder(cfg, data.train->vocab.size());

    EvalOptions opts = eval_options(cfg);
    auto sweep = ablation_sweep(*data.train, *data.eval, cfg.sweep_grid, cfg.train, initial, opts);
    write_ablation_csv(out_path(cfg, "ablation.csv"), sweep);

    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : sweep.cells) {
        nlohmann::json jc{{"lambda", cell.weights.lambda_reg},
                          {"beta", cell.weights.beta},
                          {"tau", cell.weights.tau}};
        if (cell.report) {
            jc["mean_accuracy"] = cell.report->mean_accuracy;
            jc["ci_half_width"] = cell.report->ci_half_width;
        } else {
            jc["error"] = cell.error;
        }
        cells.push_back(jc);
    }
    nlohmann::json doc{{"fingerprint", fingerprint_of(cfg.json)},
                       {"notes", kReportNotes},
                       {"cells", cells}};
    {
        std::ofstream f(out_path(cfg, "sweep_report.json"), std::ios::binary);
        if (!f) throw data_error("cannot write sweep_report.json");
        f << doc.dump(2) << "\n";
    }
    write_run_meta(cfg, "sweep");

    out << "sweep finished: " << sweep.cells.size() << " cells -> " << out_path(cfg, "ablation.csv")
        << "\n";
    for (const auto& cell : sweep.cells) {
        out << "  lambda=" << cell.weights.lambda_reg << " beta=" << cell.weights.beta;
        if (cell.report) {
            out << " acc=" << std::fixed << std::setprecision(4) << cell.report->mean_accuracy;
        } else {
            out << " ERROR: " << cell.error;
        }
        out << "\n";
    }
}

void cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
    const auto rows = run_gradcheck_suite(cfg.seed, 100);
    bool all_pass = true;
    out << "check                            trials   max_rel_err   tol      status\n";
    for (const auto& r : rows) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-32s %6zu   %11.3e   %.0e   %s\n", r.name.c_str(),
                      r.trials, r.max_error, r.tolerance, r.pass() ? "pass" : "FAIL");
        out << line;
        all_pass = all_pass && r.pass();
    }
    if (!all_pass) throw numeric_error("gradient check failed");
}

}  // namespace

void run_command(const std::string& command, const RunConfig& cfg, std::ostream& out) {
    if (command == "train") {
        cmd_train(cfg, out);
    } else if (command == "eval") {
        cmd_eval(cfg, out);
    } else if (command == "sweep") {
        cmd_sweep(cfg, out);
    } else if (command == "gradcheck") {
        cmd_gradcheck(cfg, out);
    } else if (command == "make-synthetic") {
        cmd_make_synthetic(cfg, out);
    } else if (command == "inspect-data") {
        cmd_inspect_data(cfg, out);
    } else {
        throw config_error("unknown command \"" + command +
                           "\" (train, eval, sweep, gradcheck, make-synthetic, inspect-data)");
    }
}

RunConfig load_config(const std::string& config_path, std::vector<std::string> overrides) {
    bool output_dir_overridden = false;
    for (const auto& o : overrides) {
        if (o.rfind("output_dir=", 0) == 0) output_dir_overridden = true;
    }
    if (!output_dir_overridden) {
        if (const char* env = std::getenv("FEWSHOT_OUTPUT_DIR"); env && *env) {
            overrides.push_back(std::string("output_dir=") + env);
        }
    }
    return RunConfig::load(config_path, overrides);
}

}  // namespace fewshot::cli
