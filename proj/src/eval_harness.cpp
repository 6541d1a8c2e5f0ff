#include "fewshot/eval_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "fewshot/errors.hpp"

namespace fewshot {

const char* kReportNotes =
    "Desk-scale run with a from-scratch miniature encoder; accuracies are directional and not "
    "comparable to published results from large pretrained language models.";

namespace {

std::size_t argmax(const double* row, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
        if (row[c] > row[best]) best = c;
    }
    return best;
}

// episode worker signature: index -> (result, sampled episode)
using EpisodeWorker = std::function<EpisodeResult(std::size_t, Episode&)>;

std::vector<EpisodeResult> run_episodes(const Dataset& dataset, const EvalOptions& opts,
                                        const EpisodeWorker& work) {
    if (opts.n_episodes == 0) throw config_error("protocol requires >= 1 episode");
    opts.protocol.validate();
    dataset.validate_protocol(opts.protocol.way, opts.protocol.shot, opts.protocol.queries);

    const std::size_t n = opts.n_episodes;
    std::vector<EpisodeResult> results(n);
    std::vector<Episode> episodes(opts.episode_dump_path ? n : 0);

    auto run_one = [&](std::size_t i) {
        Episode ep;
        try {
            results[i] = work(i, ep);
        } catch (const std::exception& e) {
            throw numeric_error("episode " + std::to_string(i) + ": " + e.what());
        }
        if (opts.episode_dump_path) episodes[i] = std::move(ep);
    };

    const int threads = std::max(1, opts.threads);
    if (threads == 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        auto worker = [&]() {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    run_one(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> pool;
        const int n_workers = std::min<std::size_t>(threads, n);
        for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    if (opts.episode_dump_path) {
        std::ofstream dump(*opts.episode_dump_path, std::ios::binary);
        if (!dump) throw data_error("cannot write episode dump: " + *opts.episode_dump_path);
        for (std::size_t i = 0; i < n; ++i) dump << episode_dump_record(episodes[i], i) << "\n";
    }
    return results;
}

RunReport aggregate(std::vector<EpisodeResult> results, const EvalOptions& opts) {
    RunReport report;
    report.fingerprint = opts.fingerprint;
    report.config = opts.config;
    report.notes = kReportNotes;
    report.n_episodes = results.size();

    double sum = 0.0;
    for (const auto& r : results) sum += r.accuracy;
    report.mean_accuracy = sum / static_cast<double>(results.size());
    if (results.size() > 1) {
        double sq = 0.0;
        for (const auto& r : results) {
            const double d = r.accuracy - report.mean_accuracy;
            sq += d * d;
        }
        const double sd = std::sqrt(sq / static_cast<double>(results.size() - 1));
        report.ci_half_width = 1.96 * sd / std::sqrt(static_cast<double>(results.size()));
    }
    report.per_relation = per_class_counts(results);
    report.episodes = std::move(results);
    return report;
}

EpisodeResult score_queries(const Episode& episode, std::size_t index,
                            const std::function<std::vector<double>(const Example&)>& logits_of) {
    EpisodeResult res;
    res.episode = index;
    std::size_t correct = 0;
    for (const auto& q : episode.query) {
        const auto logits = logits_of(*q.example);
        QueryRecord rec;
        rec.true_label = q.episode_label;
        rec.predicted_label = argmax(logits.data(), episode.way);
        rec.relation = episode.relation_ids[q.episode_label];
        correct += rec.predicted_label == rec.true_label ? 1 : 0;
        res.queries.push_back(std::move(rec));
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(episode.query.size());
    return res;
}

}  // namespace

RunReport evaluate(const EncoderParams& params, const Dataset& dataset_eval,
                   const TrainConfig& cfg, const EvalOptions& opts) {
    cfg.validate();
    // one detached snapshot shared by all episodes (and all threads)
    const EncoderParams snapshot = params.clone(false);

    auto results = run_episodes(dataset_eval, opts, [&](std::size_t i, Episode& out_ep) {
        Episode episode = episode_at(dataset_eval, opts.protocol, opts.seed, i);
        auto adapted = fine_tune_on_support(snapshot, episode, cfg);
        auto res = score_queries(episode, i, [&](const Example& ex) {
            return classify(adapted.encoder, adapted.head, ex);
        });
        out_ep = std::move(episode);
        return res;
    });
    return aggregate(std::move(results), opts);
}

RunReport evaluate_with_embedder(const Embedder& embed, std::size_t d_model,
                                 const Dataset& dataset_eval, const TrainConfig& cfg,
                                 const EvalOptions& opts) {
    cfg.validate();
    auto results = run_episodes(dataset_eval, opts, [&](std::size_t i, Episode& out_ep) {
        Episode episode = episode_at(dataset_eval, opts.protocol, opts.seed, i);

        std::vector<double> flat;
        std::vector<std::size_t> labels;
        flat.reserve(episode.support.size() * d_model);
        for (const auto& it : episode.support) {
            const auto h = embed(*it.example);
            if (h.size() != d_model) {
                throw std::invalid_argument("embedder returned " + std::to_string(h.size()) +
                                            " values, expected " + std::to_string(d_model));
            }
            flat.insert(flat.end(), h.begin(), h.end());
            labels.push_back(it.episode_label);
        }
        ad::Tensor h_support({episode.support.size(), d_model}, std::move(flat));
        const Head head = adapt_head_on_embeddings(h_support, labels, episode.way, cfg).head;

        auto res = score_queries(episode, i, [&](const Example& ex) {
            const auto h = embed(ex);
            std::vector<double> logits(episode.way, 0.0);
            for (std::size_t c = 0; c < episode.way; ++c) {
                double z = head.bias->data[c];
                for (std::size_t k = 0; k < d_model; ++k) {
                    z += h[k] * head.weight->data[k * episode.way + c];
                }
                logits[c] = z;
            }
            return logits;
        });
        out_ep = std::move(episode);
        return res;
    });
    return aggregate(std::move(results), opts);
}

std::map<std::string, PerClassStat> per_class_counts(const std::vector<EpisodeResult>& results) {
    if (results.empty()) throw std::invalid_argument("per_class_accuracy: no results");
    std::map<std::string, PerClassStat> out;
    for (const auto& r : results) {
        for (const auto& q : r.queries) {
            auto& stat = out[q.relation];
            stat.total += 1;
            stat.correct += q.predicted_label == q.true_label ? 1 : 0;
        }
    }
    return out;
}

std::map<std::string, double> per_class_accuracy(const std::vector<EpisodeResult>& results) {
    std::map<std::string, double> out;
    for (const auto& [rel, stat] : per_class_counts(results)) out[rel] = stat.accuracy();
    return out;
}

SweepReport ablation_sweep(const Dataset& train, const Dataset& eval_set,
                           const std::vector<LossWeights>& grid, const TrainConfig& base_cfg,
                           const EncoderParams& initial, const EvalOptions& opts) {
    if (grid.empty()) throw config_error("ablation sweep needs a non-empty weight grid");
    SweepReport sweep;
    for (const auto& weights : grid) {
        SweepCell cell;
        cell.weights = weights;
        try {
            TrainConfig cfg = base_cfg;
            cfg.loss = weights;
            auto trained = meta_train(train, opts.protocol, cfg, initial, opts.seed);
            EvalOptions cell_opts = opts;
            cell_opts.config["loss"] = {{"lambda", weights.lambda_reg},
                                        {"beta", weights.beta},
                                        {"tau", weights.tau},
                                        {"contrastive_numerator", to_string(weights.numerator)}};
            cell_opts.fingerprint = fingerprint_of(cell_opts.config);
            cell.report = evaluate(trained.params, eval_set, cfg, cell_opts);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
        sweep.cells.push_back(std::move(cell));
    }
    return sweep;
}

// ---------------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------------

nlohmann::json report_to_json(const RunReport& report) {
    nlohmann::json j;
    j["fingerprint"] = report.fingerprint;
    j["config"] = report.config;
    j["notes"] = report.notes;
    j["n_episodes"] = report.n_episodes;
    j["mean_accuracy"] = report.mean_accuracy;
    j["ci_half_width"] = report.ci_half_width;
    nlohmann::json per_rel = nlohmann::json::object();
    for (const auto& [rel, stat] : report.per_relation) {
        per_rel[rel] = {{"correct", stat.correct},
                        {"total", stat.total},
                        {"accuracy", stat.accuracy()}};
    }
    j["per_relation"] = per_rel;
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& r : report.episodes) {
        nlohmann::json je;
        je["episode"] = r.episode;
        je["accuracy"] = r.accuracy;
        nlohmann::json qs = nlohmann::json::array();
        for (const auto& q : r.queries) {
            qs.push_back({{"true", q.true_label}, {"pred", q.predicted_label}, {"relation", q.relation}});
        }
        je["queries"] = qs;
        eps.push_back(je);
    }
    j["episodes"] = eps;
    return j;
}

void write_report_json(const std::string& path, const RunReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write report: " + path);
    out << report_to_json(report).dump(2) << "\n";
}

namespace {

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void write_protocol_csv(const std::string& path, const std::string& preset,
                        const Protocol& protocol, const RunReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write csv: " + path);
    out << "preset,way,shot,mean_acc,ci\n";
    out << preset << "," << protocol.way << "," << protocol.shot << ","
        << fixed6(report.mean_accuracy) << "," << fixed6(report.ci_half_width) << "\n";
}

void write_per_class_csv(const std::string& path, const RunReport& report) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write csv: " + path);
    out << "relation_id,n_queries,accuracy\n";
    for (const auto& [rel, stat] : report.per_relation) {
        out << rel << "," << stat.total << "," << fixed6(stat.accuracy()) << "\n";
    }
}

void write_ablation_csv(const std::string& path, const SweepReport& sweep) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write csv: " + path);
    out << "lambda,beta,tau,mean_acc,ci\n";
    for (const auto& cell : sweep.cells) {
        out << fixed6(cell.weights.lambda_reg) << "," << fixed6(cell.weights.beta) << ","
            << fixed6(cell.weights.tau) << ",";
        if (cell.report) {
            out << fixed6(cell.report->mean_accuracy) << "," << fixed6(cell.report->ci_half_width);
        } else {
            out << "error,error";
        }
        out << "\n";
    }
}

std::string fingerprint_of(const nlohmann::json& config) {
    const std::string canonical = config.dump();
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (unsigned char ch : canonical) {
        hash ^= ch;
        hash *= 0x100000001b3ull;
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

}  // namespace fewshot
