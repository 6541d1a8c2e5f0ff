#include "fewshot/run_config.hpp"

#include <fstream>
#include <map>
#include <set>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

const std::map<std::string, std::set<std::string>> kSchema = {
    {"", {"seed", "threads", "output_dir", "data", "encoder", "protocol", "train", "loss",
          "sweep", "checkpoint", "episode_dump"}},
    {"data", {"train", "eval", "vocab", "synthetic", "train_relations", "eval_relations"}},
    {"data.synthetic", {"n_relations", "per_relation", "vocab_size", "overlap", "overlaps",
                        "min_sentence_len", "max_sentence_len", "seed"}},
    {"encoder", {"preset", "max_len", "dropout_rate"}},
    {"protocol", {"way", "shot", "queries", "episodes"}},
    {"train", {"learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "meta_episodes",
               "fine_tune_steps", "fine_tune_lr", "unfreeze_top_layers"}},
    {"loss", {"lambda", "beta", "tau", "contrastive_numerator"}},
    {"sweep", {"grid"}},
    {"sweep.grid[]", {"lambda", "beta", "tau"}},
};

void validate_level(const nlohmann::json& node, const std::string& level,
                    const std::string& display) {
    auto it = kSchema.find(level);
    if (it == kSchema.end() || !node.is_object()) return;
    for (const auto& [key, value] : node.items()) {
        if (!it->second.count(key)) {
            throw config_error("unknown config key: " + (display.empty() ? key : display + "." + key));
        }
        const std::string child = level.empty() ? key : level + "." + key;
        const std::string child_display = display.empty() ? key : display + "." + key;
        if (value.is_object()) {
            validate_level(value, child, child_display);
        } else if (value.is_array() && kSchema.count(child + "[]")) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                validate_level(value[i], child + "[]",
                               child_display + "[" + std::to_string(i) + "]");
            }
        }
    }
}

template <class T>
T get_or(const nlohmann::json& node, const std::string& key, T fallback) {
    if (!node.is_object() || !node.contains(key) || node.at(key).is_null()) return fallback;
    try {
        return node.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error("config key \"" + key + "\" has the wrong type");
    }
}

std::optional<std::string> get_opt_string(const nlohmann::json& node, const std::string& key) {
    if (!node.is_object() || !node.contains(key) || node.at(key).is_null()) return std::nullopt;
    if (!node.at(key).is_string()) {
        throw config_error("config key \"" + key + "\" must be a string or null");
    }
    return node.at(key).get<std::string>();
}

}  // namespace

void validate_config_keys(const nlohmann::json& doc) { validate_level(doc, "", ""); }

nlohmann::json RunConfig::defaults() {
    return nlohmann::json{
        {"seed", 7},
        {"threads", 1},
        {"output_dir", "out"},
        {"data",
         {{"train", nullptr},
          {"eval", nullptr},
          {"vocab", nullptr},
          {"synthetic", nullptr},
          {"train_relations", nullptr},
          {"eval_relations", nullptr}}},
        {"encoder", {{"preset", "tiny"}, {"max_len", 64}, {"dropout_rate", 0.0}}},
        {"protocol", {{"way", 5}, {"shot", 5}, {"queries", 5}, {"episodes", 1000}}},
        {"train",
         {{"learning_rate", 1e-3},
          {"adam_beta1", 0.9},
          {"adam_beta2", 0.999},
          {"adam_eps", 1e-8},
          {"meta_episodes", 200},
          {"fine_tune_steps", 25},
          {"fine_tune_lr", 1e-2},
          {"unfreeze_top_layers", 1}}},
        {"loss",
         {{"lambda", 0.0}, {"beta", 0.0}, {"tau", 0.1}, {"contrastive_numerator", "positives"}}},
        {"sweep", {{"grid", nullptr}}},
        {"checkpoint", nullptr},
        {"episode_dump", nullptr},
    };
}

RunConfig RunConfig::from_json(nlohmann::json document) {
    validate_config_keys(document);

    // fill defaults without clobbering provided values
    nlohmann::json merged = defaults();
    merged.merge_patch(document);

    RunConfig c;
    c.json = merged;
    c.seed = get_or<std::uint64_t>(merged, "seed", 7);
    c.threads = get_or<int>(merged, "threads", 1);
    if (c.threads < 1) throw config_error("threads must be at least 1");
    c.output_dir = get_or<std::string>(merged, "output_dir", "out");

    const auto& jd = merged.at("data");
    c.data.train_path = get_opt_string(jd, "train");
    c.data.eval_path = get_opt_string(jd, "eval");
    c.data.vocab_path = get_opt_string(jd, "vocab");
    if (jd.contains("train_relations") && !jd.at("train_relations").is_null()) {
        c.data.train_relations = jd.at("train_relations").get<std::vector<std::string>>();
    }
    if (jd.contains("eval_relations") && !jd.at("eval_relations").is_null()) {
        c.data.eval_relations = jd.at("eval_relations").get<std::vector<std::string>>();
    }
    if (jd.contains("synthetic") && !jd.at("synthetic").is_null()) {
        const auto& js = jd.at("synthetic");
        SyntheticSpec s;
        s.n_relations = get_or<std::size_t>(js, "n_relations", s.n_relations);
        s.per_relation = get_or<std::size_t>(js, "per_relation", s.per_relation);
        s.vocab_size = get_or<std::size_t>(js, "vocab_size", s.vocab_size);
        if (js.contains("overlaps") && !js.at("overlaps").is_null()) {
            s.overlaps = js.at("overlaps").get<std::vector<double>>();
        } else {
            s.overlaps = {get_or<double>(js, "overlap", 0.0)};
        }
        s.min_sentence_len = get_or<std::size_t>(js, "min_sentence_len", s.min_sentence_len);
        s.max_sentence_len = get_or<std::size_t>(js, "max_sentence_len", s.max_sentence_len);
        if (js.contains("seed") && !js.at("seed").is_null()) {
            s.seed = js.at("seed").get<std::uint64_t>();
            c.data.synthetic_seed_explicit = true;
        }
        s.validate();
        c.data.synthetic = s;
    }

    const auto& je = merged.at("encoder");
    c.encoder_preset = get_or<std::string>(je, "preset", "tiny");
    c.max_len = get_or<std::size_t>(je, "max_len", 64);
    c.dropout_rate = get_or<double>(je, "dropout_rate", 0.0);

    const auto& jp = merged.at("protocol");
    c.protocol.way = get_or<std::size_t>(jp, "way", 5);
    c.protocol.shot = get_or<std::size_t>(jp, "shot", 5);
    c.protocol.queries = get_or<std::size_t>(jp, "queries", 5);
    c.eval_episodes = get_or<std::size_t>(jp, "episodes", 1000);
    c.protocol.validate();

    const auto& jt = merged.at("train");
    c.train.learning_rate = get_or<double>(jt, "learning_rate", 1e-3);
    c.train.adam_beta1 = get_or<double>(jt, "adam_beta1", 0.9);
    c.train.adam_beta2 = get_or<double>(jt, "adam_beta2", 0.999);
    c.train.adam_eps = get_or<double>(jt, "adam_eps", 1e-8);
    c.train.meta_train_episodes = get_or<std::size_t>(jt, "meta_episodes", 200);
    c.train.fine_tune_steps = get_or<std::size_t>(jt, "fine_tune_steps", 25);
    c.train.fine_tune_lr = get_or<double>(jt, "fine_tune_lr", 1e-2);
    c.train.unfreeze_top_layers = get_or<std::size_t>(jt, "unfreeze_top_layers", 1);
    c.train.eval_episodes = c.eval_episodes;

    const auto& jl = merged.at("loss");
    c.train.loss.lambda_reg = get_or<double>(jl, "lambda", 0.0);
    c.train.loss.beta = get_or<double>(jl, "beta", 0.0);
    c.train.loss.tau = get_or<double>(jl, "tau", 0.1);
    c.train.loss.numerator =
        contrastive_numerator_from_string(get_or<std::string>(jl, "contrastive_numerator", "positives"));
    c.train.validate();

    // default sweep grid: the standard five cells (ce alone, rising
    // contrastive weight, then rising regularization at full contrastive)
    const auto& jsweep = merged.at("sweep");
    if (jsweep.contains("grid") && !jsweep.at("grid").is_null()) {
        for (const auto& cell : jsweep.at("grid")) {
            LossWeights w = c.train.loss;
            w.lambda_reg = get_or<double>(cell, "lambda", w.lambda_reg);
            w.beta = get_or<double>(cell, "beta", w.beta);
            w.tau = get_or<double>(cell, "tau", w.tau);
            w.validate();
            c.sweep_grid.push_back(w);
        }
    } else {
        const double pairs[5][2] = {{0.0, 0.0}, {0.0, 0.5}, {0.0, 1.0}, {0.5, 1.0}, {1.0, 1.0}};
        for (const auto& [lambda, beta] : pairs) {
            LossWeights w = c.train.loss;
            w.lambda_reg = lambda;
            w.beta = beta;
            c.sweep_grid.push_back(w);
        }
    }

    c.checkpoint = get_opt_string(merged, "checkpoint");
    c.episode_dump = get_opt_string(merged, "episode_dump");
    return c;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json doc;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw config_error("cannot open config file: " + path);
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw config_error("malformed config JSON in " + path + ": " + e.what());
        }
    } else {
        doc = nlohmann::json::object();
    }
    for (const auto& o : overrides) apply_override(doc, o);
    return from_json(std::move(doc));
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw config_error("override must look like key.path=value, got \"" + assignment + "\"");
    }
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // plain string

    nlohmann::json* node = &doc;
    std::size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) throw config_error("override path has an empty segment: " + path);
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = nlohmann::json::object();
        node = &(*node)[key];
        start = dot + 1;
    }
}

}  // namespace fewshot
