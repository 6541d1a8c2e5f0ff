#include "fewshot/text_pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fewshot/errors.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

namespace {

const char* kSpecialTokens[kNumSpecials] = {"<pad>", "<unk>", "<e1>", "</e1>", "<e2>", "</e2>"};

std::string lowercase(const std::string& s) {
    std::string out = s;
    for (auto& ch : out) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return out;
}

std::string zero_pad(std::size_t value, std::size_t width) {
    std::string s = std::to_string(value);
    while (s.size() < width) s.insert(s.begin(), '0');
    return s;
}

std::size_t digits_for(std::size_t max_value) {
    std::size_t d = 1, v = max_value;
    while (v >= 10) {
        v /= 10;
        ++d;
    }
    return d;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

std::size_t Vocabulary::lookup(const std::string& raw_token) const {
    auto it = token_to_id.find(lowercase(raw_token));
    return it == token_to_id.end() ? specials.unk : it->second;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_tokens) {
    std::set<std::string> unique;
    for (const auto& t : corpus_tokens) unique.insert(lowercase(t));

    Vocabulary v;
    v.id_to_token.reserve(unique.size() + kNumSpecials);
    for (const auto* s : kSpecialTokens) v.id_to_token.emplace_back(s);
    for (const auto& t : unique) v.id_to_token.push_back(t);
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write vocabulary file: " + path);
    for (const auto& t : id_to_token) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot read vocabulary file: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) v.id_to_token.push_back(line);
    if (v.id_to_token.size() < kNumSpecials) {
        throw data_error("vocabulary file too short, expected the 6 special tokens first: " + path);
    }
    for (std::size_t i = 0; i < kNumSpecials; ++i) {
        if (v.id_to_token[i] != kSpecialTokens[i]) {
            throw data_error("vocabulary file " + path + " line " + std::to_string(i) +
                             " should be " + kSpecialTokens[i] + ", got " + v.id_to_token[i]);
        }
    }
    for (std::size_t i = 0; i < v.id_to_token.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
    return v;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

std::size_t Dataset::n_examples() const {
    std::size_t n = 0;
    for (const auto& [_, xs] : relations) n += xs.size();
    return n;
}

std::vector<std::string> Dataset::relation_ids() const {
    std::vector<std::string> ids;
    ids.reserve(relations.size());
    for (const auto& [id, _] : relations) ids.push_back(id);
    return ids;
}

Dataset Dataset::restricted_to(const std::vector<std::string>& relation_ids) const {
    Dataset out;
    out.vocab = vocab;
    for (const auto& id : relation_ids) {
        auto it = relations.find(id);
        if (it == relations.end()) throw data_error("relation \"" + id + "\" not in dataset");
        out.relations[id] = it->second;
    }
    return out;
}

void Dataset::validate_protocol(std::size_t way, std::size_t shot, std::size_t queries) const {
    if (relations.size() < way) {
        throw data_error("dataset has " + std::to_string(relations.size()) + " relations, protocol needs " +
                         std::to_string(way));
    }
    for (const auto& [id, xs] : relations) {
        if (xs.size() < shot + queries) {
            throw data_error("relation \"" + id + "\" has " + std::to_string(xs.size()) +
                             " examples, protocol needs shot+queries = " +
                             std::to_string(shot + queries));
        }
    }
}

// ---------------------------------------------------------------------------
// FewRel loader
// ---------------------------------------------------------------------------

namespace {

std::pair<std::size_t, std::size_t> span_from_entity(const nlohmann::json& entity,
                                                     std::size_t n_tokens,
                                                     const std::string& relation,
                                                     std::size_t instance_index,
                                                     const char* which) {
    const std::string where =
        "relation \"" + relation + "\" instance " + std::to_string(instance_index);
    if (!entity.is_array() || entity.size() < 3 || !entity[2].is_array() || entity[2].empty()) {
        throw data_error(where + ": malformed \"" + which + "\" entity field");
    }
    const auto& group = entity[2][0];  // first index group defines the span
    if (!group.is_array() || group.empty()) {
        throw data_error(where + ": empty index group in \"" + which + "\"");
    }
    std::size_t lo = n_tokens, hi = 0;
    for (const auto& idx : group) {
        if (!idx.is_number_integer() || idx.get<long long>() < 0) {
            throw data_error(where + ": non-integer token index in \"" + which + "\"");
        }
        const auto v = idx.get<std::size_t>();
        if (v >= n_tokens) {
            throw data_error(where + ": token index " + std::to_string(v) + " out of range [0, " +
                             std::to_string(n_tokens) + ") in \"" + which + "\"");
        }
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return {lo, hi};
}

}  // namespace

Dataset load_fewrel_json(const nlohmann::json& root, const std::optional<Vocabulary>& vocab) {
    if (!root.is_object()) throw data_error("dataset root must be a JSON object of relations");

    Dataset ds;
    if (vocab) {
        ds.vocab = *vocab;
    } else {
        std::vector<std::string> corpus;
        for (const auto& [rel, instances] : root.items()) {
            if (!instances.is_array()) {
                throw data_error("relation \"" + rel + "\" must map to an array of instances");
            }
            for (const auto& inst : instances) {
                if (!inst.contains("tokens")) continue;  // reported again below with position
                for (const auto& t : inst["tokens"]) {
                    if (t.is_string()) corpus.push_back(t.get<std::string>());
                }
            }
        }
        ds.vocab = Vocabulary::build(corpus);
    }

    for (const auto& [rel, instances] : root.items()) {
        if (!instances.is_array()) {
            throw data_error("relation \"" + rel + "\" must map to an array of instances");
        }
        std::vector<Example> xs;
        xs.reserve(instances.size());
        for (std::size_t k = 0; k < instances.size(); ++k) {
            const auto& inst = instances[k];
            const std::string where = "relation \"" + rel + "\" instance " + std::to_string(k);
            if (!inst.is_object() || !inst.contains("tokens") || !inst.contains("h") ||
                !inst.contains("t")) {
                throw data_error(where + ": missing \"tokens\", \"h\" or \"t\"");
            }
            if (!inst["tokens"].is_array() || inst["tokens"].empty()) {
                throw data_error(where + ": \"tokens\" must be a non-empty array");
            }
            Example ex;
            ex.relation = rel;
            for (const auto& t : inst["tokens"]) {
                if (!t.is_string()) throw data_error(where + ": non-string token");
                ex.raw_tokens.push_back(t.get<std::string>());
                ex.tokens.push_back(ds.vocab.lookup(ex.raw_tokens.back()));
            }
            ex.head_span = span_from_entity(inst["h"], ex.tokens.size(), rel, k, "h");
            ex.tail_span = span_from_entity(inst["t"], ex.tokens.size(), rel, k, "t");
            xs.push_back(std::move(ex));
        }
        ds.relations[rel] = std::move(xs);
    }
    return ds;
}

Dataset load_fewrel(const std::string& path, const std::optional<Vocabulary>& vocab) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open dataset file: " + path);
    nlohmann::json root;
    try {
        in >> root;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("malformed JSON in " + path + ": " + e.what());
    }
    return load_fewrel_json(root, vocab);
}

// ---------------------------------------------------------------------------
// encode_tokens
// ---------------------------------------------------------------------------

EncodedExample encode_tokens(const Example& ex, const SpecialIds& specials, std::size_t max_len) {
    const auto& [h_lo, h_hi] = ex.head_span;
    const auto& [t_lo, t_hi] = ex.tail_span;
    const std::size_t n = ex.tokens.size();
    if (h_hi >= n || t_hi >= n || h_lo > h_hi || t_lo > t_hi) {
        throw data_error("entity span out of range for relation \"" + ex.relation + "\"");
    }
    if (h_lo <= t_hi && t_lo <= h_hi) {
        throw data_error("overlapping head/tail spans in relation \"" + ex.relation + "\"");
    }

    std::vector<std::size_t> marked;
    std::vector<bool> is_marker;
    marked.reserve(n + 4);
    for (std::size_t i = 0; i < n; ++i) {
        if (i == h_lo) { marked.push_back(specials.e1_open); is_marker.push_back(true); }
        if (i == t_lo) { marked.push_back(specials.e2_open); is_marker.push_back(true); }
        marked.push_back(ex.tokens[i]);
        is_marker.push_back(false);
        if (i == h_hi) { marked.push_back(specials.e1_close); is_marker.push_back(true); }
        if (i == t_hi) { marked.push_back(specials.e2_close); is_marker.push_back(true); }
    }

    if (marked.size() > max_len) {
        // truncate from the right, but a marker must never be dropped
        for (std::size_t i = max_len; i < marked.size(); ++i) {
            if (is_marker[i]) {
                throw data_error("max_len " + std::to_string(max_len) +
                                 " would truncate an entity marker (relation \"" + ex.relation +
                                 "\", marked length " + std::to_string(marked.size()) + ")");
            }
        }
        marked.resize(max_len);
    }

    EncodedExample out;
    out.n_real = marked.size();
    out.ids = std::move(marked);
    out.ids.resize(max_len, specials.pad);
    out.mask.assign(max_len, 0);
    for (std::size_t i = 0; i < out.n_real; ++i) out.mask[i] = 1;
    return out;
}

// ---------------------------------------------------------------------------
// synthetic data
// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
    if (n_relations == 0 || per_relation == 0) {
        throw config_error("synthetic spec needs n_relations > 0 and per_relation > 0");
    }
    if (vocab_size <= n_relations * 3) {
        throw config_error("synthetic vocab_size must exceed 3 * n_relations, got " +
                           std::to_string(vocab_size) + " for " + std::to_string(n_relations) +
                           " relations");
    }
    if (min_sentence_len < 2 || max_sentence_len < min_sentence_len) {
        throw config_error("synthetic sentence length range invalid");
    }
    if (!(overlaps.size() == 1 || overlaps.size() == n_relations)) {
        throw config_error("synthetic overlaps must hold 1 or n_relations values, got " +
                           std::to_string(overlaps.size()));
    }
    for (double o : overlaps) {
        if (o < 0.0 || o > 1.0) throw config_error("synthetic overlap must lie in [0, 1]");
    }
}

double SyntheticSpec::overlap_for(std::size_t relation_index) const {
    return overlaps.size() == 1 ? overlaps[0] : overlaps[relation_index];
}

std::vector<std::vector<std::string>> synthetic_pools(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t width = digits_for(spec.vocab_size - 1);
    auto word = [&](std::size_t i) { return "w" + zero_pad(i, width); };

    // vocab splits into one shared chunk plus one private chunk per relation
    const std::size_t pool_size = spec.vocab_size / (spec.n_relations + 1);
    std::vector<std::vector<std::string>> pools(spec.n_relations);
    for (std::size_t r = 0; r < spec.n_relations; ++r) {
        const auto n_shared =
            static_cast<std::size_t>(std::llround(spec.overlap_for(r) * static_cast<double>(pool_size)));
        for (std::size_t i = 0; i < n_shared; ++i) pools[r].push_back(word(i));
        const std::size_t private_base = pool_size * (r + 1);
        for (std::size_t i = 0; i < pool_size - n_shared; ++i)
            pools[r].push_back(word(private_base + i));
    }
    return pools;
}

nlohmann::json synthetic_fewrel_json(const SyntheticSpec& spec) {
    spec.validate();
    const auto pools = synthetic_pools(spec);
    const std::size_t rel_width = std::max<std::size_t>(2, digits_for(spec.n_relations - 1));

    Rng rng(spec.seed);
    nlohmann::json root = nlohmann::json::object();
    for (std::size_t r = 0; r < spec.n_relations; ++r) {
        const auto& pool = pools[r];
        nlohmann::json instances = nlohmann::json::array();
        for (std::size_t k = 0; k < spec.per_relation; ++k) {
            const std::size_t len =
                spec.min_sentence_len + rng.below(spec.max_sentence_len - spec.min_sentence_len + 1);
            nlohmann::json tokens = nlohmann::json::array();
            std::vector<std::string> sent(len);
            for (std::size_t i = 0; i < len; ++i) {
                sent[i] = pool[rng.below(pool.size())];
                tokens.push_back(sent[i]);
            }
            const std::size_t head_pos = rng.below(len);
            std::size_t tail_pos = rng.below(len - 1);
            if (tail_pos >= head_pos) ++tail_pos;  // distinct positions

            nlohmann::json inst;
            inst["tokens"] = tokens;
            inst["h"] = {sent[head_pos], "eh" + std::to_string(head_pos),
                         nlohmann::json::array({nlohmann::json::array({head_pos})})};
            inst["t"] = {sent[tail_pos], "et" + std::to_string(tail_pos),
                         nlohmann::json::array({nlohmann::json::array({tail_pos})})};
            instances.push_back(inst);
        }
        root["R" + zero_pad(r, rel_width)] = instances;
    }
    return root;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    return load_fewrel_json(synthetic_fewrel_json(spec), std::nullopt);
}

Dataset generate_synthetic(std::size_t n_relations, std::size_t per_relation,
                           std::size_t vocab_size, double overlap, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_relations = n_relations;
    spec.per_relation = per_relation;
    spec.vocab_size = vocab_size;
    spec.overlaps = {overlap};
    spec.seed = seed;
    return generate_synthetic(spec);
}

}  // namespace fewshot
