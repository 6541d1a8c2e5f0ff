#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace fewshot {

struct SpecialIds {
    std::size_t pad = 0;
    std::size_t unk = 1;
    std::size_t e1_open = 2;
    std::size_t e1_close = 3;
    std::size_t e2_open = 4;
    std::size_t e2_close = 5;
};

inline constexpr std::size_t kNumSpecials = 6;

/// Token <-> id map. Specials occupy ids 0..5 (PAD first); corpus tokens are
/// lowercased and assigned ids in lexicographic order, so the mapping depends
/// only on the token set, never on input or hash-map iteration order.
struct Vocabulary {
    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, std::size_t> token_to_id;
    SpecialIds specials;

    std::size_t size() const { return id_to_token.size(); }
    std::size_t lookup(const std::string& raw_token) const;  // lowercases; UNK when absent

    static Vocabulary build(const std::vector<std::string>& corpus_tokens);
    void save(const std::string& path) const;  // one token per line, line number = id
    static Vocabulary load(const std::string& path);
};

/// One labeled sentence with marked head/tail entity spans.
struct Example {
    std::vector<std::size_t> tokens;  // ids, before marker insertion
    std::pair<std::size_t, std::size_t> head_span;  // inclusive token indices
    std::pair<std::size_t, std::size_t> tail_span;
    std::string relation;
    std::vector<std::string> raw_tokens;
};

struct Dataset {
    std::map<std::string, std::vector<Example>> relations;  // sorted by relation id
    Vocabulary vocab;

    std::size_t n_relations() const { return relations.size(); }
    std::size_t n_examples() const;
    std::vector<std::string> relation_ids() const;
    /// Keep only the listed relations; errors on ids absent from the dataset.
    Dataset restricted_to(const std::vector<std::string>& relation_ids) const;
    /// Every relation needs at least shot + queries examples for the protocol.
    void validate_protocol(std::size_t way, std::size_t shot, std::size_t queries) const;
};

/// Parse a relation->instances JSON object (the FewRel 2.0 layout: each
/// instance holds "tokens", "h" and "t" with [mention, entity id, [[indices]]]).
Dataset load_fewrel_json(const nlohmann::json& root, const std::optional<Vocabulary>& vocab);
Dataset load_fewrel(const std::string& path, const std::optional<Vocabulary>& vocab = std::nullopt);

struct EncodedExample {
    std::vector<std::size_t> ids;     // markers inserted, padded to max_len
    std::vector<std::uint8_t> mask;   // 1 for real tokens
    std::size_t n_real = 0;
};

/// Bracket the head span with E1 markers and the tail span with E2 markers,
/// truncate from the right (markers must survive or it is an error), pad to
/// max_len.
EncodedExample encode_tokens(const Example& ex, const SpecialIds& specials, std::size_t max_len);

struct SyntheticSpec {
    std::size_t n_relations = 10;
    std::size_t per_relation = 100;
    std::size_t vocab_size = 200;
    std::vector<double> overlaps;  // size 1 (uniform) or n_relations
    std::size_t min_sentence_len = 8;
    std::size_t max_sentence_len = 12;
    std::uint64_t seed = 0;

    void validate() const;
    double overlap_for(std::size_t relation_index) const;
};

/// Relation-specific token pools: a fraction `overlap` of each pool comes
/// from one pool shared by all relations, the rest from a private chunk.
/// overlap=0 gives pairwise-disjoint pools, overlap=1 identical ones.
std::vector<std::vector<std::string>> synthetic_pools(const SyntheticSpec& spec);

/// Synthetic dataset in the same JSON layout the loader accepts.
nlohmann::json synthetic_fewrel_json(const SyntheticSpec& spec);

Dataset generate_synthetic(const SyntheticSpec& spec);
Dataset generate_synthetic(std::size_t n_relations, std::size_t per_relation,
                           std::size_t vocab_size, double overlap, std::uint64_t seed);

}  // namespace fewshot
