#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fewshot/rng.hpp"
#include "fewshot/text_pipeline.hpp"

namespace fewshot {

struct Protocol {
    std::size_t way = 5;
    std::size_t shot = 5;
    std::size_t queries = 5;  // per class

    void validate() const;
};

struct EpisodeItem {
    const Example* example = nullptr;
    std::size_t episode_label = 0;   // 0..way-1
    std::size_t example_index = 0;   // index within the relation's example list
};

/// One N-way K-shot task. Episode labels are a bijection onto relation_ids,
/// support and query are disjoint by construction.
struct Episode {
    std::size_t way = 0;
    std::size_t shot = 0;
    std::size_t queries_per_class = 0;
    std::vector<std::string> relation_ids;  // in episode-label order
    std::vector<EpisodeItem> support;       // way * shot items
    std::vector<EpisodeItem> query;         // way * queries items
};

/// Draw `way` relations uniformly without replacement, then shot+queries
/// examples per relation; the first `shot` go to support, the rest to query.
/// Items hold pointers into `dataset`, which must outlive the episode.
Episode sample_episode(const Dataset& dataset, const Protocol& protocol, Rng& rng);

/// Episode t of a stream is drawn from derive_seed(master_seed, t), so any
/// index is reproducible in isolation and streams can be materialized in
/// parallel.
Episode episode_at(const Dataset& dataset, const Protocol& protocol, std::uint64_t master_seed,
                   std::size_t index);
std::vector<Episode> episode_stream(const Dataset& dataset, const Protocol& protocol,
                                    std::size_t n_episodes, std::uint64_t master_seed);

/// One JSON-lines record per episode (relation ids and example indices), for
/// audit and replay.
std::string episode_dump_record(const Episode& episode, std::size_t index);

}  // namespace fewshot
