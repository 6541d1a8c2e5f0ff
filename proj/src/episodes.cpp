#include "fewshot/episodes.hpp"

#include <nlohmann/json.hpp>

#include "fewshot/errors.hpp"

namespace fewshot {

void Protocol::validate() const {
    if (way < 2) throw config_error("protocol way must be at least 2");
    if (shot == 0) throw config_error("protocol shot must be at least 1");
    if (queries == 0) throw config_error("protocol queries must be at least 1");
}

Episode sample_episode(const Dataset& dataset, const Protocol& protocol, Rng& rng) {
    protocol.validate();
    dataset.validate_protocol(protocol.way, protocol.shot, protocol.queries);

    // std::map keys iterate sorted, so relation order is reproducible
    const auto ids = dataset.relation_ids();
    const auto chosen = rng.sample_without_replacement(ids.size(), protocol.way);

    Episode ep;
    ep.way = protocol.way;
    ep.shot = protocol.shot;
    ep.queries_per_class = protocol.queries;
    for (std::size_t label = 0; label < chosen.size(); ++label) {
        const auto& rel = ids[chosen[label]];
        ep.relation_ids.push_back(rel);
        const auto& pool = dataset.relations.at(rel);
        const auto picks =
            rng.sample_without_replacement(pool.size(), protocol.shot + protocol.queries);
        for (std::size_t i = 0; i < picks.size(); ++i) {
            EpisodeItem item{&pool[picks[i]], label, picks[i]};
            (i < protocol.shot ? ep.support : ep.query).push_back(item);
        }
    }
    return ep;
}

Episode episode_at(const Dataset& dataset, const Protocol& protocol, std::uint64_t master_seed,
                   std::size_t index) {
    Rng rng(derive_seed(master_seed, index));
    return sample_episode(dataset, protocol, rng);
}

std::vector<Episode> episode_stream(const Dataset& dataset, const Protocol& protocol,
                                    std::size_t n_episodes, std::uint64_t master_seed) {
    std::vector<Episode> out;
    out.reserve(n_episodes);
    for (std::size_t t = 0; t < n_episodes; ++t) {
        out.push_back(episode_at(dataset, protocol, master_seed, t));
    }
    return out;
}

std::string episode_dump_record(const Episode& episode, std::size_t index) {
    nlohmann::json j;
    j["episode"] = index;
    j["relations"] = episode.relation_ids;
    auto items = [&](const std::vector<EpisodeItem>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& it : v) {
            arr.push_back({{"relation", episode.relation_ids[it.episode_label]},
                           {"example", it.example_index},
                           {"label", it.episode_label}});
        }
        return arr;
    };
    j["support"] = items(episode.support);
    j["query"] = items(episode.query);
    return j.dump();
}

}  // namespace fewshot
