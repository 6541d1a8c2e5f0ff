#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "fewshot/errors.hpp"
#include "fewshot/text_pipeline.hpp"

using namespace fewshot;
using nlohmann::json;

namespace {

json minimal_instance(std::vector<std::string> tokens, std::vector<std::size_t> head,
                      std::vector<std::size_t> tail) {
    json inst;
    inst["tokens"] = tokens;
    const auto mention = [&](std::size_t i) { return i < tokens.size() ? tokens[i] : "?"; };
    inst["h"] = {mention(head[0]), "eh", json::array({head})};
    inst["t"] = {mention(tail[0]), "et", json::array({tail})};
    return inst;
}

Example make_example(std::size_t len, std::pair<std::size_t, std::size_t> head,
                     std::pair<std::size_t, std::size_t> tail) {
    Example ex;
    ex.relation = "R";
    for (std::size_t i = 0; i < len; ++i) {
        ex.tokens.push_back(kNumSpecials + i);
        ex.raw_tokens.push_back("t" + std::to_string(i));
    }
    ex.head_span = head;
    ex.tail_span = tail;
    return ex;
}

}  // namespace

TEST_CASE("one relation, one 5-token instance") {
    json root;
    root["P931"] = json::array({minimal_instance({"Alpha", "beta", "Gamma", "delta", "eps"}, {2, 3}, {0})});
    auto ds = load_fewrel_json(root, std::nullopt);
    CHECK(ds.n_relations() == 1);
    CHECK(ds.n_examples() == 1);
    CHECK(ds.vocab.size() == 5 + kNumSpecials);

    const auto& ex = ds.relations.at("P931")[0];
    CHECK(ex.head_span == std::pair<std::size_t, std::size_t>{2, 3});
    CHECK(ex.tail_span == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(ex.relation == "P931");
    CHECK(ex.raw_tokens[0] == "Alpha");
    // tokens are lowercased before vocabulary lookup
    CHECK(ds.vocab.id_to_token[ex.tokens[0]] == "alpha");
}

TEST_CASE("tokens outside a given vocabulary map to UNK") {
    json train;
    train["R1"] = json::array({minimal_instance({"red", "green", "blue"}, {0}, {2})});
    auto train_ds = load_fewrel_json(train, std::nullopt);

    json val;
    val["R2"] = json::array({minimal_instance({"red", "orange", "blue", "violet"}, {1}, {3})});
    auto val_ds = load_fewrel_json(val, train_ds.vocab);

    const auto& ex = val_ds.relations.at("R2")[0];
    std::set<std::string> train_tokens = {"red", "green", "blue"};
    for (std::size_t i = 0; i < ex.raw_tokens.size(); ++i) {
        if (train_tokens.count(ex.raw_tokens[i])) {
            CHECK(ex.tokens[i] != val_ds.vocab.specials.unk);
        } else {
            CHECK(ex.tokens[i] == val_ds.vocab.specials.unk);
        }
    }
}

TEST_CASE("loader errors name the relation and instance") {
    json bad;
    bad["P1"] = json::array({json{{"tokens", json::array({"a"})}, {"h", json::array()},
                                  {"t", json::array()}}});
    CHECK_THROWS_WITH_AS(load_fewrel_json(bad, std::nullopt), doctest::Contains("P1"), data_error);

    json out_of_range;
    out_of_range["P2"] = json::array({minimal_instance({"a", "b"}, {5}, {0})});
    CHECK_THROWS_WITH_AS(load_fewrel_json(out_of_range, std::nullopt), doctest::Contains("instance 0"),
                         data_error);

    json empty_group;
    empty_group["P3"] = json::array(
        {json{{"tokens", json::array({"a", "b"})},
              {"h", json::array({"a", "id", json::array({json::array()})})},
              {"t", json::array({"b", "id", json::array({json::array({1})})})}}});
    CHECK_THROWS_AS(load_fewrel_json(empty_group, std::nullopt), data_error);

    CHECK_THROWS_AS(load_fewrel("/nonexistent/path.json", std::nullopt), data_error);
}

TEST_CASE("vocabulary ids are dense, sorted and order-insensitive") {
    auto v1 = Vocabulary::build({"pear", "apple", "apple", "fig"});
    auto v2 = Vocabulary::build({"fig", "apple", "pear"});
    CHECK(v1.id_to_token == v2.id_to_token);
    CHECK(v1.specials.pad == 0);
    CHECK(v1.id_to_token[0] == "<pad>");
    CHECK(v1.id_to_token[kNumSpecials] == "apple");  // lexicographic after specials
    for (std::size_t i = 0; i < v1.size(); ++i) CHECK(v1.token_to_id.at(v1.id_to_token[i]) == i);
}

TEST_CASE("vocabulary round-trips through its file format") {
    auto v = Vocabulary::build({"banana", "Cherry", "date"});
    const auto path = std::filesystem::temp_directory_path() / "fewshot_vocab_test.txt";
    v.save(path.string());
    auto loaded = Vocabulary::load(path.string());
    CHECK(loaded.id_to_token == v.id_to_token);
    CHECK(loaded.lookup("CHERRY") == v.lookup("cherry"));
    std::filesystem::remove(path);
}

TEST_CASE("marker insertion brackets both spans") {
    auto ex = make_example(3, {0, 0}, {2, 2});
    SpecialIds sp;
    auto enc = encode_tokens(ex, sp, 10);
    CHECK(enc.ids == std::vector<std::size_t>{sp.e1_open, ex.tokens[0], sp.e1_close, ex.tokens[1],
                                              sp.e2_open, ex.tokens[2], sp.e2_close, sp.pad, sp.pad,
                                              sp.pad});
    std::size_t ones = 0;
    for (auto m : enc.mask) ones += m;
    CHECK(ones == 7);
    CHECK(enc.n_real == 7);
}

TEST_CASE("stripping markers and padding recovers the original ids") {
    SpecialIds sp;
    // spans in every relative position, including tail before head
    const std::vector<std::pair<std::pair<std::size_t, std::size_t>,
                                std::pair<std::size_t, std::size_t>>> cases = {
        {{0, 1}, {3, 4}}, {{3, 4}, {0, 1}}, {{0, 0}, {1, 1}}, {{4, 5}, {2, 3}}, {{2, 3}, {4, 5}}};
    for (const auto& [head, tail] : cases) {
        auto ex = make_example(6, head, tail);
        auto enc = encode_tokens(ex, sp, 16);
        std::vector<std::size_t> recovered;
        for (std::size_t i = 0; i < enc.n_real; ++i) {
            const auto id = enc.ids[i];
            if (id == sp.e1_open || id == sp.e1_close || id == sp.e2_open || id == sp.e2_close) {
                continue;
            }
            recovered.push_back(id);
        }
        CHECK(recovered == ex.tokens);

        // the bracketed subsequences are exactly the spans
        auto find = [&](std::size_t marker) {
            for (std::size_t i = 0; i < enc.n_real; ++i) {
                if (enc.ids[i] == marker) return i;
            }
            return std::size_t(-1);
        };
        const auto h_open = find(sp.e1_open), h_close = find(sp.e1_close);
        std::vector<std::size_t> head_tokens(enc.ids.begin() + h_open + 1,
                                             enc.ids.begin() + h_close);
        std::vector<std::size_t> want_head(ex.tokens.begin() + head.first,
                                           ex.tokens.begin() + head.second + 1);
        CHECK(head_tokens == want_head);
    }
}

TEST_CASE("exact-fit max_len needs no padding") {
    auto ex = make_example(4, {0, 0}, {3, 3});
    auto enc = encode_tokens(ex, SpecialIds{}, 8);
    CHECK(enc.n_real == 8);
    for (auto m : enc.mask) CHECK(m == 1);
}

TEST_CASE("overlapping spans are rejected") {
    auto ex = make_example(5, {1, 3}, {3, 4});
    CHECK_THROWS_WITH_AS(encode_tokens(ex, SpecialIds{}, 16), doctest::Contains("overlapping"),
                         data_error);
}

TEST_CASE("truncation drops plain tokens but never markers") {
    // markers early: truncation fine
    auto ex = make_example(12, {0, 0}, {2, 2});
    auto enc = encode_tokens(ex, SpecialIds{}, 10);
    CHECK(enc.n_real == 10);
    // marker close to the end: must error instead of silently dropping it
    auto late = make_example(12, {0, 0}, {11, 11});
    CHECK_THROWS_WITH_AS(encode_tokens(late, SpecialIds{}, 10), doctest::Contains("marker"),
                         data_error);
}

TEST_CASE("synthetic pools honor the overlap knob") {
    SyntheticSpec spec;
    spec.n_relations = 4;
    spec.per_relation = 5;
    spec.vocab_size = 50;
    spec.seed = 3;

    spec.overlaps = {0.0};
    auto disjoint = synthetic_pools(spec);
    for (std::size_t a = 0; a < disjoint.size(); ++a) {
        for (std::size_t b = a + 1; b < disjoint.size(); ++b) {
            for (const auto& t : disjoint[a]) {
                CHECK(std::find(disjoint[b].begin(), disjoint[b].end(), t) == disjoint[b].end());
            }
        }
    }

    spec.overlaps = {1.0};
    auto identical = synthetic_pools(spec);
    for (std::size_t a = 1; a < identical.size(); ++a) CHECK(identical[a] == identical[0]);

    // per-relation overlaps: relation 0 fully private, relation 3 fully shared
    spec.overlaps = {0.0, 0.5, 0.5, 1.0};
    auto mixed = synthetic_pools(spec);
    CHECK(mixed.size() == 4);
    for (const auto& t : mixed[0]) {
        CHECK(std::find(mixed[3].begin(), mixed[3].end(), t) == mixed[3].end());
    }
}

TEST_CASE("same seed gives byte-identical synthetic datasets") {
    SyntheticSpec spec;
    spec.n_relations = 3;
    spec.per_relation = 10;
    spec.vocab_size = 40;
    spec.overlaps = {0.5};
    spec.seed = 77;
    CHECK(synthetic_fewrel_json(spec).dump() == synthetic_fewrel_json(spec).dump());

    spec.seed = 78;
    CHECK(synthetic_fewrel_json(spec).dump() !=
          synthetic_fewrel_json(SyntheticSpec{3, 10, 40, {0.5}, 8, 12, 77}).dump());
}

TEST_CASE("synthetic datasets load through the standard loader") {
    auto ds = generate_synthetic(5, 12, 64, 0.25, 9);
    CHECK(ds.n_relations() == 5);
    CHECK(ds.n_examples() == 5 * 12);
    ds.validate_protocol(5, 5, 5);
    for (const auto& [rel, xs] : ds.relations) {
        CHECK(xs.size() == 12);
        for (const auto& ex : xs) {
            CHECK(ex.head_span != ex.tail_span);
            CHECK(ex.tokens.size() >= 8);
            CHECK(ex.tokens.size() <= 12);
        }
    }
    CHECK_THROWS_AS(generate_synthetic(10, 5, 30, 0.0, 1), config_error);  // vocab too small
}

TEST_CASE("protocol validation names the deficit") {
    auto ds = generate_synthetic(4, 6, 64, 0.0, 5);
    CHECK_THROWS_WITH_AS(ds.validate_protocol(5, 1, 5), doctest::Contains("4 relations"), data_error);
    CHECK_THROWS_WITH_AS(ds.validate_protocol(3, 4, 5), doctest::Contains("shot+queries"), data_error);
}

TEST_CASE("restricted_to keeps only the listed relations") {
    auto ds = generate_synthetic(4, 6, 64, 0.0, 5);
    const auto ids = ds.relation_ids();
    auto sub = ds.restricted_to({ids[0], ids[2]});
    CHECK(sub.n_relations() == 2);
    CHECK(sub.vocab.size() == ds.vocab.size());
    CHECK_THROWS_AS(ds.restricted_to({"missing"}), data_error);
}
