#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "irera/error.hpp"
#include "support.hpp"

using namespace irera;
using namespace irera::testing;

namespace {

ErrorCode code_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an irera::Error");
    return ErrorCode::invalid_argument;
}

std::vector<float> random_unit(std::mt19937_64& rng, std::size_t d) {
    std::normal_distribution<float> g;
    std::vector<float> v(d);
    for (auto& x : v) x = g(rng);
    return l2_normalize(v);
}

EmbeddingIndex random_index(std::mt19937_64& rng, std::size_t rows, std::size_t d) {
    std::vector<std::vector<float>> r;
    for (std::size_t i = 0; i < rows; ++i) r.push_back(random_unit(rng, d));
    return EmbeddingIndex::from_rows(r);
}

std::vector<double> oracle_scores(const EmbeddingIndex& index, const std::vector<std::vector<float>>& queries) {
    std::vector<double> out(index.rows());
    for (std::size_t i = 0; i < index.rows(); ++i) {
        double best = -INFINITY;
        for (const auto& q : queries) {
            double dot = 0;
            for (std::size_t j = 0; j < q.size(); ++j) dot += static_cast<double>(index.row(i)[j]) * q[j];
            best = std::max(best, dot);
        }
        out[i] = best;
    }
    return out;
}

std::vector<LabelId> oracle_order(const std::vector<double>& s) {
    std::vector<LabelId> ids(s.size());
    std::iota(ids.begin(), ids.end(), 0u);
    std::stable_sort(ids.begin(), ids.end(), [&](LabelId a, LabelId b) { return s[a] > s[b]; });
    return ids;
}

} // namespace

TEST_CASE("score_labels on an orthonormal index") {
    auto backend = ScriptedEmbedBackend::one_hot(scripted_embed("e"), label_names(10));
    Gateway gw;
    auto index = build_index(gw, *backend, label_names(10));
    std::vector<float> e7(10, 0.0f);
    e7[7] = 1.0f;
    std::vector<std::vector<float>> one{e7};
    auto s = score_labels(index, one);
    for (std::size_t i = 0; i < 10; ++i) CHECK(s[i] == (i == 7 ? 1.0 : 0.0));
    std::vector<std::vector<float>> twice{e7, e7};
    CHECK(score_labels(index, twice) == s);
}

TEST_CASE("score_labels matches the double loop oracle") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + rng() % 32;
        auto index = random_index(rng, 1 + rng() % 50, d);
        std::vector<std::vector<float>> queries;
        for (std::size_t q = 0, n = 1 + rng() % 5; q < n; ++q) queries.push_back(random_unit(rng, d));
        auto s = score_labels(index, queries);
        auto o = oracle_scores(index, queries);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(s[i] - o[i]) <= 1e-12);

        auto shuffled = queries;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(score_labels(index, shuffled) == s);

        auto more = queries;
        more.push_back(random_unit(rng, d));
        auto s2 = score_labels(index, more);
        for (std::size_t i = 0; i < s.size(); ++i) CHECK(s2[i] >= s[i]);
    }
}

TEST_CASE("score_labels errors") {
    std::mt19937_64 rng(1);
    auto index = random_index(rng, 4, 3);
    CHECK(code_of([&] { score_labels(index, {}); }) == ErrorCode::empty_query_set);
    std::vector<std::vector<float>> wrong{std::vector<float>{1.0f, 0.0f}};
    CHECK(code_of([&] { score_labels(index, wrong); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("apply_prior") {
    std::vector<double> s{0.5};
    std::vector<double> p{0.09};
    CHECK(apply_prior(s, p, 1000.0)[0] == 1.0);

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    std::uniform_real_distribution<double> prior(0, 1);
    std::vector<double> scores(200), priors(200);
    for (auto& x : scores) x = u(rng);
    for (auto& x : priors) x = prior(rng);
    CHECK(apply_prior(scores, priors, 0.0) == scores);
    auto weighted = apply_prior(scores, priors, 1000.0);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        CHECK(std::abs(weighted[i] - scores[i] * std::log10(1000.0 * priors[i] + 10.0)) <= 1e-12);
        CHECK(std::signbit(weighted[i]) == std::signbit(scores[i]));
    }

    CHECK(code_of([&] { apply_prior(s, p, -1.0); }) == ErrorCode::negative_prior_weight);
    std::vector<double> two{0.1, 0.2};
    CHECK(code_of([&] { apply_prior(two, p, 1.0); }) == ErrorCode::length_mismatch);
}

TEST_CASE("rank_all") {
    CHECK(rank_all({0.1, 0.9, 0.1}).order == std::vector<LabelId>{1, 0, 2});
    CHECK(rank_all({0.3, 0.3, 0.3, 0.3}).order == std::vector<LabelId>{0, 1, 2, 3});
    CHECK(code_of([] { rank_all({0.1, NAN}); }) == ErrorCode::non_finite_score);

    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> coarse(0, 20);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> s(1 + rng() % 40);
        for (auto& x : s) x = coarse(rng) / 20.0;
        auto r = rank_all(s);
        CHECK(r.order == oracle_order(s));
        CHECK(r.scores == s);
    }
}

TEST_CASE("retrieve") {
    std::vector<std::pair<std::string, double>> names;
    for (const auto& n : label_names(100)) names.emplace_back(n, 0.0);
    LabelOntology ontology(names);
    auto backend = ScriptedEmbedBackend::one_hot(scripted_embed("e"), label_names(100));
    Gateway gw;
    auto index = build_index(gw, *backend, ontology.names());
    LabelSpace space{ontology, index, *backend};

    SUBCASE("a single label query ranks that label first") {
        auto r = retrieve(gw, space, std::vector<std::string>{"label_007"}, 0.0);
        CHECK(r.order.front() == 7);
    }
    SUBCASE("no queries gives the identity order and skips the embedder") {
        auto before = gw.ledger().snapshot();
        auto r = retrieve(gw, space, {}, 1000.0);
        std::vector<LabelId> identity(100);
        std::iota(identity.begin(), identity.end(), 0u);
        CHECK(r.order == identity);
        CHECK(ledger_delta(before, gw.ledger().snapshot()).empty());
    }
    SUBCASE("one embedding batch per call, tagged with the retriever role") {
        auto before = gw.ledger().snapshot();
        retrieve(gw, space, std::vector<std::string>{"label_001", "label_002", "label_003"}, 0.0);
        auto d = ledger_delta(before, gw.ledger().snapshot());
        CHECK(ledger_total(d, Role::retriever, "retrieve").invocations() == 1);
    }
}

TEST_CASE("retrieve equals the composed scalar oracles") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> prior(0, 1);
    std::vector<std::pair<std::string, double>> names;
    std::map<std::string, std::vector<float>> vectors;
    for (std::size_t i = 0; i < 100; ++i) {
        names.emplace_back(label_name(i), prior(rng));
        vectors[label_name(i)] = random_unit(rng, 16);
    }
    std::vector<std::string> queries{"q one", "q two", "q three"};
    for (const auto& q : queries) vectors[q] = random_unit(rng, 16);
    ScriptedEmbedBackend backend(scripted_embed("table"), [&](const std::string& t) { return vectors.at(t); });

    LabelOntology ontology(names);
    Gateway gw;
    auto index = build_index(gw, backend, ontology.names(), 7);
    LabelSpace space{ontology, index, backend};
    auto r = retrieve(gw, space, queries, 1000.0);

    auto qv = gw.embed(backend, Role::retriever, "retrieve", queries);
    auto s = oracle_scores(index, qv);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] *= std::log10(1000.0 * ontology[static_cast<LabelId>(i)].prior + 10.0);
    CHECK(r.order == oracle_order(s));
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(r.scores[i] - s[i]) <= 1e-12);
}

TEST_CASE("ontology") {
    LabelOntology o({{"Use SQL", 0.2}, {"manage  budgets", 0.0}, {"rash", 1.0}});
    CHECK(o.size() == 3);
    CHECK(o.find("use sql") == LabelId{0});
    CHECK(o.find(" Manage budgets ") == LabelId{1});
    CHECK_FALSE(o.find("fever").has_value());
    CHECK(o[2].name == "rash");
    CHECK(code_of([] { LabelOntology({{"a", 0.1}, {"A", 0.2}}); }) == ErrorCode::duplicate_label_name);
    CHECK(code_of([] { LabelOntology({{"a", 1.2}}); }) == ErrorCode::prior_out_of_range);
    CHECK(code_of([] { LabelOntology({{"a", -0.1}}); }) == ErrorCode::prior_out_of_range);
}

TEST_CASE("embedding file layout") {
    TempDir dir;
    EmbeddingIndex index = EmbeddingIndex::from_rows({{1.0f, 0.0f}, {0.6f, 0.8f}, {0.0f, -1.0f}});
    index.save(dir / "e.xmce");

    std::ifstream in(dir / "e.xmce", std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
    REQUIRE(bytes.size() == 16 + 3 * 2 * 4);
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "XMCE");
    auto u32 = [&](std::size_t off) {
        return static_cast<std::uint32_t>(bytes[off]) | static_cast<std::uint32_t>(bytes[off + 1]) << 8 |
               static_cast<std::uint32_t>(bytes[off + 2]) << 16 | static_cast<std::uint32_t>(bytes[off + 3]) << 24;
    };
    CHECK(u32(4) == 1);
    CHECK(u32(8) == 3);
    CHECK(u32(12) == 2);
    std::uint32_t bits = u32(16 + 2 * 4);
    float f;
    std::memcpy(&f, &bits, 4);
    CHECK(f == 0.6f);

    auto loaded = EmbeddingIndex::load(dir / "e.xmce");
    CHECK(loaded.rows() == 3);
    CHECK(loaded.dim() == 2);
    CHECK(std::equal(loaded.data().begin(), loaded.data().end(), index.data().begin()));

    std::ofstream(dir / "bad.xmce", std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(EmbeddingIndex::load(dir / "bad.xmce"), Error);
    CHECK_THROWS_AS(EmbeddingIndex::from_rows({{1.0f, 1.0f}}), Error);
}

TEST_CASE("index must match the ontology") {
    LabelOntology o({{"a", 0.0}, {"b", 0.0}});
    auto index = EmbeddingIndex::from_rows({{1.0f, 0.0f}});
    CHECK(code_of([&] { check_index_matches(o, index); }) == ErrorCode::dimension_mismatch);
}
