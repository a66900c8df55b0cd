#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "irera/irera.h"

namespace fs = std::filesystem;

namespace {

struct Owned {
    char* s = nullptr;
    ~Owned() { irera_string_free(s); }
    std::string str() const { return s ? s : ""; }
};

struct Workspace {
    fs::path dir;
    Workspace() {
        std::random_device rd;
        dir = fs::temp_directory_path() / ("irera-capi-" + std::to_string(rd()));
        fs::create_directories(dir);
        for (const auto& e : fs::directory_iterator(IRERA_FIXTURE_DIR)) {
            if (e.is_regular_file()) fs::copy_file(e.path(), dir / e.path().filename());
        }
    }
    ~Workspace() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
};

} // namespace

TEST_CASE("status names and version") {
    CHECK(std::string(irera_version()).size() > 0);
    CHECK(std::string(irera_status_name(IRERA_OK)) == "ok");
    CHECK(std::string(irera_status_name(IRERA_ERR_BUDGET)) == "budget");
}

TEST_CASE("argument and config errors") {
    irera_engine* engine = nullptr;
    CHECK(irera_engine_open(nullptr, &engine) == IRERA_ERR_INVALID_ARGUMENT);
    CHECK(irera_engine_open("/nonexistent/config.json", &engine) != IRERA_OK);
    CHECK(engine == nullptr);
    CHECK(std::string(irera_last_error()).size() > 0);
    irera_engine_close(nullptr);
}

TEST_CASE("pure primitives") {
    const uint32_t r0[] = {7, 0, 8, 1, 9, 2};
    const uint32_t g0[] = {0, 1, 2};
    const uint32_t* rankings[] = {r0};
    const uint32_t* golds[] = {g0};
    const size_t rl[] = {6}, gl[] = {3};
    double rp = 0;
    REQUIRE(irera_rp_at_k(rankings, rl, golds, gl, 1, 5, &rp) == IRERA_OK);
    CHECK(rp == doctest::Approx(2.0 / 3.0));
    CHECK(irera_rp_at_k(rankings, rl, golds, gl, 1, 0, &rp) == IRERA_ERR_INVALID_ARGUMENT);

    const double scores[] = {0.5, -0.2};
    const double priors[] = {0.09, 0.0};
    double out[2];
    REQUIRE(irera_apply_prior(scores, priors, 2, 1000.0, out) == IRERA_OK);
    CHECK(out[0] == doctest::Approx(1.0));
    CHECK(out[1] == doctest::Approx(-0.2));
    CHECK(irera_apply_prior(scores, priors, 2, -1.0, out) == IRERA_ERR_INVALID_ARGUMENT);
}

TEST_CASE("engine round trip") {
    Workspace ws;
    irera_engine* engine = nullptr;
    REQUIRE(irera_engine_open((ws.dir / "config.json").c_str(), &engine) == IRERA_OK);

    {
        Owned report;
        REQUIRE(irera_engine_build_index(engine, nullptr, &report.s) == IRERA_OK);
        CHECK(fs::exists(ws.dir / "out/labels.xmce"));
    }
    {
        Owned report;
        REQUIRE(irera_engine_evaluate(engine, "irera", nullptr, "test", &report.s) == IRERA_OK);
        CHECK(report.str().find("\"rp@10\"") != std::string::npos);
        Owned check;
        CHECK(irera_budget_check(report.s, &check.s) == IRERA_OK);
        CHECK(check.str().find("\"passed\": true") != std::string::npos);
    }
    {
        const char* texts[] = {"Synthetic record te-0000 describing a handful of concepts."};
        Owned preds;
        REQUIRE(irera_engine_run(engine, "irera", nullptr, texts, 1, 3, &preds.s) == IRERA_OK);
        CHECK(preds.str().find("label_") != std::string::npos);
        Owned bad;
        CHECK(irera_engine_run(engine, "nonsense", nullptr, texts, 1, 3, &bad.s) == IRERA_ERR_INVALID_ARGUMENT);
    }
    {
        Owned stats;
        REQUIRE(irera_engine_cache_stats(engine, &stats.s) == IRERA_OK);
        CHECK(stats.str().find("entries") != std::string::npos);
    }
    {
        Owned report;
        CHECK(irera_engine_evaluate(engine, "irera", nullptr, (ws.dir / "missing.jsonl").c_str(), &report.s) ==
              IRERA_ERR_IO);
    }
    {
        Owned result;
        CHECK(irera_budget_check("{\"kind\": \"evaluation\"", &result.s) != IRERA_OK);
    }
    irera_engine_close(engine);
}
