#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "irera/error.hpp"
#include "irera/parallel.hpp"
#include "irera/signatures.hpp"
#include "irera/text.hpp"
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

double norm(const std::vector<float>& v) {
    double s = 0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

class LocalServer {
public:
    LocalServer() {
        port_ = server.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        thread_.join();
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

    httplib::Server server;

private:
    int port_ = 0;
    std::thread thread_;
};

BackendSpec http_spec(BackendKind kind, const std::string& endpoint) {
    BackendSpec spec;
    spec.id = kind == BackendKind::chat_http ? "remote-chat" : "remote-embed";
    spec.kind = kind;
    spec.endpoint = endpoint;
    spec.model_name = "test-model";
    spec.api_key_env = "IRERA_TEST_API_KEY";
    return spec;
}

GatewayOptions fast_retries(int attempts = 3) {
    GatewayOptions o;
    o.retry = RetryPolicy{attempts, std::chrono::milliseconds(1)};
    return o;
}

} // namespace

TEST_CASE("complete caches by prompt and counts one upstream call") {
    std::atomic<int> calls{0};
    ScriptedChatBackend backend(scripted_chat("m"), [&](const std::string& p, int) {
        ++calls;
        return "echo " + p;
    });
    Gateway gw;
    auto a = gw.complete(backend, Role::student, "infer", "hello");
    auto b = gw.complete(backend, Role::student, "infer", "hello");
    CHECK(a == b);
    CHECK(calls == 1);
    auto counter = gw.ledger().snapshot().at(LedgerKey{"m", Role::student, "infer"});
    CHECK(counter.upstream_calls == 1);
    CHECK(counter.cache_hits == 1);

    gw.complete(backend, Role::student, "infer", "hello ");
    CHECK(calls == 2);
}

TEST_CASE("transcript lookup and arity") {
    std::map<std::string, std::vector<std::string>> transcript{{text::sha256_hex("prompt"), {"nausea"}}};
    auto backend = ScriptedChatBackend::from_transcript(scripted_chat("t"), transcript);
    Gateway gw;
    CHECK(gw.complete(*backend, Role::student, "infer", "prompt") == std::vector<std::string>{"nausea"});

    SamplingParams three;
    three.n = 3;
    CHECK(gw.complete(*backend, Role::student, "infer", "prompt", three).size() == 3);
    CHECK(code_of([&] { gw.complete(*backend, Role::student, "infer", "other"); }) == ErrorCode::unknown_input);
}

TEST_CASE("cache keys separate backends, params and prompts") {
    auto a = scripted_chat("a");
    auto b = scripted_chat("b");
    SamplingParams p;
    SamplingParams hot;
    hot.temperature = 0.7;
    CHECK(chat_cache_key(a, p, "x") == chat_cache_key(a, p, "x"));
    CHECK(chat_cache_key(a, p, "x") != chat_cache_key(b, p, "x"));
    CHECK(chat_cache_key(a, p, "x") != chat_cache_key(a, hot, "x"));
    CHECK(chat_cache_key(a, p, "x") != chat_cache_key(a, p, "x "));
    CHECK(embed_cache_key(a, "x") != chat_cache_key(a, p, "x"));
}

TEST_CASE("embed normalizes, preserves order and caches per text") {
    std::atomic<int> batches{0};
    ScriptedEmbedBackend backend(scripted_embed("e"), [](const std::string& t) {
        return std::vector<float>{static_cast<float>(t.size()), 1.0f, 2.0f};
    });
    struct Counting : EmbedBackend {
        Counting(EmbedBackend& inner, std::atomic<int>& n) : EmbedBackend(inner.spec()), inner(inner), n(n) {}
        std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) override {
            ++n;
            return inner.embed_batch(texts);
        }
        EmbedBackend& inner;
        std::atomic<int>& n;
    } counting(backend, batches);

    Gateway gw;
    std::vector<std::string> texts{"a", "bbb", "cc"};
    auto first = gw.embed(counting, Role::retriever, "retrieve", texts);
    REQUIRE(first.size() == 3);
    for (const auto& v : first) CHECK(std::abs(norm(v) - 1.0) <= 1e-6);
    CHECK(first[1][0] > first[2][0]);
    CHECK(first[2][0] > first[0][0]);

    auto again = gw.embed(counting, Role::retriever, "retrieve", std::vector<std::string>{"bbb"});
    CHECK(again[0] == first[1]);
    CHECK(batches == 1);

    gw.embed(counting, Role::retriever, "retrieve", std::vector<std::string>{"bbb", "new"});
    CHECK(batches == 2);
    auto c = gw.ledger().snapshot().at(LedgerKey{"e", Role::retriever, "retrieve"});
    CHECK(c.upstream_calls == 2);
    CHECK(c.cache_hits == 1);
}

TEST_CASE("embed rejects inconsistent dimensions") {
    ScriptedEmbedBackend backend(scripted_embed("e"), [](const std::string& t) {
        return std::vector<float>(t.size(), 1.0f);
    });
    Gateway gw;
    CHECK(code_of([&] { gw.embed(backend, Role::retriever, "retrieve", std::vector<std::string>{"a", "bb"}); }) ==
          ErrorCode::dimension_mismatch);
}

TEST_CASE("one-hot embedder") {
    auto backend = ScriptedEmbedBackend::one_hot(scripted_embed("e"), label_names(100));
    Gateway gw;
    auto v = gw.embed(*backend, Role::retriever, "retrieve", std::vector<std::string>{"label_007"});
    REQUIRE(v[0].size() == 100);
    for (std::size_t i = 0; i < 100; ++i) CHECK(v[0][i] == (i == 7 ? 1.0f : 0.0f));
    auto u = gw.embed(*backend, Role::retriever, "retrieve", std::vector<std::string>{"  LABEL_007 "});
    CHECK(u[0] == v[0]);
    auto other = gw.embed(*backend, Role::retriever, "retrieve", std::vector<std::string>{"unknown"});
    CHECK(std::abs(norm(other[0]) - 1.0) <= 1e-6);
}

TEST_CASE("glass-box mock") {
    std::vector<GoldRecord> data{{"example one", {"x"}}, {"example three", {"a", "b"}}};
    SUBCASE("infer-style prompt answers with all gold labels") {
        CHECK(glass_box_answer(data, "Text: example three\nTags:") == "a, b");
    }
    SUBCASE("rank-style prompt filters to the options in option order") {
        CHECK(glass_box_answer(data, "Text: example three\nOptions: c, a\nTags:") == "a");
        CHECK(glass_box_answer(data, "Text: example three\nOptions: b, c, a\nTags:") == "b, a");
    }
    SUBCASE("the latest text in the prompt is the query") {
        CHECK(glass_box_answer(data, "Text: example one\nTags: x\n\n---\n\nText: example three\nTags:") == "a, b");
    }
    SUBCASE("unseen text") {
        CHECK(code_of([&] { glass_box_answer(data, "Text: something else"); }) == ErrorCode::unknown_input);
    }
    SUBCASE("chain-of-thought prompts get a parseable answer") {
        auto mock = glass_box_mock(scripted_chat("g"), data);
        auto sig = signature_preset("esco-infer");
        auto prompt = render_prompt(sig, {}, {{"text", "example three"}});
        auto completion = mock->generate(prompt, SamplingParams{}).front();
        CHECK(parse_completion(sig, completion).at("output") == "a, b");
    }
}

TEST_CASE("ledger replay adds only hits and totals are concurrency independent") {
    ScriptedChatBackend backend(scripted_chat("m"), [](const std::string& p, int) { return p; });
    Gateway gw(GatewayOptions{std::nullopt, 4, {}});
    std::vector<std::string> prompts;
    for (int i = 0; i < 200; ++i) prompts.push_back("p" + std::to_string(i % 37));
    parallel_for(prompts.size(), 8, [&](std::size_t i) { gw.complete(backend, Role::student, "infer", prompts[i]); });
    auto c = ledger_total(gw.ledger().snapshot());
    CHECK(c.upstream_calls == 37);
    CHECK(c.cache_hits == 163);

    auto before = gw.ledger().snapshot();
    parallel_for(prompts.size(), 8, [&](std::size_t i) { gw.complete(backend, Role::student, "infer", prompts[i]); });
    auto d = ledger_total(ledger_delta(before, gw.ledger().snapshot()));
    CHECK(d.upstream_calls == 0);
    CHECK(d.cache_hits == 200);
}

TEST_CASE("ledger json round trip and filtering") {
    LedgerSnapshot snap{{LedgerKey{"s", Role::student, "infer"}, LedgerCounter{5, 2}},
                        {LedgerKey{"t", Role::teacher, "rank"}, LedgerCounter{1, 0}},
                        {LedgerKey{"e", Role::retriever, "retrieve"}, LedgerCounter{0, 9}}};
    CHECK(ledger_from_json(ledger_to_json(snap)) == snap);
    CHECK(ledger_total(snap, Role::student).upstream_calls == 5);
    CHECK(ledger_total(snap, std::nullopt, "rank").upstream_calls == 1);
    CHECK(ledger_total(snap).invocations() == 17);
}

TEST_CASE("disk cache survives a new gateway") {
    TempDir dir;
    std::atomic<int> calls{0};
    ScriptedChatBackend backend(scripted_chat("m"), [&](const std::string& p, int) {
        ++calls;
        return p + "!";
    });
    {
        Gateway gw(GatewayOptions{dir.path(), 2, {}});
        gw.complete(backend, Role::student, "infer", "one");
        gw.complete(backend, Role::student, "infer", "two");
    }
    Gateway gw(GatewayOptions{dir.path(), 2, {}});
    CHECK(gw.complete(backend, Role::student, "infer", "one").front() == "one!");
    CHECK(calls == 2);
    auto stats = cache_stats(dir.path());
    CHECK(stats.entries == 2);
    CHECK(stats.total_bytes > 0);
}

TEST_CASE("transport errors are retried, other errors are not") {
    std::atomic<int> calls{0};
    ScriptedChatBackend flaky(scripted_chat("f"), [&](const std::string&, int) -> std::string {
        if (++calls < 3) throw Error(ErrorCode::transport, "down");
        return "ok";
    });
    Gateway gw(fast_retries(3));
    CHECK(gw.complete(flaky, Role::student, "infer", "x").front() == "ok");
    CHECK(calls == 3);

    std::atomic<int> rejected_calls{0};
    ScriptedChatBackend rejecting(scripted_chat("r"), [&](const std::string&, int) -> std::string {
        ++rejected_calls;
        throw Error(ErrorCode::request_rejected, "bad request");
    });
    CHECK(code_of([&] { gw.complete(rejecting, Role::student, "infer", "x"); }) == ErrorCode::request_rejected);
    CHECK(rejected_calls == 1);

    std::atomic<int> dead_calls{0};
    ScriptedChatBackend dead(scripted_chat("d"), [&](const std::string&, int) -> std::string {
        ++dead_calls;
        throw Error(ErrorCode::transport, "down");
    });
    CHECK(code_of([&] { gw.complete(dead, Role::student, "infer", "x"); }) == ErrorCode::transport);
    CHECK(dead_calls == 3);
    CHECK(ledger_total(gw.ledger().snapshot(), std::nullopt, {}, "d").invocations() == 0);
}

TEST_CASE("http chat backend speaks the chat completions protocol") {
    LocalServer local;
    std::atomic<int> failures_left{1};
    std::string seen_auth;
    nlohmann::json seen_body;
    local.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen_body = nlohmann::json::parse(req.body);
        const auto content = seen_body["messages"][0]["content"].get<std::string>();
        if (content == "fail once" && failures_left-- > 0) {
            res.status = 503;
            return;
        }
        if (content == "reject") {
            res.status = 400;
            res.set_content("{\"error\":\"bad\"}", "application/json");
            return;
        }
        if (content == "garbage") {
            res.set_content("not json", "text/plain");
            return;
        }
        nlohmann::json choices = nlohmann::json::array();
        for (int i = 0; i < seen_body["n"].get<int>(); ++i) {
            choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", content + "#" + std::to_string(i)}}}});
        }
        res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
    });

    ::setenv("IRERA_TEST_API_KEY", "sk-test", 1);
    HttpChatBackend backend(http_spec(BackendKind::chat_http, local.endpoint()));
    Gateway gw(fast_retries(3));

    SamplingParams two;
    two.n = 2;
    two.seed = 42;
    auto out = gw.complete(backend, Role::teacher, "infer", "hello", two);
    CHECK(out == std::vector<std::string>{"hello#0", "hello#1"});
    CHECK(seen_auth == "Bearer sk-test");
    CHECK(seen_body["model"] == "test-model");
    CHECK(seen_body["temperature"] == 0.0);
    CHECK(seen_body["seed"] == 42);

    CHECK(gw.complete(backend, Role::teacher, "infer", "fail once").front() == "fail once#0");
    CHECK(code_of([&] { gw.complete(backend, Role::teacher, "infer", "reject"); }) == ErrorCode::request_rejected);
    CHECK(code_of([&] { gw.complete(backend, Role::teacher, "infer", "garbage"); }) == ErrorCode::malformed_response);
    ::unsetenv("IRERA_TEST_API_KEY");
}

TEST_CASE("http embed backend restores input order") {
    LocalServer local;
    local.server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        auto body = nlohmann::json::parse(req.body);
        nlohmann::json data = nlohmann::json::array();
        const auto inputs = body["input"].get<std::vector<std::string>>();
        for (std::size_t i = inputs.size(); i-- > 0;) {
            data.push_back({{"index", i}, {"embedding", {static_cast<double>(inputs[i].size()), 0.0}}});
        }
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    HttpEmbedBackend backend(http_spec(BackendKind::embed_http, local.endpoint()));
    auto rows = backend.embed_batch(std::vector<std::string>{"a", "bbb"});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0][0] == 1.0f);
    CHECK(rows[1][0] == 3.0f);
}

TEST_CASE("unreachable endpoint is a transport error") {
    HttpChatBackend backend(http_spec(BackendKind::chat_http, "http://127.0.0.1:1/v1"));
    Gateway gw(fast_retries(2));
    CHECK(code_of([&] { gw.complete(backend, Role::student, "infer", "x"); }) == ErrorCode::transport);
}

TEST_CASE("backend spec validation and json") {
    BackendSpec spec = scripted_chat("x");
    spec.params.n = 0;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = http_spec(BackendKind::chat_http, "");
    CHECK_THROWS_AS(spec.validate(), Error);

    spec = http_spec(BackendKind::chat_http, "https://api.example.com/v1");
    spec.params.temperature = 0.3;
    spec.params.seed = 9;
    auto back = backend_spec_from_json(backend_spec_to_json(spec));
    CHECK(back.id == spec.id);
    CHECK(back.kind == spec.kind);
    CHECK(back.endpoint == spec.endpoint);
    CHECK(back.params == spec.params);
    CHECK(back.api_key_env == spec.api_key_env);
}
