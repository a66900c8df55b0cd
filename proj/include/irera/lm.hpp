#pragma once

#include <chrono>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace irera {

enum class BackendKind { chat_http, embed_http, chat_scripted, embed_scripted };
enum class Role { student, teacher, retriever };

std::string_view to_string(BackendKind kind) noexcept;
std::string_view to_string(Role role) noexcept;
BackendKind backend_kind_from_string(std::string_view s);
Role role_from_string(std::string_view s);

struct SamplingParams {
    double temperature = 0.0;
    int max_tokens = 512;
    int n = 1;
    std::optional<std::int64_t> seed;

    bool operator==(const SamplingParams&) const = default;
};

struct BackendSpec {
    std::string id;
    BackendKind kind = BackendKind::chat_scripted;
    std::string endpoint;    // base URL, http kinds only
    std::string model_name;
    SamplingParams params;
    std::string script;      // scripted kinds only
    std::string api_key_env = "OPENAI_API_KEY";

    bool is_chat() const noexcept {
        return kind == BackendKind::chat_http || kind == BackendKind::chat_scripted;
    }
    void validate() const;
};

// Backends

class ChatBackend {
public:
    explicit ChatBackend(BackendSpec spec);
    virtual ~ChatBackend() = default;
    ChatBackend(const ChatBackend&) = delete;
    ChatBackend& operator=(const ChatBackend&) = delete;

    const BackendSpec& spec() const noexcept { return spec_; }

    /// One upstream request returning `params.n` completions.
    virtual std::vector<std::string> generate(const std::string& prompt, const SamplingParams& params) = 0;

private:
    BackendSpec spec_;
};

class EmbedBackend {
public:
    explicit EmbedBackend(BackendSpec spec);
    virtual ~EmbedBackend() = default;
    EmbedBackend(const EmbedBackend&) = delete;
    EmbedBackend& operator=(const EmbedBackend&) = delete;

    const BackendSpec& spec() const noexcept { return spec_; }

    /// One upstream request; vectors are returned as produced, unnormalized.
    virtual std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) = 0;

private:
    BackendSpec spec_;
};

/// Chat backend answering through a callback; the callback receives the
/// prompt and the completion index in [0, n).
class ScriptedChatBackend final : public ChatBackend {
public:
    using Responder = std::function<std::string(const std::string& prompt, int index)>;

    ScriptedChatBackend(BackendSpec spec, Responder responder);

    /// Transcript keyed by sha256 hex digest of the prompt. Lists shorter
    /// than n are cycled.
    static std::unique_ptr<ScriptedChatBackend>
    from_transcript(BackendSpec spec, std::map<std::string, std::vector<std::string>> transcript);

    std::vector<std::string> generate(const std::string& prompt, const SamplingParams& params) override;

private:
    Responder responder_;
};

class ScriptedEmbedBackend final : public EmbedBackend {
public:
    using Embedder = std::function<std::vector<float>(const std::string& text)>;

    ScriptedEmbedBackend(BackendSpec spec, Embedder embedder);

    /// One-hot over a vocabulary matched by normalized name. Texts outside
    /// the vocabulary map to the uniform vector.
    static std::unique_ptr<ScriptedEmbedBackend> one_hot(BackendSpec spec, std::vector<std::string> vocabulary);

    std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) override;

private:
    Embedder embedder_;
};

/// OpenAI-compatible `POST {endpoint}/chat/completions`.
class HttpChatBackend final : public ChatBackend {
public:
    using ChatBackend::ChatBackend;
    std::vector<std::string> generate(const std::string& prompt, const SamplingParams& params) override;
};

/// OpenAI-compatible `POST {endpoint}/embeddings`.
class HttpEmbedBackend final : public EmbedBackend {
public:
    using EmbedBackend::EmbedBackend;
    std::vector<std::vector<float>> embed_batch(std::span<const std::string> texts) override;
};

// Glass-box oracle

struct GoldRecord {
    std::string text;
    std::vector<std::string> gold_names;
};

/// Scripted chat backend that answers from gold labels. The current input is
/// the record whose text occurs latest in the prompt (longest on ties). A
/// prompt carrying an "Options:" line after that text gets the gold labels
/// restricted to the options, in option order; otherwise all gold labels.
/// When the prompt ends on the rationale prefix the answer is wrapped in a
/// short rationale and the output prefix taken from the format legend.
std::unique_ptr<ScriptedChatBackend> glass_box_mock(BackendSpec spec, std::vector<GoldRecord> dataset);

/// The bare answer the glass-box mock would give, before format wrapping.
std::string glass_box_answer(std::span<const GoldRecord> dataset, const std::string& prompt);

// Call accounting

struct LedgerKey {
    std::string backend;
    Role role = Role::student;
    std::string module;  // "infer", "rank", "retrieve", "index", ...

    auto operator<=>(const LedgerKey&) const = default;
};

struct LedgerCounter {
    std::uint64_t upstream_calls = 0;
    std::uint64_t cache_hits = 0;

    std::uint64_t invocations() const noexcept { return upstream_calls + cache_hits; }
    bool operator==(const LedgerCounter&) const = default;
};

using LedgerSnapshot = std::map<LedgerKey, LedgerCounter>;

/// Counters per (backend, role, module). Counters only grow.
class CallLedger {
public:
    void record_upstream(const LedgerKey& key);
    void record_hit(const LedgerKey& key);
    LedgerSnapshot snapshot() const;

private:
    mutable std::mutex mutex_;
    LedgerSnapshot counters_;
};

LedgerSnapshot ledger_delta(const LedgerSnapshot& before, const LedgerSnapshot& after);

/// Sums counters over entries matching the given filters (empty = any).
LedgerCounter ledger_total(const LedgerSnapshot& snap, std::optional<Role> role = std::nullopt,
                           std::string_view module = {}, std::string_view backend = {});

nlohmann::json ledger_to_json(const LedgerSnapshot& snap);
LedgerSnapshot ledger_from_json(const nlohmann::json& j);

// Cache

std::string chat_cache_key(const BackendSpec& spec, const SamplingParams& params, std::string_view prompt);
std::string embed_cache_key(const BackendSpec& spec, std::string_view text);

/// Content-addressed response store: in memory, mirrored to one file per
/// entry (name = hex digest) when a directory is configured.
class ResponseCache {
public:
    explicit ResponseCache(std::optional<std::filesystem::path> dir = std::nullopt);

    std::optional<nlohmann::json> get(const std::string& key);
    void put(const std::string& key, const nlohmann::json& value);

    const std::optional<std::filesystem::path>& directory() const noexcept { return dir_; }

private:
    std::optional<std::filesystem::path> dir_;
    std::mutex mutex_;
    std::unordered_map<std::string, nlohmann::json> memory_;
};

struct CacheStats {
    std::size_t entries = 0;
    std::uintmax_t total_bytes = 0;
    std::vector<std::pair<std::string, std::uintmax_t>> files;  // digest, size
};

CacheStats cache_stats(const std::filesystem::path& dir);

// Gateway

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_backoff{1000};
};

struct GatewayOptions {
    std::optional<std::filesystem::path> cache_dir;
    std::size_t max_concurrency = 8;
    RetryPolicy retry;
};

/// Single entry point for model calls: cache lookup, in-flight request
/// deduplication, bounded upstream concurrency, retries and the ledger.
class Gateway {
public:
    explicit Gateway(GatewayOptions options = {});

    std::vector<std::string> complete(ChatBackend& backend, Role role, std::string_view module,
                                      const std::string& prompt, const SamplingParams& params);

    std::vector<std::string> complete(ChatBackend& backend, Role role, std::string_view module,
                                      const std::string& prompt) {
        return complete(backend, role, module, prompt, backend.spec().params);
    }

    /// Unit-norm vectors, one per text. Each text is cached on its own; the
    /// batch counts as one upstream call when any text misses, else one hit.
    std::vector<std::vector<float>> embed(EmbedBackend& backend, Role role, std::string_view module,
                                          std::span<const std::string> texts);

    const CallLedger& ledger() const noexcept { return ledger_; }
    CallLedger& ledger() noexcept { return ledger_; }
    const GatewayOptions& options() const noexcept { return options_; }

private:
    template <class Fn>
    auto with_retries(Fn&& fn) -> decltype(fn());

    GatewayOptions options_;
    ResponseCache cache_;
    CallLedger ledger_;
    std::counting_semaphore<> slots_;
    std::mutex inflight_mutex_;
    std::unordered_map<std::string, std::shared_future<nlohmann::json>> inflight_;
};

std::vector<float> l2_normalize(std::vector<float> v);

/// Instantiates a backend from its spec. Scripted kinds read a JSON script
/// (path relative to `base_dir`); see the README for the script types.
std::unique_ptr<ChatBackend> make_chat_backend(const BackendSpec& spec, const std::filesystem::path& base_dir);
std::unique_ptr<EmbedBackend> make_embed_backend(const BackendSpec& spec, const std::filesystem::path& base_dir);

nlohmann::json backend_spec_to_json(const BackendSpec& spec);
BackendSpec backend_spec_from_json(const nlohmann::json& j);

} // namespace irera
