#include "irera/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "irera/data.hpp"
#include "irera/error.hpp"
#include "irera/signatures.hpp"
#include "irera/text.hpp"

namespace irera {

std::string_view to_string(BackendKind kind) noexcept {
    switch (kind) {
    case BackendKind::chat_http: return "chat-http";
    case BackendKind::embed_http: return "embed-http";
    case BackendKind::chat_scripted: return "chat-scripted";
    case BackendKind::embed_scripted: return "embed-scripted";
    }
    return "unknown";
}

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::student: return "student";
    case Role::teacher: return "teacher";
    case Role::retriever: return "retriever";
    }
    return "unknown";
}

BackendKind backend_kind_from_string(std::string_view s) {
    for (auto k : {BackendKind::chat_http, BackendKind::embed_http, BackendKind::chat_scripted,
                   BackendKind::embed_scripted}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorCode::config, "unknown backend kind '" + std::string(s) + "'");
}

Role role_from_string(std::string_view s) {
    for (auto r : {Role::student, Role::teacher, Role::retriever}) {
        if (to_string(r) == s) return r;
    }
    throw Error(ErrorCode::invalid_argument, "unknown role '" + std::string(s) + "'");
}

void BackendSpec::validate() const {
    if (id.empty()) throw Error(ErrorCode::config, "backend id must be non-empty");
    if (params.temperature < 0) throw Error(ErrorCode::config, id + ": temperature must be >= 0");
    if (params.max_tokens <= 0) throw Error(ErrorCode::config, id + ": max_tokens must be > 0");
    if (params.n < 1) throw Error(ErrorCode::config, id + ": n must be >= 1");
    bool http = kind == BackendKind::chat_http || kind == BackendKind::embed_http;
    if (http && endpoint.empty()) throw Error(ErrorCode::config, id + ": http backends need an endpoint");
    if (!http && script.empty()) throw Error(ErrorCode::config, id + ": scripted backends need a script");
}

ChatBackend::ChatBackend(BackendSpec spec) : spec_(std::move(spec)) {}
EmbedBackend::EmbedBackend(BackendSpec spec) : spec_(std::move(spec)) {}

// Scripted backends

ScriptedChatBackend::ScriptedChatBackend(BackendSpec spec, Responder responder)
    : ChatBackend(std::move(spec)), responder_(std::move(responder)) {}

std::unique_ptr<ScriptedChatBackend>
ScriptedChatBackend::from_transcript(BackendSpec spec, std::map<std::string, std::vector<std::string>> transcript) {
    auto shared = std::make_shared<const std::map<std::string, std::vector<std::string>>>(std::move(transcript));
    return std::make_unique<ScriptedChatBackend>(std::move(spec), [shared](const std::string& prompt, int index) {
        auto it = shared->find(text::sha256_hex(prompt));
        if (it == shared->end() || it->second.empty()) {
            throw Error(ErrorCode::unknown_input, "prompt digest not in transcript");
        }
        return it->second[static_cast<std::size_t>(index) % it->second.size()];
    });
}

std::vector<std::string> ScriptedChatBackend::generate(const std::string& prompt, const SamplingParams& params) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(params.n));
    for (int i = 0; i < params.n; ++i) out.push_back(responder_(prompt, i));
    return out;
}

ScriptedEmbedBackend::ScriptedEmbedBackend(BackendSpec spec, Embedder embedder)
    : EmbedBackend(std::move(spec)), embedder_(std::move(embedder)) {}

std::unique_ptr<ScriptedEmbedBackend> ScriptedEmbedBackend::one_hot(BackendSpec spec,
                                                                   std::vector<std::string> vocabulary) {
    auto lookup = std::make_shared<std::unordered_map<std::string, std::size_t>>();
    for (std::size_t i = 0; i < vocabulary.size(); ++i) lookup->emplace(text::normalize_name(vocabulary[i]), i);
    const std::size_t dim = vocabulary.size();
    if (dim == 0) throw Error(ErrorCode::invalid_argument, "one-hot vocabulary is empty");
    return std::make_unique<ScriptedEmbedBackend>(std::move(spec), [lookup, dim](const std::string& t) {
        auto it = lookup->find(text::normalize_name(t));
        if (it == lookup->end()) return std::vector<float>(dim, 1.0f);
        std::vector<float> v(dim, 0.0f);
        v[it->second] = 1.0f;
        return v;
    });
}

std::vector<std::vector<float>> ScriptedEmbedBackend::embed_batch(std::span<const std::string> texts) {
    std::vector<std::vector<float>> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embedder_(t));
    return out;
}

// Glass-box oracle

namespace {

// Output prefix that follows the rationale entry in the format legend.
std::string legend_output_prefix(const std::string& prompt) {
    const std::string marker = "\n" + std::string(Signature::rationale_prefix);
    auto pos = prompt.find(marker);
    if (pos == std::string::npos) return {};
    auto next_line = prompt.find('\n', pos + 1);
    if (next_line == std::string::npos) return {};
    auto colon = prompt.find(':', next_line + 1);
    auto eol = prompt.find('\n', next_line + 1);
    if (colon == std::string::npos || (eol != std::string::npos && colon > eol)) return {};
    return prompt.substr(next_line + 1, colon - next_line);
}

} // namespace

std::string glass_box_answer(std::span<const GoldRecord> dataset, const std::string& prompt) {
    const GoldRecord* best = nullptr;
    std::size_t best_pos = 0;
    for (const auto& record : dataset) {
        if (record.text.empty()) continue;
        auto pos = prompt.rfind(record.text);
        if (pos == std::string::npos) continue;
        if (best == nullptr || pos > best_pos || (pos == best_pos && record.text.size() > best->text.size())) {
            best = &record;
            best_pos = pos;
        }
    }
    if (best == nullptr) throw Error(ErrorCode::unknown_input, "prompt matches no glass-box record");

    std::vector<std::string> answer;
    auto options_pos = prompt.find("\nOptions:", best_pos + best->text.size());
    if (options_pos != std::string::npos) {
        auto start = options_pos + std::string_view("\nOptions:").size();
        auto end = prompt.find('\n', start);
        auto options = parse_label_list(prompt.substr(start, end == std::string::npos ? end : end - start));
        std::vector<std::string> gold;
        for (const auto& g : best->gold_names) gold.push_back(text::normalize_name(g));
        for (const auto& option : options) {
            if (std::find(gold.begin(), gold.end(), text::normalize_name(option)) != gold.end()) {
                answer.push_back(option);
            }
        }
    } else {
        answer = best->gold_names;
    }

    std::string joined;
    for (std::size_t i = 0; i < answer.size(); ++i) {
        if (i > 0) joined += ", ";
        joined += answer[i];
    }
    return joined;
}

std::unique_ptr<ScriptedChatBackend> glass_box_mock(BackendSpec spec, std::vector<GoldRecord> dataset) {
    auto shared = std::make_shared<const std::vector<GoldRecord>>(std::move(dataset));
    return std::make_unique<ScriptedChatBackend>(std::move(spec), [shared](const std::string& prompt, int) {
        std::string answer = glass_box_answer(*shared, prompt);
        if (prompt.ends_with(Signature::rationale_prefix)) {
            std::string prefix = legend_output_prefix(prompt);
            if (!prefix.empty()) return " The gold labels are known.\n" + prefix + " " + answer;
        }
        return answer;
    });
}

// Ledger

void CallLedger::record_upstream(const LedgerKey& key) {
    std::lock_guard lock(mutex_);
    ++counters_[key].upstream_calls;
}

void CallLedger::record_hit(const LedgerKey& key) {
    std::lock_guard lock(mutex_);
    ++counters_[key].cache_hits;
}

LedgerSnapshot CallLedger::snapshot() const {
    std::lock_guard lock(mutex_);
    return counters_;
}

LedgerSnapshot ledger_delta(const LedgerSnapshot& before, const LedgerSnapshot& after) {
    LedgerSnapshot out;
    for (const auto& [key, counter] : after) {
        LedgerCounter base;
        if (auto it = before.find(key); it != before.end()) base = it->second;
        LedgerCounter d{counter.upstream_calls - base.upstream_calls, counter.cache_hits - base.cache_hits};
        if (d.invocations() > 0) out.emplace(key, d);
    }
    return out;
}

LedgerCounter ledger_total(const LedgerSnapshot& snap, std::optional<Role> role, std::string_view module,
                           std::string_view backend) {
    LedgerCounter total;
    for (const auto& [key, counter] : snap) {
        if (role && key.role != *role) continue;
        if (!module.empty() && key.module != module) continue;
        if (!backend.empty() && key.backend != backend) continue;
        total.upstream_calls += counter.upstream_calls;
        total.cache_hits += counter.cache_hits;
    }
    return total;
}

nlohmann::json ledger_to_json(const LedgerSnapshot& snap) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [key, counter] : snap) {
        out.push_back({{"backend", key.backend},
                       {"role", to_string(key.role)},
                       {"module", key.module},
                       {"upstream_calls", counter.upstream_calls},
                       {"cache_hits", counter.cache_hits}});
    }
    return out;
}

LedgerSnapshot ledger_from_json(const nlohmann::json& j) {
    LedgerSnapshot out;
    for (const auto& row : j) {
        LedgerKey key{row.at("backend").get<std::string>(), role_from_string(row.at("role").get<std::string>()),
                      row.at("module").get<std::string>()};
        out[key] = LedgerCounter{row.at("upstream_calls").get<std::uint64_t>(),
                                 row.at("cache_hits").get<std::uint64_t>()};
    }
    return out;
}

// Cache

std::string chat_cache_key(const BackendSpec& spec, const SamplingParams& params, std::string_view prompt) {
    nlohmann::json key = {
        {"kind", "chat"},
        {"backend", spec.id},
        {"model", spec.model_name},
        {"temperature", params.temperature},
        {"max_tokens", params.max_tokens},
        {"n", params.n},
        {"seed", params.seed ? nlohmann::json(*params.seed) : nlohmann::json(nullptr)},
        {"prompt", prompt},
    };
    return text::sha256_hex(key.dump());
}

std::string embed_cache_key(const BackendSpec& spec, std::string_view input) {
    nlohmann::json key = {{"kind", "embed"}, {"backend", spec.id}, {"model", spec.model_name}, {"input", input}};
    return text::sha256_hex(key.dump());
}

ResponseCache::ResponseCache(std::optional<std::filesystem::path> dir) : dir_(std::move(dir)) {
    if (dir_) std::filesystem::create_directories(*dir_);
}

std::optional<nlohmann::json> ResponseCache::get(const std::string& key) {
    std::lock_guard lock(mutex_);
    if (auto it = memory_.find(key); it != memory_.end()) return it->second;
    if (!dir_) return std::nullopt;
    std::ifstream in(*dir_ / key);
    if (!in) return std::nullopt;
    try {
        auto value = nlohmann::json::parse(in);
        memory_.emplace(key, value);
        return value;
    } catch (const nlohmann::json::parse_error&) {
        return std::nullopt;  // torn write; treat as a miss
    }
}

void ResponseCache::put(const std::string& key, const nlohmann::json& value) {
    std::lock_guard lock(mutex_);
    memory_[key] = value;
    if (!dir_) return;
    auto tmp = *dir_ / (key + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io, "cannot write cache entry " + tmp.string());
        out << value.dump();
    }
    std::filesystem::rename(tmp, *dir_ / key);
}

CacheStats cache_stats(const std::filesystem::path& dir) {
    CacheStats stats;
    if (!std::filesystem::exists(dir)) return stats;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() == ".tmp") continue;
        auto size = entry.file_size();
        stats.files.emplace_back(entry.path().filename().string(), size);
        stats.total_bytes += size;
    }
    std::sort(stats.files.begin(), stats.files.end());
    stats.entries = stats.files.size();
    return stats;
}

// Gateway

std::vector<float> l2_normalize(std::vector<float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * static_cast<double>(x);
    double norm = std::sqrt(sum);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw Error(ErrorCode::malformed_response, "embedding has zero or non-finite norm");
    }
    for (auto& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
    return v;
}

Gateway::Gateway(GatewayOptions options)
    : options_(std::move(options)), cache_(options_.cache_dir),
      slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, options_.max_concurrency))) {}

template <class Fn>
auto Gateway::with_retries(Fn&& fn) -> decltype(fn()) {
    const int attempts = std::max(1, options_.retry.attempts);
    for (int attempt = 1;; ++attempt) {
        try {
            slots_.acquire();
            struct Release {
                std::counting_semaphore<>& s;
                ~Release() { s.release(); }
            } release{slots_};
            return fn();
        } catch (const Error& e) {
            if (e.code() != ErrorCode::transport || attempt >= attempts) throw;
        }
        std::this_thread::sleep_for(options_.retry.base_backoff * (1 << (attempt - 1)));
    }
}

std::vector<std::string> Gateway::complete(ChatBackend& backend, Role role, std::string_view module,
                                           const std::string& prompt, const SamplingParams& params) {
    if (!backend.spec().is_chat()) {
        throw Error(ErrorCode::invalid_argument, backend.spec().id + " is not a chat backend");
    }
    const LedgerKey ledger_key{backend.spec().id, role, std::string(module)};
    const std::string key = chat_cache_key(backend.spec(), params, prompt);

    std::shared_future<nlohmann::json> waiting;
    std::promise<nlohmann::json> producing;
    {
        std::lock_guard lock(inflight_mutex_);
        if (auto cached = cache_.get(key)) {
            ledger_.record_hit(ledger_key);
            return cached->at("completions").get<std::vector<std::string>>();
        }
        if (auto it = inflight_.find(key); it != inflight_.end()) {
            waiting = it->second;
        } else {
            inflight_.emplace(key, producing.get_future().share());
        }
    }

    if (waiting.valid()) {
        auto value = waiting.get();
        ledger_.record_hit(ledger_key);
        return value.at("completions").get<std::vector<std::string>>();
    }

    try {
        auto completions = with_retries([&] { return backend.generate(prompt, params); });
        if (completions.size() != static_cast<std::size_t>(params.n)) {
            throw Error(ErrorCode::malformed_response, backend.spec().id + ": wrong number of completions");
        }
        nlohmann::json value = {{"kind", "chat"}, {"completions", completions}};
        cache_.put(key, value);
        ledger_.record_upstream(ledger_key);
        producing.set_value(value);
        std::lock_guard lock(inflight_mutex_);
        inflight_.erase(key);
        return completions;
    } catch (...) {
        producing.set_exception(std::current_exception());
        std::lock_guard lock(inflight_mutex_);
        inflight_.erase(key);
        throw;
    }
}

std::vector<std::vector<float>> Gateway::embed(EmbedBackend& backend, Role role, std::string_view module,
                                               std::span<const std::string> texts) {
    if (backend.spec().is_chat()) {
        throw Error(ErrorCode::invalid_argument, backend.spec().id + " is not an embedding backend");
    }
    if (texts.empty()) throw Error(ErrorCode::invalid_argument, "embed needs at least one text");
    const LedgerKey ledger_key{backend.spec().id, role, std::string(module)};

    std::vector<std::string> keys;
    keys.reserve(texts.size());
    for (const auto& t : texts) keys.push_back(embed_cache_key(backend.spec(), t));

    std::vector<std::optional<std::vector<float>>> found(texts.size());
    std::map<std::string, std::shared_future<nlohmann::json>> waiting;
    std::map<std::string, std::promise<nlohmann::json>> producing;
    std::vector<std::size_t> to_fetch;  // first index of each claimed key
    {
        std::lock_guard lock(inflight_mutex_);
        for (std::size_t i = 0; i < texts.size(); ++i) {
            const auto& key = keys[i];
            if (producing.contains(key) || waiting.contains(key)) continue;
            if (auto cached = cache_.get(key)) {
                found[i] = cached->at("vector").get<std::vector<float>>();
            } else if (auto it = inflight_.find(key); it != inflight_.end()) {
                waiting.emplace(key, it->second);
            } else {
                auto& promise = producing[key];
                inflight_.emplace(key, promise.get_future().share());
                to_fetch.push_back(i);
            }
        }
    }

    std::map<std::string, std::vector<float>> fresh;
    if (!to_fetch.empty()) {
        try {
            std::vector<std::string> batch;
            for (auto i : to_fetch) batch.push_back(texts[i]);
            auto vectors = with_retries([&] { return backend.embed_batch(batch); });
            if (vectors.size() != batch.size()) {
                throw Error(ErrorCode::malformed_response, backend.spec().id + ": wrong number of embeddings");
            }
            for (std::size_t j = 0; j < vectors.size(); ++j) {
                if (vectors[j].size() != vectors[0].size()) {
                    throw Error(ErrorCode::dimension_mismatch,
                                backend.spec().id + ": inconsistent embedding dimensions in one batch");
                }
            }
            for (std::size_t j = 0; j < vectors.size(); ++j) {
                auto unit = l2_normalize(std::move(vectors[j]));
                const auto& key = keys[to_fetch[j]];
                nlohmann::json value = {{"kind", "embedding"}, {"vector", unit}};
                cache_.put(key, value);
                fresh.emplace(key, std::move(unit));
                producing[key].set_value(value);
            }
            ledger_.record_upstream(ledger_key);
        } catch (...) {
            std::lock_guard lock(inflight_mutex_);
            for (auto& [key, promise] : producing) {
                if (!fresh.contains(key)) promise.set_exception(std::current_exception());
                inflight_.erase(key);
            }
            throw;
        }
        std::lock_guard lock(inflight_mutex_);
        for (auto& [key, promise] : producing) inflight_.erase(key);
    } else {
        ledger_.record_hit(ledger_key);
    }

    std::map<std::string, std::vector<float>> awaited;
    for (auto& [key, future] : waiting) awaited.emplace(key, future.get().at("vector").get<std::vector<float>>());

    std::vector<std::vector<float>> out(texts.size());
    std::map<std::string, std::size_t> first_index;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (found[i]) {
            out[i] = std::move(*found[i]);
        } else if (auto it = fresh.find(keys[i]); it != fresh.end()) {
            out[i] = it->second;
        } else if (auto w = awaited.find(keys[i]); w != awaited.end()) {
            out[i] = w->second;
        } else {
            out[i] = out.at(first_index.at(keys[i]));
        }
        first_index.emplace(keys[i], i);
    }
    for (const auto& v : out) {
        if (v.size() != out[0].size()) {
            throw Error(ErrorCode::dimension_mismatch, backend.spec().id + ": inconsistent embedding dimensions");
        }
    }
    return out;
}

// Factories

nlohmann::json backend_spec_to_json(const BackendSpec& spec) {
    nlohmann::json params = {{"temperature", spec.params.temperature},
                             {"max_tokens", spec.params.max_tokens},
                             {"n", spec.params.n}};
    if (spec.params.seed) params["seed"] = *spec.params.seed;
    nlohmann::json j = {{"id", spec.id}, {"kind", to_string(spec.kind)}, {"model", spec.model_name},
                        {"params", params}};
    if (!spec.endpoint.empty()) j["endpoint"] = spec.endpoint;
    if (!spec.script.empty()) j["script"] = spec.script;
    if (!spec.api_key_env.empty()) j["api_key_env"] = spec.api_key_env;
    return j;
}

BackendSpec backend_spec_from_json(const nlohmann::json& j) {
    try {
        BackendSpec spec;
        spec.id = j.at("id").get<std::string>();
        spec.kind = backend_kind_from_string(j.at("kind").get<std::string>());
        spec.endpoint = j.value("endpoint", std::string{});
        spec.model_name = j.value("model", std::string{});
        spec.script = j.value("script", std::string{});
        spec.api_key_env = j.value("api_key_env", std::string("OPENAI_API_KEY"));
        if (auto p = j.find("params"); p != j.end()) {
            spec.params.temperature = p->value("temperature", 0.0);
            spec.params.max_tokens = p->value("max_tokens", 512);
            spec.params.n = p->value("n", 1);
            if (p->contains("seed") && !p->at("seed").is_null()) spec.params.seed = p->at("seed").get<std::int64_t>();
        }
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::config, std::string("bad backend definition: ") + e.what());
    }
}

namespace {

nlohmann::json read_script(const BackendSpec& spec, const std::filesystem::path& base_dir) {
    auto path = base_dir / spec.script;
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, spec.id + ": cannot open script " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::config, spec.id + ": bad script " + path.string() + ": " + e.what());
    }
}

std::vector<std::string> read_lines_first_column(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        auto name = text::trim(std::string_view(line).substr(0, line.find('\t')));
        if (!name.empty()) out.emplace_back(name);
    }
    return out;
}

} // namespace

std::unique_ptr<ChatBackend> make_chat_backend(const BackendSpec& spec, const std::filesystem::path& base_dir) {
    spec.validate();
    if (spec.kind == BackendKind::chat_http) return std::make_unique<HttpChatBackend>(spec);
    if (spec.kind != BackendKind::chat_scripted) {
        throw Error(ErrorCode::config, spec.id + " is not a chat backend");
    }
    auto script = read_script(spec, base_dir);
    auto script_dir = (base_dir / spec.script).parent_path();
    const std::string type = script.value("type", std::string{});
    try {
        if (type == "transcript") {
            std::map<std::string, std::vector<std::string>> transcript;
            for (const auto& [digest, reply] : script.at("responses").items()) {
                transcript[digest] = reply.is_array() ? reply.get<std::vector<std::string>>()
                                                      : std::vector<std::string>{reply.get<std::string>()};
            }
            return ScriptedChatBackend::from_transcript(spec, std::move(transcript));
        }
        if (type == "glass_box") {
            std::vector<GoldRecord> records;
            for (const auto& file : script.at("datasets")) {
                for (auto& raw : read_raw_records(script_dir / file.get<std::string>())) {
                    if (raw.labels) records.push_back({std::move(raw.text), std::move(*raw.labels)});
                }
            }
            return glass_box_mock(spec, std::move(records));
        }
        if (type == "constant") {
            std::string completion = script.at("completion").get<std::string>();
            return std::make_unique<ScriptedChatBackend>(spec, [completion](const std::string&, int) {
                return completion;
            });
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::config, spec.id + ": bad script: " + e.what());
    }
    throw Error(ErrorCode::config, spec.id + ": unknown chat script type '" + type + "'");
}

std::unique_ptr<EmbedBackend> make_embed_backend(const BackendSpec& spec, const std::filesystem::path& base_dir) {
    spec.validate();
    if (spec.kind == BackendKind::embed_http) return std::make_unique<HttpEmbedBackend>(spec);
    if (spec.kind != BackendKind::embed_scripted) {
        throw Error(ErrorCode::config, spec.id + " is not an embedding backend");
    }
    auto script = read_script(spec, base_dir);
    auto script_dir = (base_dir / spec.script).parent_path();
    const std::string type = script.value("type", std::string{});
    try {
        if (type == "one_hot") {
            std::vector<std::string> vocabulary;
            if (script.contains("vocabulary_file")) {
                vocabulary = read_lines_first_column(script_dir / script.at("vocabulary_file").get<std::string>());
            } else {
                vocabulary = script.at("vocabulary").get<std::vector<std::string>>();
            }
            return ScriptedEmbedBackend::one_hot(spec, std::move(vocabulary));
        }
        if (type == "table") {
            auto table = std::make_shared<std::unordered_map<std::string, std::vector<float>>>();
            for (const auto& [t, v] : script.at("vectors").items()) {
                table->emplace(text::normalize_name(t), v.get<std::vector<float>>());
            }
            const bool uniform_fallback = script.value("fallback", std::string("error")) == "uniform";
            const std::size_t dim = table->empty() ? 0 : table->begin()->second.size();
            return std::make_unique<ScriptedEmbedBackend>(spec, [table, uniform_fallback, dim](const std::string& t) {
                auto it = table->find(text::normalize_name(t));
                if (it != table->end()) return it->second;
                if (uniform_fallback && dim > 0) return std::vector<float>(dim, 1.0f);
                throw Error(ErrorCode::unknown_input, "no scripted embedding for '" + t + "'");
            });
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::config, spec.id + ": bad script: " + e.what());
    }
    throw Error(ErrorCode::config, spec.id + ": unknown embedding script type '" + type + "'");
}

} // namespace irera
