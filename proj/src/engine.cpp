#include "irera/engine.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "irera/error.hpp"
#include "irera/parallel.hpp"
#include "irera/text.hpp"

namespace irera {

namespace {

// Collects every config problem before failing.
class Problems {
public:
    void add(std::string msg) { items_.push_back(std::move(msg)); }
    bool empty() const noexcept { return items_.empty(); }
    void raise() const {
        if (items_.empty()) return;
        std::string msg = std::to_string(items_.size()) + " problem(s) in config:";
        for (const auto& i : items_) msg += "\n  - " + i;
        throw Error(ErrorCode::config, msg);
    }

private:
    std::vector<std::string> items_;
};

template <class T>
void read_value(const nlohmann::json& obj, const char* key, const std::string& path, T& out, Problems& problems) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) return;
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        problems.add(path + "." + key + ": wrong type");
    }
}

std::optional<std::filesystem::path> read_path(const nlohmann::json& paths, const char* key,
                                               const std::filesystem::path& base, bool must_exist,
                                               Problems& problems) {
    auto it = paths.find(key);
    if (it == paths.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) {
        problems.add(std::string("paths.") + key + ": must be a string");
        return std::nullopt;
    }
    std::filesystem::path p = base / it->get<std::string>();
    if (must_exist && !std::filesystem::exists(p)) {
        problems.add(std::string("paths.") + key + ": " + p.string() + " does not exist");
    }
    return p;
}

std::size_t parse_metric(const std::string& metric, Problems& problems) {
    const std::string prefix = "rp@";
    if (metric.rfind(prefix, 0) == 0) {
        try {
            std::size_t used = 0;
            auto k = std::stoul(metric.substr(prefix.size()), &used);
            if (used == metric.size() - prefix.size() && k >= 1) return k;
        } catch (const std::exception&) {
        }
    }
    problems.add("hyperparameters.metric: expected rp@K, got '" + metric + "'");
    return 10;
}

Signature resolve_signature(const std::string& ref, const std::filesystem::path& base) {
    for (const auto& name : signature_preset_names()) {
        if (ref == name) return signature_preset(ref);
    }
    return load_signature(base / ref);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out << content;
}

} // namespace

RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    Problems problems;
    RunConfig cfg;
    cfg.base_dir = base_dir;
    cfg.digest = text::sha256_hex(j.dump());
    if (!j.is_object()) throw Error(ErrorCode::config, "config must be a JSON object");

    read_value(j, "task", "config", cfg.task, problems);
    if (cfg.task != "biodex" && cfg.task != "esco" && cfg.task != "custom") {
        problems.add("task: expected biodex, esco or custom, got '" + cfg.task + "'");
    }
    if (cfg.task == "biodex") {
        cfg.infer_signature = "biodex-infer";
        cfg.rank_signature = "biodex-rank";
        cfg.hyper.prior_weight = 1000.0;
    } else if (cfg.task == "esco") {
        cfg.infer_signature = "esco-infer";
        cfg.rank_signature = "esco-rank";
        cfg.hyper.prior_weight = 0.0;
    }
    const nlohmann::json empty = nlohmann::json::object();
    const auto& sigs = j.contains("signatures") ? j.at("signatures") : empty;
    read_value(sigs, "infer", "signatures", cfg.infer_signature, problems);
    read_value(sigs, "rank", "signatures", cfg.rank_signature, problems);
    for (auto [key, ref] : {std::pair{"infer", &cfg.infer_signature}, std::pair{"rank", &cfg.rank_signature}}) {
        if (ref->empty()) {
            problems.add(std::string("signatures.") + key + ": required for custom tasks");
            continue;
        }
        try {
            resolve_signature(*ref, base_dir);
        } catch (const Error& e) {
            problems.add(std::string("signatures.") + key + ": " + e.what());
        }
    }

    const auto& paths = j.contains("paths") ? j.at("paths") : empty;
    if (auto p = read_path(paths, "ontology", base_dir, true, problems)) {
        cfg.paths.ontology = *p;
    } else {
        problems.add("paths.ontology: required");
    }
    cfg.paths.priors = read_path(paths, "priors", base_dir, true, problems);
    if (auto p = read_path(paths, "embeddings", base_dir, false, problems)) {
        cfg.paths.embeddings = *p;
    } else {
        problems.add("paths.embeddings: required");
    }
    cfg.paths.train = read_path(paths, "train", base_dir, true, problems);
    cfg.paths.validation = read_path(paths, "validation", base_dir, true, problems);
    cfg.paths.test = read_path(paths, "test", base_dir, true, problems);
    cfg.paths.cache_dir = read_path(paths, "cache_dir", base_dir, false, problems);
    cfg.paths.artifact_out = read_path(paths, "artifact_out", base_dir, false, problems);

    std::set<std::string> ids;
    if (auto it = j.find("backends"); it != j.end() && it->is_array()) {
        for (std::size_t i = 0; i < it->size(); ++i) {
            try {
                auto spec = backend_spec_from_json(it->at(i));
                spec.validate();
                if (!ids.insert(spec.id).second) problems.add("backends[" + std::to_string(i) + "]: duplicate id '" + spec.id + "'");
                bool http = spec.kind == BackendKind::chat_http || spec.kind == BackendKind::embed_http;
                if (!http && !std::filesystem::exists(base_dir / spec.script)) {
                    problems.add("backends[" + std::to_string(i) + "].script: " + (base_dir / spec.script).string() +
                                 " does not exist");
                }
                cfg.backends.push_back(std::move(spec));
            } catch (const Error& e) {
                problems.add("backends[" + std::to_string(i) + "]: " + e.what());
            }
        }
    } else {
        problems.add("backends: required array");
    }

    auto kind_of = [&](const std::string& id) -> std::optional<BackendKind> {
        for (const auto& b : cfg.backends) {
            if (b.id == id) return b.kind;
        }
        return std::nullopt;
    };
    auto check_chat = [&](const std::string& id, const std::string& where, bool required) {
        if (id.empty()) {
            if (required) problems.add(where + ": required");
            return;
        }
        auto kind = kind_of(id);
        if (!kind) {
            problems.add(where + ": unknown backend '" + id + "'");
        } else if (*kind != BackendKind::chat_http && *kind != BackendKind::chat_scripted) {
            problems.add(where + ": backend '" + id + "' is not a chat backend");
        }
    };
    const auto& roles = j.contains("roles") ? j.at("roles") : empty;
    for (auto [key, target] : {std::pair{"infer", &cfg.infer}, std::pair{"rank", &cfg.rank}}) {
        const auto& m = roles.contains(key) ? roles.at(key) : empty;
        read_value(m, "student", std::string("roles.") + key, target->student, problems);
        read_value(m, "teacher", std::string("roles.") + key, target->teacher, problems);
        check_chat(target->student, std::string("roles.") + key + ".student", true);
        check_chat(target->teacher, std::string("roles.") + key + ".teacher", false);
    }
    read_value(roles, "embedder", "roles", cfg.embedder, problems);
    if (cfg.embedder.empty()) {
        problems.add("roles.embedder: required");
    } else if (auto kind = kind_of(cfg.embedder); !kind) {
        problems.add("roles.embedder: unknown backend '" + cfg.embedder + "'");
    } else if (*kind != BackendKind::embed_http && *kind != BackendKind::embed_scripted) {
        problems.add("roles.embedder: backend '" + cfg.embedder + "' is not an embedding backend");
    }

    const auto& hp = j.contains("hyperparameters") ? j.at("hyperparameters") : empty;
    auto& h = cfg.hyper;
    read_value(hp, "A", "hyperparameters", h.prior_weight, problems);
    read_value(hp, "C", "hyperparameters", h.num_options, problems);
    read_value(hp, "n", "hyperparameters", h.completions, problems);
    read_value(hp, "num_programs", "hyperparameters", h.num_programs, problems);
    read_value(hp, "max_demos", "hyperparameters", h.max_demos, problems);
    read_value(hp, "Ks", "hyperparameters", h.ks, problems);
    read_value(hp, "max_concurrency", "hyperparameters", h.max_concurrency, problems);
    read_value(hp, "rng_seed", "hyperparameters", h.rng_seed, problems);
    read_value(hp, "filter_traces", "hyperparameters", h.filter_traces, problems);
    read_value(hp, "retry_attempts", "hyperparameters", h.retry_attempts, problems);
    read_value(hp, "retry_backoff_ms", "hyperparameters", h.retry_backoff_ms, problems);
    read_value(hp, "index_batch_size", "hyperparameters", h.index_batch_size, problems);
    std::string metric = "rp@10";
    read_value(hp, "metric", "hyperparameters", metric, problems);
    h.metric_k = parse_metric(metric, problems);

    if (!(h.prior_weight >= 0.0)) problems.add("hyperparameters.A: must be >= 0");
    if (h.num_options < 1) problems.add("hyperparameters.C: must be >= 1");
    if (h.completions < 1) problems.add("hyperparameters.n: must be >= 1");
    if (h.num_programs < 1) problems.add("hyperparameters.num_programs: must be >= 1");
    if (h.max_demos < 1) problems.add("hyperparameters.max_demos: must be >= 1");
    if (h.ks.empty()) problems.add("hyperparameters.Ks: must be non-empty");
    for (auto k : h.ks) {
        if (k < 1) problems.add("hyperparameters.Ks: every K must be >= 1");
    }
    if (h.max_concurrency < 1) problems.add("hyperparameters.max_concurrency: must be >= 1");
    if (h.retry_attempts < 1) problems.add("hyperparameters.retry_attempts: must be >= 1");
    if (h.retry_backoff_ms < 0) problems.add("hyperparameters.retry_backoff_ms: must be >= 0");

    problems.raise();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::config, path.string() + ": " + e.what());
    }
    auto base = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return parse_run_config(j, base);
}

// Engine

namespace {

GatewayOptions gateway_options(const RunConfig& c) {
    return GatewayOptions{c.paths.cache_dir, c.hyper.max_concurrency,
                          RetryPolicy{c.hyper.retry_attempts, std::chrono::milliseconds(c.hyper.retry_backoff_ms)}};
}

} // namespace

Engine::Engine(RunConfig config) : config_(std::move(config)), gateway_(gateway_options(config_)) {
    for (const auto& spec : config_.backends) specs_.emplace(spec.id, spec);
}

std::shared_ptr<ChatBackend> Engine::chat(const std::string& id) {
    if (id.empty()) return nullptr;
    if (auto it = chats_.find(id); it != chats_.end()) return it->second;
    auto spec = specs_.find(id);
    if (spec == specs_.end()) throw Error(ErrorCode::config, "unknown backend '" + id + "'");
    std::shared_ptr<ChatBackend> backend = make_chat_backend(spec->second, config_.base_dir);
    chats_.emplace(id, backend);
    return backend;
}

EmbedBackend& Engine::embedder() {
    if (!embedder_) embedder_ = make_embed_backend(specs_.at(config_.embedder), config_.base_dir);
    return *embedder_;
}

const LabelOntology& Engine::ontology() {
    if (!ontology_) ontology_ = load_ontology(config_.paths.ontology, config_.paths.priors);
    return *ontology_;
}

const EmbeddingIndex& Engine::index() {
    if (!index_) {
        if (!std::filesystem::exists(config_.paths.embeddings)) {
            throw Error(ErrorCode::io, config_.paths.embeddings.string() + " does not exist; run `index build` first");
        }
        auto idx = EmbeddingIndex::load(config_.paths.embeddings);
        check_index_matches(ontology(), idx);
        index_ = std::move(idx);
    }
    return *index_;
}

ExecutionContext Engine::context() {
    return ExecutionContext{gateway_, LabelSpace{ontology(), index(), embedder()}};
}

ProgramState Engine::seed_program() {
    ProgramState state{
        InContextModule{"infer", resolve_signature(config_.infer_signature, config_.base_dir), {},
                        chat(config_.infer.student), chat(config_.infer.teacher)},
        InContextModule{"rank", resolve_signature(config_.rank_signature, config_.base_dir), {},
                        chat(config_.rank.student), chat(config_.rank.teacher)},
        ProgramConfig{config_.hyper.prior_weight, config_.hyper.num_options, config_.hyper.completions},
    };
    return state;
}

ProgramState Engine::load_program(const std::filesystem::path& artifact) {
    auto compiled = artifact_from_text(read_file(artifact));
    auto bind = [&](const ArtifactModule& m, const char* name) {
        return InContextModule{name, m.signature, m.demos, chat(m.student), chat(m.teacher)};
    };
    return ProgramState{bind(compiled.infer, "infer"), bind(compiled.rank, "rank"), compiled.config};
}

DatasetLoad Engine::dataset(const std::string& name_or_path, bool require_labels) {
    std::optional<std::filesystem::path> path;
    if (name_or_path == "train") {
        path = config_.paths.train;
    } else if (name_or_path == "validation") {
        path = config_.paths.validation;
    } else if (name_or_path == "test") {
        path = config_.paths.test;
    } else {
        path = std::filesystem::path(name_or_path);
    }
    if (!path) throw Error(ErrorCode::config, "paths." + name_or_path + " is not configured");
    return load_dataset(*path, ontology(), require_labels);
}

nlohmann::json Engine::build_index(const std::optional<std::filesystem::path>& texts_path) {
    std::vector<std::string> texts;
    if (texts_path) {
        std::ifstream in(*texts_path);
        if (!in) throw Error(ErrorCode::io, "cannot open " + texts_path->string());
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            texts.push_back(line);
        }
        while (!texts.empty() && texts.back().empty()) texts.pop_back();
        if (texts.size() != ontology().size()) {
            throw Error(ErrorCode::invalid_argument, texts_path->string() + " has " + std::to_string(texts.size()) +
                                                         " lines but the ontology has " +
                                                         std::to_string(ontology().size()) + " labels");
        }
    } else {
        texts = ontology().names();
    }
    const auto before = gateway_.ledger().snapshot();
    auto idx = irera::build_index(gateway_, embedder(), texts, config_.hyper.index_batch_size);
    idx.save(config_.paths.embeddings);
    index_ = std::move(idx);
    return {{"kind", "index"},
            {"path", config_.paths.embeddings.string()},
            {"rows", index_->rows()},
            {"dim", index_->dim()},
            {"ledger_delta", ledger_to_json(ledger_delta(before, gateway_.ledger().snapshot()))}};
}

nlohmann::json Engine::run(ProgramKind kind, const std::optional<std::filesystem::path>& program,
                           std::span<const std::string> texts, std::size_t top) {
    auto state = program ? load_program(*program) : seed_program();
    auto ctx = context();
    const auto before = gateway_.ledger().snapshot();
    std::vector<Prediction> predictions(texts.size());
    std::vector<std::string> errors(texts.size());
    parallel_for(texts.size(), config_.hyper.max_concurrency, [&](std::size_t i) {
        try {
            predictions[i] = run_program(ctx, state, kind, texts[i]);
        } catch (const std::exception& e) {
            errors[i] = e.what();
            predictions[i] = fallback_prediction(ontology().size());
        }
    });

    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const auto& p = predictions[i];
        std::vector<std::string> labels;
        std::vector<LabelId> ids;
        for (std::size_t r = 0; r < std::min(top, p.final_order.size()); ++r) {
            ids.push_back(p.final_order[r]);
            labels.push_back(ontology()[p.final_order[r]].name);
        }
        nlohmann::json row = {{"index", i},
                              {"labels", labels},
                              {"label_ids", ids},
                              {"queries", p.queries},
                              {"rank_output", p.rank_output},
                              {"unmatched", p.unmatched},
                              {"parse_failed", p.parse_failed}};
        if (!errors[i].empty()) row["error"] = errors[i];
        rows.push_back(std::move(row));
    }
    return {{"kind", "predictions"},
            {"program", to_string(kind)},
            {"predictions", std::move(rows)},
            {"ledger_delta", ledger_to_json(ledger_delta(before, gateway_.ledger().snapshot()))}};
}

nlohmann::json Engine::optimize(const std::optional<std::filesystem::path>& artifact_out, std::string* artifact_text) {
    if (!config_.paths.train) throw Error(ErrorCode::config, "paths.train is required to optimize");
    if (!config_.paths.validation) throw Error(ErrorCode::config, "paths.validation is required to optimize");

    OptimizerConfig oc;
    oc.train = dataset("train", false).examples;
    oc.validation = dataset("validation", true).examples;
    oc.num_programs = config_.hyper.num_programs;
    oc.max_demos = config_.hyper.max_demos;
    oc.rng_seed = config_.hyper.rng_seed;
    oc.metric_k = config_.hyper.metric_k;
    oc.filter_traces = config_.hyper.filter_traces;
    oc.max_concurrency = config_.hyper.max_concurrency;

    auto result = sequential_optimize(context(), seed_program(), oc);
    auto text = artifact_to_text(compile_artifact(result.program, config_.digest));
    auto out = artifact_out ? artifact_out : config_.paths.artifact_out;
    if (out) write_file(*out, text);
    if (artifact_text) *artifact_text = text;

    auto report = budget_report_to_json(result, oc);
    report["artifact"] = out ? out->string() : std::string();
    report["artifact_digest"] = text::sha256_hex(text);
    return report;
}

nlohmann::json Engine::evaluate(ProgramKind kind, const std::optional<std::filesystem::path>& program,
                                const std::string& dataset_name) {
    auto data = dataset(dataset_name, true);
    const bool needs_lm = kind == ProgramKind::infer_retrieve_rank || kind == ProgramKind::infer_retrieve;
    std::optional<ProgramState> state;
    std::string digest;
    if (needs_lm) {
        state = program ? load_program(*program) : seed_program();
        if (program) digest = text::sha256_hex(read_file(*program));
    }
    // Baselines that never embed must not require an index.
    const bool needs_index = needs_lm || kind == ProgramKind::naive_retrieve;
    std::optional<ExecutionContext> ctx;
    if (needs_index) ctx.emplace(context());
    const auto& onto = ontology();
    ForwardFn forward;
    switch (kind) {
    case ProgramKind::prior:
        forward = [&](const Example&) { return baseline_prior(onto); };
        break;
    case ProgramKind::exact_match:
        forward = [&](const Example& ex) { return baseline_exact_match(onto, ex.text); };
        break;
    case ProgramKind::naive_retrieve:
        forward = [&](const Example& ex) { return baseline_naive_retrieve(gateway_, ctx->labels, ex.text); };
        break;
    default:
        forward = [&](const Example& ex) { return run_program(*ctx, *state, kind, ex.text); };
    }
    auto report = irera::evaluate(gateway_, forward, data.examples, config_.hyper.ks, onto.size(),
                                  config_.hyper.max_concurrency);
    auto j = evaluation_to_json(report, dataset_name, to_string(kind), digest);
    j["dataset_load"] = {{"unknown_label_names", data.unknown_label_names},
                         {"dropped_examples", data.dropped_examples}};
    j["budget"] = budget_check_to_json(verify_inference_budget(report.ledger_delta, kind, data.examples.size()));
    return j;
}

nlohmann::json budget_check_report(const nlohmann::json& report) {
    try {
        const auto kind = report.at("kind").get<std::string>();
        if (kind == "optimization_budget") {
            const auto& sizes = report.at("sizes");
            OptimizationSizes s{sizes.at("train").get<std::size_t>(), sizes.at("validation").get<std::size_t>(),
                                sizes.at("num_programs").get<std::size_t>()};
            const auto& stages = report.at("stages");
            auto check = verify_optimization_budget(ledger_from_json(stages.at(0).at("ledger_delta")),
                                                    ledger_from_json(stages.at(1).at("ledger_delta")), s);
            auto j = budget_check_to_json(check);
            j["report_kind"] = kind;
            return j;
        }
        if (kind == "evaluation") {
            auto check = verify_inference_budget(ledger_from_json(report.at("ledger_delta")),
                                                 program_kind_from_string(report.at("program").get<std::string>()),
                                                 report.at("n").get<std::size_t>());
            auto j = budget_check_to_json(check);
            j["report_kind"] = kind;
            return j;
        }
        throw Error(ErrorCode::invalid_argument, "report kind '" + kind + "' carries no budget");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("bad report: ") + e.what());
    }
}

nlohmann::json cache_stats_to_json(const CacheStats& stats) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& [digest, size] : stats.files) files.push_back({{"digest", digest}, {"bytes", size}});
    return {{"kind", "cache_stats"}, {"entries", stats.entries}, {"total_bytes", stats.total_bytes},
            {"files", std::move(files)}};
}

nlohmann::json Engine::cache_stats_json() {
    if (!config_.paths.cache_dir) throw Error(ErrorCode::config, "paths.cache_dir is not configured");
    auto j = cache_stats_to_json(cache_stats(*config_.paths.cache_dir));
    j["directory"] = config_.paths.cache_dir->string();
    return j;
}

} // namespace irera
