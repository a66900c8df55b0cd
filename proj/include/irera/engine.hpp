#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "irera/data.hpp"
#include "irera/eval.hpp"
#include "irera/lm.hpp"
#include "irera/optimizer.hpp"
#include "irera/program.hpp"
#include "irera/retrieval.hpp"

namespace irera {

struct RunPaths {
    std::filesystem::path ontology;
    std::optional<std::filesystem::path> priors;
    std::filesystem::path embeddings;
    std::optional<std::filesystem::path> train;
    std::optional<std::filesystem::path> validation;
    std::optional<std::filesystem::path> test;
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::filesystem::path> artifact_out;
};

struct ModuleRoles {
    std::string student;
    std::string teacher;  // empty: not optimizable
};

struct Hyperparameters {
    double prior_weight = 0.0;  // A
    std::size_t num_options = 50;  // C
    int completions = 1;  // n
    std::size_t num_programs = 10;
    std::size_t max_demos = 4;
    std::vector<std::size_t> ks{5, 10};
    std::size_t max_concurrency = 8;
    std::uint64_t rng_seed = 0;
    std::size_t metric_k = 10;
    bool filter_traces = false;
    int retry_attempts = 3;
    std::int64_t retry_backoff_ms = 1000;
    std::size_t index_batch_size = 64;
};

/// Declarative run configuration. Relative paths resolve against the
/// directory holding the config file.
struct RunConfig {
    std::filesystem::path base_dir;
    std::string task = "custom";  // biodex | esco | custom
    std::string infer_signature;  // preset name or signature file
    std::string rank_signature;
    RunPaths paths;
    std::vector<BackendSpec> backends;
    ModuleRoles infer;
    ModuleRoles rank;
    std::string embedder;
    Hyperparameters hyper;
    std::string digest;  // sha256 of the canonical config JSON
};

/// Parses and validates a config. Every problem found is reported in one
/// ConfigError, one per line.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

/// Owns everything one configured run needs: backends, gateway, label space.
/// Not safe for concurrent use; internal work is parallel.
class Engine {
public:
    explicit Engine(RunConfig config);

    const RunConfig& config() const noexcept { return config_; }
    Gateway& gateway() noexcept { return gateway_; }

    const LabelOntology& ontology();
    const EmbeddingIndex& index();
    EmbedBackend& embedder();
    ExecutionContext context();

    ProgramState seed_program();
    ProgramState load_program(const std::filesystem::path& artifact);

    /// Resolves "train" / "validation" / "test" to configured paths, anything
    /// else as a file path.
    DatasetLoad dataset(const std::string& name_or_path, bool require_labels);

    nlohmann::json build_index(const std::optional<std::filesystem::path>& texts_path);
    nlohmann::json run(ProgramKind kind, const std::optional<std::filesystem::path>& program,
                       std::span<const std::string> texts, std::size_t top);
    nlohmann::json optimize(const std::optional<std::filesystem::path>& artifact_out, std::string* artifact_text = nullptr);
    nlohmann::json evaluate(ProgramKind kind, const std::optional<std::filesystem::path>& program,
                            const std::string& dataset_name);
    nlohmann::json cache_stats_json();

private:
    std::shared_ptr<ChatBackend> chat(const std::string& id);

    RunConfig config_;
    Gateway gateway_;
    std::map<std::string, BackendSpec> specs_;
    std::map<std::string, std::shared_ptr<ChatBackend>> chats_;
    std::unique_ptr<EmbedBackend> embedder_;
    std::optional<LabelOntology> ontology_;
    std::optional<EmbeddingIndex> index_;
};

/// Re-verifies the bounds for an optimization or evaluation report.
nlohmann::json budget_check_report(const nlohmann::json& report);

nlohmann::json cache_stats_to_json(const CacheStats& stats);

} // namespace irera
