#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "irera/eval.hpp"
#include "irera/program.hpp"

namespace irera {

struct OptimizerConfig {
    std::vector<Example> train;       // labels optional
    std::vector<Example> validation;  // labeled
    std::size_t num_programs = 10;
    std::size_t max_demos = 4;
    std::uint64_t rng_seed = 0;
    std::size_t metric_k = 10;
    bool filter_traces = false;  // keep only traces scoring > 0 (labeled train only)
    std::size_t max_concurrency = 8;

    void validate() const;
};

/// The program a stage optimizes: Infer inside Infer-Retrieve, or Rank
/// inside the full program.
enum class Stage { infer_retrieve, infer_retrieve_rank };

struct Candidate {
    std::size_t id = 0;
    std::vector<Demo> demos;  // for the stage's optimized module
    double score = 0.0;
};

struct BootstrapOptions {
    std::size_t max_concurrency = 1;
    bool filter_by_metric = false;  // only applies to labeled inputs
    std::size_t metric_k = 10;
};

/// Runs the stage zero-shot on the teachers over every train input; one
/// trace per input. Inputs whose forward pass fails yield a trace whose
/// records are marked unusable.
std::vector<Trace> bootstrap_traces(const ExecutionContext& ctx, const ProgramState& state, Stage stage,
                                    std::span<const Example> train, const BootstrapOptions& options = {});

std::string_view optimized_module(Stage stage) noexcept;

/// Candidate 0 is zero-shot. Each further candidate draws k ~ U{1..max_demos}
/// usable traces without replacement. `warning` is set when nothing is usable.
std::vector<Candidate> sample_candidates(std::span<const Trace> traces, std::string_view module,
                                         const OptimizerConfig& cfg, std::uint64_t seed, std::string* warning = nullptr);

struct Selection {
    Candidate best;
    std::vector<Candidate> scored;  // every candidate with its validation score
};

/// Scores every candidate on the full validation set; ties go to the lower id.
Selection select_best(const ExecutionContext& ctx, const ProgramState& state, Stage stage,
                      std::span<const Candidate> candidates, std::span<const Example> validation,
                      std::size_t metric_k, std::size_t max_concurrency);

struct StageReport {
    std::string module;
    std::size_t traces = 0;
    std::size_t usable_traces = 0;
    std::vector<Candidate> candidates;
    std::size_t selected = 0;
    std::string warning;
    std::string error;  // set when the stage aborted
    LedgerSnapshot ledger_delta;
};

struct OptimizationResult {
    ProgramState program;
    StageReport infer_stage;
    StageReport rank_stage;
};

/// Optimizes Infer (inside Infer-Retrieve), freezes it, then optimizes Rank
/// inside the full program.
OptimizationResult sequential_optimize(const ExecutionContext& ctx, const ProgramState& seed_program,
                                       const OptimizerConfig& cfg);

/// Budget report: per-stage ledger deltas, candidate scores, and the bound
/// check against the configured sizes.
nlohmann::json budget_report_to_json(const OptimizationResult& result, const OptimizerConfig& cfg);

/// Uniform integers by rejection sampling over std::mt19937_64, whose output
/// is fixed by the standard (unlike std::uniform_int_distribution).
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t uniform(std::uint64_t lo, std::uint64_t hi);

private:
    std::mt19937_64 engine_;
};

} // namespace irera
