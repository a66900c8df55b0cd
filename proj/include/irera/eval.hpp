#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "irera/data.hpp"
#include "irera/lm.hpp"
#include "irera/program.hpp"

namespace irera {

/// Gold labels inside the top k of `ranking`, divided by min(k, |gold|).
/// Rankings shorter than k count missing positions as irrelevant.
double rp_contribution(std::span<const LabelId> ranking, std::span<const LabelId> gold, std::int64_t k);

/// Rank-precision at k averaged over examples.
double rp_at_k(std::span<const std::vector<LabelId>> predictions, std::span<const std::vector<LabelId>> golds,
               std::int64_t k);

struct MetricReport {
    std::size_t n = 0;
    std::map<std::size_t, double> rp;                        // k -> RP@k
    std::map<std::size_t, std::vector<double>> contributions;  // k -> per-example terms

    /// Mean of the stored contributions for k.
    double recombine(std::size_t k) const;
};

struct EvaluationReport {
    MetricReport metrics;
    std::size_t errors = 0;          // forward pass threw; fallback ranking used
    std::size_t parse_failures = 0;  // module output unparsable; degraded ranking used
    std::size_t unmatched_rank_outputs = 0;
    std::vector<std::string> error_messages;  // first few, for the report
    LedgerSnapshot ledger_delta;
    std::vector<Prediction> predictions;
};

using ForwardFn = std::function<Prediction(const Example&)>;

/// Runs `forward` over the dataset on up to `max_concurrency` threads and
/// scores every k. Results are reduced in dataset order.
EvaluationReport evaluate(Gateway& gateway, const ForwardFn& forward, std::span<const Example> dataset,
                          std::span<const std::size_t> ks, std::size_t num_labels, std::size_t max_concurrency);

nlohmann::json evaluation_to_json(const EvaluationReport& report, std::string_view dataset_id,
                                  std::string_view program, std::string_view program_digest);

struct BudgetLine {
    std::string counter;
    std::string relation;  // "<=" or "=="
    std::uint64_t expected = 0;
    std::uint64_t actual = 0;
    bool ok = true;
};

struct BudgetCheck {
    bool passed = true;
    std::vector<BudgetLine> lines;

    void add(std::string counter, std::string relation, std::uint64_t expected, std::uint64_t actual);
};

struct OptimizationSizes {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t num_programs = 0;
};

/// Bounds for a two-stage optimization run: teacher calls at most |train| per
/// optimized module, student calls at most num_programs * |val| per optimized
/// module, and no Infer student calls reaching upstream in the second stage.
BudgetCheck verify_optimization_budget(const LedgerSnapshot& stage1, const LedgerSnapshot& stage2,
                                       const OptimizationSizes& sizes);

/// Per-input component invocations for an inference run over `inputs`.
BudgetCheck verify_inference_budget(const LedgerSnapshot& delta, ProgramKind kind, std::size_t inputs);

nlohmann::json budget_check_to_json(const BudgetCheck& check);

} // namespace irera
