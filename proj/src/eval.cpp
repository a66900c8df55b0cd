#include "irera/eval.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "irera/error.hpp"
#include "irera/parallel.hpp"

namespace irera {

double rp_contribution(std::span<const LabelId> ranking, std::span<const LabelId> gold, std::int64_t k) {
    if (k <= 0) throw Error(ErrorCode::k_non_positive, "k = " + std::to_string(k));
    if (gold.empty()) throw Error(ErrorCode::invalid_argument, "example has no gold labels");
    const std::unordered_set<LabelId> gold_set(gold.begin(), gold.end());
    const auto top = std::min<std::size_t>(static_cast<std::size_t>(k), ranking.size());
    std::size_t relevant = 0;
    for (std::size_t i = 0; i < top; ++i) relevant += gold_set.contains(ranking[i]) ? 1 : 0;
    const auto denom = std::min<std::size_t>(static_cast<std::size_t>(k), gold_set.size());
    return static_cast<double>(relevant) / static_cast<double>(denom);
}

double rp_at_k(std::span<const std::vector<LabelId>> predictions, std::span<const std::vector<LabelId>> golds,
               std::int64_t k) {
    if (k <= 0) throw Error(ErrorCode::k_non_positive, "k = " + std::to_string(k));
    if (predictions.size() != golds.size()) {
        throw Error(ErrorCode::length_mismatch, std::to_string(predictions.size()) + " predictions vs " +
                                                    std::to_string(golds.size()) + " gold sets");
    }
    if (predictions.empty()) throw Error(ErrorCode::length_mismatch, "no examples");
    double sum = 0.0;
    for (std::size_t n = 0; n < predictions.size(); ++n) sum += rp_contribution(predictions[n], golds[n], k);
    return sum / static_cast<double>(predictions.size());
}

double MetricReport::recombine(std::size_t k) const {
    const auto& terms = contributions.at(k);
    if (terms.empty()) return 0.0;
    return std::accumulate(terms.begin(), terms.end(), 0.0) / static_cast<double>(terms.size());
}

EvaluationReport evaluate(Gateway& gateway, const ForwardFn& forward, std::span<const Example> dataset,
                          std::span<const std::size_t> ks, std::size_t num_labels, std::size_t max_concurrency) {
    if (dataset.empty()) throw Error(ErrorCode::empty_dataset, "evaluation dataset is empty");
    const auto before = gateway.ledger().snapshot();

    EvaluationReport report;
    report.predictions.resize(dataset.size());
    std::vector<std::string> errors(dataset.size());
    parallel_for(dataset.size(), max_concurrency, [&](std::size_t i) {
        try {
            auto p = forward(dataset[i]);
            if (!is_permutation_of_labels(p.final_order, num_labels)) {
                throw Error(ErrorCode::invalid_argument, "forward pass returned an incomplete ranking");
            }
            report.predictions[i] = std::move(p);
        } catch (const std::exception& e) {
            errors[i] = e.what();
            report.predictions[i] = fallback_prediction(num_labels);
        }
    });
    report.ledger_delta = ledger_delta(before, gateway.ledger().snapshot());

    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!errors[i].empty()) {
            ++report.errors;
            if (report.error_messages.size() < 10) {
                report.error_messages.push_back("example " + std::to_string(i) + ": " + errors[i]);
            }
        }
        if (report.predictions[i].parse_failed) ++report.parse_failures;
        report.unmatched_rank_outputs += report.predictions[i].unmatched;
    }

    report.metrics.n = dataset.size();
    for (auto k : ks) {
        auto& terms = report.metrics.contributions[k];
        terms.reserve(dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            terms.push_back(rp_contribution(report.predictions[i].final_order, dataset[i].gold,
                                            static_cast<std::int64_t>(k)));
        }
        report.metrics.rp[k] = report.metrics.recombine(k);
    }
    return report;
}

nlohmann::json evaluation_to_json(const EvaluationReport& report, std::string_view dataset_id,
                                  std::string_view program, std::string_view program_digest) {
    nlohmann::json metrics = nlohmann::json::object();
    nlohmann::json contributions = nlohmann::json::object();
    for (const auto& [k, value] : report.metrics.rp) {
        const auto key = "rp@" + std::to_string(k);
        metrics[key] = {{"value", value}, {"percent", value * 100.0}};
        contributions[key] = report.metrics.contributions.at(k);
    }
    return {
        {"kind", "evaluation"},
        {"dataset", dataset_id},
        {"program", program},
        {"program_digest", program_digest},
        {"n", report.metrics.n},
        {"metrics", std::move(metrics)},
        {"contributions", std::move(contributions)},
        {"failures", {{"errors", report.errors}, {"parse_failures", report.parse_failures}}},
        {"error_messages", report.error_messages},
        {"unmatched_rank_outputs", report.unmatched_rank_outputs},
        {"ledger_delta", ledger_to_json(report.ledger_delta)},
    };
}

void BudgetCheck::add(std::string counter, std::string relation, std::uint64_t expected, std::uint64_t actual) {
    const bool ok = relation == "==" ? actual == expected : actual <= expected;
    passed = passed && ok;
    lines.push_back(BudgetLine{std::move(counter), std::move(relation), expected, actual, ok});
}

BudgetCheck verify_optimization_budget(const LedgerSnapshot& stage1, const LedgerSnapshot& stage2,
                                       const OptimizationSizes& sizes) {
    LedgerSnapshot total = stage1;
    for (const auto& [key, c] : stage2) {
        total[key].upstream_calls += c.upstream_calls;
        total[key].cache_hits += c.cache_hits;
    }
    const std::uint64_t per_module_student = sizes.num_programs * sizes.validation;

    BudgetCheck check;
    check.add("teacher upstream (infer)", "<=", sizes.train,
              ledger_total(total, Role::teacher, "infer").upstream_calls);
    check.add("teacher upstream (rank)", "<=", sizes.train, ledger_total(total, Role::teacher, "rank").upstream_calls);
    check.add("teacher upstream (total)", "<=", 2 * sizes.train, ledger_total(total, Role::teacher).upstream_calls);
    check.add("student upstream (infer)", "<=", per_module_student,
              ledger_total(total, Role::student, "infer").upstream_calls);
    check.add("student upstream (rank)", "<=", per_module_student,
              ledger_total(total, Role::student, "rank").upstream_calls);
    check.add("student upstream (total chat)", "<=", 2 * per_module_student,
              ledger_total(total, Role::student).upstream_calls);
    check.add("retriever upstream", "<=", per_module_student + sizes.train,
              ledger_total(total, Role::retriever).upstream_calls);
    check.add("stage-2 student upstream (infer)", "==", 0, ledger_total(stage2, Role::student, "infer").upstream_calls);
    return check;
}

BudgetCheck verify_inference_budget(const LedgerSnapshot& delta, ProgramKind kind, std::size_t inputs) {
    const bool uses_infer = kind == ProgramKind::infer_retrieve_rank || kind == ProgramKind::infer_retrieve;
    const bool uses_rank = kind == ProgramKind::infer_retrieve_rank;
    const bool uses_retrieval = uses_infer || kind == ProgramKind::naive_retrieve;

    BudgetCheck check;
    check.add("infer invocations", "==", uses_infer ? inputs : 0,
              ledger_total(delta, Role::student, "infer").invocations());
    check.add("retrieve invocations", "==", uses_retrieval ? inputs : 0,
              ledger_total(delta, Role::retriever, "retrieve").invocations());
    check.add("rank invocations", "==", uses_rank ? inputs : 0,
              ledger_total(delta, Role::student, "rank").invocations());
    check.add("teacher invocations", "==", 0, ledger_total(delta, Role::teacher).invocations());
    return check;
}

nlohmann::json budget_check_to_json(const BudgetCheck& check) {
    nlohmann::json lines = nlohmann::json::array();
    for (const auto& l : check.lines) {
        lines.push_back({{"counter", l.counter},
                         {"relation", l.relation},
                         {"expected", l.expected},
                         {"actual", l.actual},
                         {"ok", l.ok}});
    }
    return {{"passed", check.passed}, {"lines", std::move(lines)}};
}

} // namespace irera
