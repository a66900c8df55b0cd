#include "irera/optimizer.hpp"

#include <limits>
#include <numeric>

#include "irera/error.hpp"
#include "irera/parallel.hpp"

namespace irera {

namespace {

Prediction run_stage(const ExecutionContext& ctx, const ProgramState& state, Stage stage, std::string_view text,
                     Trace* trace) {
    return stage == Stage::infer_retrieve ? forward_infer_retrieve(ctx, state, text, trace)
                                          : forward_irera(ctx, state, text, trace);
}

InContextModule& stage_module(ProgramState& state, Stage stage) {
    return stage == Stage::infer_retrieve ? state.infer : state.rank;
}

Demo demo_from_record(const TraceRecord& record) {
    Demo demo{record.inputs};
    for (const auto& [k, v] : record.outputs) demo.values[k] = v;
    return demo;
}

void require_teacher(const ProgramState& state, Stage stage) {
    const auto& m = stage == Stage::infer_retrieve ? state.infer : state.rank;
    if (!m.optimizable()) throw Error(ErrorCode::config, "module '" + m.name + "' has no teacher to bootstrap from");
}

} // namespace

void OptimizerConfig::validate() const {
    if (num_programs < 1) throw Error(ErrorCode::config, "num_programs must be >= 1");
    if (max_demos < 1) throw Error(ErrorCode::config, "max_demos must be >= 1");
    if (max_demos > train.size()) {
        throw Error(ErrorCode::config, "max_demos (" + std::to_string(max_demos) + ") exceeds the " +
                                           std::to_string(train.size()) + " train inputs");
    }
    if (validation.empty()) throw Error(ErrorCode::config, "validation set is empty");
    for (const auto& ex : validation) {
        if (ex.gold.empty()) throw Error(ErrorCode::config, "validation examples must be labeled");
    }
    if (metric_k < 1) throw Error(ErrorCode::config, "metric k must be >= 1");
}

std::uint64_t SeededRng::uniform(std::uint64_t lo, std::uint64_t hi) {
    if (lo > hi) throw Error(ErrorCode::invalid_argument, "empty range");
    const std::uint64_t span = hi - lo;
    if (span == std::numeric_limits<std::uint64_t>::max()) return engine_();
    const std::uint64_t range = span + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return lo + x % range;
}

std::string_view optimized_module(Stage stage) noexcept {
    return stage == Stage::infer_retrieve ? "infer" : "rank";
}

std::vector<Trace> bootstrap_traces(const ExecutionContext& ctx, const ProgramState& state, Stage stage,
                                    std::span<const Example> train, const BootstrapOptions& options) {
    require_teacher(state, stage);
    ProgramState teacher_state = state;
    if (state.infer.optimizable()) teacher_state.infer = state.infer.as_teacher();
    if (stage == Stage::infer_retrieve_rank) teacher_state.rank = state.rank.as_teacher();

    const std::string module(optimized_module(stage));
    std::vector<Trace> traces(train.size());
    parallel_for(train.size(), options.max_concurrency, [&](std::size_t i) {
        Trace& trace = traces[i];
        try {
            auto p = run_stage(ctx, teacher_state, stage, train[i].text, &trace);
            if (options.filter_by_metric && !train[i].gold.empty() &&
                rp_contribution(p.final_order, train[i].gold, static_cast<std::int64_t>(options.metric_k)) <= 0.0) {
                for (auto& r : trace.records) {
                    if (r.module == module) r.usable = false;
                }
            }
        } catch (const Error&) {
            for (auto& r : trace.records) r.usable = false;
            if (trace.find(module) == nullptr) trace.records.push_back(TraceRecord{module, {}, {}, false});
        }
    });
    return traces;
}

std::vector<Candidate> sample_candidates(std::span<const Trace> traces, std::string_view module,
                                         const OptimizerConfig& cfg, std::uint64_t seed, std::string* warning) {
    std::vector<const TraceRecord*> usable;
    for (const auto& t : traces) {
        for (const auto& r : t.records) {
            if (r.module == module && r.usable) usable.push_back(&r);
        }
    }

    std::vector<Candidate> out;
    out.push_back(Candidate{0, {}, 0.0});
    if (usable.empty()) {
        if (warning) *warning = "NoUsableTraces: only the zero-shot candidate for '" + std::string(module) + "'";
        return out;
    }

    SeededRng rng(seed);
    for (std::size_t c = 1; c < cfg.num_programs; ++c) {
        auto k = static_cast<std::size_t>(rng.uniform(1, cfg.max_demos));
        k = std::min(k, usable.size());
        std::vector<std::size_t> pool(usable.size());
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        Candidate cand{c, {}, 0.0};
        for (std::size_t i = 0; i < k; ++i) {
            auto j = static_cast<std::size_t>(rng.uniform(i, pool.size() - 1));
            std::swap(pool[i], pool[j]);
            cand.demos.push_back(demo_from_record(*usable[pool[i]]));
        }
        out.push_back(std::move(cand));
    }
    return out;
}

Selection select_best(const ExecutionContext& ctx, const ProgramState& state, Stage stage,
                      std::span<const Candidate> candidates, std::span<const Example> validation,
                      std::size_t metric_k, std::size_t max_concurrency) {
    if (candidates.empty()) throw Error(ErrorCode::invalid_argument, "no candidates to select from");
    Selection sel;
    const std::size_t ks[] = {metric_k};
    for (const auto& cand : candidates) {
        ProgramState trial = state;
        auto& module = stage_module(trial, stage);
        module.demos = cand.demos;

        Candidate scored = cand;
        try {
            for (const auto& d : cand.demos) module.signature.validate_demo(d);
            auto report = evaluate(
                ctx.gateway, [&](const Example& ex) { return run_stage(ctx, trial, stage, ex.text, nullptr); },
                validation, ks, ctx.labels.ontology.size(), max_concurrency);
            scored.score = report.metrics.rp.at(metric_k);
        } catch (const Error&) {
            scored.score = 0.0;
        }
        sel.scored.push_back(scored);
    }
    sel.best = sel.scored.front();
    for (const auto& c : sel.scored) {
        if (c.score > sel.best.score) sel.best = c;
    }
    return sel;
}

namespace {

void run_stage_optimization(const ExecutionContext& ctx, ProgramState& program, Stage stage,
                            const OptimizerConfig& cfg, std::uint64_t seed, StageReport& report) {
    report.module = std::string(optimized_module(stage));
    const auto before = ctx.gateway.ledger().snapshot();
    try {
        require_teacher(program, stage);
        auto traces = bootstrap_traces(ctx, program, stage, cfg.train,
                                       BootstrapOptions{cfg.max_concurrency, cfg.filter_traces, cfg.metric_k});
        report.traces = traces.size();
        for (const auto& t : traces) {
            if (const auto* r = t.find(report.module); r != nullptr && r->usable) ++report.usable_traces;
        }
        auto candidates = sample_candidates(traces, report.module, cfg, seed, &report.warning);
        auto sel = select_best(ctx, program, stage, candidates, cfg.validation, cfg.metric_k, cfg.max_concurrency);
        report.candidates = sel.scored;
        report.selected = sel.best.id;
        stage_module(program, stage).demos = sel.best.demos;
    } catch (const Error& e) {
        report.error = e.what();
    }
    report.ledger_delta = ledger_delta(before, ctx.gateway.ledger().snapshot());
}

} // namespace

OptimizationResult sequential_optimize(const ExecutionContext& ctx, const ProgramState& seed_program,
                                       const OptimizerConfig& cfg) {
    cfg.validate();
    OptimizationResult result{seed_program, {}, {}};
    run_stage_optimization(ctx, result.program, Stage::infer_retrieve, cfg, cfg.rng_seed, result.infer_stage);
    run_stage_optimization(ctx, result.program, Stage::infer_retrieve_rank, cfg, cfg.rng_seed + 1,
                           result.rank_stage);
    return result;
}

nlohmann::json budget_report_to_json(const OptimizationResult& result, const OptimizerConfig& cfg) {
    auto stage_json = [](const StageReport& s) {
        nlohmann::json candidates = nlohmann::json::array();
        for (const auto& c : s.candidates) {
            candidates.push_back({{"id", c.id}, {"demos", c.demos.size()}, {"score", c.score}});
        }
        return nlohmann::json{{"module", s.module},
                              {"traces", s.traces},
                              {"usable_traces", s.usable_traces},
                              {"candidates", std::move(candidates)},
                              {"selected", s.selected},
                              {"warning", s.warning},
                              {"error", s.error},
                              {"ledger_delta", ledger_to_json(s.ledger_delta)}};
    };
    const OptimizationSizes sizes{cfg.train.size(), cfg.validation.size(), cfg.num_programs};
    auto check = verify_optimization_budget(result.infer_stage.ledger_delta, result.rank_stage.ledger_delta, sizes);
    return {
        {"kind", "optimization_budget"},
        {"sizes", {{"train", sizes.train}, {"validation", sizes.validation}, {"num_programs", sizes.num_programs}}},
        {"expected",
         {{"teacher_upstream_per_module_max", sizes.train},
          {"teacher_upstream_total_max", 2 * sizes.train},
          {"student_upstream_per_module_max", sizes.num_programs * sizes.validation},
          {"student_upstream_total_max", 2 * sizes.num_programs * sizes.validation},
          {"stage2_infer_student_upstream", 0}}},
        {"stages", {stage_json(result.infer_stage), stage_json(result.rank_stage)}},
        {"check", budget_check_to_json(check)},
    };
}

} // namespace irera
