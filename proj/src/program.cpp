#include "irera/program.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <unordered_map>

#include "irera/error.hpp"
#include "irera/text.hpp"

namespace irera {

namespace {

const FieldSpec& primary_output(const Signature& sig) {
    return *sig.outputs().front();
}

const FieldSpec& options_field(const Signature& sig) {
    auto inputs = sig.inputs();
    for (const auto* f : inputs) {
        if (f->name == "options") return *f;
    }
    if (inputs.size() < 2) {
        throw Error(ErrorCode::invalid_argument, "rank signature '" + sig.name() + "' needs an options input field");
    }
    return *inputs[1];
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += ", ";
        out += items[i];
    }
    return out;
}

std::vector<LabelId> prior_order(const LabelOntology& ontology) {
    std::vector<LabelId> order(ontology.size());
    std::iota(order.begin(), order.end(), LabelId{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](LabelId a, LabelId b) { return ontology[a].prior > ontology[b].prior; });
    return order;
}

} // namespace

ChatBackend& InContextModule::backend() const {
    const auto& chosen = role == Role::teacher ? teacher : student;
    if (!chosen) {
        throw Error(ErrorCode::config, "module '" + name + "' has no " + std::string(to_string(role)) + " backend");
    }
    return *chosen;
}

InContextModule InContextModule::as_teacher() const {
    InContextModule copy = *this;
    copy.demos.clear();
    copy.role = Role::teacher;
    return copy;
}

const TraceRecord* Trace::find(std::string_view module) const {
    for (const auto& r : records) {
        if (r.module == module) return &r;
    }
    return nullptr;
}

InferResult infer(const ExecutionContext& ctx, const InContextModule& module, int completions,
                  std::string_view text, Trace* trace) {
    const auto& sig = module.signature;
    const FieldValues inputs{{sig.inputs().front()->name, std::string(text)}};
    const std::string prompt = render_prompt(sig, module.demos, inputs);

    SamplingParams params = module.backend().spec().params;
    params.n = std::max(1, completions);
    auto raw = ctx.gateway.complete(module.backend(), module.role, module.name, prompt, params);

    InferResult result;
    std::set<std::string> seen;
    std::optional<FieldValues> first_parsed;
    std::size_t failures = 0;
    for (const auto& completion : raw) {
        FieldValues fields;
        try {
            fields = parse_completion(sig, completion);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::missing_output_field) throw;
            ++failures;
            continue;
        }
        if (!first_parsed) first_parsed = fields;
        if (auto it = fields.find(std::string(Signature::rationale_name)); it != fields.end()) {
            result.rationales.push_back(it->second);
        }
        for (auto& label : parse_label_list(fields[primary_output(sig).name])) {
            if (seen.insert(text::to_lower(label)).second) result.queries.push_back(std::move(label));
        }
    }
    result.failed = failures == raw.size();

    if (trace) {
        trace->records.push_back(TraceRecord{module.name, inputs, first_parsed.value_or(FieldValues{}),
                                             !result.failed});
    }
    return result;
}

RankResult rank(const ExecutionContext& ctx, const InContextModule& module, std::string_view text,
                std::span<const LabelId> options, Trace* trace) {
    if (options.empty()) throw Error(ErrorCode::invalid_argument, "rank needs at least one option");
    const auto& sig = module.signature;
    const auto& ontology = ctx.labels.ontology;

    std::vector<std::string> names;
    std::unordered_map<std::string, LabelId> by_name;
    for (auto id : options) {
        names.push_back(ontology[id].name);
        by_name.emplace(text::normalize_name(ontology[id].name), id);
    }
    const FieldValues inputs{{sig.inputs().front()->name, std::string(text)},
                             {options_field(sig).name, join(names)}};
    const std::string prompt = render_prompt(sig, module.demos, inputs);

    SamplingParams params = module.backend().spec().params;
    params.n = 1;
    auto raw = ctx.gateway.complete(module.backend(), module.role, module.name, prompt, params);

    RankResult result;
    FieldValues fields;
    try {
        fields = parse_completion(sig, raw.front());
    } catch (const Error& e) {
        if (e.code() != ErrorCode::missing_output_field) throw;
        result.failed = true;
    }
    if (!result.failed) {
        if (auto it = fields.find(std::string(Signature::rationale_name)); it != fields.end()) result.rationale = it->second;
        std::set<LabelId> seen;
        for (const auto& label : parse_label_list(fields[primary_output(sig).name])) {
            auto it = by_name.find(text::normalize_name(label));
            if (it == by_name.end()) {
                ++result.unmatched;
                continue;
            }
            if (seen.insert(it->second).second) result.matched.push_back(it->second);
        }
    }
    if (trace) trace->records.push_back(TraceRecord{module.name, inputs, fields, !result.failed});
    return result;
}

std::vector<LabelId> compose_final_order(std::span<const LabelId> matched, std::span<const LabelId> retrieval_order,
                                         std::size_t num_options) {
    std::vector<bool> placed(retrieval_order.size(), false);
    std::vector<LabelId> out;
    out.reserve(retrieval_order.size());
    for (auto id : matched) {
        if (id < placed.size() && !placed[id]) {
            placed[id] = true;
            out.push_back(id);
        }
    }
    // Options first, then the tail; both in retrieval order.
    for (auto id : retrieval_order.first(std::min(num_options, retrieval_order.size()))) {
        if (!placed[id]) {
            placed[id] = true;
            out.push_back(id);
        }
    }
    for (auto id : retrieval_order) {
        if (!placed[id]) {
            placed[id] = true;
            out.push_back(id);
        }
    }
    return out;
}

Prediction forward_infer_retrieve(const ExecutionContext& ctx, const ProgramState& state, std::string_view text,
                                  Trace* trace) {
    auto inferred = infer(ctx, state.infer, state.config.completions, text, trace);
    auto retrieved = retrieve(ctx.gateway, ctx.labels, inferred.queries, state.config.prior_weight);

    Prediction p;
    p.queries = std::move(inferred.queries);
    p.rationales = std::move(inferred.rationales);
    p.parse_failed = inferred.failed;
    p.final_order = std::move(retrieved.order);
    return p;
}

Prediction forward_irera(const ExecutionContext& ctx, const ProgramState& state, std::string_view text,
                         Trace* trace) {
    auto inferred = infer(ctx, state.infer, state.config.completions, text, trace);
    auto retrieved = retrieve(ctx.gateway, ctx.labels, inferred.queries, state.config.prior_weight);

    Prediction p;
    p.queries = std::move(inferred.queries);
    p.rationales = std::move(inferred.rationales);
    p.parse_failed = inferred.failed;

    const std::size_t c = std::min(state.config.num_options, retrieved.order.size());
    p.options.assign(retrieved.order.begin(), retrieved.order.begin() + static_cast<std::ptrdiff_t>(c));
    if (!p.options.empty()) {
        auto ranked = rank(ctx, state.rank, text, p.options, trace);
        p.rank_output = std::move(ranked.matched);
        p.unmatched = ranked.unmatched;
        p.parse_failed = p.parse_failed || ranked.failed;
        if (!ranked.rationale.empty()) p.rationales.push_back(std::move(ranked.rationale));
    }
    p.final_order = compose_final_order(p.rank_output, retrieved.order, c);
    return p;
}

Prediction baseline_prior(const LabelOntology& ontology) {
    Prediction p;
    p.final_order = prior_order(ontology);
    return p;
}

Prediction baseline_exact_match(const LabelOntology& ontology, std::string_view text) {
    const std::string haystack = text::to_lower(text);
    std::vector<std::pair<std::size_t, LabelId>> hits;
    for (const auto& label : ontology.labels()) {
        auto pos = haystack.find(text::to_lower(label.name));
        if (pos != std::string::npos) hits.emplace_back(pos, label.id);
    }
    std::sort(hits.begin(), hits.end());

    Prediction p;
    std::vector<bool> placed(ontology.size(), false);
    for (auto [pos, id] : hits) {
        placed[id] = true;
        p.final_order.push_back(id);
    }
    for (auto id : prior_order(ontology)) {
        if (!placed[id]) p.final_order.push_back(id);
    }
    return p;
}

Prediction baseline_naive_retrieve(Gateway& gateway, const LabelSpace& space, std::string_view text) {
    std::vector<std::string> queries;
    if (!text::trim(text).empty()) queries.emplace_back(text);
    Prediction p;
    p.queries = queries;
    p.final_order = retrieve(gateway, space, queries, 0.0).order;
    return p;
}

std::string_view to_string(ProgramKind kind) noexcept {
    switch (kind) {
    case ProgramKind::infer_retrieve_rank: return "irera";
    case ProgramKind::infer_retrieve: return "infer-retrieve";
    case ProgramKind::prior: return "prior";
    case ProgramKind::exact_match: return "exact";
    case ProgramKind::naive_retrieve: return "retrieve";
    }
    return "unknown";
}

ProgramKind program_kind_from_string(std::string_view s) {
    for (auto k : {ProgramKind::infer_retrieve_rank, ProgramKind::infer_retrieve, ProgramKind::prior,
                   ProgramKind::exact_match, ProgramKind::naive_retrieve}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorCode::invalid_argument, "unknown program kind '" + std::string(s) + "'");
}

Prediction run_program(const ExecutionContext& ctx, const ProgramState& state, ProgramKind kind,
                       std::string_view text, Trace* trace) {
    switch (kind) {
    case ProgramKind::infer_retrieve_rank: return forward_irera(ctx, state, text, trace);
    case ProgramKind::infer_retrieve: return forward_infer_retrieve(ctx, state, text, trace);
    case ProgramKind::prior: return baseline_prior(ctx.labels.ontology);
    case ProgramKind::exact_match: return baseline_exact_match(ctx.labels.ontology, text);
    case ProgramKind::naive_retrieve: return baseline_naive_retrieve(ctx.gateway, ctx.labels, text);
    }
    throw Error(ErrorCode::invalid_argument, "unknown program kind");
}

Prediction fallback_prediction(std::size_t num_labels) {
    Prediction p;
    p.final_order.resize(num_labels);
    std::iota(p.final_order.begin(), p.final_order.end(), LabelId{0});
    return p;
}

bool is_permutation_of_labels(std::span<const LabelId> order, std::size_t num_labels) {
    if (order.size() != num_labels) return false;
    std::vector<bool> seen(num_labels, false);
    for (auto id : order) {
        if (id >= num_labels || seen[id]) return false;
        seen[id] = true;
    }
    return true;
}

// Artifact

namespace {

ArtifactModule to_artifact_module(const InContextModule& m) {
    return ArtifactModule{m.signature, m.demos, m.student ? m.student->spec().id : std::string(),
                          m.teacher ? m.teacher->spec().id : std::string()};
}

nlohmann::json module_json(const ArtifactModule& m) {
    nlohmann::json demos = nlohmann::json::array();
    for (const auto& d : m.demos) demos.push_back(d.values);
    return {{"signature", m.signature.name()},
            {"signature_definition", m.signature.to_json()},
            {"demos", std::move(demos)},
            {"student", m.student},
            {"teacher", m.teacher}};
}

ArtifactModule module_from_json(const nlohmann::json& j) {
    auto sig = Signature::from_json(j.at("signature_definition"));
    std::vector<Demo> demos;
    for (const auto& d : j.at("demos")) {
        Demo demo{d.get<FieldValues>()};
        sig.validate_demo(demo);
        demos.push_back(std::move(demo));
    }
    return ArtifactModule{std::move(sig), std::move(demos), j.value("student", std::string()),
                          j.value("teacher", std::string())};
}

} // namespace

CompiledProgram compile_artifact(const ProgramState& state, std::string config_digest) {
    return CompiledProgram{to_artifact_module(state.infer), to_artifact_module(state.rank), state.config,
                           std::move(config_digest)};
}

std::string artifact_to_text(const CompiledProgram& program) {
    nlohmann::json j = {
        {"format", "irera-compiled-program/1"},
        {"config_digest", program.config_digest},
        {"hyperparameters",
         {{"A", program.config.prior_weight}, {"C", program.config.num_options}, {"n", program.config.completions}}},
        {"modules", {{"infer", module_json(program.infer)}, {"rank", module_json(program.rank)}}},
    };
    return j.dump(2) + "\n";
}

CompiledProgram artifact_from_text(std::string_view text) {
    try {
        auto j = nlohmann::json::parse(text);
        if (j.value("format", std::string()) != "irera-compiled-program/1") {
            throw Error(ErrorCode::invalid_argument, "not a compiled-program artifact");
        }
        const auto& hp = j.at("hyperparameters");
        ProgramConfig config{hp.at("A").get<double>(), hp.at("C").get<std::size_t>(), hp.at("n").get<int>()};
        return CompiledProgram{module_from_json(j.at("modules").at("infer")), module_from_json(j.at("modules").at("rank")),
                               config, j.value("config_digest", std::string())};
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("bad artifact: ") + e.what());
    }
}

} // namespace irera
