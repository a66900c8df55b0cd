#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "irera/data.hpp"
#include "irera/lm.hpp"
#include "irera/retrieval.hpp"
#include "irera/signatures.hpp"

namespace irera {

/// A prompted LM step: a signature, its current demos and the backends that
/// execute it. `role` selects which backend runs; the teacher is only used
/// while bootstrapping.
struct InContextModule {
    std::string name;  // "infer" or "rank"; doubles as the ledger module tag
    Signature signature;
    std::vector<Demo> demos;
    std::shared_ptr<ChatBackend> student;
    std::shared_ptr<ChatBackend> teacher;
    Role role = Role::student;

    ChatBackend& backend() const;
    bool optimizable() const noexcept { return teacher != nullptr; }

    /// Copy that runs zero-shot on the teacher.
    InContextModule as_teacher() const;
};

struct ProgramConfig {
    double prior_weight = 0.0;  // A
    std::size_t num_options = 50;  // C
    int completions = 1;  // n for Infer

    bool operator==(const ProgramConfig&) const = default;
};

struct ProgramState {
    InContextModule infer;
    InContextModule rank;
    ProgramConfig config;
};

struct TraceRecord {
    std::string module;
    FieldValues inputs;
    FieldValues outputs;
    bool usable = true;
};

/// Per-forward-pass record of in-context module calls.
struct Trace {
    std::vector<TraceRecord> records;

    const TraceRecord* find(std::string_view module) const;
};

struct Prediction {
    std::vector<LabelId> final_order;
    std::vector<std::string> queries;
    std::vector<LabelId> options;
    std::vector<LabelId> rank_output;
    std::vector<std::string> rationales;
    std::size_t unmatched = 0;   // rank outputs naming no option
    bool parse_failed = false;   // some module output could not be parsed
};

/// Everything a forward pass needs besides the program state.
struct ExecutionContext {
    Gateway& gateway;
    LabelSpace labels;
};

struct InferResult {
    std::vector<std::string> queries;
    std::vector<std::string> rationales;
    bool failed = false;
};

InferResult infer(const ExecutionContext& ctx, const InContextModule& module, int completions,
                  std::string_view text, Trace* trace = nullptr);

struct RankResult {
    std::vector<LabelId> matched;
    std::size_t unmatched = 0;
    std::string rationale;
    bool failed = false;
};

RankResult rank(const ExecutionContext& ctx, const InContextModule& module, std::string_view text,
                std::span<const LabelId> options, Trace* trace = nullptr);

/// Rank output, then the other options, then the remaining labels; the last
/// two in retrieval order.
std::vector<LabelId> compose_final_order(std::span<const LabelId> matched, std::span<const LabelId> retrieval_order,
                                         std::size_t num_options);

Prediction forward_irera(const ExecutionContext& ctx, const ProgramState& state, std::string_view text,
                         Trace* trace = nullptr);
Prediction forward_infer_retrieve(const ExecutionContext& ctx, const ProgramState& state, std::string_view text,
                                  Trace* trace = nullptr);

Prediction baseline_prior(const LabelOntology& ontology);
Prediction baseline_exact_match(const LabelOntology& ontology, std::string_view text);
Prediction baseline_naive_retrieve(Gateway& gateway, const LabelSpace& space, std::string_view text);

enum class ProgramKind { infer_retrieve_rank, infer_retrieve, prior, exact_match, naive_retrieve };

std::string_view to_string(ProgramKind kind) noexcept;
ProgramKind program_kind_from_string(std::string_view s);

/// Dispatches to the forward pass or baseline named by `kind`.
Prediction run_program(const ExecutionContext& ctx, const ProgramState& state, ProgramKind kind,
                       std::string_view text, Trace* trace = nullptr);

/// Identity order: what every failure mode falls back to.
Prediction fallback_prediction(std::size_t num_labels);

bool is_permutation_of_labels(std::span<const LabelId> order, std::size_t num_labels);

// Compiled-program artifact

struct ArtifactModule {
    Signature signature;
    std::vector<Demo> demos;
    std::string student;
    std::string teacher;
};

struct CompiledProgram {
    ArtifactModule infer;
    ArtifactModule rank;
    ProgramConfig config;
    std::string config_digest;
};

CompiledProgram compile_artifact(const ProgramState& state, std::string config_digest);

/// Deterministic JSON text (sorted keys, fixed indentation).
std::string artifact_to_text(const CompiledProgram& program);
CompiledProgram artifact_from_text(std::string_view text);

} // namespace irera
