#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace irera {

enum class FieldRole { input, output };

struct FieldSpec {
    std::string name;
    std::string prefix;       // e.g. "Article:"
    std::string description;  // may be empty
    FieldRole role = FieldRole::input;
};

using FieldValues = std::map<std::string, std::string>;

/// A worked example for a few-shot prompt, keyed by field name.
struct Demo {
    FieldValues values;

    bool operator==(const Demo&) const = default;
};

/// Prompt schema: instruction plus ordered input/output fields.
///
/// With chain-of-thought enabled, a synthetic rationale field (prefix
/// "Reasoning:") is rendered right before the first declared output.
class Signature {
public:
    static constexpr std::string_view rationale_name = "rationale";
    static constexpr std::string_view rationale_prefix = "Reasoning:";

    Signature(std::string name, std::string instruction, std::vector<FieldSpec> fields,
              bool chain_of_thought);

    const std::string& name() const noexcept { return name_; }
    const std::string& instruction() const noexcept { return instruction_; }
    const std::vector<FieldSpec>& fields() const noexcept { return fields_; }
    bool chain_of_thought() const noexcept { return chain_of_thought_; }

    std::vector<const FieldSpec*> inputs() const;
    std::vector<const FieldSpec*> outputs() const;

    /// Fields in rendering order: declared fields with the rationale spliced
    /// in before the first output when chain-of-thought is on.
    const std::vector<FieldSpec>& rendered_fields() const noexcept { return rendered_; }

    /// Checks that a demo fills every input and only known fields.
    void validate_demo(const Demo& demo) const;

    nlohmann::json to_json() const;
    static Signature from_json(const nlohmann::json& j);

    bool operator==(const Signature& other) const;

private:
    std::string name_;
    std::string instruction_;
    std::vector<FieldSpec> fields_;
    bool chain_of_thought_;
    std::vector<FieldSpec> rendered_;
};

std::string render_prompt(const Signature& sig, std::span<const Demo> demos,
                          const FieldValues& input_values);

/// Recovers output field values from a raw continuation of a rendered prompt.
/// The first pending field may start without its prefix since the prompt
/// already ends with it. Throws MissingOutputField for non-rationale outputs.
FieldValues parse_completion(const Signature& sig, std::string_view completion);

std::vector<std::string> parse_label_list(std::string_view raw);

/// Built-in seed signatures: biodex-infer, biodex-rank, esco-infer, esco-rank.
Signature signature_preset(std::string_view name);
std::vector<std::string> signature_preset_names();

/// Loads a signature from a JSON file, or resolves a preset name.
Signature load_signature(const std::filesystem::path& path);

} // namespace irera
