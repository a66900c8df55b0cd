#include "irera/signatures.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "irera/error.hpp"
#include "irera/text.hpp"

namespace irera {

namespace {

constexpr std::string_view block_separator = "\n\n---\n\n";

FieldSpec make_rationale(const FieldSpec& first_output) {
    return FieldSpec{std::string(Signature::rationale_name), std::string(Signature::rationale_prefix),
                     "Let's think step by step in order to ${produce the " + first_output.name +
                         "}. We ...",
                     FieldRole::output};
}

std::string field_line(const FieldSpec& field, std::string_view value) {
    std::string line = field.prefix;
    if (!value.empty()) {
        line += ' ';
        line += value;
    }
    return line;
}

std::string legend_line(const FieldSpec& field) {
    if (field.description.empty()) return field.prefix + " ${" + field.name + "}";
    return field.prefix + " " + field.description;
}

// Position of `prefix` at a line start at or after `from`, or npos.
std::size_t find_at_line_start(std::string_view text, std::string_view prefix, std::size_t from) {
    std::size_t pos = from;
    while (pos <= text.size()) {
        std::size_t hit = text.find(prefix, pos);
        if (hit == std::string_view::npos) return hit;
        if (hit == 0 || text[hit - 1] == '\n' || hit == from) return hit;
        pos = hit + 1;
    }
    return std::string_view::npos;
}

// A model may keep going and start another example block; cut at the first
// separator line.
std::string_view strip_trailing_block(std::string_view completion) {
    std::size_t pos = 0;
    while ((pos = completion.find("---", pos)) != std::string_view::npos) {
        bool line_start = pos == 0 || completion[pos - 1] == '\n';
        std::size_t end = pos + 3;
        bool line_end = end == completion.size() || completion[end] == '\n' || completion[end] == '\r';
        if (line_start && line_end) return completion.substr(0, pos);
        pos = end;
    }
    return completion;
}

std::string_view strip_quotes(std::string_view s) {
    auto is_quote = [](char c) { return c == '"' || c == '\'' || c == '`'; };
    while (!s.empty() && is_quote(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_quote(s.back())) s.remove_suffix(1);
    return s;
}

// "1." / "1)" / "-" / "*" / "•" followed by whitespace or end.
std::string_view strip_enumeration(std::string_view s) {
    std::size_t i = 0;
    if (!s.empty() && (s[0] == '-' || s[0] == '*')) {
        i = 1;
    } else if (s.rfind("•", 0) == 0) {
        i = std::string_view("•").size();
    } else {
        while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        if (i == 0 || i >= s.size() || (s[i] != '.' && s[i] != ')')) return s;
        ++i;
    }
    if (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) return s;
    return s.substr(i);
}

std::string clean_item(std::string_view item) {
    std::string_view current = item;
    while (true) {
        std::string_view next = strip_enumeration(strip_quotes(text::trim(current)));
        next = text::trim(next);
        if (next == current) break;
        current = next;
    }
    return std::string(current);
}

} // namespace

Signature::Signature(std::string name, std::string instruction, std::vector<FieldSpec> fields,
                     bool chain_of_thought)
    : name_(std::move(name)), instruction_(std::move(instruction)), fields_(std::move(fields)),
      chain_of_thought_(chain_of_thought) {
    std::unordered_set<std::string> seen;
    std::ptrdiff_t first_input = -1;
    std::ptrdiff_t last_output = -1;
    for (std::size_t i = 0; i < fields_.size(); ++i) {
        const auto& f = fields_[i];
        if (f.name.empty()) throw Error(ErrorCode::invalid_argument, "field name must be non-empty");
        if (f.prefix.empty()) throw Error(ErrorCode::invalid_argument, "field '" + f.name + "' has an empty prefix");
        if (!seen.insert(f.name).second) throw Error(ErrorCode::invalid_argument, "duplicate field name '" + f.name + "'");
        if (chain_of_thought_ && f.name == rationale_name) {
            throw Error(ErrorCode::invalid_argument, "field name 'rationale' is reserved for chain-of-thought");
        }
        if (f.role == FieldRole::input && first_input < 0) first_input = static_cast<std::ptrdiff_t>(i);
        if (f.role == FieldRole::output) last_output = static_cast<std::ptrdiff_t>(i);
    }
    if (first_input < 0 || last_output < 0 || first_input > last_output) {
        throw Error(ErrorCode::invalid_argument,
                    "signature '" + name_ + "' needs an input field before an output field");
    }

    bool spliced = false;
    for (const auto& f : fields_) {
        if (chain_of_thought_ && !spliced && f.role == FieldRole::output) {
            rendered_.push_back(make_rationale(f));
            spliced = true;
        }
        rendered_.push_back(f);
    }
}

std::vector<const FieldSpec*> Signature::inputs() const {
    std::vector<const FieldSpec*> out;
    for (const auto& f : fields_) if (f.role == FieldRole::input) out.push_back(&f);
    return out;
}

std::vector<const FieldSpec*> Signature::outputs() const {
    std::vector<const FieldSpec*> out;
    for (const auto& f : fields_) if (f.role == FieldRole::output) out.push_back(&f);
    return out;
}

void Signature::validate_demo(const Demo& demo) const {
    for (const auto& f : rendered_) {
        bool present = demo.values.contains(f.name);
        if (!present && f.name != rationale_name) {
            throw Error(ErrorCode::invalid_argument, "demo lacks field '" + f.name + "'");
        }
    }
    for (const auto& [key, value] : demo.values) {
        bool known = std::any_of(rendered_.begin(), rendered_.end(),
                                 [&](const FieldSpec& f) { return f.name == key; });
        if (!known) throw Error(ErrorCode::invalid_argument, "demo has unknown field '" + key + "'");
    }
}

bool Signature::operator==(const Signature& other) const {
    return to_json() == other.to_json();
}

nlohmann::json Signature::to_json() const {
    nlohmann::json fields = nlohmann::json::array();
    for (const auto& f : fields_) {
        fields.push_back({{"name", f.name},
                          {"prefix", f.prefix},
                          {"description", f.description},
                          {"role", f.role == FieldRole::input ? "input" : "output"}});
    }
    return {{"name", name_}, {"instruction", instruction_}, {"chain_of_thought", chain_of_thought_},
            {"fields", std::move(fields)}};
}

Signature Signature::from_json(const nlohmann::json& j) {
    try {
        std::vector<FieldSpec> fields;
        for (const auto& f : j.at("fields")) {
            std::string role = f.value("role", "input");
            if (role != "input" && role != "output") {
                throw Error(ErrorCode::invalid_argument, "field role must be 'input' or 'output', got '" + role + "'");
            }
            fields.push_back(FieldSpec{f.at("name").get<std::string>(), f.at("prefix").get<std::string>(),
                                       f.value("description", std::string{}),
                                       role == "input" ? FieldRole::input : FieldRole::output});
        }
        return Signature(j.value("name", std::string("custom")), j.at("instruction").get<std::string>(),
                         std::move(fields), j.value("chain_of_thought", true));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::invalid_argument, std::string("bad signature definition: ") + e.what());
    }
}

std::string render_prompt(const Signature& sig, std::span<const Demo> demos, const FieldValues& input_values) {
    for (const auto* f : sig.inputs()) {
        if (!input_values.contains(f->name)) throw Error(ErrorCode::missing_input_field, f->name);
    }

    std::string out = sig.instruction();
    out += block_separator;
    out += "Follow the following format.\n\n";
    bool first = true;
    for (const auto& f : sig.rendered_fields()) {
        if (!first) out += '\n';
        out += legend_line(f);
        first = false;
    }

    for (const auto& demo : demos) {
        out += block_separator;
        first = true;
        for (const auto& f : sig.rendered_fields()) {
            auto it = demo.values.find(f.name);
            if (it == demo.values.end()) continue;
            if (!first) out += '\n';
            out += field_line(f, it->second);
            first = false;
        }
    }

    out += block_separator;
    const FieldSpec* open = nullptr;
    for (const auto& f : sig.rendered_fields()) {
        if (f.role == FieldRole::input) {
            out += field_line(f, input_values.at(f.name));
            out += '\n';
        } else if (open == nullptr) {
            open = &f;
        }
    }
    out += open->prefix;
    return out;
}

FieldValues parse_completion(const Signature& sig, std::string_view completion) {
    std::vector<const FieldSpec*> pending;
    for (const auto& f : sig.rendered_fields()) {
        if (f.role == FieldRole::output) pending.push_back(&f);
    }

    const std::string_view body = strip_trailing_block(completion);
    // Start offsets of each pending field's value, npos when absent.
    std::vector<std::size_t> value_start(pending.size(), std::string_view::npos);
    std::vector<std::size_t> prefix_start(pending.size(), std::string_view::npos);

    std::size_t cursor = 0;
    while (cursor < body.size() && std::isspace(static_cast<unsigned char>(body[cursor]))) ++cursor;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const auto& prefix = pending[i]->prefix;
        std::size_t hit = find_at_line_start(body, prefix, cursor);
        if (i == 0 && hit != cursor) {
            // The prompt already emitted this prefix.
            prefix_start[i] = cursor;
            value_start[i] = cursor;
            continue;
        }
        if (hit == std::string_view::npos) continue;
        prefix_start[i] = hit;
        value_start[i] = hit + prefix.size();
        cursor = value_start[i];
    }

    FieldValues out;
    for (std::size_t i = 0; i < pending.size(); ++i) {
        const bool is_rationale = sig.chain_of_thought() && pending[i]->name == Signature::rationale_name;
        if (value_start[i] == std::string_view::npos) {
            if (is_rationale) continue;
            throw Error(ErrorCode::missing_output_field, pending[i]->name);
        }
        std::size_t end = body.size();
        for (std::size_t j = i + 1; j < pending.size(); ++j) {
            if (prefix_start[j] != std::string_view::npos) {
                end = prefix_start[j];
                break;
            }
        }
        std::string_view value = text::trim(body.substr(value_start[i], end - value_start[i]));
        if (is_rationale && value.empty()) continue;
        out[pending[i]->name] = std::string(value);
    }
    return out;
}

std::vector<std::string> parse_label_list(std::string_view raw) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t end = raw.find_first_of(",\n", start);
        if (end == std::string_view::npos) end = raw.size();
        std::string item = clean_item(raw.substr(start, end - start));
        if (!item.empty() && seen.insert(text::to_lower(item)).second) out.push_back(std::move(item));
        start = end + 1;
    }
    return out;
}

Signature signature_preset(std::string_view name) {
    const FieldSpec options{"options", "Options:", "List of comma-separated options to choose from",
                            FieldRole::input};
    if (name == "biodex-infer") {
        return Signature(
            "biodex-infer",
            "Given a snippet from a medical article, identify the adverse drug reactions affecting the patient. Always return reactions.",
            {{"text", "Article:", "", FieldRole::input},
             {"output", "Reactions:", "list of comma-separated adverse drug reactions", FieldRole::output}},
            true);
    }
    if (name == "biodex-rank") {
        return Signature(
            "biodex-rank",
            "Given a snippet from a medical article, pick the 10 most applicable adverse reactions from the options that are directly expressed in the snippet.",
            {{"text", "Article:", "", FieldRole::input},
             options,
             {"output", "Reactions:", "list of comma-separated adverse drug reactions", FieldRole::output}},
            true);
    }
    if (name == "esco-infer") {
        return Signature(
            "esco-infer",
            "Given a snippet from a job vacancy, identify all the ESCO job skills mentioned. Always return skills.",
            {{"text", "Vacancy:", "", FieldRole::input},
             {"output", "Skills:", "list of comma-separated ESCO skills", FieldRole::output}},
            true);
    }
    if (name == "esco-rank") {
        return Signature(
            "esco-rank",
            "Given a snippet from a job vacancy, pick the 10 most applicable skills from the options that are directly expressed in the snippet.",
            {{"text", "Vacancy:", "", FieldRole::input},
             options,
             {"output", "Skills:", "list of comma-separated ESCO skills", FieldRole::output}},
            true);
    }
    throw Error(ErrorCode::invalid_argument, "unknown signature preset '" + std::string(name) + "'");
}

std::vector<std::string> signature_preset_names() {
    return {"biodex-infer", "biodex-rank", "esco-infer", "esco-rank"};
}

Signature load_signature(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open signature file " + path.string());
    try {
        return Signature::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::invalid_argument, path.string() + ": " + e.what());
    }
}

} // namespace irera
