#include "irera/data.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "irera/error.hpp"
#include "irera/text.hpp"

namespace irera {

namespace {

double parse_prior(std::string_view field, const std::string& where) {
    field = text::trim(field);
    try {
        std::size_t used = 0;
        double v = std::stod(std::string(field), &used);
        if (used != field.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw Error(ErrorCode::malformed_record, where + ": bad prior '" + std::string(field) + "'");
    }
}

} // namespace

std::vector<RawRecord> read_raw_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::vector<RawRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        try {
            auto j = nlohmann::json::parse(line);
            RawRecord rec;
            rec.text = j.at("text").get<std::string>();
            if (auto it = j.find("labels"); it != j.end() && !it->is_null()) {
                rec.labels = it->get<std::vector<std::string>>();
            }
            out.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::malformed_record, where + ": " + e.what());
        }
    }
    return out;
}

DatasetLoad load_dataset(const std::filesystem::path& path, const LabelOntology& ontology, bool require_labels) {
    auto records = read_raw_records(path);
    if (records.empty()) throw Error(ErrorCode::empty_dataset, path.string());

    DatasetLoad load;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto& rec = records[i];
        if (text::trim(rec.text).empty()) {
            throw Error(ErrorCode::malformed_record, path.string() + ": record " + std::to_string(i + 1) + " has empty text");
        }
        if (require_labels && (!rec.labels || rec.labels->empty())) {
            throw Error(ErrorCode::malformed_record,
                        path.string() + ": record " + std::to_string(i + 1) + " needs at least one label");
        }
        Example ex{std::move(rec.text), {}};
        if (rec.labels) {
            std::set<LabelId> seen;
            for (const auto& name : *rec.labels) {
                auto id = ontology.find(name);
                if (!id) {
                    ++load.unknown_label_names;
                    continue;
                }
                if (seen.insert(*id).second) ex.gold.push_back(*id);
            }
            if (!rec.labels->empty() && ex.gold.empty()) {
                ++load.dropped_examples;
                continue;
            }
        }
        load.examples.push_back(std::move(ex));
    }
    if (load.examples.empty()) throw Error(ErrorCode::empty_dataset, path.string() + ": no usable records");
    return load;
}

LabelOntology load_ontology(const std::filesystem::path& labels_path,
                            const std::optional<std::filesystem::path>& priors_path) {
    std::ifstream in(labels_path);
    if (!in) throw Error(ErrorCode::io, "cannot open " + labels_path.string());
    std::vector<std::pair<std::string, double>> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        auto tab = line.find('\t');
        std::string name(text::trim(std::string_view(line).substr(0, tab)));
        double prior = 0.0;
        if (tab != std::string::npos) {
            auto rest = std::string_view(line).substr(tab + 1);
            rest = rest.substr(0, rest.find('\t'));
            if (!text::trim(rest).empty()) {
                prior = parse_prior(rest, labels_path.string() + ":" + std::to_string(line_no));
            }
        }
        entries.emplace_back(std::move(name), prior);
    }

    if (priors_path) {
        std::ifstream pin(*priors_path);
        if (!pin) throw Error(ErrorCode::io, "cannot open " + priors_path->string());
        std::map<std::string, double> priors;
        line_no = 0;
        while (std::getline(pin, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (text::trim(line).empty()) continue;
            const std::string where = priors_path->string() + ":" + std::to_string(line_no);
            auto tab = line.find('\t');
            if (tab == std::string::npos) throw Error(ErrorCode::malformed_record, where + ": expected name<TAB>prior");
            priors[text::normalize_name(std::string_view(line).substr(0, tab))] =
                parse_prior(std::string_view(line).substr(tab + 1), where);
        }
        for (auto& [name, prior] : entries) {
            if (auto it = priors.find(text::normalize_name(name)); it != priors.end()) prior = it->second;
        }
    }
    return LabelOntology(std::move(entries));
}

} // namespace irera
