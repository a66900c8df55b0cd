#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "irera/retrieval.hpp"

namespace irera {

/// One input document; `gold` is empty for unlabeled training inputs.
struct Example {
    std::string text;
    std::vector<LabelId> gold;
};

struct RawRecord {
    std::string text;
    std::optional<std::vector<std::string>> labels;
};

/// Reads line-delimited JSON records {"text": ..., "labels": [...]}.
/// Blank lines are skipped. Throws MalformedRecord with the line number.
std::vector<RawRecord> read_raw_records(const std::filesystem::path& path);

struct DatasetLoad {
    std::vector<Example> examples;
    std::size_t unknown_label_names = 0;  // dropped from gold sets
    std::size_t dropped_examples = 0;     // every gold name was unknown
};

/// Resolves label names against the ontology. When `require_labels` is set,
/// every record must carry a non-empty label list.
DatasetLoad load_dataset(const std::filesystem::path& path, const LabelOntology& ontology, bool require_labels);

/// Labels file: one name per line, optionally "name<TAB>prior". The priors
/// file, when given, holds "name<TAB>prior" lines and overrides the former.
LabelOntology load_ontology(const std::filesystem::path& labels_path,
                            const std::optional<std::filesystem::path>& priors_path = std::nullopt);

} // namespace irera
