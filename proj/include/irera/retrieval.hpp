#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace irera {

class Gateway;
class EmbedBackend;

using LabelId = std::uint32_t;

struct Label {
    LabelId id = 0;
    std::string name;
    double prior = 0.0;  // in [0, 1]
};

/// Closed label vocabulary. Ids are dense and follow insertion order; names
/// are unique after normalization (case and whitespace insensitive).
class LabelOntology {
public:
    LabelOntology() = default;
    explicit LabelOntology(std::vector<std::pair<std::string, double>> names_and_priors);

    std::size_t size() const noexcept { return labels_.size(); }
    bool empty() const noexcept { return labels_.empty(); }
    const Label& operator[](LabelId id) const { return labels_.at(id); }
    const std::vector<Label>& labels() const noexcept { return labels_; }

    std::optional<LabelId> find(std::string_view name) const;
    std::vector<double> priors() const;
    std::vector<std::string> names() const;

private:
    std::vector<Label> labels_;
    std::unordered_map<std::string, LabelId> by_name_;
};

/// Row-major label embedding matrix; every row has unit L2 norm.
class EmbeddingIndex {
public:
    static constexpr std::uint32_t format_version = 1;

    EmbeddingIndex() = default;
    EmbeddingIndex(std::size_t rows, std::size_t dim, std::vector<float> data);
    static EmbeddingIndex from_rows(const std::vector<std::vector<float>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::span<const float> data() const noexcept { return data_; }

    /// Binary layout: "XMCE", u32 version, u32 rows, u32 dim, then rows*dim
    /// float32 values, all little-endian, row-major.
    void save(const std::filesystem::path& path) const;
    static EmbeddingIndex load(const std::filesystem::path& path);

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

struct ScoredRanking {
    std::vector<double> scores;
    std::vector<LabelId> order;  // descending score, ascending id on ties
};

/// s_i = max over queries of <row_i, q>.
std::vector<double> score_labels(const EmbeddingIndex& index, std::span<const std::vector<float>> queries);

/// s~_i = s_i * log10(A * p_i + 10).
std::vector<double> apply_prior(std::span<const double> scores, std::span<const double> priors, double prior_weight);

ScoredRanking rank_all(std::vector<double> scores);

struct LabelSpace {
    const LabelOntology& ontology;
    const EmbeddingIndex& index;
    EmbedBackend& embedder;
};

/// Embeds the queries (one batch) and ranks every label. No queries means
/// all-zero scores and therefore the identity order.
ScoredRanking retrieve(Gateway& gateway, const LabelSpace& space, std::span<const std::string> queries,
                       double prior_weight);

/// Embeds `texts` (one per ontology label, in order) in batches and builds
/// the index.
EmbeddingIndex build_index(Gateway& gateway, EmbedBackend& embedder, std::span<const std::string> texts,
                           std::size_t batch_size = 64);

void check_index_matches(const LabelOntology& ontology, const EmbeddingIndex& index);

} // namespace irera
