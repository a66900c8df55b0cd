#include "irera/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "irera/error.hpp"
#include "irera/lm.hpp"
#include "irera/text.hpp"

namespace irera {

namespace {

constexpr double unit_norm_tolerance = 1e-6;

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

LabelOntology::LabelOntology(std::vector<std::pair<std::string, double>> names_and_priors) {
    labels_.reserve(names_and_priors.size());
    for (auto& [name, prior] : names_and_priors) {
        auto key = text::normalize_name(name);
        if (key.empty()) throw Error(ErrorCode::invalid_argument, "empty label name");
        if (!(prior >= 0.0 && prior <= 1.0)) {
            throw Error(ErrorCode::prior_out_of_range, "'" + name + "' has prior " + std::to_string(prior));
        }
        auto id = static_cast<LabelId>(labels_.size());
        if (!by_name_.emplace(key, id).second) throw Error(ErrorCode::duplicate_label_name, name);
        labels_.push_back(Label{id, std::move(name), prior});
    }
}

std::optional<LabelId> LabelOntology::find(std::string_view name) const {
    auto it = by_name_.find(text::normalize_name(name));
    if (it == by_name_.end()) return std::nullopt;
    return it->second;
}

std::vector<double> LabelOntology::priors() const {
    std::vector<double> out;
    out.reserve(labels_.size());
    for (const auto& l : labels_) out.push_back(l.prior);
    return out;
}

std::vector<std::string> LabelOntology::names() const {
    std::vector<std::string> out;
    out.reserve(labels_.size());
    for (const auto& l : labels_) out.push_back(l.name);
    return out;
}

EmbeddingIndex::EmbeddingIndex(std::size_t rows, std::size_t dim, std::vector<float> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
    if (dim_ == 0 && rows_ > 0) throw Error(ErrorCode::dimension_mismatch, "embedding dimension is zero");
    if (data_.size() != rows_ * dim_) {
        throw Error(ErrorCode::dimension_mismatch, "index data size does not match rows x dim");
    }
    for (std::size_t i = 0; i < rows_; ++i) {
        double sum = 0.0;
        for (float x : row(i)) sum += static_cast<double>(x) * static_cast<double>(x);
        if (std::abs(std::sqrt(sum) - 1.0) > unit_norm_tolerance) {
            throw Error(ErrorCode::invalid_argument, "index row " + std::to_string(i) + " is not unit-norm");
        }
    }
}

EmbeddingIndex EmbeddingIndex::from_rows(const std::vector<std::vector<float>>& rows) {
    const std::size_t dim = rows.empty() ? 0 : rows.front().size();
    std::vector<float> data;
    data.reserve(rows.size() * dim);
    for (const auto& r : rows) {
        if (r.size() != dim) throw Error(ErrorCode::dimension_mismatch, "ragged index rows");
        data.insert(data.end(), r.begin(), r.end());
    }
    return EmbeddingIndex(rows.size(), dim, std::move(data));
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
    out.write("XMCE", 4);
    put_u32(out, format_version);
    put_u32(out, static_cast<std::uint32_t>(rows_));
    put_u32(out, static_cast<std::uint32_t>(dim_));
    for (float x : data_) put_u32(out, std::bit_cast<std::uint32_t>(x));
    if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "XMCE", 4) != 0) {
        throw Error(ErrorCode::invalid_argument, path.string() + " is not an embedding file");
    }
    const auto version = get_u32(bytes.data() + 4);
    if (version != format_version) {
        throw Error(ErrorCode::invalid_argument, path.string() + ": unsupported version " + std::to_string(version));
    }
    const std::size_t rows = get_u32(bytes.data() + 8);
    const std::size_t dim = get_u32(bytes.data() + 12);
    if (bytes.size() != 16 + rows * dim * 4) {
        throw Error(ErrorCode::invalid_argument, path.string() + ": payload size does not match header");
    }
    std::vector<float> data(rows * dim);
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = std::bit_cast<float>(get_u32(bytes.data() + 16 + 4 * i));
    return EmbeddingIndex(rows, dim, std::move(data));
}

std::vector<double> score_labels(const EmbeddingIndex& index, std::span<const std::vector<float>> queries) {
    if (queries.empty()) throw Error(ErrorCode::empty_query_set, "score_labels needs at least one query");
    for (const auto& q : queries) {
        if (q.size() != index.dim()) {
            throw Error(ErrorCode::dimension_mismatch, "query dimension " + std::to_string(q.size()) +
                                                           " != index dimension " + std::to_string(index.dim()));
        }
    }
    std::vector<double> scores(index.rows());
    for (std::size_t i = 0; i < index.rows(); ++i) {
        auto row = index.row(i);
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& q : queries) {
            double dot = 0.0;
            for (std::size_t d = 0; d < row.size(); ++d) dot += static_cast<double>(row[d]) * static_cast<double>(q[d]);
            best = std::max(best, dot);
        }
        scores[i] = best;
    }
    return scores;
}

std::vector<double> apply_prior(std::span<const double> scores, std::span<const double> priors, double prior_weight) {
    if (!(prior_weight >= 0.0)) throw Error(ErrorCode::negative_prior_weight, std::to_string(prior_weight));
    if (scores.size() != priors.size()) {
        throw Error(ErrorCode::length_mismatch, "scores and priors differ in length");
    }
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = scores[i] * std::log10(prior_weight * priors[i] + 10.0);
    }
    return out;
}

ScoredRanking rank_all(std::vector<double> scores) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw Error(ErrorCode::non_finite_score, "label " + std::to_string(i));
    }
    ScoredRanking out;
    out.order.resize(scores.size());
    std::iota(out.order.begin(), out.order.end(), LabelId{0});
    std::stable_sort(out.order.begin(), out.order.end(),
                     [&](LabelId a, LabelId b) { return scores[a] > scores[b]; });
    out.scores = std::move(scores);
    return out;
}

ScoredRanking retrieve(Gateway& gateway, const LabelSpace& space, std::span<const std::string> queries,
                       double prior_weight) {
    std::vector<double> scores;
    if (queries.empty()) {
        scores.assign(space.ontology.size(), 0.0);
    } else {
        auto vectors = gateway.embed(space.embedder, Role::retriever, "retrieve", queries);
        scores = score_labels(space.index, vectors);
    }
    return rank_all(apply_prior(scores, space.ontology.priors(), prior_weight));
}

EmbeddingIndex build_index(Gateway& gateway, EmbedBackend& embedder, std::span<const std::string> texts,
                           std::size_t batch_size) {
    batch_size = std::max<std::size_t>(1, batch_size);
    std::vector<std::vector<float>> rows;
    rows.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += batch_size) {
        auto batch = texts.subspan(start, std::min(batch_size, texts.size() - start));
        for (auto& v : gateway.embed(embedder, Role::retriever, "index", batch)) rows.push_back(std::move(v));
    }
    return EmbeddingIndex::from_rows(rows);
}

void check_index_matches(const LabelOntology& ontology, const EmbeddingIndex& index) {
    if (index.rows() != ontology.size()) {
        throw Error(ErrorCode::dimension_mismatch, "index has " + std::to_string(index.rows()) + " rows but ontology has " +
                                                       std::to_string(ontology.size()) + " labels");
    }
}

} // namespace irera
