#pragma once

#include <cstdio>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "irera/data.hpp"
#include "irera/lm.hpp"
#include "irera/program.hpp"
#include "irera/retrieval.hpp"

namespace irera::testing {

inline std::string label_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "label_%03zu", i);
    return buf;
}

inline std::vector<std::string> label_names(std::size_t n) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(label_name(i));
    return out;
}

inline BackendSpec scripted_chat(std::string id) {
    BackendSpec spec;
    spec.id = std::move(id);
    spec.kind = BackendKind::chat_scripted;
    spec.model_name = spec.id;
    spec.script = "inline";
    return spec;
}

inline BackendSpec scripted_embed(std::string id) {
    BackendSpec spec;
    spec.id = std::move(id);
    spec.kind = BackendKind::embed_scripted;
    spec.model_name = spec.id;
    spec.script = "inline";
    return spec;
}

struct WorldOptions {
    std::size_t labels = 100;
    std::size_t train = 10;
    std::size_t validation = 50;
    std::size_t test = 50;
    std::size_t max_gold = 4;
    std::size_t gold_from = 0;  // gold labels are drawn from [gold_from, labels)
    std::uint64_t seed = 1;
    double prior_weight = 0.0;
    std::size_t num_options = 50;
};

/// Synthetic label space with a one-hot embedder and glass-box chat models
/// that answer from the gold labels of every split.
class World {
public:
    explicit World(const WorldOptions& o = {}, GatewayOptions gateway_options = {})
        : options(o), gateway(std::move(gateway_options)) {
        std::mt19937_64 rng(o.seed);
        std::uniform_real_distribution<double> prior(0.0, 0.5);
        std::vector<std::pair<std::string, double>> names;
        for (const auto& n : label_names(o.labels)) names.emplace_back(n, prior(rng));
        ontology = LabelOntology(std::move(names));

        embedder = ScriptedEmbedBackend::one_hot(scripted_embed("embedder"), label_names(o.labels));
        index = build_index(gateway, *embedder, ontology.names());

        train = make_split("tr", o.train, rng);
        validation = make_split("va", o.validation, rng);
        test = make_split("te", o.test, rng);
        student = glass_box_mock(scripted_chat("student"), gold_records());
        teacher = glass_box_mock(scripted_chat("teacher"), gold_records());
    }

    ExecutionContext context() { return ExecutionContext{gateway, LabelSpace{ontology, index, *embedder}}; }

    ProgramState seed(std::shared_ptr<ChatBackend> infer_student = nullptr,
                      std::shared_ptr<ChatBackend> rank_student = nullptr) const {
        return ProgramState{
            InContextModule{"infer", signature_preset("esco-infer"), {}, infer_student ? infer_student : student,
                            teacher},
            InContextModule{"rank", signature_preset("esco-rank"), {}, rank_student ? rank_student : student,
                            teacher},
            ProgramConfig{options.prior_weight, options.num_options, 1},
        };
    }

    std::vector<GoldRecord> gold_records() const {
        std::vector<GoldRecord> out;
        for (const auto* split : {&train, &validation, &test}) {
            for (const auto& ex : *split) {
                GoldRecord r{ex.text, {}};
                for (auto id : ex.gold) r.gold_names.push_back(ontology[id].name);
                out.push_back(std::move(r));
            }
        }
        return out;
    }

    WorldOptions options;
    Gateway gateway;
    LabelOntology ontology;
    std::unique_ptr<EmbedBackend> embedder;
    EmbeddingIndex index;
    std::vector<Example> train;
    std::vector<Example> validation;
    std::vector<Example> test;
    std::shared_ptr<ChatBackend> student;
    std::shared_ptr<ChatBackend> teacher;

private:
    std::vector<Example> make_split(const char* prefix, std::size_t count, std::mt19937_64& rng) const {
        std::vector<Example> out;
        std::uniform_int_distribution<std::size_t> how_many(1, options.max_gold);
        std::vector<LabelId> pool;
        for (std::size_t i = options.gold_from; i < options.labels; ++i) pool.push_back(static_cast<LabelId>(i));
        for (std::size_t i = 0; i < count; ++i) {
            char text[96];
            std::snprintf(text, sizeof text, "Synthetic record %s-%04zu describing a handful of concepts.", prefix, i);
            std::shuffle(pool.begin(), pool.end(), rng);
            const auto k = std::min(how_many(rng), pool.size());
            out.push_back(Example{text, std::vector<LabelId>(pool.begin(), pool.begin() + static_cast<long>(k))});
        }
        return out;
    }
};

inline std::size_t demo_count(const std::string& prompt) {
    std::size_t blocks = 0;
    for (auto pos = prompt.find("\n\n---\n\n"); pos != std::string::npos; pos = prompt.find("\n\n---\n\n", pos + 1)) {
        ++blocks;
    }
    return blocks >= 2 ? blocks - 2 : 0;
}

/// Answers like the glass-box mock when the prompt carries at least one
/// demo; zero-shot it names labels 0..9, which the world never uses as gold
/// when built with gold_from >= 10.
inline std::shared_ptr<ChatBackend> demo_gated_student(std::string id, std::vector<GoldRecord> records) {
    std::shared_ptr<ChatBackend> oracle = glass_box_mock(scripted_chat(id + "-oracle"), std::move(records));
    std::string wrong;
    for (std::size_t i = 0; i < 10; ++i) wrong += (i ? ", " : "") + label_name(i);
    return std::make_shared<ScriptedChatBackend>(scripted_chat(std::move(id)), [oracle, wrong](const std::string& p, int) {
        if (demo_count(p) > 0) return oracle->generate(p, SamplingParams{}).front();
        auto colon = p.rfind("\n\n---\n\n");
        auto legend = p.substr(0, colon);
        // Reuse the output prefix from the format legend: its last line.
        auto line = legend.substr(legend.rfind('\n') + 1);
        return " guessing.\n" + line.substr(0, line.find(' ')) + " " + wrong;
    });
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("irera-test-" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace irera::testing
