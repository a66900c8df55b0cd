#include "irera/irera.h"

#include <cstring>
#include <string>

#include "irera/engine.hpp"
#include "irera/error.hpp"

struct irera_engine {
    irera::Engine engine;
};

namespace {

thread_local std::string last_error;

irera_status status_for(irera::ErrorCode code) {
    using irera::ErrorCode;
    switch (code) {
    case ErrorCode::config: return IRERA_ERR_CONFIG;
    case ErrorCode::io: return IRERA_ERR_IO;
    case ErrorCode::transport:
    case ErrorCode::request_rejected:
    case ErrorCode::malformed_response:
    case ErrorCode::unknown_input: return IRERA_ERR_BACKEND;
    case ErrorCode::malformed_record:
    case ErrorCode::empty_dataset:
    case ErrorCode::duplicate_label_name:
    case ErrorCode::prior_out_of_range:
    case ErrorCode::dimension_mismatch: return IRERA_ERR_DATA;
    default: return IRERA_ERR_INVALID_ARGUMENT;
    }
}

template <class Fn>
irera_status guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const irera::Error& e) {
        last_error = e.what();
        return status_for(e.code());
    } catch (const std::filesystem::filesystem_error& e) {
        last_error = e.what();
        return IRERA_ERR_IO;
    } catch (const std::exception& e) {
        last_error = e.what();
        return IRERA_ERR_INTERNAL;
    } catch (...) {
        last_error = "unknown exception";
        return IRERA_ERR_INTERNAL;
    }
}

irera_status null_argument(const char* name) {
    last_error = std::string("null argument: ") + name;
    return IRERA_ERR_INVALID_ARGUMENT;
}

char* to_c_string(const nlohmann::json& j) {
    const std::string s = j.dump(2);
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::optional<std::filesystem::path> optional_path(const char* p) {
    if (p == nullptr || *p == '\0') return std::nullopt;
    return std::filesystem::path(p);
}

} // namespace

extern "C" {

const char* irera_version(void) {
    return "0.1.0";
}

const char* irera_last_error(void) {
    return last_error.c_str();
}

const char* irera_status_name(irera_status status) {
    switch (status) {
    case IRERA_OK: return "ok";
    case IRERA_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case IRERA_ERR_CONFIG: return "config";
    case IRERA_ERR_DATA: return "data";
    case IRERA_ERR_BACKEND: return "backend";
    case IRERA_ERR_IO: return "io";
    case IRERA_ERR_BUDGET: return "budget";
    case IRERA_ERR_INTERNAL: return "internal";
    }
    return "unknown";
}

void irera_string_free(char* s) {
    std::free(s);
}

irera_status irera_engine_open(const char* config_path, irera_engine** out) {
    if (config_path == nullptr) return null_argument("config_path");
    if (out == nullptr) return null_argument("out");
    *out = nullptr;
    return guarded([&] {
        *out = new irera_engine{irera::Engine(irera::load_run_config(config_path))};
        return IRERA_OK;
    });
}

void irera_engine_close(irera_engine* engine) {
    delete engine;
}

irera_status irera_engine_build_index(irera_engine* engine, const char* texts_path, char** report_json) {
    if (engine == nullptr) return null_argument("engine");
    return guarded([&] {
        auto report = engine->engine.build_index(optional_path(texts_path));
        if (report_json) *report_json = to_c_string(report);
        return IRERA_OK;
    });
}

irera_status irera_engine_run(irera_engine* engine, const char* program, const char* artifact_path,
                              const char* const* texts, size_t count, size_t top, char** predictions_json) {
    if (engine == nullptr) return null_argument("engine");
    if (program == nullptr) return null_argument("program");
    if (texts == nullptr && count > 0) return null_argument("texts");
    if (predictions_json == nullptr) return null_argument("predictions_json");
    return guarded([&] {
        std::vector<std::string> inputs;
        for (size_t i = 0; i < count; ++i) {
            if (texts[i] == nullptr) throw irera::Error(irera::ErrorCode::invalid_argument, "null text");
            inputs.emplace_back(texts[i]);
        }
        auto result = engine->engine.run(irera::program_kind_from_string(program), optional_path(artifact_path),
                                         inputs, top);
        *predictions_json = to_c_string(result);
        return IRERA_OK;
    });
}

irera_status irera_engine_optimize(irera_engine* engine, const char* artifact_out, char** budget_report_json) {
    if (engine == nullptr) return null_argument("engine");
    return guarded([&] {
        auto report = engine->engine.optimize(optional_path(artifact_out));
        if (budget_report_json) *budget_report_json = to_c_string(report);
        return IRERA_OK;
    });
}

irera_status irera_engine_evaluate(irera_engine* engine, const char* program, const char* artifact_path,
                                   const char* dataset, char** report_json) {
    if (engine == nullptr) return null_argument("engine");
    if (program == nullptr) return null_argument("program");
    if (dataset == nullptr) return null_argument("dataset");
    if (report_json == nullptr) return null_argument("report_json");
    return guarded([&] {
        auto report = engine->engine.evaluate(irera::program_kind_from_string(program), optional_path(artifact_path),
                                              dataset);
        *report_json = to_c_string(report);
        return IRERA_OK;
    });
}

irera_status irera_budget_check(const char* report_json, char** result_json) {
    if (report_json == nullptr) return null_argument("report_json");
    if (result_json == nullptr) return null_argument("result_json");
    return guarded([&] {
        nlohmann::json report;
        try {
            report = nlohmann::json::parse(report_json);
        } catch (const nlohmann::json::parse_error& e) {
            throw irera::Error(irera::ErrorCode::invalid_argument, e.what());
        }
        auto result = irera::budget_check_report(report);
        *result_json = to_c_string(result);
        if (!result.at("passed").get<bool>()) {
            last_error = "budget check failed";
            return IRERA_ERR_BUDGET;
        }
        return IRERA_OK;
    });
}

irera_status irera_engine_cache_stats(irera_engine* engine, char** stats_json) {
    if (engine == nullptr) return null_argument("engine");
    if (stats_json == nullptr) return null_argument("stats_json");
    return guarded([&] {
        *stats_json = to_c_string(engine->engine.cache_stats_json());
        return IRERA_OK;
    });
}

irera_status irera_cache_stats(const char* cache_dir, char** stats_json) {
    if (cache_dir == nullptr) return null_argument("cache_dir");
    if (stats_json == nullptr) return null_argument("stats_json");
    return guarded([&] {
        auto j = irera::cache_stats_to_json(irera::cache_stats(cache_dir));
        j["directory"] = cache_dir;
        *stats_json = to_c_string(j);
        return IRERA_OK;
    });
}

irera_status irera_rp_at_k(const uint32_t* const* rankings, const size_t* ranking_lengths,
                           const uint32_t* const* golds, const size_t* gold_lengths, size_t n, int64_t k,
                           double* out) {
    if (out == nullptr) return null_argument("out");
    if (n > 0 && (rankings == nullptr || ranking_lengths == nullptr || golds == nullptr || gold_lengths == nullptr)) {
        return null_argument("rankings/golds");
    }
    return guarded([&] {
        std::vector<std::vector<irera::LabelId>> preds(n), gold(n);
        for (size_t i = 0; i < n; ++i) {
            preds[i].assign(rankings[i], rankings[i] + ranking_lengths[i]);
            gold[i].assign(golds[i], golds[i] + gold_lengths[i]);
        }
        *out = irera::rp_at_k(preds, gold, k);
        return IRERA_OK;
    });
}

irera_status irera_apply_prior(const double* scores, const double* priors, size_t len, double a, double* out) {
    if (len > 0 && (scores == nullptr || priors == nullptr || out == nullptr)) return null_argument("scores/priors/out");
    return guarded([&] {
        auto r = irera::apply_prior({scores, len}, {priors, len}, a);
        std::copy(r.begin(), r.end(), out);
        return IRERA_OK;
    });
}

} // extern "C"
