#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "irera/irera.h"

namespace {

using json = nlohmann::json;

constexpr int exit_usage = 64;

struct Failure {
    int code;
    std::string message;
};

struct EngineHandle {
    irera_engine* ptr = nullptr;
    ~EngineHandle() { irera_engine_close(ptr); }
};

struct Output {
    bool json = false;
    std::string report_path;
};

void check(irera_status status) {
    if (status != IRERA_OK) throw Failure{static_cast<int>(status), irera_last_error()};
}

json take(char* raw) {
    std::unique_ptr<char, decltype(&irera_string_free)> owned(raw, &irera_string_free);
    return raw ? json::parse(raw) : json();
}

void open(EngineHandle& engine, const std::string& config) {
    check(irera_engine_open(config.c_str(), &engine.ptr));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{IRERA_ERR_IO, "cannot open " + path};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_report(const Output& out, const json& report) {
    if (out.report_path.empty()) return;
    std::ofstream f(out.report_path, std::ios::binary | std::ios::trunc);
    if (!f) throw Failure{IRERA_ERR_IO, "cannot write " + out.report_path};
    f << report.dump(2) << "\n";
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}

void print_ledger(const json& ledger) {
    for (const auto& e : ledger) {
        std::cout << "  " << e.at("backend").get<std::string>() << " / " << e.at("role").get<std::string>() << " / "
                  << e.at("module").get<std::string>() << ": upstream " << e.at("upstream_calls") << ", cache hits "
                  << e.at("cache_hits") << "\n";
    }
}

void print_budget(const json& check) {
    for (const auto& line : check.at("lines")) {
        std::cout << "  [" << (line.at("ok").get<bool>() ? "ok" : "FAIL") << "] "
                  << line.at("counter").get<std::string>() << " " << line.at("actual") << " "
                  << line.at("relation").get<std::string>() << " " << line.at("expected") << "\n";
    }
    std::cout << "budget: " << (check.at("passed").get<bool>() ? "pass" : "FAIL") << "\n";
}

void print_evaluation(const json& r) {
    std::cout << "program: " << r.at("program").get<std::string>() << "\n"
              << "dataset: " << r.at("dataset").get<std::string>() << " (" << r.at("n") << " examples)\n";
    if (!r.at("program_digest").get<std::string>().empty()) {
        std::cout << "artifact sha256: " << r.at("program_digest").get<std::string>() << "\n";
    }
    std::vector<std::pair<std::size_t, std::string>> names;
    for (const auto& [name, m] : r.at("metrics").items()) names.emplace_back(std::stoul(name.substr(3)), name);
    std::sort(names.begin(), names.end());
    for (const auto& [k, name] : names) {
        std::cout << name << ": " << percent(r.at("metrics").at(name).at("value").get<double>()) << "\n";
    }
    const auto& f = r.at("failures");
    std::cout << "errors: " << f.at("errors") << ", parse failures: " << f.at("parse_failures")
              << ", unmatched rank outputs: " << r.at("unmatched_rank_outputs") << "\n";
    std::cout << "calls:\n";
    print_ledger(r.at("ledger_delta"));
    if (r.contains("budget")) print_budget(r.at("budget"));
}

void emit(const Output& out, const json& report, void (*human)(const json&)) {
    write_report(out, report);
    if (out.json) {
        std::cout << report.dump(2) << "\n";
    } else {
        human(report);
    }
}

std::vector<std::string> read_inputs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Failure{IRERA_ERR_IO, "cannot open " + path};
    std::vector<std::string> texts;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            texts.push_back(json::parse(line).at("text").get<std::string>());
        } catch (const json::exception& e) {
            throw Failure{IRERA_ERR_DATA, path + ":" + std::to_string(number) + ": " + e.what()};
        }
    }
    return texts;
}

void add_output_options(CLI::App* cmd, Output& out) {
    cmd->add_flag("--json", out.json, "Print the machine-readable report instead of the summary");
    cmd->add_option("--report", out.report_path, "Also write the JSON report to this file");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infer-Retrieve-Rank multi-label classification engine"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(irera_version()));

    std::string config;
    Output out;
    std::function<void()> action;

    auto* index = app.add_subcommand("index", "Label embedding index")->require_subcommand(1);
    auto* index_build = index->add_subcommand("build", "Embed the ontology and write the embedding file");
    std::string texts_path;
    index_build->add_option("-c,--config", config, "Run config")->required();
    index_build->add_option("--texts", texts_path, "One text per label, replacing the label names");
    add_output_options(index_build, out);
    index_build->callback([&] {
        action = [&] {
            EngineHandle engine;
            open(engine, config);
            char* raw = nullptr;
            check(irera_engine_build_index(engine.ptr, texts_path.empty() ? nullptr : texts_path.c_str(), &raw));
            emit(out, take(raw), [](const json& r) {
                std::cout << "wrote " << r.at("rows") << " x " << r.at("dim") << " embeddings to "
                          << r.at("path").get<std::string>() << "\n";
                print_ledger(r.at("ledger_delta"));
            });
        };
    });

    auto* run = app.add_subcommand("run", "Predict labels for one text or a file of records");
    std::string program_kind = "irera";
    std::string artifact;
    std::string text;
    std::string input_path;
    std::size_t top = 10;
    run->add_option("-c,--config", config, "Run config")->required();
    run->add_option("--program", artifact, "Compiled program artifact (default: zero-shot seed program)");
    run->add_option("--kind", program_kind, "irera | infer-retrieve | prior | exact | retrieve");
    auto* text_opt = run->add_option("--text", text, "Input document");
    run->add_option("--input", input_path, "Line-delimited JSON records with a \"text\" field")->excludes(text_opt);
    run->add_option("--top", top, "Labels to print per input");
    add_output_options(run, out);
    run->callback([&] {
        action = [&] {
            std::vector<std::string> texts;
            if (!input_path.empty()) {
                texts = read_inputs(input_path);
            } else if (!text.empty()) {
                texts.push_back(text);
            } else {
                throw Failure{exit_usage, "run needs --text or --input"};
            }
            std::vector<const char*> ptrs;
            for (const auto& t : texts) ptrs.push_back(t.c_str());
            EngineHandle engine;
            open(engine, config);
            char* raw = nullptr;
            check(irera_engine_run(engine.ptr, program_kind.c_str(), artifact.empty() ? nullptr : artifact.c_str(),
                                   ptrs.data(), ptrs.size(), top, &raw));
            emit(out, take(raw), [](const json& r) {
                for (const auto& p : r.at("predictions")) {
                    std::cout << p.at("index") << ":";
                    for (const auto& l : p.at("labels")) std::cout << " " << l.get<std::string>() << ";";
                    if (p.contains("error")) std::cout << " (error: " << p.at("error").get<std::string>() << ")";
                    std::cout << "\n";
                }
            });
        };
    });

    auto* optimize = app.add_subcommand("optimize", "Bootstrap demos and select a compiled program");
    std::string artifact_out;
    optimize->add_option("-c,--config", config, "Run config")->required();
    optimize->add_option("-o,--out", artifact_out, "Artifact path (default: paths.artifact_out)");
    add_output_options(optimize, out);
    optimize->callback([&] {
        action = [&] {
            EngineHandle engine;
            open(engine, config);
            char* raw = nullptr;
            check(irera_engine_optimize(engine.ptr, artifact_out.empty() ? nullptr : artifact_out.c_str(), &raw));
            emit(out, take(raw), [](const json& r) {
                for (const auto& s : r.at("stages")) {
                    std::cout << "stage " << s.at("module").get<std::string>() << ": " << s.at("usable_traces") << "/"
                              << s.at("traces") << " usable traces, selected candidate " << s.at("selected") << "\n";
                    for (const auto& c : s.at("candidates")) {
                        std::cout << "  candidate " << c.at("id") << " (" << c.at("demos")
                                  << " demos): " << percent(c.at("score").get<double>()) << "\n";
                    }
                    if (!s.at("warning").get<std::string>().empty()) {
                        std::cout << "  warning: " << s.at("warning").get<std::string>() << "\n";
                    }
                    if (!s.at("error").get<std::string>().empty()) {
                        std::cout << "  error: " << s.at("error").get<std::string>() << "\n";
                    }
                    print_ledger(s.at("ledger_delta"));
                }
                if (!r.at("artifact").get<std::string>().empty()) {
                    std::cout << "artifact: " << r.at("artifact").get<std::string>() << " (sha256 "
                              << r.at("artifact_digest").get<std::string>() << ")\n";
                }
                print_budget(r.at("check"));
            });
        };
    });

    auto* evaluate = app.add_subcommand("evaluate", "Score a program on a labeled dataset");
    std::string dataset = "test";
    evaluate->add_option("-c,--config", config, "Run config")->required();
    evaluate->add_option("--program", artifact, "Compiled program artifact (default: zero-shot seed program)");
    evaluate->add_option("--kind", program_kind, "irera | infer-retrieve | prior | exact | retrieve");
    evaluate->add_option("--dataset", dataset, "train | validation | test | path");
    add_output_options(evaluate, out);
    evaluate->callback([&] {
        action = [&] {
            EngineHandle engine;
            open(engine, config);
            char* raw = nullptr;
            check(irera_engine_evaluate(engine.ptr, program_kind.c_str(),
                                        artifact.empty() ? nullptr : artifact.c_str(), dataset.c_str(), &raw));
            emit(out, take(raw), print_evaluation);
        };
    });

    auto* baseline = app.add_subcommand("baseline", "Evaluate a reference baseline")->require_subcommand(1);
    for (const char* name : {"prior", "exact", "retrieve"}) {
        auto* cmd = baseline->add_subcommand(name, std::string("Evaluate the ") + name + " baseline");
        cmd->add_option("-c,--config", config, "Run config")->required();
        cmd->add_option("--dataset", dataset, "train | validation | test | path");
        add_output_options(cmd, out);
        cmd->callback([&, name] {
            action = [&, name] {
                EngineHandle engine;
                open(engine, config);
                char* raw = nullptr;
                check(irera_engine_evaluate(engine.ptr, name, nullptr, dataset.c_str(), &raw));
                emit(out, take(raw), print_evaluation);
            };
        });
    }

    auto* cache = app.add_subcommand("cache", "Response cache")->require_subcommand(1);
    auto* cache_stats = cache->add_subcommand("stats", "Count cached responses");
    std::string cache_dir;
    auto* config_opt = cache_stats->add_option("-c,--config", config, "Run config (uses paths.cache_dir)");
    cache_stats->add_option("--dir", cache_dir, "Cache directory")->excludes(config_opt);
    add_output_options(cache_stats, out);
    cache_stats->callback([&] {
        action = [&] {
            char* raw = nullptr;
            if (!cache_dir.empty()) {
                check(irera_cache_stats(cache_dir.c_str(), &raw));
            } else if (!config.empty()) {
                EngineHandle engine;
                open(engine, config);
                check(irera_engine_cache_stats(engine.ptr, &raw));
            } else {
                throw Failure{exit_usage, "cache stats needs --config or --dir"};
            }
            emit(out, take(raw), [](const json& r) {
                std::cout << r.at("directory").get<std::string>() << ": " << r.at("entries") << " entries, "
                          << r.at("total_bytes") << " bytes\n";
            });
        };
    });

    auto* budget = app.add_subcommand("budget", "Call budget")->require_subcommand(1);
    auto* budget_check = budget->add_subcommand("check", "Verify the call bounds recorded in a report");
    std::string report_in;
    budget_check->add_option("report_file", report_in, "Optimization or evaluation report (JSON)")->required();
    add_output_options(budget_check, out);
    budget_check->callback([&] {
        action = [&] {
            char* raw = nullptr;
            const auto content = read_file(report_in);
            const auto status = irera_budget_check(content.c_str(), &raw);
            if (raw != nullptr) emit(out, take(raw), print_budget);
            check(status);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        action();
    } catch (const Failure& f) {
        const char* category = f.code == exit_usage ? "usage" : irera_status_name(static_cast<irera_status>(f.code));
        std::cerr << "error [" << category << "]: " << f.message << "\n";
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "error [internal]: " << e.what() << "\n";
        return IRERA_ERR_INTERNAL;
    }
    return 0;
}
