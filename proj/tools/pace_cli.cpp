#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pace/bench.hpp"
#include "pace/core.hpp"
#include "pace/error.hpp"
#include "pace/gateway.hpp"
#include "pace/optimizer.hpp"
#include "pace/scoring.hpp"
#include "pace/templates.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliConfig {
    pace::RunConfig run;
    pace::BackendConfig backend;
    std::array<double, 3> split_ratios{0.4, 0.3, 0.3};
    std::string templates_path;
};

// Precedence: flags > config file > defaults. PACE_BASE_URL overrides the
// file's base_url; the API key itself is always read from the environment.
CliConfig load_config(const std::string& path) {
    CliConfig config;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw pace::Error(pace::ErrorKind::config, "cannot read config file: " + path);
        }
        json doc;
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw pace::Error(pace::ErrorKind::config,
                              std::string("config file is not valid JSON: ") + e.what());
        }
        config.run.n_agents = doc.value("n_agents", config.run.n_agents);
        config.run.candidates_per_iter =
            doc.value("candidates_per_iter", config.run.candidates_per_iter);
        config.run.max_iters = doc.value("max_iters", config.run.max_iters);
        config.run.eval_subset_size = doc.value("eval_subset_size", config.run.eval_subset_size);
        config.run.seed = doc.value("seed", config.run.seed);
        if (doc.contains("mode")) {
            auto mode = pace::run_mode_from_string(doc.at("mode").get<std::string>());
            if (!mode) {
                throw pace::Error(pace::ErrorKind::config,
                                  "config: unknown mode '" + doc.at("mode").get<std::string>() + "'");
            }
            config.run.mode = *mode;
        }
        config.run.temperature = doc.value("temperature", config.run.temperature);
        config.run.top_p = doc.value("top_p", config.run.top_p);
        config.run.max_tokens = doc.value("max_tokens", config.run.max_tokens);
        config.run.update_temperature =
            doc.value("update_temperature", config.run.update_temperature);
        config.run.parallelism = doc.value("parallelism", config.run.parallelism);

        if (doc.contains("backend")) {
            auto kind = pace::backend_kind_from_string(doc.at("backend").get<std::string>());
            if (!kind) {
                throw pace::Error(pace::ErrorKind::config, "config: unknown backend '" +
                                                               doc.at("backend").get<std::string>() +
                                                               "'");
            }
            config.backend.kind = *kind;
        }
        config.backend.base_url = doc.value("base_url", config.backend.base_url);
        config.backend.api_key_env = doc.value("api_key_env", config.backend.api_key_env);
        config.backend.cache_dir = doc.value("cache_dir", config.backend.cache_dir);
        config.backend.mock_script = doc.value("mock_script", config.backend.mock_script);
        config.backend.model = doc.value("model", config.backend.model);
        config.backend.system_preamble =
            doc.value("system_preamble", config.backend.system_preamble);
        if (doc.contains("retry")) {
            config.backend.retry.max_attempts =
                doc.at("retry").value("max_attempts", config.backend.retry.max_attempts);
            config.backend.retry.backoff_base_ms =
                doc.at("retry").value("backoff_base_ms", config.backend.retry.backoff_base_ms);
        }
        if (doc.contains("tag_models")) {
            for (const auto& [tag, model] : doc.at("tag_models").items()) {
                config.backend.tag_models[tag] = model.get<std::string>();
            }
        }
        if (doc.contains("split_ratios")) {
            for (std::size_t i = 0; i < 3; ++i) {
                config.split_ratios[i] = doc.at("split_ratios").at(i).get<double>();
            }
        }
        config.templates_path = doc.value("templates", config.templates_path);
    }
    if (const char* base = std::getenv("PACE_BASE_URL"); base && *base) {
        config.backend.base_url = base;
    }
    return config;
}

pace::TemplateSet load_templates(const CliConfig& config) {
    if (config.templates_path.empty()) return pace::TemplateSet::defaults();
    return pace::TemplateSet::load_overrides(config.templates_path);
}

pace::TaskSpec load_checked_task(const std::string& path) {
    pace::TaskSpec task = pace::load_task(path);
    const auto violations = pace::validate_task(task);
    if (!violations.empty()) {
        std::string message = "invalid task " + path + ":";
        for (const auto& v : violations) message += "\n  " + v;
        throw pace::Error(pace::ErrorKind::data, message);
    }
    return task;
}

std::string read_prompt_arg(const std::string& arg) {
    if (fs::exists(arg) && fs::is_regular_file(arg)) {
        std::ifstream in(arg, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string text = buf.str();
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return text;
    }
    return arg;
}

std::string format_score(double v) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << v;
    return out.str();
}

int cmd_optimize(const std::string& task_path, const std::string& setting_name,
                 const std::string& prompt_literal, const std::string& config_path,
                 const std::string& out_dir, const std::optional<std::int64_t>& seed_flag,
                 const std::string& mode_flag, const std::string& backend_flag) {
    CliConfig config = load_config(config_path);
    if (seed_flag) config.run.seed = *seed_flag;
    if (!mode_flag.empty()) {
        auto mode = pace::run_mode_from_string(mode_flag);
        if (!mode) throw pace::Error(pace::ErrorKind::usage, "unknown mode: " + mode_flag);
        config.run.mode = *mode;
    }
    if (!backend_flag.empty()) {
        auto kind = pace::backend_kind_from_string(backend_flag);
        if (!kind) throw pace::Error(pace::ErrorKind::usage, "unknown backend: " + backend_flag);
        config.backend.kind = *kind;
    }

    const pace::TaskSpec task = load_checked_task(task_path);
    const pace::Metric metric = pace::Metric::from_string(task.metric);
    const pace::SplitSpec split = pace::make_split(task, config.split_ratios, config.run.seed);
    const pace::TemplateSet templates = load_templates(config);
    const pace::Gateway gateway(config.backend);

    pace::InitialSetting setting = pace::InitialSetting::literal;
    std::string literal = prompt_literal;
    if (!setting_name.empty()) {
        auto parsed = pace::initial_setting_from_string(setting_name);
        if (!parsed || *parsed == pace::InitialSetting::literal) {
            throw pace::Error(pace::ErrorKind::usage, "unknown setting: " + setting_name);
        }
        setting = *parsed;
    } else if (prompt_literal.empty()) {
        setting = pace::InitialSetting::empty;
    } else {
        literal = read_prompt_arg(prompt_literal);
    }

    pace::PromptRankContext rank_context;
    rank_context.gateway = &gateway;
    rank_context.templates = &templates;
    rank_context.split = &split;
    rank_context.metric = metric;
    rank_context.parallelism = config.run.parallelism;
    const pace::Prompt p0 = pace::select_initial_prompt(
        task, setting, literal, rank_context, static_cast<std::uint64_t>(config.run.seed));

    pace::ArtifactHeader header;
    header.task_name = task.name;
    header.setting = setting_name.empty() ? (prompt_literal.empty() ? "empty" : "literal")
                                          : setting_name;
    header.metric_id = task.metric;
    header.seed = config.run.seed;
    header.config = config.run;
    header.split_ratios = config.split_ratios;
    header.backend_kind = pace::backend_kind_string(config.backend.kind);
    header.model = config.backend.model;
    header.actor_template_hash = pace::content_hash(templates.actor_template);
    header.critic_template_hash = pace::content_hash(templates.critic_template);
    header.update_template_hash = pace::content_hash(templates.update_template);
    header.initial_prompt = p0.text;
    if (!split.test.empty()) {
        header.initial_test_score = pace::evaluate_final(p0, task, split, metric, gateway,
                                                         templates, config.run.parallelism)
                                        .mean;
    }

    pace::ArtifactWriter writer(out_dir, header);
    const pace::OptimizeResult result =
        pace::pace_optimize(p0, task, split, config.run, gateway, templates,
                            [&](const pace::IterationRecord& record) { writer.append(record); });

    pace::ArtifactFooter footer;
    footer.final_prompt = result.best.prompt.text;
    footer.val_score = result.best.score_or(0.0);
    if (!split.test.empty()) {
        footer.test_score = pace::evaluate_final(result.best.prompt, task, split, metric, gateway,
                                                 templates, config.run.parallelism)
                                .mean;
    }
    writer.finalize(footer);

    std::cout << "task: " << task.name << "\n";
    std::cout << "final prompt: " << footer.final_prompt << "\n";
    std::cout << "val score: " << format_score(footer.val_score) << "\n";
    if (footer.test_score) {
        std::cout << "test score: " << format_score(*footer.test_score) << "\n";
    }
    std::cout << "artifact: " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& task_path, const std::string& prompt_arg,
             const std::string& split_name, const std::string& config_path,
             const std::optional<std::int64_t>& seed_flag, const std::string& backend_flag) {
    CliConfig config = load_config(config_path);
    if (seed_flag) config.run.seed = *seed_flag;
    if (!backend_flag.empty()) {
        auto kind = pace::backend_kind_from_string(backend_flag);
        if (!kind) throw pace::Error(pace::ErrorKind::usage, "unknown backend: " + backend_flag);
        config.backend.kind = *kind;
    }

    const pace::TaskSpec task = load_checked_task(task_path);
    const pace::Metric metric = pace::Metric::from_string(task.metric);
    const pace::SplitSpec split = pace::make_split(task, config.split_ratios, config.run.seed);
    const pace::TemplateSet templates = load_templates(config);
    const pace::Gateway gateway(config.backend);

    const std::vector<pace::DemoPair>* pairs = nullptr;
    if (split_name == "train") pairs = &split.train;
    else if (split_name == "val") pairs = &split.val;
    else if (split_name == "test") pairs = &split.test;
    else throw pace::Error(pace::ErrorKind::usage, "unknown split: " + split_name);
    if (pairs->empty()) {
        throw pace::Error(pace::ErrorKind::data, "split empty: " + split_name);
    }

    const pace::Prompt prompt{read_prompt_arg(prompt_arg), pace::PromptOrigin::human};
    const pace::ScoreReport report = pace::score_prompt(prompt, *pairs, metric, gateway, templates,
                                                        config.run.parallelism);
    std::cout << "metric: " << report.metric_id << "\n";
    std::cout << "pairs: " << report.n_pairs << "\n";
    for (const auto& [index, score] : report.per_pair) {
        std::cout << "pair " << index << ": " << format_score(score) << "\n";
    }
    std::cout << "mean: " << format_score(report.mean) << "\n";
    return 0;
}

int cmd_perturb(const std::string& text_arg, double rate, std::int64_t seed) {
    if (rate < 0.0 || rate > 1.0) {
        throw pace::Error(pace::ErrorKind::usage, "rate must be in [0,1]");
    }
    pace::PerturbSpec spec;
    spec.rate = rate;
    spec.seed = static_cast<std::uint64_t>(seed);
    std::cout << pace::butter_fingers(read_prompt_arg(text_arg), spec) << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& format_name,
               const std::string& out_path) {
    auto format = pace::report_format_from_string(format_name);
    if (!format) {
        throw pace::Error(pace::ErrorKind::usage, "unknown format: " + format_name);
    }
    std::vector<pace::RunArtifact> artifacts;
    for (const auto& dir : run_dirs) {
        artifacts.push_back(pace::load_artifact(dir));
    }
    const std::string report = pace::emit_report(artifacts, *format);
    if (out_path.empty()) {
        std::cout << report;
    } else {
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw pace::Error(pace::ErrorKind::data, "cannot write report: " + out_path);
        }
        out << report;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"PACE: actor-critic prompt editing"};
    app.require_subcommand(1);

    std::string task_path, prompt_arg, setting_name, config_path, out_dir, mode_flag, backend_flag;
    std::string split_name = "test";
    std::string format_name = "markdown";
    std::string report_out;
    std::vector<std::string> run_dirs;
    std::optional<std::int64_t> seed_flag;
    double rate = 0.15;
    std::int64_t perturb_seed = 0;
    std::string perturb_text;

    auto* optimize = app.add_subcommand("optimize", "Run the PACE loop on a task");
    optimize->add_option("--task", task_path, "Task file (JSON)")->required();
    optimize->add_option("--prompt", prompt_arg, "Initial prompt literal or file");
    optimize->add_option("--setting", setting_name,
                         "Initial prompt setting: best|medium|worst|butter_fingers|empty");
    optimize->add_option("--config", config_path, "Config file (JSON)");
    optimize->add_option("--out", out_dir, "Run artifact directory")->required();
    optimize->add_option("--seed", seed_flag, "Run seed");
    optimize->add_option("--mode", mode_flag, "full|no_critic|no_actor_critic");
    optimize->add_option("--backend", backend_flag, "live|replay|mock");

    auto* eval = app.add_subcommand("eval", "Score one prompt on one split");
    eval->add_option("--task", task_path, "Task file (JSON)")->required();
    eval->add_option("--prompt", prompt_arg, "Prompt literal or file")->required();
    eval->add_option("--split", split_name, "train|val|test");
    eval->add_option("--config", config_path, "Config file (JSON)");
    eval->add_option("--seed", seed_flag, "Split seed");
    eval->add_option("--backend", backend_flag, "live|replay|mock");

    auto* perturb = app.add_subcommand("perturb", "Butter-fingers a prompt");
    perturb->add_option("--text", perturb_text, "Text literal or file")->required();
    perturb->add_option("--rate", rate, "Per-letter misspelling rate");
    perturb->add_option("--seed", perturb_seed, "Perturbation seed");

    auto* report = app.add_subcommand("report", "Tabulate run artifacts");
    report->add_option("dirs", run_dirs, "Run artifact directories")->required();
    report->add_option("--format", format_name, "markdown|csv|json");
    report->add_option("--out", report_out, "Write the report here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(optimize)) {
            if (!setting_name.empty() && !prompt_arg.empty()) {
                throw pace::Error(pace::ErrorKind::usage, "--setting and --prompt are exclusive");
            }
            return cmd_optimize(task_path, setting_name, prompt_arg, config_path, out_dir,
                                seed_flag, mode_flag, backend_flag);
        }
        if (app.got_subcommand(eval)) {
            return cmd_eval(task_path, prompt_arg, split_name, config_path, seed_flag, backend_flag);
        }
        if (app.got_subcommand(perturb)) {
            return cmd_perturb(perturb_text, rate, perturb_seed);
        }
        if (app.got_subcommand(report)) {
            return cmd_report(run_dirs, format_name, report_out);
        }
        return 1;
    } catch (const pace::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return static_cast<int>(pace::ErrorKind::internal);
    }
}
