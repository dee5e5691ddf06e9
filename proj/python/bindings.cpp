#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pace/bench.hpp"
#include "pace/core.hpp"
#include "pace/error.hpp"
#include "pace/gateway.hpp"
#include "pace/optimizer.hpp"
#include "pace/scoring.hpp"
#include "pace/templates.hpp"

namespace py = pybind11;

namespace {

pace::Metric metric_arg(const std::string& id) {
    return pace::Metric::from_string(id);
}

struct OptimizeSummary {
    std::string best_prompt;
    double val_score = 0.0;
    double test_score = -1.0; // -1 when the task has no test split
    int iterations = 0;
};

OptimizeSummary run_optimize(const pace::TaskSpec& task, const std::string& initial_prompt,
                             const pace::RunConfig& config, const pace::BackendConfig& backend,
                             const std::array<double, 3>& split_ratios) {
    const pace::Gateway gateway(backend);
    const pace::TemplateSet templates = pace::TemplateSet::defaults();
    const pace::SplitSpec split = pace::make_split(task, split_ratios, config.seed);
    const pace::Metric metric = pace::Metric::from_string(task.metric);

    const pace::Prompt p0 = initial_prompt.empty()
                                ? pace::empty_prompt()
                                : pace::Prompt{initial_prompt, pace::PromptOrigin::human};
    const pace::OptimizeResult result =
        pace::pace_optimize(p0, task, split, config, gateway, templates);

    OptimizeSummary summary;
    summary.best_prompt = result.best.prompt.text;
    summary.val_score = result.best.score_or(0.0);
    summary.iterations = static_cast<int>(result.iterations.size());
    if (!split.test.empty()) {
        summary.test_score = pace::evaluate_final(result.best.prompt, task, split, metric, gateway,
                                                  templates, config.parallelism)
                                 .mean;
    }
    return summary;
}

} // namespace

PYBIND11_MODULE(_pace, m) {
    m.doc() = "Actor-critic prompt editing: metrics, templates, perturbation, and the "
              "optimization loop.";

    py::register_exception<pace::Error>(m, "PaceError");

    py::class_<pace::DemoPair>(m, "DemoPair")
        .def(py::init<>())
        .def(py::init([](std::string input, std::vector<std::string> outputs) {
                 return pace::DemoPair{std::move(input), std::move(outputs)};
             }),
             py::arg("input"), py::arg("outputs"))
        .def_readwrite("input", &pace::DemoPair::input)
        .def_readwrite("outputs", &pace::DemoPair::outputs);

    py::class_<pace::HumanPrompt>(m, "HumanPrompt")
        .def(py::init<>())
        .def_readwrite("text", &pace::HumanPrompt::text)
        .def_property(
            "label",
            [](const pace::HumanPrompt& p) { return pace::quality_label_string(p.label); },
            [](pace::HumanPrompt& p, const std::string& label) {
                auto parsed = pace::quality_label_from_string(label);
                if (!parsed) throw pace::Error(pace::ErrorKind::data, "unknown label: " + label);
                p.label = *parsed;
            });

    py::class_<pace::TaskSpec>(m, "TaskSpec")
        .def(py::init<>())
        .def_readwrite("name", &pace::TaskSpec::name)
        .def_readwrite("metric", &pace::TaskSpec::metric)
        .def_readwrite("examples", &pace::TaskSpec::examples)
        .def_readwrite("human_prompts", &pace::TaskSpec::human_prompts);

    py::class_<pace::SplitSpec>(m, "SplitSpec")
        .def_readonly("train", &pace::SplitSpec::train)
        .def_readonly("val", &pace::SplitSpec::val)
        .def_readonly("test", &pace::SplitSpec::test)
        .def_readonly("seed", &pace::SplitSpec::seed);

    py::class_<pace::RunConfig>(m, "RunConfig")
        .def(py::init<>())
        .def_readwrite("n_agents", &pace::RunConfig::n_agents)
        .def_readwrite("candidates_per_iter", &pace::RunConfig::candidates_per_iter)
        .def_readwrite("max_iters", &pace::RunConfig::max_iters)
        .def_readwrite("eval_subset_size", &pace::RunConfig::eval_subset_size)
        .def_readwrite("seed", &pace::RunConfig::seed)
        .def_property(
            "mode", [](const pace::RunConfig& c) { return pace::run_mode_string(c.mode); },
            [](pace::RunConfig& c, const std::string& mode) {
                auto parsed = pace::run_mode_from_string(mode);
                if (!parsed) throw pace::Error(pace::ErrorKind::config, "unknown mode: " + mode);
                c.mode = *parsed;
            })
        .def_readwrite("temperature", &pace::RunConfig::temperature)
        .def_readwrite("top_p", &pace::RunConfig::top_p)
        .def_readwrite("max_tokens", &pace::RunConfig::max_tokens)
        .def_readwrite("update_temperature", &pace::RunConfig::update_temperature)
        .def_readwrite("parallelism", &pace::RunConfig::parallelism);

    py::class_<pace::BackendConfig>(m, "BackendConfig")
        .def(py::init<>())
        .def_property(
            "kind", [](const pace::BackendConfig& c) { return pace::backend_kind_string(c.kind); },
            [](pace::BackendConfig& c, const std::string& kind) {
                auto parsed = pace::backend_kind_from_string(kind);
                if (!parsed) {
                    throw pace::Error(pace::ErrorKind::config, "unknown backend: " + kind);
                }
                c.kind = *parsed;
            })
        .def_readwrite("base_url", &pace::BackendConfig::base_url)
        .def_readwrite("api_key_env", &pace::BackendConfig::api_key_env)
        .def_readwrite("cache_dir", &pace::BackendConfig::cache_dir)
        .def_readwrite("mock_script", &pace::BackendConfig::mock_script)
        .def_readwrite("model", &pace::BackendConfig::model);

    py::class_<OptimizeSummary>(m, "OptimizeSummary")
        .def_readonly("best_prompt", &OptimizeSummary::best_prompt)
        .def_readonly("val_score", &OptimizeSummary::val_score)
        .def_readonly("test_score", &OptimizeSummary::test_score)
        .def_readonly("iterations", &OptimizeSummary::iterations);

    py::class_<pace::Gateway>(m, "Gateway")
        .def(py::init<pace::BackendConfig>(), py::arg("config"))
        .def(
            "complete",
            [](const pace::Gateway& gateway, const std::string& content, const std::string& tag) {
                auto parsed = pace::request_tag_from_string(tag);
                if (!parsed) throw pace::Error(pace::ErrorKind::data, "unknown tag: " + tag);
                return gateway.complete(gateway.make_request(*parsed, content)).content;
            },
            py::arg("content"), py::arg("tag") = "actor");

    // text metrics
    m.def("normalize_text", &pace::normalize_text, py::arg("text"));
    m.def(
        "score_pair",
        [](const std::string& prediction, const std::vector<std::string>& references,
           const std::string& metric) {
            return pace::score_pair(prediction, references, metric_arg(metric));
        },
        py::arg("prediction"), py::arg("references"), py::arg("metric") = "exact_match");

    // templates
    m.def(
        "render_actor",
        [](const std::string& instruction, const std::string& input) {
            return pace::render_actor(pace::Prompt{instruction, pace::PromptOrigin::human}, input,
                                      pace::TemplateSet::defaults());
        },
        py::arg("instruction"), py::arg("input"));
    m.def(
        "render_critic",
        [](const std::string& instruction, const std::string& input, const std::string& prediction,
           const std::vector<std::string>& references) {
            return pace::render_critic(pace::Prompt{instruction, pace::PromptOrigin::human}, input,
                                       prediction, references, pace::TemplateSet::defaults());
        },
        py::arg("instruction"), py::arg("input"), py::arg("prediction"), py::arg("references"));
    m.def(
        "render_update",
        [](const std::string& instruction, const std::vector<std::string>& critiques) {
            return pace::render_update(pace::Prompt{instruction, pace::PromptOrigin::human},
                                       critiques, pace::TemplateSet::defaults());
        },
        py::arg("instruction"), py::arg("critiques"));
    m.def(
        "extract_prompt",
        [](const std::string& response) { return pace::extract_prompt(response).text; },
        py::arg("response"));

    // perturbation
    m.def(
        "butter_fingers",
        [](const std::string& text, double rate, std::uint64_t seed) {
            pace::PerturbSpec spec;
            spec.rate = rate;
            spec.seed = seed;
            return pace::butter_fingers(text, spec);
        },
        py::arg("text"), py::arg("rate") = 0.15, py::arg("seed") = 0);
    m.def(
        "qwerty_neighbors", [](char c) { return pace::qwerty_neighbors(c); }, py::arg("letter"));

    // tasks and splits
    m.def("load_task", &pace::load_task, py::arg("path"));
    m.def("validate_task", &pace::validate_task, py::arg("task"));
    m.def(
        "make_split",
        [](const pace::TaskSpec& task, const std::array<double, 3>& ratios, std::int64_t seed) {
            return pace::make_split(task, ratios, seed);
        },
        py::arg("task"), py::arg("ratios") = std::array<double, 3>{0.4, 0.3, 0.3},
        py::arg("seed") = 0);

    // the loop
    m.def("run_optimize", &run_optimize, py::arg("task"), py::arg("initial_prompt"),
          py::arg("config"), py::arg("backend"),
          py::arg("split_ratios") = std::array<double, 3>{0.4, 0.3, 0.3});
}
