#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pace/core.hpp"
#include "pace/templates.hpp"

namespace pace {

class Gateway;

struct Metric {
    MetricId id = MetricId::exact_match;

    static Metric from_string(const std::string& s);
    std::string id_string() const { return metric_id_string(id); }
};

// Normalization applied before every comparison: lowercase, trim, collapse
// internal whitespace runs to single spaces, strip trailing ".,;:!?".
std::string normalize_text(const std::string& text);

std::vector<std::string> tokenize(const std::string& normalized);

// Maps (prediction, references) to [0,1]; multi-reference score is the max
// over references.
double score_pair(const std::string& prediction, const std::vector<std::string>& references,
                  Metric metric);

struct ScoreReport {
    double mean = 0.0;
    std::vector<std::pair<int, double>> per_pair;
    int n_pairs = 0;
    std::string metric_id;
};

// Renders the actor template per pair, completes it through the gateway
// (tagged eval) and scores the completion. Backend calls may run
// concurrently up to `parallelism`; the report is order-stable regardless.
ScoreReport score_prompt(const Prompt& prompt, const std::vector<DemoPair>& eval_pairs, Metric metric,
                         const Gateway& gateway, const TemplateSet& templates, int parallelism = 1);

// Runs fn(i) for i in [0, n) on up to `parallelism` worker threads. Results
// land by index; the lowest-index exception is rethrown after all workers
// finish, so the outcome does not depend on completion order.
void parallel_for_indexed(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn);

} // namespace pace
