#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pace/error.hpp"

namespace pace {

// One demonstration (X, Y): an input and the set of acceptable outputs.
struct DemoPair {
    std::string input;
    std::vector<std::string> outputs;

    bool operator==(const DemoPair&) const = default;
};

enum class MetricId { exact_match, contains, token_f1, set_match, bleu };

std::optional<MetricId> metric_from_id(const std::string& id);
std::string metric_id_string(MetricId id);

enum class QualityLabel { best, medium, worst, unlabeled };

std::optional<QualityLabel> quality_label_from_string(const std::string& s);
std::string quality_label_string(QualityLabel label);

struct HumanPrompt {
    std::string text;
    QualityLabel label = QualityLabel::unlabeled;
};

// A benchmark task: demonstration pairs plus (optionally) labeled
// human-written prompts. `metric` stays a raw identifier so that
// validate_task can report unknown ids instead of failing at parse time.
struct TaskSpec {
    std::string name;
    std::string metric;
    std::vector<DemoPair> examples;
    std::vector<HumanPrompt> human_prompts;
};

enum class PromptOrigin { human, empty, generated, edited };

std::string prompt_origin_string(PromptOrigin origin);

struct Prompt {
    std::string text;
    PromptOrigin origin = PromptOrigin::human;

    bool operator==(const Prompt&) const = default;
};

inline Prompt empty_prompt() { return Prompt{"", PromptOrigin::empty}; }

// A prompt with its evaluated score and lineage.
struct CandidateRecord {
    Prompt prompt;
    std::optional<double> score;
    int iteration = 0;
    std::vector<std::string> parent_critique_ids;

    // Scores are clamped to [0,1]; every in-scope metric is bounded.
    void set_score(double s);
    double score_or(double fallback) const { return score ? *score : fallback; }
};

struct SplitSpec {
    std::vector<DemoPair> train;
    std::vector<DemoPair> val;
    std::vector<DemoPair> test;
    std::int64_t seed = 0;
};

enum class RunMode { full, no_critic, no_actor_critic };

std::optional<RunMode> run_mode_from_string(const std::string& s);
std::string run_mode_string(RunMode mode);

struct RunConfig {
    int n_agents = 4;            // n
    int candidates_per_iter = 2;
    int max_iters = 1;
    int eval_subset_size = 10;   // cap on val pairs scored per candidate
    std::int64_t seed = 0;
    RunMode mode = RunMode::full;

    // Decoding settings applied to every request.
    double temperature = 0.0;
    double top_p = 1.0;
    int max_tokens = 512;
    // Optional switch: raise temperature for update calls only, leaving
    // actor/critic/eval calls deterministic.
    double update_temperature = 0.0;

    int parallelism = 4;
};

// Returns one violation string per broken TaskSpec invariant; empty means valid.
std::vector<std::string> validate_task(const TaskSpec& task);

// Deterministic seeded shuffle + floor-allocated split; the remainder goes
// to train. Throws Error(data, "insufficient examples") when the task has
// fewer examples than nonzero ratio buckets.
SplitSpec make_split(const TaskSpec& task, const std::array<double, 3>& ratios, std::int64_t seed);

// Task file I/O (JSON: name, metric, examples[{input, outputs[]}], prompts[{text,label}]).
TaskSpec parse_task(const std::string& json_text);
TaskSpec load_task(const std::string& path);

// --- seeded sampling helpers (shared by optimizer/bench) -------------------

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// Deterministic Fisher-Yates permutation of 0..n-1. Hand-rolled draws so the
// result is identical across standard library implementations.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Sample min(k, pool.size()) pairs without replacement, seeded.
std::vector<DemoPair> seeded_subset(const std::vector<DemoPair>& pool, std::size_t k, std::uint64_t seed);

// Sample exactly k pairs; falls back to with-replacement when the pool is
// smaller than k, reporting the fallback through `with_replacement`.
std::vector<DemoPair> sample_pairs(const std::vector<DemoPair>& pool, std::size_t k, std::uint64_t seed,
                                   bool& with_replacement);

} // namespace pace
