#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pace/core.hpp"
#include "pace/gateway.hpp"
#include "pace/optimizer.hpp"
#include "pace/scoring.hpp"
#include "pace/templates.hpp"

namespace pace {

// Keyboard-adjacent misspelling perturbation ("butter fingers").
struct PerturbSpec {
    double rate = 0.15;
    std::uint64_t seed = 0;
};

// Physical QWERTY neighbors of a lowercase letter ('a' -> "qwsz" and so on).
const std::string& qwerty_neighbors(char lower);

// Independently for each letter, with probability `rate`, substitute a
// uniformly random QWERTY-adjacent letter, preserving case. Non-letters and
// string length are untouched; deterministic per seed.
std::string butter_fingers(const std::string& text, const PerturbSpec& spec);

enum class InitialSetting { best, medium, worst, butter_fingers, empty, literal };

std::optional<InitialSetting> initial_setting_from_string(const std::string& s);
std::string initial_setting_string(InitialSetting setting);

// Ranking context for tasks whose human prompts carry no quality labels:
// prompts are scored over the val split and sorted.
struct PromptRankContext {
    const Gateway* gateway = nullptr;
    const TemplateSet* templates = nullptr;
    const SplitSpec* split = nullptr;
    Metric metric;
    int parallelism = 1;
};

Prompt select_initial_prompt(const TaskSpec& task, InitialSetting setting,
                             const std::string& literal_text, const PromptRankContext& context,
                             std::uint64_t perturb_seed = 0);

// Final evaluation over the full test split; the only place test pairs
// reach the backend (requests are tagged eval).
ScoreReport evaluate_final(const Prompt& p_star, const TaskSpec& task, const SplitSpec& split,
                           Metric metric, const Gateway& gateway, const TemplateSet& templates,
                           int parallelism = 1);

// --- run artifact -------------------------------------------------------------

inline constexpr int kArtifactSchemaVersion = 1;

struct ArtifactHeader {
    int schema_version = kArtifactSchemaVersion;
    std::string task_name;
    std::string setting;
    std::string metric_id;
    std::int64_t seed = 0;
    RunConfig config;
    std::array<double, 3> split_ratios{0.4, 0.3, 0.3};
    std::string backend_kind;
    std::string model;
    std::string actor_template_hash;
    std::string critic_template_hash;
    std::string update_template_hash;
    std::string initial_prompt;
    std::optional<double> initial_test_score;
};

struct ArtifactFooter {
    std::string final_prompt;
    double val_score = 0.0;
    std::optional<double> test_score;
};

struct RunArtifact {
    ArtifactHeader header;
    std::vector<IterationRecord> records;
    ArtifactFooter footer;
};

// On-disk layout: <dir>/header.json, <dir>/records.jsonl (one record per
// line, appended as iterations complete), <dir>/footer.json.
class ArtifactWriter {
public:
    ArtifactWriter(std::string dir, const ArtifactHeader& header);

    void append(const IterationRecord& record);
    void finalize(const ArtifactFooter& footer);

    const std::string& dir() const { return dir_; }

private:
    std::string dir_;
    bool finalized_ = false;
};

RunArtifact load_artifact(const std::string& dir);

// Content hash over records + footer: the replayable payload of a run.
// The header is compared separately because it names the backend kind.
std::string artifact_hash(const std::string& dir);

std::string header_to_json(const ArtifactHeader& header);
std::string record_to_json(const IterationRecord& record);
std::string footer_to_json(const ArtifactFooter& footer);

// --- reporting ----------------------------------------------------------------

enum class ReportFormat { markdown, csv, json };

std::optional<ReportFormat> report_format_from_string(const std::string& s);

// One row per (task, setting) with initial/final/delta columns plus an
// averages row. markdown/csv format numbers to two decimals; json carries
// raw values.
std::string emit_report(const std::vector<RunArtifact>& artifacts, ReportFormat format);

} // namespace pace
