#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pace/core.hpp"
#include "pace/gateway.hpp"
#include "pace/scoring.hpp"
#include "pace/templates.hpp"

namespace pace {

// One actor execution: prompt applied to a sampled input.
struct ActorAction {
    DemoPair pair;
    std::string rendered_request;
    std::string fingerprint;
    std::string action;
    int agent_index = 1; // 1-based, unique within an iteration
};

struct Critique {
    int agent_index = 1;
    std::string id; // "t<iteration>.a<agent>"
    std::string text;
    std::string rendered_request;
    std::string fingerprint;
    int action_index = 0; // index into the iteration's actions
};

struct CritiqueBatch {
    std::vector<Critique> critiques;
    int iteration = 0;
};

struct IterationRecord {
    int index = 0;
    std::vector<DemoPair> sampled_pairs;
    std::vector<ActorAction> actions;
    std::optional<CritiqueBatch> critiques; // absent in ablation modes
    std::vector<std::string> update_requests;
    std::vector<std::string> update_fingerprints;
    std::vector<CandidateRecord> candidates;
    CandidateRecord incumbent_before;
    CandidateRecord incumbent_after;
    std::vector<std::string> warnings;
};

ActorAction act(const Prompt& prompt, const DemoPair& pair, const Gateway& gateway,
                const TemplateSet& templates, const RunConfig& config);

// The critic never sees test data: pairs drawn from the test split are
// rejected with "critic leak: test pair".
Critique criticize(const Prompt& prompt, const ActorAction& action, const SplitSpec& split,
                   const Gateway& gateway, const TemplateSet& templates, const RunConfig& config);

// Generates k candidate prompts from one critique batch. Candidate 1 sees
// all critiques in order; candidate j>=2 sees a distinct seeded rotation,
// which keeps update requests distinct under temperature 0. Duplicate
// candidate texts (including copies of the incumbent) are dropped.
std::vector<Prompt> update_prompt(const Prompt& prompt, const CritiqueBatch& batch, int k,
                                  const Gateway& gateway, const TemplateSet& templates,
                                  std::uint64_t seed, const RunConfig& config,
                                  std::vector<std::string>* requests_out = nullptr,
                                  std::vector<std::string>* fingerprints_out = nullptr,
                                  std::vector<std::vector<std::string>>* parent_ids_out = nullptr);

// One full iteration: sample pairs, run n actors then n critics (both
// fan-outs concurrent), generate candidates, score them on eval_pairs, and
// keep the argmax with ties broken for the incumbent.
IterationRecord pace_step(const CandidateRecord& incumbent, int t, const SplitSpec& split,
                          const std::vector<DemoPair>& eval_pairs, const RunConfig& config,
                          Metric metric, const Gateway& gateway, const TemplateSet& templates);

struct OptimizeResult {
    CandidateRecord best;
    std::vector<IterationRecord> iterations;
    std::vector<DemoPair> eval_pairs; // the seeded val subset used for scoring
};

// The full loop: scores p0, then iterates pace_step until the incumbent
// stops improving or max_iters is reached. on_iteration fires after each
// completed step so callers can stream records; a failing step aborts the
// run with the already-streamed records preserved.
OptimizeResult pace_optimize(const Prompt& p0, const TaskSpec& task, const SplitSpec& split,
                             const RunConfig& config, const Gateway& gateway,
                             const TemplateSet& templates,
                             const std::function<void(const IterationRecord&)>& on_iteration = {});

struct ResampleResult {
    CandidateRecord best;
    std::vector<CandidateRecord> candidates; // ranked, best first
};

// Paraphrase-only baseline: k update calls with no actor/critic feedback,
// scored and selected with the same rule as pace_step.
ResampleResult resample_baseline(const Prompt& p0, const SplitSpec& split, int k,
                                 const RunConfig& config, Metric metric, const Gateway& gateway,
                                 const TemplateSet& templates);

} // namespace pace
