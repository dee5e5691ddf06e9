#include "pace/optimizer.hpp"

#include <algorithm>
#include <set>

#include "pace/error.hpp"

namespace pace {

namespace {

double effective_update_temperature(const RunConfig& config) {
    return config.update_temperature > 0.0 ? config.update_temperature : config.temperature;
}

bool pair_in(const std::vector<DemoPair>& pool, const DemoPair& pair) {
    return std::find(pool.begin(), pool.end(), pair) != pool.end();
}

// Rotate so that position `offset` comes first.
template <typename T>
std::vector<T> rotated(const std::vector<T>& items, std::size_t offset) {
    std::vector<T> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        out.push_back(items[(i + offset) % items.size()]);
    }
    return out;
}

// Candidate 1 keeps the input order; candidates 2..k use distinct nonzero
// rotations derived from the seed.
std::size_t rotation_for_candidate(std::size_t j, std::size_t n, std::uint64_t seed) {
    if (j == 0 || n <= 1) return 0;
    const std::size_t base = static_cast<std::size_t>(mix_seed(seed, 0x726f74ULL) % (n - 1));
    return 1 + (base + (j - 1)) % (n - 1);
}

struct FeedbackItem {
    std::string body;
    std::string critique_id; // empty outside full mode
};

std::string numbered_join(const std::string& prefix, const std::vector<FeedbackItem>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i > 0) out += '\n';
        out += prefix + " " + std::to_string(i + 1) + ": " + items[i].body;
    }
    return out;
}

struct CandidateBatch {
    std::vector<Prompt> prompts;
    std::vector<std::vector<std::string>> parent_ids; // aligned with prompts
    std::vector<std::string> requests;                // one per update call
    std::vector<std::string> fingerprints;
};

// Runs k update calls and parses the completions back into prompts. Items
// may be empty (paraphrase-only mode); then candidate j>=2 carries a variant
// marker in the advice slot so the k requests stay distinct under
// temperature 0.
CandidateBatch generate_candidates(const Prompt& prompt, const std::vector<FeedbackItem>& items,
                                   const std::string& prefix, int k, const Gateway& gateway,
                                   const TemplateSet& templates, std::uint64_t seed,
                                   const RunConfig& config) {
    CandidateBatch batch;
    std::set<std::string> seen{prompt.text};
    int parse_failures = 0;

    for (int j = 0; j < k; ++j) {
        std::string slot;
        std::vector<std::string> parents;
        if (items.empty()) {
            slot = j == 0 ? "" : "(variant " + std::to_string(j + 1) + ")";
        } else {
            auto ordered = rotated(items, rotation_for_candidate(static_cast<std::size_t>(j),
                                                                 items.size(), seed));
            slot = numbered_join(prefix, ordered);
            for (const auto& item : ordered) {
                if (!item.critique_id.empty()) parents.push_back(item.critique_id);
            }
        }

        const std::string rendered = render_update_raw(prompt, slot, templates);
        ChatRequest request = gateway.make_request(RequestTag::update, rendered,
                                                   effective_update_temperature(config),
                                                   config.top_p, config.max_tokens);
        batch.requests.push_back(rendered);
        batch.fingerprints.push_back(gateway.key_for(request).fingerprint);

        const ChatResponse response = gateway.complete(request);
        Prompt candidate;
        try {
            candidate = extract_prompt(response.content);
        } catch (const Error&) {
            ++parse_failures;
            continue;
        }
        if (seen.count(candidate.text)) continue;
        seen.insert(candidate.text);
        batch.prompts.push_back(std::move(candidate));
        batch.parent_ids.push_back(std::move(parents));
    }

    if (batch.prompts.empty() && parse_failures == k) {
        throw Error(ErrorKind::backend, "update produced no prompt");
    }
    return batch;
}

std::vector<FeedbackItem> critique_items(const CritiqueBatch& batch) {
    std::vector<FeedbackItem> items;
    items.reserve(batch.critiques.size());
    for (const auto& critique : batch.critiques) {
        items.push_back(FeedbackItem{critique.text, critique.id});
    }
    return items;
}

std::vector<FeedbackItem> transcript_items(const std::vector<ActorAction>& actions) {
    std::vector<FeedbackItem> items;
    items.reserve(actions.size());
    for (const auto& action : actions) {
        items.push_back(FeedbackItem{"Input: " + action.pair.input + ", Prediction: " +
                                         action.action + ", Ground Truth: " +
                                         join_references(action.pair.outputs),
                                     ""});
    }
    return items;
}

// Score every (candidate, pair) cell in one parallel batch; the result only
// depends on indices, never on completion order.
std::vector<double> score_candidates(const std::vector<Prompt>& prompts,
                                     const std::vector<DemoPair>& eval_pairs, Metric metric,
                                     const Gateway& gateway, const TemplateSet& templates,
                                     const RunConfig& config) {
    const std::size_t pairs = eval_pairs.size();
    std::vector<double> cell(prompts.size() * pairs, 0.0);
    parallel_for_indexed(prompts.size() * pairs, config.parallelism, [&](std::size_t idx) {
        const std::size_t ci = idx / pairs;
        const std::size_t pi = idx % pairs;
        ChatRequest request =
            gateway.make_request(RequestTag::eval,
                                 render_actor(prompts[ci], eval_pairs[pi].input, templates),
                                 config.temperature, config.top_p, config.max_tokens);
        const ChatResponse response = gateway.complete(request);
        cell[idx] = score_pair(response.content, eval_pairs[pi].outputs, metric);
    });

    std::vector<double> means(prompts.size(), 0.0);
    for (std::size_t ci = 0; ci < prompts.size(); ++ci) {
        double sum = 0.0;
        for (std::size_t pi = 0; pi < pairs; ++pi) sum += cell[ci * pairs + pi];
        means[ci] = pairs == 0 ? 0.0 : sum / static_cast<double>(pairs);
    }
    return means;
}

std::vector<DemoPair> scoring_pool(const SplitSpec& split) {
    return split.val.empty() ? split.train : split.val;
}

std::vector<DemoPair> run_eval_subset(const SplitSpec& split, const RunConfig& config) {
    const auto pool = scoring_pool(split);
    if (pool.empty()) {
        throw Error(ErrorKind::data, "no demonstration pairs available for scoring");
    }
    return seeded_subset(pool, static_cast<std::size_t>(std::max(config.eval_subset_size, 1)),
                         mix_seed(static_cast<std::uint64_t>(config.seed), 0x6576616cULL));
}

void check_config(const RunConfig& config) {
    if (config.n_agents < 1) throw Error(ErrorKind::config, "n_agents must be >= 1");
    if (config.candidates_per_iter < 1) {
        throw Error(ErrorKind::config, "candidates_per_iter must be >= 1");
    }
    if (config.max_iters < 1) throw Error(ErrorKind::config, "max_iters must be >= 1");
}

} // namespace

ActorAction act(const Prompt& prompt, const DemoPair& pair, const Gateway& gateway,
                const TemplateSet& templates, const RunConfig& config) {
    ActorAction action;
    action.pair = pair;
    action.rendered_request = render_actor(prompt, pair.input, templates);
    ChatRequest request = gateway.make_request(RequestTag::actor, action.rendered_request,
                                               config.temperature, config.top_p, config.max_tokens);
    action.fingerprint = gateway.key_for(request).fingerprint;
    action.action = gateway.complete(request).content;
    return action;
}

Critique criticize(const Prompt& prompt, const ActorAction& action, const SplitSpec& split,
                   const Gateway& gateway, const TemplateSet& templates, const RunConfig& config) {
    if (pair_in(split.test, action.pair)) {
        throw Error(ErrorKind::data, "critic leak: test pair");
    }
    Critique critique;
    critique.agent_index = action.agent_index;
    critique.rendered_request =
        render_critic(prompt, action.pair.input, action.action, action.pair.outputs, templates);
    ChatRequest request = gateway.make_request(RequestTag::critic, critique.rendered_request,
                                               config.temperature, config.top_p, config.max_tokens);
    critique.fingerprint = gateway.key_for(request).fingerprint;
    critique.text = gateway.complete(request).content;
    return critique;
}

std::vector<Prompt> update_prompt(const Prompt& prompt, const CritiqueBatch& batch, int k,
                                  const Gateway& gateway, const TemplateSet& templates,
                                  std::uint64_t seed, const RunConfig& config,
                                  std::vector<std::string>* requests_out,
                                  std::vector<std::string>* fingerprints_out,
                                  std::vector<std::vector<std::string>>* parent_ids_out) {
    if (batch.critiques.empty()) {
        throw Error(ErrorKind::data, "no critiques to aggregate");
    }
    if (k < 1) {
        throw Error(ErrorKind::config, "candidate count must be >= 1");
    }
    CandidateBatch out = generate_candidates(prompt, critique_items(batch), "Advice", k, gateway,
                                             templates, seed, config);
    if (requests_out) *requests_out = out.requests;
    if (fingerprints_out) *fingerprints_out = out.fingerprints;
    if (parent_ids_out) *parent_ids_out = out.parent_ids;
    return out.prompts;
}

IterationRecord pace_step(const CandidateRecord& incumbent, int t, const SplitSpec& split,
                          const std::vector<DemoPair>& eval_pairs, const RunConfig& config,
                          Metric metric, const Gateway& gateway, const TemplateSet& templates) {
    check_config(config);
    if (!incumbent.score) {
        throw Error(ErrorKind::data, "incumbent must be scored before a step");
    }
    if (eval_pairs.empty()) {
        throw Error(ErrorKind::data, "no eval pairs for candidate scoring");
    }

    IterationRecord record;
    record.index = t;
    record.incumbent_before = incumbent;

    const std::uint64_t step_seed =
        mix_seed(static_cast<std::uint64_t>(config.seed), static_cast<std::uint64_t>(t));

    std::vector<FeedbackItem> items;
    if (config.mode != RunMode::no_actor_critic) {
        if (split.train.empty()) {
            throw Error(ErrorKind::data, "train split is empty");
        }
        bool with_replacement = false;
        record.sampled_pairs = sample_pairs(split.train, static_cast<std::size_t>(config.n_agents),
                                            step_seed, with_replacement);
        if (with_replacement) {
            record.warnings.push_back("train split smaller than n_agents; sampled with replacement");
        }

        record.actions.resize(record.sampled_pairs.size());
        parallel_for_indexed(record.sampled_pairs.size(), config.parallelism, [&](std::size_t i) {
            try {
                record.actions[i] = act(incumbent.prompt, record.sampled_pairs[i], gateway,
                                        templates, config);
                record.actions[i].agent_index = static_cast<int>(i) + 1;
            } catch (const Error& e) {
                throw Error(e.kind(), "agent " + std::to_string(i + 1) + ": " + e.what());
            }
        });

        if (config.mode == RunMode::full) {
            CritiqueBatch batch;
            batch.iteration = t;
            batch.critiques.resize(record.actions.size());
            parallel_for_indexed(record.actions.size(), config.parallelism, [&](std::size_t i) {
                try {
                    Critique critique = criticize(incumbent.prompt, record.actions[i], split,
                                                  gateway, templates, config);
                    critique.id = "t" + std::to_string(t) + ".a" + std::to_string(i + 1);
                    critique.action_index = static_cast<int>(i);
                    batch.critiques[i] = std::move(critique);
                } catch (const Error& e) {
                    throw Error(e.kind(), "agent " + std::to_string(i + 1) + ": " + e.what());
                }
            });
            record.critiques = std::move(batch);
            items = critique_items(*record.critiques);
        } else {
            items = transcript_items(record.actions);
        }
    }

    const std::string prefix = config.mode == RunMode::full ? "Advice" : "Prediction";
    CandidateBatch generated =
        generate_candidates(incumbent.prompt, items, prefix, config.candidates_per_iter, gateway,
                            templates, step_seed, config);
    record.update_requests = generated.requests;
    record.update_fingerprints = generated.fingerprints;

    const std::vector<double> means =
        score_candidates(generated.prompts, eval_pairs, metric, gateway, templates, config);
    for (std::size_t i = 0; i < generated.prompts.size(); ++i) {
        CandidateRecord candidate;
        candidate.prompt = generated.prompts[i];
        candidate.iteration = t + 1;
        candidate.parent_critique_ids = generated.parent_ids[i];
        candidate.set_score(means[i]);
        record.candidates.push_back(std::move(candidate));
    }

    // Algorithm: keep the strictly better candidate, ties stay with the incumbent.
    CandidateRecord best = incumbent;
    for (const auto& candidate : record.candidates) {
        if (candidate.score_or(0.0) > best.score_or(0.0)) {
            best = candidate;
        }
    }
    record.incumbent_after = best;
    return record;
}

OptimizeResult pace_optimize(const Prompt& p0, const TaskSpec& task, const SplitSpec& split,
                             const RunConfig& config, const Gateway& gateway,
                             const TemplateSet& templates,
                             const std::function<void(const IterationRecord&)>& on_iteration) {
    check_config(config);
    const Metric metric = Metric::from_string(task.metric);

    OptimizeResult result;
    result.eval_pairs = run_eval_subset(split, config);

    CandidateRecord incumbent;
    incumbent.prompt = p0;
    incumbent.iteration = 0;
    incumbent.set_score(
        score_candidates({p0}, result.eval_pairs, metric, gateway, templates, config).front());

    for (int t = 0; t < config.max_iters; ++t) {
        IterationRecord record =
            pace_step(incumbent, t, split, result.eval_pairs, config, metric, gateway, templates);
        incumbent = record.incumbent_after;
        const bool improved =
            record.incumbent_after.score_or(0.0) > record.incumbent_before.score_or(0.0);
        result.iterations.push_back(std::move(record));
        if (on_iteration) on_iteration(result.iterations.back());
        if (!improved) break; // converged: a full iteration without improvement
    }

    result.best = incumbent;
    return result;
}

ResampleResult resample_baseline(const Prompt& p0, const SplitSpec& split, int k,
                                 const RunConfig& config, Metric metric, const Gateway& gateway,
                                 const TemplateSet& templates) {
    if (k < 1) {
        throw Error(ErrorKind::config, "resample baseline requires k >= 1");
    }
    const auto eval_pairs = run_eval_subset(split, config);

    CandidateRecord incumbent;
    incumbent.prompt = p0;
    incumbent.iteration = 0;
    incumbent.set_score(
        score_candidates({p0}, eval_pairs, metric, gateway, templates, config).front());

    CandidateBatch generated =
        generate_candidates(p0, {}, "Advice", k, gateway, templates,
                            mix_seed(static_cast<std::uint64_t>(config.seed), 0x72657361ULL), config);
    const std::vector<double> means =
        score_candidates(generated.prompts, eval_pairs, metric, gateway, templates, config);

    ResampleResult result;
    for (std::size_t i = 0; i < generated.prompts.size(); ++i) {
        CandidateRecord candidate;
        candidate.prompt = generated.prompts[i];
        candidate.iteration = 1;
        candidate.set_score(means[i]);
        result.candidates.push_back(std::move(candidate));
    }
    std::stable_sort(result.candidates.begin(), result.candidates.end(),
                     [](const CandidateRecord& a, const CandidateRecord& b) {
                         return a.score_or(0.0) > b.score_or(0.0);
                     });

    result.best = incumbent;
    for (const auto& candidate : result.candidates) {
        if (candidate.score_or(0.0) > result.best.score_or(0.0)) {
            result.best = candidate;
            break; // candidates are ranked; the first better one wins
        }
    }
    return result;
}

} // namespace pace
