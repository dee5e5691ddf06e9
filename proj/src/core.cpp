#include "pace/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace pace {

using nlohmann::json;

std::optional<MetricId> metric_from_id(const std::string& id) {
    if (id == "exact_match") return MetricId::exact_match;
    if (id == "contains") return MetricId::contains;
    if (id == "token_f1") return MetricId::token_f1;
    if (id == "set_match") return MetricId::set_match;
    if (id == "bleu") return MetricId::bleu;
    return std::nullopt;
}

std::string metric_id_string(MetricId id) {
    switch (id) {
    case MetricId::exact_match: return "exact_match";
    case MetricId::contains: return "contains";
    case MetricId::token_f1: return "token_f1";
    case MetricId::set_match: return "set_match";
    case MetricId::bleu: return "bleu";
    }
    return "exact_match";
}

std::optional<QualityLabel> quality_label_from_string(const std::string& s) {
    if (s == "best") return QualityLabel::best;
    if (s == "medium") return QualityLabel::medium;
    if (s == "worst") return QualityLabel::worst;
    if (s == "unlabeled" || s.empty()) return QualityLabel::unlabeled;
    return std::nullopt;
}

std::string quality_label_string(QualityLabel label) {
    switch (label) {
    case QualityLabel::best: return "best";
    case QualityLabel::medium: return "medium";
    case QualityLabel::worst: return "worst";
    case QualityLabel::unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::string prompt_origin_string(PromptOrigin origin) {
    switch (origin) {
    case PromptOrigin::human: return "human";
    case PromptOrigin::empty: return "empty";
    case PromptOrigin::generated: return "generated";
    case PromptOrigin::edited: return "edited";
    }
    return "human";
}

std::optional<RunMode> run_mode_from_string(const std::string& s) {
    if (s == "full") return RunMode::full;
    if (s == "no_critic") return RunMode::no_critic;
    if (s == "no_actor_critic") return RunMode::no_actor_critic;
    return std::nullopt;
}

std::string run_mode_string(RunMode mode) {
    switch (mode) {
    case RunMode::full: return "full";
    case RunMode::no_critic: return "no_critic";
    case RunMode::no_actor_critic: return "no_actor_critic";
    }
    return "full";
}

void CandidateRecord::set_score(double s) {
    score = std::clamp(s, 0.0, 1.0);
}

std::vector<std::string> validate_task(const TaskSpec& task) {
    std::vector<std::string> violations;
    if (task.name.empty()) {
        violations.push_back("name: nonempty violated");
    }
    if (task.examples.empty()) {
        violations.push_back("examples: length ≥ 1 violated");
    }
    if (!metric_from_id(task.metric)) {
        violations.push_back("metric: unknown identifier");
    }
    for (std::size_t i = 0; i < task.examples.size(); ++i) {
        if (task.examples[i].outputs.empty()) {
            violations.push_back("examples[" + std::to_string(i) + "].outputs: nonempty violated");
        }
    }
    return violations;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over (seed, stream); stable across platforms.
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

// Bounded draw without std::uniform_int_distribution, which is
// implementation-defined and would break cross-platform determinism.
std::uint64_t draw_below(std::mt19937_64& rng, std::uint64_t bound) {
    return bound == 0 ? 0 : rng() % bound;
}

} // namespace

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(draw_below(rng, i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

std::vector<DemoPair> seeded_subset(const std::vector<DemoPair>& pool, std::size_t k, std::uint64_t seed) {
    const std::size_t take = std::min(k, pool.size());
    auto perm = seeded_permutation(pool.size(), seed);
    std::vector<DemoPair> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(pool[perm[i]]);
    return out;
}

std::vector<DemoPair> sample_pairs(const std::vector<DemoPair>& pool, std::size_t k, std::uint64_t seed,
                                   bool& with_replacement) {
    with_replacement = pool.size() < k;
    if (pool.empty()) {
        throw Error(ErrorKind::data, "cannot sample from an empty pool");
    }
    if (!with_replacement) {
        return seeded_subset(pool, k, seed);
    }
    std::mt19937_64 rng(seed);
    std::vector<DemoPair> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        out.push_back(pool[static_cast<std::size_t>(draw_below(rng, pool.size()))]);
    }
    return out;
}

SplitSpec make_split(const TaskSpec& task, const std::array<double, 3>& ratios, std::int64_t seed) {
    const double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9) {
        throw Error(ErrorKind::data, "split ratios must sum to 1");
    }
    for (double r : ratios) {
        if (r < 0.0) throw Error(ErrorKind::data, "split ratios must be nonnegative");
    }
    std::size_t nonzero_buckets = 0;
    for (double r : ratios) {
        if (r > 0.0) ++nonzero_buckets;
    }
    const std::size_t n = task.examples.size();
    if (n < nonzero_buckets) {
        throw Error(ErrorKind::data, "insufficient examples");
    }

    std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1]));
    std::size_t n_test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2]));
    std::size_t n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[0]));
    n_train += n - (n_train + n_val + n_test); // remainder to train

    auto perm = seeded_permutation(n, static_cast<std::uint64_t>(seed));
    SplitSpec split;
    split.seed = seed;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n_train; ++i) split.train.push_back(task.examples[perm[pos++]]);
    for (std::size_t i = 0; i < n_val; ++i) split.val.push_back(task.examples[perm[pos++]]);
    for (std::size_t i = 0; i < n_test; ++i) split.test.push_back(task.examples[perm[pos++]]);
    return split;
}

TaskSpec parse_task(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::data, std::string("task file is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) {
        throw Error(ErrorKind::data, "task file must be a JSON object");
    }

    TaskSpec task;
    try {
        task.name = doc.at("name").get<std::string>();
        task.metric = doc.at("metric").get<std::string>();
        for (const auto& ex : doc.at("examples")) {
            DemoPair pair;
            pair.input = ex.at("input").get<std::string>();
            for (const auto& out : ex.at("outputs")) {
                pair.outputs.push_back(out.get<std::string>());
            }
            task.examples.push_back(std::move(pair));
        }
        if (doc.contains("prompts")) {
            for (const auto& hp : doc.at("prompts")) {
                HumanPrompt prompt;
                prompt.text = hp.at("text").get<std::string>();
                std::string label = hp.value("label", "unlabeled");
                auto parsed = quality_label_from_string(label);
                if (!parsed) {
                    throw Error(ErrorKind::data, "task file: unknown prompt label '" + label + "'");
                }
                prompt.label = *parsed;
                task.human_prompts.push_back(std::move(prompt));
            }
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::data, std::string("task file: ") + e.what());
    }
    return task;
}

TaskSpec load_task(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::data, "cannot read task file: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_task(buf.str());
}

} // namespace pace
