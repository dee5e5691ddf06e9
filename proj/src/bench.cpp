#include "pace/bench.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include <json.hpp>

#include "pace/error.hpp"

namespace pace {

namespace fs = std::filesystem;
using nlohmann::json;

// --- butter fingers -----------------------------------------------------------

namespace {

// Staggered QWERTY geometry: row 1 sits between the keys of row 0, row 2
// between the keys of row 1.
std::map<char, std::string> build_adjacency() {
    const std::string rows[3] = {"qwertyuiop", "asdfghjkl", "zxcvbnm"};
    std::map<char, std::string> adj;
    auto add = [&](char key, char neighbor) {
        std::string& list = adj[key];
        if (list.find(neighbor) == std::string::npos) list += neighbor;
    };
    for (int r = 0; r < 3; ++r) {
        const std::string& row = rows[r];
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i > 0) add(row[i], row[i - 1]);
            if (i + 1 < row.size()) add(row[i], row[i + 1]);
            if (r > 0) {
                const std::string& above = rows[r - 1];
                if (i < above.size()) add(row[i], above[i]);
                if (i + 1 < above.size()) add(row[i], above[i + 1]);
            }
            if (r < 2) {
                const std::string& below = rows[r + 1];
                if (i > 0 && i - 1 < below.size()) add(row[i], below[i - 1]);
                if (i < below.size()) add(row[i], below[i]);
            }
        }
    }
    return adj;
}

double unit_draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace

const std::string& qwerty_neighbors(char lower) {
    static const std::map<char, std::string> adjacency = build_adjacency();
    static const std::string none;
    auto it = adjacency.find(lower);
    return it == adjacency.end() ? none : it->second;
}

std::string butter_fingers(const std::string& text, const PerturbSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::string out = text;
    for (char& c : out) {
        const unsigned char uc = static_cast<unsigned char>(c);
        if (!std::isalpha(uc)) continue;
        if (unit_draw(rng) >= spec.rate) continue;
        const char lower = static_cast<char>(std::tolower(uc));
        const std::string& neighbors = qwerty_neighbors(lower);
        if (neighbors.empty()) continue;
        char replacement = neighbors[rng() % neighbors.size()];
        if (std::isupper(uc)) replacement = static_cast<char>(std::toupper(replacement));
        c = replacement;
    }
    return out;
}

// --- initial prompt selection ---------------------------------------------------

std::optional<InitialSetting> initial_setting_from_string(const std::string& s) {
    if (s == "best") return InitialSetting::best;
    if (s == "medium") return InitialSetting::medium;
    if (s == "worst") return InitialSetting::worst;
    if (s == "butter_fingers") return InitialSetting::butter_fingers;
    if (s == "empty") return InitialSetting::empty;
    if (s == "literal") return InitialSetting::literal;
    return std::nullopt;
}

std::string initial_setting_string(InitialSetting setting) {
    switch (setting) {
    case InitialSetting::best: return "best";
    case InitialSetting::medium: return "medium";
    case InitialSetting::worst: return "worst";
    case InitialSetting::butter_fingers: return "butter_fingers";
    case InitialSetting::empty: return "empty";
    case InitialSetting::literal: return "literal";
    }
    return "literal";
}

namespace {

std::optional<Prompt> labeled_prompt(const TaskSpec& task, QualityLabel label) {
    for (const auto& hp : task.human_prompts) {
        if (hp.label == label) return Prompt{hp.text, PromptOrigin::human};
    }
    return std::nullopt;
}

// Rank all human prompts by val-split score, ascending; stable on ties.
std::vector<Prompt> ranked_prompts(const TaskSpec& task, const PromptRankContext& context) {
    if (!context.gateway || !context.templates || !context.split) {
        throw Error(ErrorKind::config, "prompt ranking requires a gateway, templates, and a split");
    }
    const std::vector<DemoPair>& pool =
        context.split->val.empty() ? context.split->train : context.split->val;
    if (pool.empty()) {
        throw Error(ErrorKind::data, "no pairs available to rank human prompts");
    }
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < task.human_prompts.size(); ++i) {
        Prompt prompt{task.human_prompts[i].text, PromptOrigin::human};
        const double mean = score_prompt(prompt, pool, context.metric, *context.gateway,
                                         *context.templates, context.parallelism)
                                .mean;
        scored.emplace_back(mean, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Prompt> out;
    out.reserve(scored.size());
    for (const auto& [mean, idx] : scored) {
        out.push_back(Prompt{task.human_prompts[idx].text, PromptOrigin::human});
    }
    return out;
}

Prompt pick_by_rank(const TaskSpec& task, QualityLabel label, const PromptRankContext& context) {
    if (auto prompt = labeled_prompt(task, label)) return *prompt;
    if (task.human_prompts.empty()) {
        throw Error(ErrorKind::data, "no human prompts in task");
    }
    if (task.human_prompts.size() == 1) {
        return Prompt{task.human_prompts.front().text, PromptOrigin::human};
    }
    const std::vector<Prompt> ranked = ranked_prompts(task, context);
    const std::size_t m = ranked.size();
    switch (label) {
    case QualityLabel::worst: return ranked.front();
    case QualityLabel::best: return ranked.back();
    default: return ranked[(m - 1) / 2]; // lower median
    }
}

} // namespace

Prompt select_initial_prompt(const TaskSpec& task, InitialSetting setting,
                             const std::string& literal_text, const PromptRankContext& context,
                             std::uint64_t perturb_seed) {
    switch (setting) {
    case InitialSetting::empty:
        return empty_prompt();
    case InitialSetting::literal:
        return Prompt{literal_text, PromptOrigin::human};
    case InitialSetting::best:
        return pick_by_rank(task, QualityLabel::best, context);
    case InitialSetting::medium:
        return pick_by_rank(task, QualityLabel::medium, context);
    case InitialSetting::worst:
        return pick_by_rank(task, QualityLabel::worst, context);
    case InitialSetting::butter_fingers: {
        Prompt medium = pick_by_rank(task, QualityLabel::medium, context);
        PerturbSpec spec;
        spec.seed = perturb_seed;
        return Prompt{butter_fingers(medium.text, spec), PromptOrigin::generated};
    }
    }
    throw Error(ErrorKind::internal, "unknown initial setting");
}

ScoreReport evaluate_final(const Prompt& p_star, const TaskSpec& task, const SplitSpec& split,
                           Metric metric, const Gateway& gateway, const TemplateSet& templates,
                           int parallelism) {
    (void)task;
    if (split.test.empty()) {
        throw Error(ErrorKind::data, "split empty: test");
    }
    return score_prompt(p_star, split.test, metric, gateway, templates, parallelism);
}

// --- artifact serialization -----------------------------------------------------

namespace {

json demo_pair_to_json(const DemoPair& pair) {
    return json{{"input", pair.input}, {"outputs", pair.outputs}};
}

DemoPair demo_pair_from_json(const json& doc) {
    DemoPair pair;
    pair.input = doc.at("input").get<std::string>();
    for (const auto& out : doc.at("outputs")) pair.outputs.push_back(out.get<std::string>());
    return pair;
}

json candidate_to_json(const CandidateRecord& candidate) {
    json doc;
    doc["prompt"] = candidate.prompt.text;
    doc["origin"] = prompt_origin_string(candidate.prompt.origin);
    if (candidate.score) doc["score"] = *candidate.score;
    doc["iteration"] = candidate.iteration;
    doc["parent_critique_ids"] = candidate.parent_critique_ids;
    return doc;
}

CandidateRecord candidate_from_json(const json& doc) {
    CandidateRecord candidate;
    candidate.prompt.text = doc.at("prompt").get<std::string>();
    const std::string origin = doc.value("origin", "human");
    candidate.prompt.origin = origin == "empty"       ? PromptOrigin::empty
                              : origin == "generated" ? PromptOrigin::generated
                              : origin == "edited"    ? PromptOrigin::edited
                                                      : PromptOrigin::human;
    if (doc.contains("score")) candidate.score = doc.at("score").get<double>();
    candidate.iteration = doc.at("iteration").get<int>();
    if (doc.contains("parent_critique_ids")) {
        for (const auto& id : doc.at("parent_critique_ids")) {
            candidate.parent_critique_ids.push_back(id.get<std::string>());
        }
    }
    return candidate;
}

} // namespace

std::string header_to_json(const ArtifactHeader& header) {
    json doc;
    doc["schema_version"] = header.schema_version;
    doc["task"] = header.task_name;
    doc["setting"] = header.setting;
    doc["metric"] = header.metric_id;
    doc["seed"] = header.seed;
    doc["config"] = json{{"n_agents", header.config.n_agents},
                         {"candidates_per_iter", header.config.candidates_per_iter},
                         {"max_iters", header.config.max_iters},
                         {"eval_subset_size", header.config.eval_subset_size},
                         {"mode", run_mode_string(header.config.mode)},
                         {"temperature", header.config.temperature},
                         {"top_p", header.config.top_p},
                         {"max_tokens", header.config.max_tokens},
                         {"update_temperature", header.config.update_temperature},
                         {"parallelism", header.config.parallelism}};
    doc["split_ratios"] = header.split_ratios;
    doc["backend_kind"] = header.backend_kind;
    doc["model"] = header.model;
    doc["template_hashes"] = json{{"actor", header.actor_template_hash},
                                  {"critic", header.critic_template_hash},
                                  {"update", header.update_template_hash}};
    doc["initial_prompt"] = header.initial_prompt;
    if (header.initial_test_score) doc["initial_test_score"] = *header.initial_test_score;
    return doc.dump(2) + "\n";
}

namespace {

ArtifactHeader header_from_json(const json& doc) {
    ArtifactHeader header;
    header.schema_version = doc.at("schema_version").get<int>();
    header.task_name = doc.at("task").get<std::string>();
    header.setting = doc.value("setting", "");
    header.metric_id = doc.value("metric", "");
    header.seed = doc.at("seed").get<std::int64_t>();
    const json& cfg = doc.at("config");
    header.config.n_agents = cfg.value("n_agents", 4);
    header.config.candidates_per_iter = cfg.value("candidates_per_iter", 2);
    header.config.max_iters = cfg.value("max_iters", 1);
    header.config.eval_subset_size = cfg.value("eval_subset_size", 10);
    header.config.seed = header.seed;
    if (auto mode = run_mode_from_string(cfg.value("mode", "full"))) header.config.mode = *mode;
    header.config.temperature = cfg.value("temperature", 0.0);
    header.config.top_p = cfg.value("top_p", 1.0);
    header.config.max_tokens = cfg.value("max_tokens", 512);
    header.config.update_temperature = cfg.value("update_temperature", 0.0);
    header.config.parallelism = cfg.value("parallelism", 4);
    if (doc.contains("split_ratios")) {
        for (std::size_t i = 0; i < 3; ++i) {
            header.split_ratios[i] = doc.at("split_ratios").at(i).get<double>();
        }
    }
    header.backend_kind = doc.value("backend_kind", "");
    header.model = doc.value("model", "");
    if (doc.contains("template_hashes")) {
        header.actor_template_hash = doc.at("template_hashes").value("actor", "");
        header.critic_template_hash = doc.at("template_hashes").value("critic", "");
        header.update_template_hash = doc.at("template_hashes").value("update", "");
    }
    header.initial_prompt = doc.value("initial_prompt", "");
    if (doc.contains("initial_test_score")) {
        header.initial_test_score = doc.at("initial_test_score").get<double>();
    }
    return header;
}

} // namespace

std::string record_to_json(const IterationRecord& record) {
    json doc;
    doc["index"] = record.index;
    json sampled = json::array();
    for (const auto& pair : record.sampled_pairs) sampled.push_back(demo_pair_to_json(pair));
    doc["sampled_pairs"] = sampled;
    json actions = json::array();
    for (const auto& action : record.actions) {
        actions.push_back(json{{"agent_index", action.agent_index},
                               {"pair", demo_pair_to_json(action.pair)},
                               {"request", action.rendered_request},
                               {"fingerprint", action.fingerprint},
                               {"action", action.action}});
    }
    doc["actions"] = actions;
    if (record.critiques) {
        json critiques = json::array();
        for (const auto& critique : record.critiques->critiques) {
            critiques.push_back(json{{"agent_index", critique.agent_index},
                                     {"id", critique.id},
                                     {"request", critique.rendered_request},
                                     {"fingerprint", critique.fingerprint},
                                     {"text", critique.text},
                                     {"action_index", critique.action_index}});
        }
        doc["critiques"] = critiques;
    }
    doc["update_requests"] = record.update_requests;
    doc["update_fingerprints"] = record.update_fingerprints;
    json candidates = json::array();
    for (const auto& candidate : record.candidates) candidates.push_back(candidate_to_json(candidate));
    doc["candidates"] = candidates;
    doc["incumbent_before"] = candidate_to_json(record.incumbent_before);
    doc["incumbent_after"] = candidate_to_json(record.incumbent_after);
    doc["warnings"] = record.warnings;
    return doc.dump();
}

namespace {

IterationRecord record_from_json(const json& doc) {
    IterationRecord record;
    record.index = doc.at("index").get<int>();
    for (const auto& pair : doc.at("sampled_pairs")) {
        record.sampled_pairs.push_back(demo_pair_from_json(pair));
    }
    for (const auto& action : doc.at("actions")) {
        ActorAction out;
        out.agent_index = action.at("agent_index").get<int>();
        out.pair = demo_pair_from_json(action.at("pair"));
        out.rendered_request = action.at("request").get<std::string>();
        out.fingerprint = action.at("fingerprint").get<std::string>();
        out.action = action.at("action").get<std::string>();
        record.actions.push_back(std::move(out));
    }
    if (doc.contains("critiques")) {
        CritiqueBatch batch;
        batch.iteration = record.index;
        for (const auto& critique : doc.at("critiques")) {
            Critique out;
            out.agent_index = critique.at("agent_index").get<int>();
            out.id = critique.at("id").get<std::string>();
            out.rendered_request = critique.at("request").get<std::string>();
            out.fingerprint = critique.at("fingerprint").get<std::string>();
            out.text = critique.at("text").get<std::string>();
            out.action_index = critique.at("action_index").get<int>();
            batch.critiques.push_back(std::move(out));
        }
        record.critiques = std::move(batch);
    }
    for (const auto& r : doc.at("update_requests")) {
        record.update_requests.push_back(r.get<std::string>());
    }
    for (const auto& f : doc.at("update_fingerprints")) {
        record.update_fingerprints.push_back(f.get<std::string>());
    }
    for (const auto& candidate : doc.at("candidates")) {
        record.candidates.push_back(candidate_from_json(candidate));
    }
    record.incumbent_before = candidate_from_json(doc.at("incumbent_before"));
    record.incumbent_after = candidate_from_json(doc.at("incumbent_after"));
    if (doc.contains("warnings")) {
        for (const auto& w : doc.at("warnings")) record.warnings.push_back(w.get<std::string>());
    }
    return record;
}

} // namespace

std::string footer_to_json(const ArtifactFooter& footer) {
    json doc;
    doc["final_prompt"] = footer.final_prompt;
    doc["val_score"] = footer.val_score;
    if (footer.test_score) doc["test_score"] = *footer.test_score;
    return doc.dump(2) + "\n";
}

ArtifactWriter::ArtifactWriter(std::string dir, const ArtifactHeader& header) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    std::ofstream out(fs::path(dir_) / "header.json", std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::data, "cannot write artifact header in " + dir_);
    }
    out << header_to_json(header);
    // Truncate any stale record stream so the run directory is self-consistent.
    std::ofstream(fs::path(dir_) / "records.jsonl", std::ios::binary | std::ios::trunc);
}

void ArtifactWriter::append(const IterationRecord& record) {
    std::ofstream out(fs::path(dir_) / "records.jsonl", std::ios::binary | std::ios::app);
    if (!out) {
        throw Error(ErrorKind::data, "cannot append artifact record in " + dir_);
    }
    out << record_to_json(record) << "\n";
    out.flush();
}

void ArtifactWriter::finalize(const ArtifactFooter& footer) {
    std::ofstream out(fs::path(dir_) / "footer.json", std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::data, "cannot write artifact footer in " + dir_);
    }
    out << footer_to_json(footer);
    finalized_ = true;
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::data, "cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

RunArtifact load_artifact(const std::string& dir) {
    RunArtifact artifact;
    try {
        artifact.header = header_from_json(json::parse(read_file(fs::path(dir) / "header.json")));
        std::istringstream records(read_file(fs::path(dir) / "records.jsonl"));
        std::string line;
        while (std::getline(records, line)) {
            if (line.empty()) continue;
            artifact.records.push_back(record_from_json(json::parse(line)));
        }
        const json footer = json::parse(read_file(fs::path(dir) / "footer.json"));
        artifact.footer.final_prompt = footer.at("final_prompt").get<std::string>();
        artifact.footer.val_score = footer.at("val_score").get<double>();
        if (footer.contains("test_score")) {
            artifact.footer.test_score = footer.at("test_score").get<double>();
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::data, "corrupt run artifact in " + dir + ": " + e.what());
    }
    return artifact;
}

std::string artifact_hash(const std::string& dir) {
    const std::string payload =
        read_file(fs::path(dir) / "records.jsonl") + read_file(fs::path(dir) / "footer.json");
    return content_hash(payload);
}

// --- reporting ------------------------------------------------------------------

std::optional<ReportFormat> report_format_from_string(const std::string& s) {
    if (s == "markdown" || s == "md") return ReportFormat::markdown;
    if (s == "csv") return ReportFormat::csv;
    if (s == "json") return ReportFormat::json;
    return std::nullopt;
}

namespace {

struct ReportRow {
    std::string task;
    std::string setting;
    double initial = 0.0;
    double final_score = 0.0;
    double delta = 0.0;
};

std::string two_decimals(double v) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(2);
    out << v;
    return out.str();
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += '"';
    return out;
}

} // namespace

std::string emit_report(const std::vector<RunArtifact>& artifacts, ReportFormat format) {
    std::vector<ReportRow> rows;
    for (const auto& artifact : artifacts) {
        if (artifact.header.schema_version != kArtifactSchemaVersion) {
            throw Error(ErrorKind::data,
                        "mixed artifact schema versions: got " +
                            std::to_string(artifact.header.schema_version) + ", expected " +
                            std::to_string(kArtifactSchemaVersion));
        }
        ReportRow row;
        row.task = artifact.header.task_name;
        row.setting = artifact.header.setting;
        row.initial = artifact.header.initial_test_score.value_or(0.0);
        row.final_score = artifact.footer.test_score.value_or(artifact.footer.val_score);
        row.delta = row.final_score - row.initial;
        rows.push_back(std::move(row));
    }

    ReportRow average;
    average.task = "Average";
    if (!rows.empty()) {
        for (const auto& row : rows) {
            average.initial += row.initial;
            average.final_score += row.final_score;
            average.delta += row.delta;
        }
        const double n = static_cast<double>(rows.size());
        average.initial /= n;
        average.final_score /= n;
        average.delta /= n;
    }

    std::ostringstream out;
    switch (format) {
    case ReportFormat::markdown: {
        out << "| task | setting | initial | final | delta |\n";
        out << "|---|---|---|---|---|\n";
        for (const auto& row : rows) {
            out << "| " << row.task << " | " << row.setting << " | " << two_decimals(row.initial)
                << " | " << two_decimals(row.final_score) << " | " << two_decimals(row.delta)
                << " |\n";
        }
        if (!rows.empty()) {
            out << "| Average |  | " << two_decimals(average.initial) << " | "
                << two_decimals(average.final_score) << " | " << two_decimals(average.delta)
                << " |\n";
        }
        break;
    }
    case ReportFormat::csv: {
        out << "\"task\",\"setting\",\"initial\",\"final\",\"delta\"\n";
        for (const auto& row : rows) {
            out << csv_quote(row.task) << "," << csv_quote(row.setting) << ","
                << csv_quote(two_decimals(row.initial)) << ","
                << csv_quote(two_decimals(row.final_score)) << ","
                << csv_quote(two_decimals(row.delta)) << "\n";
        }
        if (!rows.empty()) {
            out << csv_quote("Average") << "," << csv_quote("") << ","
                << csv_quote(two_decimals(average.initial)) << ","
                << csv_quote(two_decimals(average.final_score)) << ","
                << csv_quote(two_decimals(average.delta)) << "\n";
        }
        break;
    }
    case ReportFormat::json: {
        json doc;
        json out_rows = json::array();
        for (const auto& row : rows) {
            out_rows.push_back(json{{"task", row.task},
                                    {"setting", row.setting},
                                    {"initial", row.initial},
                                    {"final", row.final_score},
                                    {"delta", row.delta}});
        }
        doc["rows"] = out_rows;
        if (!rows.empty()) {
            doc["average"] = json{{"initial", average.initial},
                                  {"final", average.final_score},
                                  {"delta", average.delta}};
        }
        out << doc.dump(2) << "\n";
        break;
    }
    }
    return out.str();
}

} // namespace pace
