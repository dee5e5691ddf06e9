#include "pace/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "pace/error.hpp"
#include "pace/gateway.hpp"

namespace pace {

Metric Metric::from_string(const std::string& s) {
    auto id = metric_from_id(s);
    if (!id) {
        throw Error(ErrorKind::data, "unknown metric: " + s);
    }
    return Metric{*id};
}

std::string normalize_text(const std::string& text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (unsigned char c : text) {
        lowered += static_cast<char>(std::tolower(c));
    }

    // Collapse whitespace runs and trim.
    std::string collapsed;
    collapsed.reserve(lowered.size());
    bool in_space = false;
    for (unsigned char c : lowered) {
        if (std::isspace(c)) {
            in_space = true;
        } else {
            if (in_space && !collapsed.empty()) collapsed += ' ';
            in_space = false;
            collapsed += static_cast<char>(c);
        }
    }

    const std::string punct = ".,;:!?";
    while (!collapsed.empty() && punct.find(collapsed.back()) != std::string::npos) {
        collapsed.pop_back();
    }
    while (!collapsed.empty() && collapsed.back() == ' ') {
        collapsed.pop_back();
    }
    return collapsed;
}

std::vector<std::string> tokenize(const std::string& normalized) {
    std::vector<std::string> tokens;
    std::istringstream in(normalized);
    std::string tok;
    while (in >> tok) tokens.push_back(tok);
    return tokens;
}

namespace {

double token_f1_single(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
    if (pred.empty() && ref.empty()) return 1.0;
    if (pred.empty() || ref.empty()) return 0.0;
    std::map<std::string, int> pred_counts;
    for (const auto& t : pred) ++pred_counts[t];
    int overlap = 0;
    for (const auto& t : ref) {
        auto it = pred_counts.find(t);
        if (it != pred_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

std::set<std::string> comma_items(const std::string& text) {
    std::set<std::string> items;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t comma = text.find(',', start);
        std::string piece =
            comma == std::string::npos ? text.substr(start) : text.substr(start, comma - start);
        std::string item = normalize_text(piece);
        if (!item.empty()) items.insert(item);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return items;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& x : a) {
        if (b.count(x)) ++inter;
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& tokens,
                                                     std::size_t n) {
    std::map<std::vector<std::string>, int> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::vector<std::string> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                      tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
        ++counts[gram];
    }
    return counts;
}

// Sentence BLEU-4 with add-one smoothing on every n-gram precision and the
// standard brevity penalty; single-sentence references make unsmoothed
// BLEU-4 almost always zero.
double bleu_single(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
    if (pred.empty()) return 0.0;
    double log_score = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        auto pred_grams = ngram_counts(pred, n);
        auto ref_grams = ngram_counts(ref, n);
        int total = 0;
        int matched = 0;
        for (const auto& [gram, count] : pred_grams) {
            total += count;
            auto it = ref_grams.find(gram);
            if (it != ref_grams.end()) matched += std::min(count, it->second);
        }
        log_score += std::log((matched + 1.0) / (total + 1.0));
    }
    log_score /= 4.0;
    const double c = static_cast<double>(pred.size());
    const double r = static_cast<double>(ref.size());
    const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
    return bp * std::exp(log_score);
}

} // namespace

double score_pair(const std::string& prediction, const std::vector<std::string>& references,
                  Metric metric) {
    if (references.empty()) {
        throw Error(ErrorKind::data, "score_pair: references must be nonempty");
    }
    const std::string pred_norm = normalize_text(prediction);
    double best = 0.0;
    for (const auto& reference : references) {
        const std::string ref_norm = normalize_text(reference);
        double s = 0.0;
        switch (metric.id) {
        case MetricId::exact_match:
            s = pred_norm == ref_norm ? 1.0 : 0.0;
            break;
        case MetricId::contains:
            s = pred_norm.find(ref_norm) != std::string::npos ? 1.0 : 0.0;
            break;
        case MetricId::token_f1:
            s = token_f1_single(tokenize(pred_norm), tokenize(ref_norm));
            break;
        case MetricId::set_match:
            s = jaccard(comma_items(prediction), comma_items(reference));
            break;
        case MetricId::bleu:
            s = bleu_single(tokenize(pred_norm), tokenize(ref_norm));
            break;
        }
        best = std::max(best, s);
    }
    return std::clamp(best, 0.0, 1.0);
}

void parallel_for_indexed(std::size_t n, int parallelism, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = std::min<std::size_t>(std::max(parallelism, 1), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
    }
}

ScoreReport score_prompt(const Prompt& prompt, const std::vector<DemoPair>& eval_pairs, Metric metric,
                         const Gateway& gateway, const TemplateSet& templates, int parallelism) {
    if (eval_pairs.empty()) {
        throw Error(ErrorKind::data, "score_prompt: eval_pairs must be nonempty");
    }

    std::vector<double> scores(eval_pairs.size(), 0.0);
    parallel_for_indexed(eval_pairs.size(), parallelism, [&](std::size_t i) {
        const DemoPair& pair = eval_pairs[i];
        ChatRequest request = gateway.make_request(RequestTag::eval,
                                                   render_actor(prompt, pair.input, templates));
        try {
            ChatResponse response = gateway.complete(request);
            scores[i] = score_pair(response.content, pair.outputs, metric);
        } catch (const Error& e) {
            throw Error(e.kind(), "pair " + std::to_string(i) + ": " + e.what());
        }
    });

    ScoreReport report;
    report.metric_id = metric.id_string();
    report.n_pairs = static_cast<int>(eval_pairs.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        report.per_pair.emplace_back(static_cast<int>(i), scores[i]);
        sum += scores[i];
    }
    report.mean = sum / static_cast<double>(scores.size());
    return report;
}

} // namespace pace
