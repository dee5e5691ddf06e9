#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "pace/error.hpp"
#include "pace/gateway.hpp"
#include "pace/scoring.hpp"
#include "metric_oracles.hpp"
#include "test_util.hpp"

using namespace pace;

using pace_test::oracle::random_refs;
using pace_test::oracle::random_text;

namespace oracle = pace_test::oracle;

TEST_CASE("normalization pipeline") {
    CHECK(normalize_text("Cat.") == "cat");
    CHECK(normalize_text("  A  B\tC ") == "a b c");
    CHECK(normalize_text("Hello, world!!") == "hello, world");
    CHECK(normalize_text("") == "");
    CHECK(normalize_text(" .,;:!? ") == "");
    // idempotent
    for (const char* s : {"Cat.", "  A  B\tC ", "x", "Time is not finite."}) {
        CHECK(normalize_text(normalize_text(s)) == normalize_text(s));
    }
}

TEST_CASE("exact_match normalizes before comparing") {
    CHECK(score_pair("Cat.", {"cat"}, Metric{MetricId::exact_match}) == 1.0);
    CHECK(score_pair("cat", {"dog"}, Metric{MetricId::exact_match}) == 0.0);
    CHECK(score_pair("", {""}, Metric{MetricId::exact_match}) == 1.0);
    CHECK(score_pair("", {"x"}, Metric{MetricId::exact_match}) == 0.0);
}

TEST_CASE("contains checks normalized substring") {
    CHECK(score_pair("the answer is positive.", {"positive"}, Metric{MetricId::contains}) == 1.0);
    CHECK(score_pair("negative", {"positive"}, Metric{MetricId::contains}) == 0.0);
}

TEST_CASE("token_f1 hand case: 2/3") {
    const double f1 = score_pair("a b c", {"b c d"}, Metric{MetricId::token_f1});
    CHECK(f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // symmetry on single reference
    CHECK(score_pair("b c d", {"a b c"}, Metric{MetricId::token_f1}) ==
          doctest::Approx(f1).epsilon(1e-12));
}

TEST_CASE("token_f1 degenerate inputs") {
    CHECK(score_pair("", {"x"}, Metric{MetricId::token_f1}) == 0.0);
    CHECK(score_pair("x", {""}, Metric{MetricId::token_f1}) == 0.0);
    CHECK(score_pair("", {""}, Metric{MetricId::token_f1}) == 1.0);
}

TEST_CASE("set_match hand case: Jaccard 3/4") {
    CHECK(score_pair("frog, cat, lion", {"cat, lion, whale, frog"}, Metric{MetricId::set_match}) ==
          doctest::Approx(0.75).epsilon(1e-12));
    CHECK(score_pair("", {"a"}, Metric{MetricId::set_match}) == 0.0);
    CHECK(score_pair("a, b", {"a, b"}, Metric{MetricId::set_match}) == 1.0);
}

TEST_CASE("bleu self-match is 1 for any nonempty string") {
    for (const char* s : {"x", "one two", "the cat sat on the mat", "a b c d e f"}) {
        CHECK(score_pair(s, {s}, Metric{MetricId::bleu}) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(score_pair("", {"x"}, Metric{MetricId::bleu}) == 0.0);
}

TEST_CASE("exact_match(x, [x]) is 1 for any x") {
    std::mt19937_64 rng(2468);
    for (int i = 0; i < 100; ++i) {
        const std::string x = random_text(rng);
        CHECK(score_pair(x, {x}, Metric{MetricId::exact_match}) == 1.0);
    }
}

TEST_CASE("token_f1 symmetry on random single references") {
    std::mt19937_64 rng(404);
    for (int i = 0; i < 100; ++i) {
        const std::string a = random_text(rng);
        const std::string b = random_text(rng);
        CHECK(score_pair(a, {b}, Metric{MetricId::token_f1}) ==
              doctest::Approx(score_pair(b, {a}, Metric{MetricId::token_f1})).epsilon(1e-12));
    }
}

TEST_CASE("adding a reference never decreases any metric") {
    std::mt19937_64 rng(777);
    const MetricId ids[] = {MetricId::exact_match, MetricId::contains, MetricId::token_f1,
                            MetricId::set_match, MetricId::bleu};
    for (int i = 0; i < 60; ++i) {
        const std::string pred = random_text(rng);
        std::vector<std::string> refs = random_refs(rng);
        const std::string extra = random_text(rng);
        for (MetricId id : ids) {
            const double before = score_pair(pred, refs, Metric{id});
            std::vector<std::string> grown = refs;
            grown.push_back(extra);
            const double after = score_pair(pred, grown, Metric{id});
            CHECK(after >= before);
        }
    }
}

TEST_CASE("every metric matches its brute-force oracle on 200 random cases") {
    const struct {
        MetricId id;
        double (*fn)(const std::string&, const std::vector<std::string>&);
    } table[] = {
        {MetricId::exact_match, oracle::exact_match}, {MetricId::contains, oracle::contains},
        {MetricId::token_f1, oracle::token_f1},       {MetricId::set_match, oracle::set_match},
        {MetricId::bleu, oracle::bleu},
    };
    for (const auto& entry : table) {
        std::mt19937_64 rng(0xC0FFEE ^ static_cast<std::uint64_t>(entry.id));
        for (int i = 0; i < 200; ++i) {
            const std::string pred = random_text(rng);
            const std::vector<std::string> refs = random_refs(rng);
            const double expected = entry.fn(pred, refs);
            const double got = score_pair(pred, refs, Metric{entry.id});
            CHECK(got == doctest::Approx(expected).epsilon(1e-12));
            CHECK(got >= 0.0);
            CHECK(got <= 1.0);
        }
    }
}

TEST_CASE("score_prompt aggregates per-pair scores order-stably") {
    // Script: echo the reference for even pair indices, garbage otherwise.
    MockScript script;
    for (int i = 0; i < 10; i += 2) {
        script.add_rule(std::nullopt, "Input: in" + std::to_string(i) + ",",
                        "out" + std::to_string(i));
    }
    script.set_default("wrong");
    BackendConfig cfg;
    Gateway gateway(cfg, std::move(script));

    std::vector<DemoPair> pairs;
    for (int i = 0; i < 10; ++i) {
        pairs.push_back(DemoPair{"in" + std::to_string(i), {"out" + std::to_string(i)}});
    }
    const Prompt prompt{"answer", PromptOrigin::human};

    for (int parallelism : {1, 4, 16}) {
        const ScoreReport report = score_prompt(prompt, pairs, Metric{MetricId::exact_match},
                                                gateway, TemplateSet::defaults(), parallelism);
        CHECK(report.n_pairs == 10);
        CHECK(report.mean == doctest::Approx(0.5).epsilon(1e-12));
        REQUIRE(report.per_pair.size() == 10);
        double sum = 0.0;
        for (int i = 0; i < 10; ++i) {
            CHECK(report.per_pair[i].first == i);
            CHECK(report.per_pair[i].second == (i % 2 == 0 ? 1.0 : 0.0));
            sum += report.per_pair[i].second;
        }
        CHECK(report.mean == doctest::Approx(sum / 10.0).epsilon(1e-12));
    }
}

TEST_CASE("score_prompt: exactly 3 correct of 10 means 0.3") {
    MockScript script;
    for (int i : {1, 4, 8}) {
        script.add_rule(std::nullopt, "Input: in" + std::to_string(i) + ",",
                        "out" + std::to_string(i));
    }
    script.set_default("wrong");
    Gateway gateway(BackendConfig{}, std::move(script));
    std::vector<DemoPair> pairs;
    for (int i = 0; i < 10; ++i) {
        pairs.push_back(DemoPair{"in" + std::to_string(i), {"out" + std::to_string(i)}});
    }
    const ScoreReport report = score_prompt(Prompt{"p", PromptOrigin::human}, pairs,
                                            Metric{MetricId::exact_match}, gateway,
                                            TemplateSet::defaults(), 4);
    CHECK(report.mean == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("score_prompt: perfect and null oracles") {
    std::vector<DemoPair> pairs;
    for (int i = 0; i < 4; ++i) {
        pairs.push_back(DemoPair{"q" + std::to_string(i), {"a" + std::to_string(i)}});
    }
    const Prompt prompt{"p", PromptOrigin::human};

    MockScript perfect;
    for (int i = 0; i < 4; ++i) {
        perfect.add_rule(std::nullopt, "Input: q" + std::to_string(i) + ",", "a" + std::to_string(i));
    }
    Gateway good(BackendConfig{}, std::move(perfect));
    CHECK(score_prompt(prompt, pairs, Metric{MetricId::exact_match}, good, TemplateSet::defaults())
              .mean == 1.0);

    MockScript null_oracle;
    null_oracle.set_default("");
    Gateway bad(BackendConfig{}, std::move(null_oracle));
    CHECK(score_prompt(prompt, pairs, Metric{MetricId::exact_match}, bad, TemplateSet::defaults())
              .mean == 0.0);
}

TEST_CASE("score_prompt tags backend errors with the failing pair index") {
    MockScript script; // no rules, no default
    script.add_rule(std::nullopt, "Input: ok,", "fine");
    Gateway gateway(BackendConfig{}, std::move(script));
    std::vector<DemoPair> pairs{DemoPair{"ok", {"fine"}}, DemoPair{"boom", {"x"}}};
    try {
        score_prompt(Prompt{"p", PromptOrigin::human}, pairs, Metric{MetricId::exact_match},
                     gateway, TemplateSet::defaults(), 2);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("pair 1") != std::string::npos);
        CHECK(std::string(e.what()).find("mock unmatched request") != std::string::npos);
    }
}

TEST_CASE("score_prompt rejects an empty eval set") {
    MockScript script;
    script.set_default("x");
    Gateway gateway(BackendConfig{}, std::move(script));
    CHECK_THROWS_AS(score_prompt(Prompt{"p", PromptOrigin::human}, {},
                                 Metric{MetricId::exact_match}, gateway, TemplateSet::defaults()),
                    Error);
}
