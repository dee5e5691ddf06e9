#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <mutex>
#include <set>

#include "mock_worlds.hpp"
#include "pace/bench.hpp"
#include "pace/optimizer.hpp"
#include "test_util.hpp"

using namespace pace;
using pace_test::World;

namespace {

// Thread-safe request log attached to a gateway.
struct RequestLog {
    std::mutex mutex;
    std::vector<ChatRequest> requests;

    Gateway::RequestObserver observer() {
        return [this](const ChatRequest& request) {
            std::lock_guard<std::mutex> lock(mutex);
            requests.push_back(request);
        };
    }

    std::set<std::string> tags() {
        std::lock_guard<std::mutex> lock(mutex);
        std::set<std::string> out;
        for (const auto& r : requests) out.insert(request_tag_string(r.tag));
        return out;
    }

    std::size_t count(RequestTag tag) {
        std::lock_guard<std::mutex> lock(mutex);
        std::size_t n = 0;
        for (const auto& r : requests) {
            if (r.tag == tag) ++n;
        }
        return n;
    }
};

SplitSpec split_of(const World& world) {
    return make_split(world.task, {0.4, 0.3, 0.3}, world.config.seed);
}

CandidateRecord scored_incumbent(const std::string& text, double score) {
    CandidateRecord record;
    record.prompt = Prompt{text, PromptOrigin::human};
    record.iteration = 0;
    record.set_score(score);
    return record;
}

} // namespace

TEST_CASE("act completes the rendered actor request") {
    MockScript script;
    script.add_rule(RequestTag::actor, "Input: cat,", "c");
    script.set_default("?");
    Gateway gateway(BackendConfig{}, std::move(script));
    RunConfig config;

    const Prompt prompt{"Extract the first letter of the input word.", PromptOrigin::human};
    const ActorAction action =
        act(prompt, DemoPair{"cat", {"c"}}, gateway, TemplateSet::defaults(), config);
    CHECK(action.action == "c");
    CHECK(action.rendered_request ==
          "Instruction: Extract the first letter of the input word.,\nInput: cat,\nOutput:");
    CHECK_FALSE(action.fingerprint.empty());
}

TEST_CASE("act with an empty prompt still issues the call") {
    MockScript script;
    script.add_rule(RequestTag::actor, "Instruction: ,", "from scratch");
    Gateway gateway(BackendConfig{}, std::move(script));
    const ActorAction action =
        act(empty_prompt(), DemoPair{"x", {"y"}}, gateway, TemplateSet::defaults(), RunConfig{});
    CHECK(action.action == "from scratch");
}

TEST_CASE("criticize produces scripted advice and rejects test pairs") {
    MockScript script;
    script.add_rule(RequestTag::critic, "Prediction: wrong,", "be more specific");
    script.add_rule(RequestTag::critic, "Prediction: out0,", "looks right");
    Gateway gateway(BackendConfig{}, std::move(script));
    RunConfig config;

    SplitSpec split;
    split.train = {DemoPair{"in0", {"out0"}}};
    split.test = {DemoPair{"secret", {"hidden"}}};

    ActorAction action;
    action.pair = split.train[0];
    action.action = "wrong";
    action.agent_index = 1;
    const Critique critique = criticize(Prompt{"p", PromptOrigin::human}, action, split, gateway,
                                        TemplateSet::defaults(), config);
    CHECK(critique.text == "be more specific");
    CHECK(critique.agent_index == 1);

    // a correct prediction still gets a critique
    action.action = "out0";
    CHECK(criticize(Prompt{"p", PromptOrigin::human}, action, split, gateway,
                    TemplateSet::defaults(), config)
              .text == "looks right");

    ActorAction leak;
    leak.pair = split.test[0];
    leak.action = "whatever";
    CHECK_THROWS_WITH_AS(criticize(Prompt{"p", PromptOrigin::human}, leak, split, gateway,
                                   TemplateSet::defaults(), config),
                         "critic leak: test pair", Error);
}

TEST_CASE("update_prompt: k=1 sends all critiques in order") {
    MockScript script;
    script.add_rule(RequestTag::update, "instruction:", "a new prompt");
    Gateway gateway(BackendConfig{}, std::move(script));

    CritiqueBatch batch;
    batch.iteration = 0;
    for (int i = 1; i <= 4; ++i) {
        Critique c;
        c.agent_index = i;
        c.id = "t0.a" + std::to_string(i);
        c.text = "c" + std::to_string(i);
        batch.critiques.push_back(c);
    }

    std::vector<std::string> requests;
    const auto prompts = update_prompt(Prompt{"p0", PromptOrigin::human}, batch, 1, gateway,
                                       TemplateSet::defaults(), 11, RunConfig{}, &requests);
    REQUIRE(requests.size() == 1);
    CHECK(requests[0].find("Advice 1: c1\nAdvice 2: c2\nAdvice 3: c3\nAdvice 4: c4") !=
          std::string::npos);
    REQUIRE(prompts.size() == 1);
    CHECK(prompts[0].text == "a new prompt");
    CHECK(prompts[0].origin == PromptOrigin::edited);
}

TEST_CASE("update_prompt: k=2 rotations yield distinct requests and fingerprints") {
    MockScript script;
    script.add_rule(RequestTag::update, "Advice 1: c1;", "first ordering");
    script.add_rule(RequestTag::update, "instruction:", "second ordering");
    Gateway gateway(BackendConfig{}, std::move(script));

    CritiqueBatch batch;
    for (int i = 1; i <= 4; ++i) {
        Critique c;
        c.text = "c" + std::to_string(i) + ";";
        c.id = "t0.a" + std::to_string(i);
        batch.critiques.push_back(c);
    }

    std::vector<std::string> requests, fingerprints;
    std::vector<std::vector<std::string>> parents;
    const auto prompts = update_prompt(Prompt{"p0", PromptOrigin::human}, batch, 2, gateway,
                                       TemplateSet::defaults(), 11, RunConfig{}, &requests,
                                       &fingerprints, &parents);
    REQUIRE(requests.size() == 2);
    CHECK(requests[0] != requests[1]);
    REQUIRE(fingerprints.size() == 2);
    CHECK(fingerprints[0] != fingerprints[1]);
    CHECK(requests[0].find("Advice 1: c1;") != std::string::npos);
    // the second ordering starts from a rotated critique
    CHECK(requests[1].find("Advice 1: c1;") == std::string::npos);
    REQUIRE(prompts.size() == 2);
    REQUIRE(parents.size() == 2);
    CHECK(parents[0] ==
          std::vector<std::string>{"t0.a1", "t0.a2", "t0.a3", "t0.a4"});
    CHECK(parents[1] != parents[0]); // rotated lineage order
}

TEST_CASE("update_prompt: scripted echo of prompt + first advice") {
    MockScript script;
    script.add_rule(RequestTag::update, "instruction:([^.]*)\\.[\\s\\S]*Advice 1: ([^;]*);",
                    "$1 + $2");
    Gateway gateway(BackendConfig{}, std::move(script));

    CritiqueBatch batch;
    Critique c;
    c.text = "add examples;";
    batch.critiques.push_back(c);
    const auto prompts = update_prompt(Prompt{"old prompt", PromptOrigin::human}, batch, 1, gateway,
                                       TemplateSet::defaults(), 3, RunConfig{});
    REQUIRE(prompts.size() == 1);
    CHECK(prompts[0].text == "old prompt + add examples");
}

TEST_CASE("update_prompt deduplicates candidates equal to the incumbent") {
    MockScript script;
    script.add_rule(RequestTag::update, "instruction:", "old prompt"); // echoes the incumbent
    Gateway gateway(BackendConfig{}, std::move(script));
    CritiqueBatch batch;
    Critique c;
    c.text = "whatever";
    batch.critiques.push_back(c);
    const auto prompts = update_prompt(Prompt{"old prompt", PromptOrigin::human}, batch, 2, gateway,
                                       TemplateSet::defaults(), 3, RunConfig{});
    CHECK(prompts.empty());
}

TEST_CASE("update_prompt errors when every completion strips to nothing") {
    MockScript script;
    script.add_rule(RequestTag::update, "instruction:", "   ");
    Gateway gateway(BackendConfig{}, std::move(script));
    CritiqueBatch batch;
    Critique c;
    c.text = "x";
    batch.critiques.push_back(c);
    CHECK_THROWS_WITH_AS(update_prompt(Prompt{"p", PromptOrigin::human}, batch, 2, gateway,
                                       TemplateSet::defaults(), 3, RunConfig{}),
                         "update produced no prompt", Error);
    CHECK_THROWS_WITH_AS(update_prompt(Prompt{"p", PromptOrigin::human}, CritiqueBatch{}, 1,
                                       gateway, TemplateSet::defaults(), 3, RunConfig{}),
                         "no critiques to aggregate", Error);
}

TEST_CASE("pace_step keeps the better candidate") {
    World world = pace_test::diminishing_world();
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);
    const auto eval_pairs = split.val;

    const CandidateRecord incumbent = scored_incumbent(world.prompt_pool[0], 0.2);
    const IterationRecord record =
        pace_step(incumbent, 0, split, eval_pairs, world.config, Metric{MetricId::exact_match},
                  gateway, TemplateSet::defaults());
    CHECK(record.index == 0);
    CHECK(record.sampled_pairs.size() == 4);
    CHECK(record.actions.size() == 4);
    REQUIRE(record.critiques.has_value());
    CHECK(record.critiques->critiques.size() == 4);
    REQUIRE(!record.candidates.empty());
    CHECK(record.incumbent_after.prompt.text == world.prompt_pool[1]);
    CHECK(record.incumbent_after.score_or(0) > record.incumbent_before.score_or(0));
    CHECK(record.incumbent_after.iteration == 1);
}

TEST_CASE("pace_step retains the incumbent when no candidate beats it") {
    World world = pace_test::diminishing_world();
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);

    // incumbent already scored 1.0: nothing can strictly beat it
    const CandidateRecord incumbent = scored_incumbent(world.prompt_pool[0], 1.0);
    const IterationRecord record =
        pace_step(incumbent, 0, split, split.val, world.config, Metric{MetricId::exact_match},
                  gateway, TemplateSet::defaults());
    CHECK(record.incumbent_after.prompt.text == incumbent.prompt.text);
    CHECK(record.incumbent_after.score_or(0) == 1.0);
}

TEST_CASE("pace_step breaks exact ties for the incumbent") {
    // candidate scores exactly the incumbent's stored score
    World world = pace_test::diminishing_world();
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);

    // first find what the candidate would score
    const CandidateRecord probe = scored_incumbent(world.prompt_pool[0], 0.0);
    const IterationRecord probed =
        pace_step(probe, 0, split, split.val, world.config, Metric{MetricId::exact_match}, gateway,
                  TemplateSet::defaults());
    REQUIRE(!probed.candidates.empty());
    const double candidate_score = probed.candidates[0].score_or(-1);

    const CandidateRecord incumbent = scored_incumbent(world.prompt_pool[0], candidate_score);
    const IterationRecord record =
        pace_step(incumbent, 0, split, split.val, world.config, Metric{MetricId::exact_match},
                  gateway, TemplateSet::defaults());
    CHECK(record.incumbent_after.prompt.text == incumbent.prompt.text);
    CHECK(record.incumbent_after.iteration == 0);
}

TEST_CASE("pace_step falls back to with-replacement sampling on tiny train splits") {
    World world = pace_test::diminishing_world();
    Gateway gateway(BackendConfig{}, std::move(world.script));
    SplitSpec split = split_of(world);
    split.train.resize(2); // smaller than n_agents=4

    const CandidateRecord incumbent = scored_incumbent(world.prompt_pool[0], 0.1);
    const IterationRecord record =
        pace_step(incumbent, 0, split, split.val, world.config, Metric{MetricId::exact_match},
                  gateway, TemplateSet::defaults());
    REQUIRE(record.warnings.size() == 1);
    CHECK(record.warnings[0].find("with replacement") != std::string::npos);
    CHECK(record.actions.size() == 4);
}

TEST_CASE("pace_step surfaces backend errors with the agent index") {
    World world = pace_test::diminishing_world();
    pace_test::TempDir tmp;
    BackendConfig cfg;
    cfg.kind = BackendKind::replay;
    cfg.cache_dir = tmp.path(); // empty cache: every call misses
    Gateway gateway(cfg);
    const SplitSpec split = split_of(world);

    const CandidateRecord incumbent = scored_incumbent(world.prompt_pool[0], 0.1);
    try {
        pace_step(incumbent, 0, split, split.val, world.config, Metric{MetricId::exact_match},
                  gateway, TemplateSet::defaults());
        FAIL("expected a cache miss");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("agent 1:") != std::string::npos);
        CHECK(std::string(e.what()).find("cache miss") != std::string::npos);
    }
}

TEST_CASE("pace_optimize runs exactly one iteration at max_iters=1") {
    World world = pace_test::diminishing_world();
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);

    const auto result = pace_optimize(Prompt{world.prompt_pool[0], PromptOrigin::human}, world.task,
                                      split, world.config, gateway, TemplateSet::defaults());
    CHECK(result.iterations.size() == 1);
    CHECK(result.best.prompt.text == world.prompt_pool[1]);
}

TEST_CASE("pace_optimize stops after the first non-improving iteration") {
    World world = pace_test::diminishing_world();
    world.config.max_iters = 5;
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);

    int streamed = 0;
    const auto result =
        pace_optimize(Prompt{world.prompt_pool[0], PromptOrigin::human}, world.task, split,
                      world.config, gateway, TemplateSet::defaults(),
                      [&](const IterationRecord&) { ++streamed; });
    // climbs the chain (two improving steps), then one flat step stops it
    CHECK(result.iterations.size() == 3);
    CHECK(streamed == 3);
    CHECK(result.best.prompt.text == world.prompt_pool[2]);
    for (const auto& record : result.iterations) {
        CHECK(record.incumbent_after.score_or(0) >= record.incumbent_before.score_or(0));
    }
}

TEST_CASE("candidate lineage: children created at t get iteration t+1") {
    World world = pace_test::diminishing_world();
    world.config.max_iters = 3;
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);
    const auto result = pace_optimize(Prompt{world.prompt_pool[0], PromptOrigin::human}, world.task,
                                      split, world.config, gateway, TemplateSet::defaults());
    for (const auto& record : result.iterations) {
        for (const auto& candidate : record.candidates) {
            CHECK(candidate.iteration == record.index + 1);
            CHECK(candidate.iteration > record.incumbent_before.iteration);
            for (const auto& id : candidate.parent_critique_ids) {
                CHECK(id.find("t" + std::to_string(record.index) + ".a") == 0);
            }
        }
    }
}

TEST_CASE("request tags shrink with the ablation modes") {
    for (RunMode mode : {RunMode::full, RunMode::no_critic, RunMode::no_actor_critic}) {
        World world = pace_test::magic_token_world();
        world.config.mode = mode;
        Gateway gateway(BackendConfig{}, std::move(world.script));
        RequestLog log;
        gateway.set_request_observer(log.observer());
        const SplitSpec split = split_of(world);
        pace_optimize(Prompt{world.prompt_pool[0], PromptOrigin::human}, world.task, split,
                      world.config, gateway, TemplateSet::defaults());

        const auto tags = log.tags();
        CHECK(tags.count("update") == 1);
        CHECK(tags.count("eval") == 1);
        if (mode == RunMode::full) {
            CHECK(tags.count("actor") == 1);
            CHECK(tags.count("critic") == 1);
        } else if (mode == RunMode::no_critic) {
            CHECK(tags.count("actor") == 1);
            CHECK(tags.count("critic") == 0);
        } else {
            CHECK(tags.count("actor") == 0);
            CHECK(tags.count("critic") == 0);
        }
    }
}

TEST_CASE("no_critic feeds numbered actor transcripts into the update slot") {
    World world = pace_test::magic_token_world();
    world.config.mode = RunMode::no_critic;
    Gateway gateway(BackendConfig{}, std::move(world.script));
    const SplitSpec split = split_of(world);

    std::vector<IterationRecord> records;
    pace_optimize(Prompt{world.prompt_pool[0], PromptOrigin::human}, world.task, split,
                  world.config, gateway, TemplateSet::defaults(),
                  [&](const IterationRecord& record) { records.push_back(record); });
    REQUIRE(!records.empty());
    CHECK_FALSE(records[0].critiques.has_value());
    REQUIRE(!records[0].update_requests.empty());
    const std::string& request = records[0].update_requests[0];
    CHECK(request.find("Prediction 1: Input: in") != std::string::npos);
    CHECK(request.find("Ground Truth: out") != std::string::npos);
    CHECK(request.find("Advice 1:") == std::string::npos);
}

TEST_CASE("magic-token world separates the full mode from the ablations") {
    const TemplateSet templates = TemplateSet::defaults();
    std::map<RunMode, double> test_scores;
    for (RunMode mode : {RunMode::full, RunMode::no_critic, RunMode::no_actor_critic}) {
        World world = pace_test::magic_token_world();
        world.config.mode = mode;
        Gateway gateway(BackendConfig{}, std::move(world.script));
        const SplitSpec split = split_of(world);
        const auto result = pace_optimize(Prompt{world.prompt_pool[0], PromptOrigin::human},
                                          world.task, split, world.config, gateway, templates);
        test_scores[mode] = evaluate_final(result.best.prompt, world.task, split,
                                           Metric{MetricId::exact_match}, gateway, templates)
                                .mean;
    }
    CHECK(test_scores[RunMode::full] == 1.0);
    CHECK(test_scores[RunMode::no_critic] <= 0.5);
    CHECK(test_scores[RunMode::no_actor_critic] <= 0.5);
}

TEST_CASE("runs are deterministic and independent of fan-out parallelism") {
    World base = pace_test::random_world(99);
    const std::string script_json = base.script.to_json();
    const SplitSpec split = make_split(base.task, {0.4, 0.3, 0.3}, base.config.seed);

    auto run = [&](int parallelism) {
        RunConfig config = base.config;
        config.parallelism = parallelism;
        Gateway gateway(BackendConfig{}, MockScript::parse(script_json));
        std::vector<std::string> lines;
        const auto result =
            pace_optimize(Prompt{base.prompt_pool[0], PromptOrigin::human}, base.task, split,
                          config, gateway, TemplateSet::defaults(),
                          [&](const IterationRecord& record) {
                              lines.push_back(record_to_json(record));
                          });
        lines.push_back(result.best.prompt.text);
        lines.push_back(std::to_string(result.best.score_or(-1)));
        return lines;
    };

    const auto serial = run(1);
    const auto fanned = run(8);
    const auto again = run(8);
    CHECK(serial == fanned);
    CHECK(fanned == again);
}

TEST_CASE("resample baseline: echo paraphraser is a fixed point") {
    World world = pace_test::diminishing_world();
    MockScript script;
    // echo: every update call returns the incumbent text
    script.add_rule(RequestTag::update, "instruction:([^.]*)\\.", "$1");
    for (std::size_t k = 0; k < 8; ++k) {
        script.add_rule(std::nullopt,
                        "Instruction: seed prompt,[\\s\\S]*Input: in" + std::to_string(k) + ",",
                        "out" + std::to_string(k));
    }
    script.add_rule(std::nullopt, "Input: in", "nope");
    script.set_default("nope");

    Gateway gateway(BackendConfig{}, std::move(script));
    RequestLog log;
    gateway.set_request_observer(log.observer());
    const SplitSpec split = split_of(world);

    const auto result = resample_baseline(Prompt{"seed prompt", PromptOrigin::human}, split, 8,
                                          world.config, Metric{MetricId::exact_match}, gateway,
                                          TemplateSet::defaults());
    CHECK(log.count(RequestTag::update) == 8);
    CHECK(result.best.prompt.text == "seed prompt");
    CHECK(result.candidates.empty()); // every echo deduplicated away
}

TEST_CASE("resample baseline: one improving rewrite among 8 is selected") {
    World world = pace_test::diminishing_world();
    MockScript script;
    script.add_rule(RequestTag::update, "\\(variant 5\\)", "great prompt");
    script.add_rule(RequestTag::update, "instruction:", "seed prompt"); // echo otherwise
    for (std::size_t j : {0u, 2u}) {
        const std::string name = world.prompt_pool[j];
        const std::size_t quality = j == 0 ? 8 : 27;
        for (std::size_t k = 0; k < quality; ++k) {
            script.add_rule(std::nullopt,
                            "Instruction: " + pace_test::regex_escape(name) +
                                ",[\\s\\S]*Input: in" + std::to_string(k) + ",",
                            "out" + std::to_string(k));
        }
    }
    script.add_rule(std::nullopt, "Input: in", "nope");
    script.set_default("nope");

    Gateway gateway(BackendConfig{}, std::move(script));
    const SplitSpec split = split_of(world);
    const auto result = resample_baseline(Prompt{"seed prompt", PromptOrigin::human}, split, 8,
                                          world.config, Metric{MetricId::exact_match}, gateway,
                                          TemplateSet::defaults());
    CHECK(result.best.prompt.text == "great prompt");
    REQUIRE(!result.candidates.empty());
    CHECK(result.candidates.front().prompt.text == "great prompt");
    CHECK(result.best.score_or(0) > 0.0);
}
