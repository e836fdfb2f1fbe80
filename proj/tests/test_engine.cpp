#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>

#include "lorax/engine.hpp"
#include "lorax/errors.hpp"
#include "test_util.hpp"

using namespace lorax;
using lorax::test::bit_equal;

namespace {

Scenario small_scenario(int tasks, std::uint64_t seed, std::size_t budget = 10) {
    StreamConfig cfg;
    cfg.num_tasks = tasks;
    cfg.samples_per_class = 24;
    cfg.image_size = 16;
    cfg.seed = seed;
    Scenario s;
    s.name = "small";
    s.tasks = generate_stream(cfg);
    s.budget = budget;
    s.training.epochs = 2;
    s.training.batch_size = 16;
    s.training.preprocess.target_size = 16;
    s.seed = seed;
    return s;
}

Strategy strategy(StrategyKind kind) {
    Strategy s;
    s.kind = kind;
    s.lora.rank = 2;
    return s;
}

}  // namespace

TEST_CASE("one task gives a 1x1 matrix") {
    const Backbone base = build_backbone(test::tiny_config());
    const auto r = run_scenario(small_scenario(1, 1), strategy(StrategyKind::Lorax), base);
    CHECK(r.accuracy.size() == 1);
    CHECK(r.accuracy.complete());
    CHECK(r.trainable_params_per_task.size() == 1);
}

TEST_CASE("identical seeds give identical records") {
    const Backbone base = build_backbone(test::tiny_config());
    for (auto kind : {StrategyKind::Lorax, StrategyKind::Finetune, StrategyKind::FullRankExpansion, StrategyKind::Oracle}) {
        const auto a = run_scenario(small_scenario(2, 3), strategy(kind), base);
        const auto b = run_scenario(small_scenario(2, 3), strategy(kind), base);
        CHECK(a.accuracy.to_csv() == b.accuracy.to_csv());
        CHECK(a.strict_accuracy == b.strict_accuracy);
        CHECK(a.trainable_params_per_task == b.trainable_params_per_task);
        CHECK(a.buffer.per_class() == b.buffer.per_class());
    }
}

TEST_CASE("the input backbone is left untouched") {
    const Backbone base = build_backbone(test::tiny_config());
    const BackboneParams before = base.params();
    run_scenario(small_scenario(2, 3), strategy(StrategyKind::Finetune), base);
    CHECK(base.params().bit_equal(before));
}

TEST_CASE("episode isolation for expanding strategies") {
    const auto cfg = test::tiny_config();
    const Backbone base = build_backbone(cfg);
    Rng rng(5);
    const Matrix probe = test::random_images(rng, 4, cfg);
    for (auto kind : {StrategyKind::Lorax, StrategyKind::FullRankExpansion}) {
        std::map<int, Matrix> at_end;
        RunHooks hooks;
        hooks.on_episode_end = [&](int episode, const IncrementalModel& m, const ExemplarBuffer&) {
            CHECK_FALSE(m.diversity_head().has_value());
            at_end[episode] = m.extractors()[static_cast<std::size_t>(episode - 1)].embed(probe);
        };
        const auto r = run_scenario(small_scenario(3, 2), strategy(kind), base, hooks);
        for (int i = 1; i <= 3; ++i) {
            CHECK(bit_equal(r.model->extractors()[static_cast<std::size_t>(i - 1)].embed(probe), at_end[i]));
        }
        CHECK(r.buffer.size() <= 10);
    }
}

TEST_CASE("LoRAX trainable counts change only through the heads") {
    const Backbone base = build_backbone(test::tiny_config());
    const auto r = run_scenario(small_scenario(3, 4), strategy(StrategyKind::Lorax), base);
    const std::size_t adapters = r.model->extractors()[0].stored_parameter_count();
    const int d = 16;
    // task t: adapters + CLF (2t x t d, 2t) + DIV for t >= 2 (3 x d, 3)
    for (int t = 1; t <= 3; ++t) {
        std::size_t expected = adapters + static_cast<std::size_t>(2 * t * t * d + 2 * t);
        if (t > 1) expected += static_cast<std::size_t>(3 * d + 3);
        CHECK(r.trainable_params_per_task[static_cast<std::size_t>(t - 1)] == expected);
    }
    const auto der = run_scenario(small_scenario(3, 4), strategy(StrategyKind::FullRankExpansion), base);
    for (std::size_t t = 0; t < 3; ++t) CHECK(r.trainable_params_per_task[t] < der.trainable_params_per_task[t]);
}

TEST_CASE("oracle fills only the final column") {
    const Backbone base = build_backbone(test::tiny_config());
    const auto r = run_scenario(small_scenario(3, 6), strategy(StrategyKind::Oracle), base);
    for (int i = 1; i <= 3; ++i) CHECK(r.accuracy.defined(i, 3));
    CHECK_FALSE(r.accuracy.defined(1, 1));
    CHECK_FALSE(r.accuracy.defined(2, 2));
    CHECK_THROWS_AS(average_accuracy(r.accuracy), UndefinedMetricError);
    CHECK_NOTHROW(average_accuracy_final(r.accuracy));
}

TEST_CASE("multi-real accuracy never falls below strict accuracy") {
    const Backbone base = build_backbone(test::tiny_config());
    const auto r = run_scenario(small_scenario(3, 7), strategy(StrategyKind::Finetune), base);
    for (int j = 1; j <= 3; ++j)
        for (int i = 1; i <= j; ++i) CHECK(r.accuracy.at(i, j) >= r.strict_accuracy.at(i, j));
}

TEST_CASE("episode preconditions") {
    auto base = std::make_shared<Backbone>(build_backbone(test::tiny_config()));
    IncrementalModel m(Architecture::Lorax, base);
    const auto s = small_scenario(2, 1);
    ExemplarBuffer buffer(10);
    TrainingContext ctx(s.training.preprocess);
    EpisodeConfig cfg{strategy(StrategyKind::Lorax), s.training, 1};
    CHECK_THROWS_AS(run_episode_finetune(m, buffer, s.tasks[0], cfg, ctx), StateError);
    m.add_task(cfg.strategy.lora, {100, 101}, 1);  // left training
    CHECK_THROWS_AS(run_episode_lorax(m, buffer, s.tasks[0], cfg, ctx), StateError);
}

TEST_CASE("scenario validation") {
    auto s = small_scenario(2, 1);
    s.tasks[1].classes = s.tasks[0].classes;
    CHECK_THROWS_AS(s.validate(), DataError);
    Strategy bad = strategy(StrategyKind::Lorax);
    bad.lora.rank = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(parse_strategy("der") == StrategyKind::FullRankExpansion);
    CHECK_THROWS_AS(parse_strategy("memo"), ConfigError);
    TrainingConfig t;
    t.epochs = 0;
    CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("frozen tensors get zero gradients") {
    auto base = std::make_shared<Backbone>(build_backbone(test::tiny_config()));
    IncrementalModel m(Architecture::Lorax, base);
    m.add_task({2, AdapterCombo::ALL, 1.0}, {0, 1}, 1);
    m.finish_task();
    m.add_task({2, AdapterCombo::ALL, 1.0}, {2, 3}, 2);
    Rng rng(3);
    const Matrix x = test::random_images(rng, 4, test::tiny_config());
    const auto g = compute_gradients(m, x, {0, 1, 2, 3}, 0.1);
    REQUIRE(g.adapters.size() == 2);
    for (const auto& [id, lg] : g.adapters[0]) {
        CHECK(lg.dA.isZero(0.0));
        CHECK(lg.dB.isZero(0.0));
    }
    bool any = false;
    for (const auto& [id, lg] : g.adapters[1]) any = any || !lg.dA.isZero(0.0) || !lg.dB.isZero(0.0);
    CHECK(any);
    g.base.visit([](const std::string&, const Matrix& t) { CHECK(t.isZero(0.0)); });
}
