#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lorax/errors.hpp"
#include "lorax/metrics.hpp"
#include "lorax/rng.hpp"

using namespace lorax;

namespace {

AccuracyMatrix hand_case() {
    AccuracyMatrix a(2);
    a.set_value(1, 1, 0.8);
    a.set_value(1, 2, 0.6);
    a.set_value(2, 2, 0.9);
    return a;
}

}  // namespace

TEST_CASE("hand case") {
    const auto a = hand_case();
    CHECK(average_accuracy(a) == doctest::Approx(0.775).epsilon(1e-15));
    CHECK(average_accuracy_final(a) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(backward_transfer(a) == doctest::Approx(-0.2).epsilon(1e-15));
}

TEST_CASE("degenerate matrices") {
    AccuracyMatrix ones(3);
    for (int j = 1; j <= 3; ++j)
        for (int i = 1; i <= j; ++i) ones.set_value(i, j, 1.0);
    CHECK(average_accuracy(ones) == 1.0);
    CHECK(average_accuracy_final(ones) == 1.0);
    CHECK(backward_transfer(ones) == 0.0);

    AccuracyMatrix one(1);
    one.set_value(1, 1, 0.9);
    CHECK(average_accuracy(one) == 0.9);
    CHECK(average_accuracy_final(one) == 0.9);
    CHECK_THROWS_AS(backward_transfer(one), UndefinedMetricError);
    const auto s = summarize(one);
    CHECK(s.aa.has_value());
    CHECK_FALSE(s.bwt.has_value());
}

TEST_CASE("matrix cells") {
    AccuracyMatrix a(3);
    CHECK_THROWS_AS(a.set_value(2, 1, 0.5), InputError);
    CHECK_THROWS_AS(a.set_value(1, 1, 1.5), DataError);
    CHECK_THROWS_AS(a.at(1, 2), UndefinedMetricError);
    CHECK_THROWS_AS(AccuracyMatrix(0), ConfigError);
    a.set(1, 1, AccuracyCount{2, 3});
    CHECK(a.at(1, 1) == 2.0 / 3.0);
    CHECK_FALSE(a.complete());
}

TEST_CASE("csv round trip is exact") {
    Rng rng(12);
    AccuracyMatrix a(4);
    for (int j = 1; j <= 4; ++j)
        for (int i = 1; i <= j; ++i) a.set_value(i, j, rng.uniform());
    const auto b = AccuracyMatrix::from_csv(a.to_csv());
    CHECK(b == a);
    CHECK(b.to_csv() == a.to_csv());
    CHECK_THROWS_AS(AccuracyMatrix::from_csv(""), ParseError);
    CHECK_THROWS_AS(AccuracyMatrix::from_csv("task,episode_1\n1,abc\n"), ParseError);
}

TEST_CASE("metrics json round trip") {
    const auto s = summarize(hand_case());
    const auto back = metrics_from_json(metrics_to_json(s));
    CHECK(back.n == 2);
    CHECK(*back.aa == *s.aa);
    CHECK(*back.bwt == *s.bwt);
    AccuracyMatrix one(1);
    one.set_value(1, 1, 0.5);
    CHECK_FALSE(metrics_from_json(metrics_to_json(summarize(one))).bwt.has_value());
}

TEST_CASE("multi-real collapse") {
    MultiRealMap map{{0, 2, 4}};
    CHECK(multi_real_correct(2, 0, map));   // real of task 2 for real of task 1
    CHECK_FALSE(multi_real_correct(1, 0, map));  // a fake class
    CHECK(multi_real_correct(3, 3, map));
    CHECK(multi_real_correct(5, 5, MultiRealMap{}));

    const std::vector<int> truth{0, 1, 2, 3, 4, 0};
    const std::vector<int> pred{2, 1, 4, 2, 0, 1};
    const auto mr = task_accuracy(pred, truth, map);
    const auto st = strict_accuracy(pred, truth);
    CHECK(mr.correct == 4);
    CHECK(st.correct == 1);
    CHECK(mr.value() >= st.value());
}
