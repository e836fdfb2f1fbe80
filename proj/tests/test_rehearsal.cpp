#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <set>

#include "lorax/data.hpp"
#include "lorax/errors.hpp"
#include "lorax/rehearsal.hpp"
#include "test_util.hpp"

using namespace lorax;

namespace {

// Brute force: at every step try every unused row and recompute the mean
// from scratch.
std::vector<std::size_t> herding_oracle(const Matrix& f) {
    const auto n = static_cast<std::size_t>(f.rows());
    RowVector mu = RowVector::Zero(f.cols());
    for (std::size_t i = 0; i < n; ++i) mu += f.row(static_cast<Eigen::Index>(i));
    mu /= static_cast<double>(n);
    std::vector<std::size_t> order;
    std::vector<bool> used(n, false);
    for (std::size_t step = 0; step < n; ++step) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = n;
        for (std::size_t c = 0; c < n; ++c) {
            if (used[c]) continue;
            RowVector mean = RowVector::Zero(f.cols());
            for (std::size_t k : order) mean += f.row(static_cast<Eigen::Index>(k));
            mean += f.row(static_cast<Eigen::Index>(c));
            mean /= static_cast<double>(order.size() + 1);
            const double d = (mean - mu).squaredNorm();
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        used[arg] = true;
        order.push_back(arg);
    }
    return order;
}

std::vector<Sample> samples_for(const std::vector<int>& labels, std::uint64_t first_uid) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Sample s;
        s.uid = first_uid + i;
        s.label = labels[i];
        s.source = "s" + std::to_string(s.uid);
        out.push_back(s);
    }
    return out;
}

// Feature = uid as a 1-D value.
Matrix uid_features(const std::vector<const Sample*>& xs) {
    Matrix m(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = static_cast<double>(xs[i]->uid % 7);
    return m;
}

}  // namespace

TEST_CASE("herding hand example with a tie") {
    Matrix f(3, 1);
    f << 0, 1, 2;
    const auto order = herd_order(f);
    REQUIRE(order.size() == 3);
    CHECK(order[0] == 1);
    CHECK(order[1] == 0);  // 0 and 2 tie
    CHECK(order[2] == 2);
    CHECK(herd_order(Matrix::Ones(1, 4)) == std::vector<std::size_t>{0});
    CHECK_THROWS_AS(herd_order(Matrix(0, 3)), DataError);
}

TEST_CASE("herding matches the brute-force oracle") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform_index(10));
        const int d = 1 + static_cast<int>(rng.uniform_index(5));
        Matrix f = test::random_matrix(rng, n, d);
        if (trial % 5 == 0) f = f.array().round();  // ties
        CHECK(herd_order(f) == herding_oracle(f));
    }
}

TEST_CASE("quota") {
    ExemplarBuffer b(500);
    CHECK(b.quota() == 0);
    for (int c = 0; c < 14; ++c) b.mutable_per_class()[c] = {};
    CHECK(b.quota() == 35);
    ExemplarBuffer b10(500);
    for (int c = 0; c < 10; ++c) b10.mutable_per_class()[c] = {};
    CHECK(b10.quota() == 50);
}

TEST_CASE("buffer updates trim to budget and keep herding prefixes") {
    ExemplarBuffer buffer(10);
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(i % 2);
    const auto t1 = samples_for(labels, 0);
    update_buffer(buffer, t1, {0, 1}, uid_features);
    CHECK(buffer.size() == 10);
    CHECK(buffer.per_class().at(0).size() == 5);
    const auto first = buffer.per_class().at(0);

    std::vector<int> labels2;
    for (int i = 0; i < 20; ++i) labels2.push_back(2 + i % 3);
    const auto t2 = samples_for(labels2, 100);
    update_buffer(buffer, t2, {2, 3, 4}, uid_features);
    CHECK(buffer.quota() == 2);
    CHECK(buffer.size() <= 10);
    const auto& kept = buffer.per_class().at(0);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0] == first[0]);
    CHECK(kept[1] == first[1]);
    CHECK_THROWS_AS(update_buffer(buffer, t1, {0}, uid_features), DataError);

    ExemplarBuffer none(0);
    update_buffer(none, t1, {0, 1}, uid_features);
    CHECK(none.size() == 0);
}

TEST_CASE("training set holds the task plus resolved exemplars") {
    ExemplarBuffer buffer(4);
    const auto t1 = samples_for({0, 1, 0, 1, 0, 1}, 0);
    update_buffer(buffer, t1, {0, 1}, uid_features);
    const auto t2 = samples_for({2, 3, 2, 3}, 50);
    auto lookup = [&](std::uint64_t uid) -> const Sample* {
        for (const auto& s : t1)
            if (s.uid == uid) return &s;
        return nullptr;
    };
    const auto set = training_set(buffer, t2, lookup, 3);
    CHECK(set.size() == 8);
    std::set<int> seen;
    for (const Sample* s : set) seen.insert(s->label);
    CHECK(seen == std::set<int>{0, 1, 2, 3});
    const auto again = training_set(buffer, t2, lookup, 3);
    CHECK(again == set);
    CHECK_THROWS_AS(training_set(buffer, t2, [](std::uint64_t) -> const Sample* { return nullptr; }, 3), DataError);
}
