#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lorax/errors.hpp"
#include "lorax/losses.hpp"
#include "test_util.hpp"

using namespace lorax;

TEST_CASE("classification loss values") {
    RowVector onehot = RowVector::Zero(3);
    onehot(1) = 1.0;
    CHECK(clf_loss(onehot, 11, {10, 11, 12}) == 0.0);
    RowVector uniform = RowVector::Constant(4, 0.25);
    CHECK(clf_loss(uniform, 3, {0, 1, 2, 3}) == doctest::Approx(std::log(4.0)));
    CHECK(std::log(4.0) == doctest::Approx(1.3863).epsilon(1e-4));
    CHECK_THROWS_AS(clf_loss(uniform, 9, {0, 1, 2, 3}), DataError);
}

TEST_CASE("diversity targets") {
    DivTargetMap map({6, 4}, true);
    CHECK(map.width() == 3);
    CHECK(map.target(0) == 0);
    CHECK(map.target(3) == 0);  // any old-task label
    CHECK(map.target(4) == 1);  // first class of the task
    CHECK(map.target(6) == 2);

    RowVector logits = RowVector::Constant(3, -1e3);
    logits(1) = 1e3;
    CHECK(div_loss(logits, 4, map) == doctest::Approx(0.0));
    CHECK_THROWS_AS(div_loss(logits, 4, DivTargetMap({4, 6}, false)), StateError);
}

TEST_CASE("total loss") {
    CHECK(total_loss(1.0, 2.0, 0.0) == 1.0);
    CHECK(total_loss(1.0, 2.0, 0.1) == doctest::Approx(1.2));
    CHECK_THROWS_AS(total_loss(1.0, 2.0, -1.0), ConfigError);
    CHECK_THROWS_AS(total_loss(NAN, 2.0, 0.1), NumericError);
}

TEST_CASE("mixed batch recomputed from the definitions") {
    Rng rng(5);
    const std::vector<int> classes{0, 1, 2, 3};
    const std::vector<int> labels{0, 3, 2, 1, 3, 0};
    const Matrix clf_logits = test::random_matrix(rng, 6, 4);
    const Matrix div_logits = test::random_matrix(rng, 6, 3);
    const DivTargetMap map({2, 3}, true);
    const double lambda = 0.3;

    double clf = 0.0, div = 0.0;
    for (int i = 0; i < 6; ++i) {
        double zc = 0.0, zd = 0.0;
        for (int k = 0; k < 4; ++k) zc += std::exp(clf_logits(i, k));
        for (int k = 0; k < 3; ++k) zd += std::exp(div_logits(i, k));
        const int y = labels[static_cast<std::size_t>(i)];
        const int yd = y < 2 ? 0 : y - 1;
        clf += -(clf_logits(i, y) - std::log(zc));
        div += -(div_logits(i, yd) - std::log(zd));
    }
    clf /= 6;
    div /= 6;
    const double got =
        total_loss(clf_loss(softmax_rows(clf_logits), labels, classes), div_loss(div_logits, labels, map), lambda);
    CHECK(got == doctest::Approx(clf + lambda * div).epsilon(1e-12));
}

TEST_CASE("logit gradient matches central differences") {
    Rng rng(17);
    const std::vector<int> classes{0, 1, 2, 3, 4};
    const std::vector<int> labels{4, 0, 2};
    Matrix logits = test::random_matrix(rng, 3, 5, 2.0);
    const auto f = [&](const Matrix& z) { return clf_loss(softmax_rows(z), labels, classes); };
    const Matrix g = cross_entropy_logit_grad(softmax_rows(logits), label_indices(labels, classes));
    const double h = 1e-5;
    for (int i = 0; i < logits.rows(); ++i) {
        for (int j = 0; j < logits.cols(); ++j) {
            Matrix p = logits, m = logits;
            p(i, j) += h;
            m(i, j) -= h;
            const double fd = (f(p) - f(m)) / (2 * h);
            CHECK(test::rel_error(fd, g(i, j)) < 1e-4);
        }
    }
}

TEST_CASE("softmax is stable for large logits") {
    RowVector z(3);
    z << 1000.0, 1000.0, -1000.0;
    const RowVector p = softmax(z);
    CHECK(p(0) == doctest::Approx(0.5));
    CHECK(p(2) == 0.0);
}
