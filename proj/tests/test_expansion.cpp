#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>

#include "lorax/errors.hpp"
#include "lorax/expansion.hpp"
#include "test_util.hpp"

using namespace lorax;
using lorax::test::bit_equal;
using lorax::test::random_images;
using lorax::test::random_matrix;

namespace {

std::shared_ptr<Backbone> frozen_base() {
    auto b = std::make_shared<Backbone>(build_backbone(test::tiny_config()));
    b->freeze();
    return b;
}

// Give the current adapters a non-zero B so extractors differ.
void perturb(IncrementalModel& m, std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [id, a] : m.current_extractor().adapters->mutable_adapters())
        a.B = random_matrix(rng, static_cast<int>(a.B.rows()), a.rank, 0.2);
}

}  // namespace

TEST_CASE("classifier grows and keeps the old block") {
    IncrementalModel m(Architecture::Lorax, frozen_base());
    LoraSettings lora;
    m.add_task(lora, {0, 1}, 1);
    CHECK(m.classifier().weight.rows() == 2);
    CHECK(m.classifier().weight.cols() == 16);
    CHECK_FALSE(m.diversity_head().has_value());
    Rng rng(2);
    m.mutable_classifier().weight = random_matrix(rng, 2, 16);
    m.mutable_classifier().bias = random_matrix(rng, 1, 2);
    const Matrix w1 = m.classifier().weight;
    const Matrix b1 = m.classifier().bias;
    m.finish_task();

    m.add_task(lora, {2, 3}, 2);
    CHECK(m.classifier().weight.rows() == 4);
    CHECK(m.classifier().weight.cols() == 32);
    CHECK(bit_equal(m.classifier().weight.topLeftCorner(2, 16), w1));
    CHECK(bit_equal(m.classifier().bias.leftCols(2), b1));
    REQUIRE(m.diversity_head().has_value());
    CHECK(m.diversity_head()->weight.rows() == 3);
    CHECK(m.diversity_head()->weight.cols() == 16);  // newest embedding only
    m.finish_task();
    CHECK_FALSE(m.diversity_head().has_value());
}

TEST_CASE("class ids must be new") {
    IncrementalModel m(Architecture::Lorax, frozen_base());
    m.add_task({}, {0, 1}, 1);
    m.finish_task();
    CHECK_THROWS_AS(m.add_task({}, {1, 2}, 2), DataError);
    CHECK_THROWS_AS(m.add_task({}, {}, 2), DataError);
    CHECK_THROWS_AS(m.add_task({}, {4, 4}, 2), DataError);
}

TEST_CASE("lifecycle errors") {
    IncrementalModel m(Architecture::Lorax, frozen_base());
    CHECK_THROWS_AS(m.finish_task(), StateError);
    CHECK_THROWS_AS(m.add_full_rank_task({0, 1}, 1), StateError);
    m.add_task({}, {0, 1}, 1);
    CHECK_THROWS_AS(m.add_task({}, {2, 3}, 2), StateError);  // previous still training
    CHECK_THROWS_AS(m.div_logits(Matrix::Zero(1, 256)), StateError);
}

TEST_CASE("super-feature slices equal standalone embeddings") {
    const auto c = test::tiny_config();
    IncrementalModel m(Architecture::Lorax, frozen_base());
    m.add_task({}, {0, 1}, 1);
    perturb(m, 5);
    m.finish_task();
    Rng rng(4);
    const Matrix x = random_images(rng, 3, c);
    const Matrix e1 = m.extractors()[0].embed(x);
    CHECK(bit_equal(m.super_feature(x), e1));

    m.add_task({}, {2, 3}, 2);
    perturb(m, 6);
    m.finish_task();
    const Matrix e = m.super_feature(x);
    CHECK(e.cols() == 32);
    CHECK(bit_equal(e.leftCols(16), e1));
    CHECK(bit_equal(e.rightCols(16), m.extractors()[1].embed(x)));
    CHECK_FALSE(bit_equal(e.leftCols(16), e.rightCols(16)));
}

TEST_CASE("prediction") {
    const auto c = test::tiny_config();
    IncrementalModel m(Architecture::Lorax, frozen_base());
    m.add_task({}, {0, 1}, 1);
    m.finish_task();
    m.add_task({}, {2, 3, 4}, 2);
    Rng rng(8);
    const Matrix x = random_images(rng, 6, c);
    const Matrix p = m.predict_proba(x);
    for (int i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));

    const auto pred = m.classify(x);
    for (int i = 0; i < p.rows(); ++i) {
        CHECK(pred[static_cast<std::size_t>(i)] == m.classifier().class_ids[static_cast<std::size_t>(argmax_lowest(p.row(i)))]);
    }

    m.mutable_classifier().weight.setZero();
    m.mutable_classifier().bias.setZero();
    const Matrix u = m.predict_proba(x);
    CHECK((u.array() - 0.2).abs().maxCoeff() < 1e-15);
    for (int v : m.classify(x)) CHECK(v == 0);  // ties go to the lowest index
}

TEST_CASE("trainable counts by architecture") {
    LoraSettings lora;
    lora.rank = 2;
    IncrementalModel m(Architecture::Lorax, frozen_base());
    m.add_task(lora, {0, 1}, 1);
    const std::size_t adapters = count_trainable(*m.current_extractor().adapters);
    CHECK(m.count_trainable() == adapters + m.classifier().parameter_count());
    m.finish_task();
    m.add_task(lora, {2, 3}, 2);
    CHECK(m.count_trainable() ==
          adapters + m.classifier().parameter_count() + m.diversity_head()->parameter_count());
    m.finish_task();
    CHECK(m.total_parameters() == m.base().parameter_count() + 2 * adapters + m.classifier().parameter_count());

    IncrementalModel d(Architecture::FullRankExpansion, frozen_base());
    d.add_full_rank_task({0, 1}, 1);
    CHECK(d.count_trainable() == d.base().parameter_count() + d.classifier().parameter_count());
    d.finish_task();
    d.add_full_rank_task({2, 3}, 2);
    CHECK(d.count_trainable() == d.base().parameter_count() + d.classifier().parameter_count() +
                                     d.diversity_head()->parameter_count());

    IncrementalModel f(Architecture::SingleBackbone, frozen_base());
    f.add_shared_task({0, 1}, 1);
    f.finish_task();
    f.add_shared_task({2, 3}, 2);
    CHECK_FALSE(f.diversity_head().has_value());
    CHECK(f.classifier().weight.cols() == 16);
    CHECK(f.count_trainable() == f.base().parameter_count() + f.classifier().parameter_count());
}

TEST_CASE("argmax ties go to the lowest index") {
    RowVector r(4);
    r << 0.1, 0.5, 0.5, 0.2;
    CHECK(argmax_lowest(r) == 1);
}
