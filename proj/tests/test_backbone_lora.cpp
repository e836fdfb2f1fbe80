#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lorax/errors.hpp"
#include "lorax/lora.hpp"
#include "test_util.hpp"

using namespace lorax;
using lorax::test::bit_equal;
using lorax::test::random_images;
using lorax::test::random_matrix;

TEST_CASE("backbone shape and output width") {
    BackboneConfig c;
    c.image_size = 32;
    c.patch_size = 4;
    c.channels = 1;
    c.depth = 2;
    c.embed_dim = 16;
    c.heads = 2;
    c.seed = 7;
    const Backbone b = build_backbone(c);
    CHECK(c.num_patches() == 64);
    Rng rng(1);
    const Matrix out = forward(b, random_images(rng, 3, c));
    CHECK(out.rows() == 3);
    CHECK(out.cols() == 16);
}

TEST_CASE("backbone build is deterministic per seed") {
    const auto c = test::tiny_config(7);
    CHECK(build_backbone(c).params().bit_equal(build_backbone(c).params()));
    CHECK_FALSE(build_backbone(c).params().bit_equal(build_backbone(test::tiny_config(8)).params()));
}

TEST_CASE("backbone config validation") {
    auto c = test::tiny_config();
    c.image_size = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = test::tiny_config();
    c.heads = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = test::tiny_config();
    c.depth = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(build_backbone(c), ConfigError);
}

TEST_CASE("site enumeration") {
    const Backbone b = build_backbone(test::tiny_config());
    CHECK(list_sites(b, AdapterCombo::ALL).size() == 6);  // qk, v, pos per block
    const auto v = list_sites(b, AdapterCombo::V);
    REQUIRE(v.size() == 2);
    CHECK(v[0].block != v[1].block);
    CHECK(list_sites(b, AdapterCombo::QKV).empty());

    auto fc = test::tiny_config();
    fc.fused_blocks = 2;
    const Backbone fused = build_backbone(fc);
    const auto qkv = list_sites(fused, AdapterCombo::QKV);
    REQUIRE(qkv.size() == 2);
    for (const auto& s : qkv) {
        CHECK(s.kind == SiteKind::QKV);
        CHECK(s.rows == 3 * fc.embed_dim);
        CHECK(s.cols == fc.embed_dim);
    }
    // no positional sites on plain blocks
    for (const auto& s : list_sites(fused, AdapterCombo::ALL)) CHECK(s.kind != SiteKind::POS);
}

TEST_CASE("frozen backbone rejects writes") {
    Backbone b = build_backbone(test::tiny_config());
    b.freeze();
    CHECK_THROWS_AS(b.mutable_params(), StateError);
    CHECK_FALSE(b.clone().frozen());
}

TEST_CASE("adapter rank bounds") {
    const Backbone b = build_backbone(test::tiny_config());
    CHECK_THROWS_AS(init_adapter_set(b, AdapterCombo::V, 0, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(init_adapter_set(b, AdapterCombo::V, 17, 1.0, 1), ConfigError);
    CHECK_NOTHROW(init_adapter_set(b, AdapterCombo::V, 16, 1.0, 1));
    // a combination without sites on this backbone
    CHECK_THROWS_AS(init_adapter_set(b, AdapterCombo::QKV, 2, 1.0, 1), ConfigError);
}

TEST_CASE("site parameter count is r(d + k)") {
    WeightSite s{"x", SiteKind::V, 0, 8, 8};
    CHECK(lora_site_parameter_count(s, 2) == 32);

    const Backbone b = build_backbone(test::tiny_config());
    const AdapterSet set = init_adapter_set(b, AdapterCombo::ALL, 3, 1.0, 5);
    std::size_t by_hand = 0;
    for (const auto& [id, a] : set.adapters()) by_hand += static_cast<std::size_t>(a.A.size() + a.B.size());
    CHECK(count_trainable(set) == by_hand);
    std::size_t formula = 0;
    for (const auto& s2 : list_sites(b, AdapterCombo::ALL)) formula += lora_site_parameter_count(s2, 3);
    CHECK(formula == by_hand);
    AdapterSet frozen = set;
    frozen.freeze();
    CHECK(count_trainable(frozen) == 0);
    CHECK(frozen.parameter_count() == by_hand);
    CHECK_THROWS_AS(frozen.mutable_adapters(), StateError);
}

TEST_CASE("hand example: identity weight plus rank-one update") {
    Matrix W = Matrix::Identity(4, 4);
    LoraAdapter a;
    a.site_id = "probe";
    a.rank = 1;
    a.A = Matrix::Zero(1, 4);
    a.A(0, 0) = 1.0;  // e1^T
    a.B = Matrix::Zero(4, 1);
    a.B(1, 0) = 1.0;  // e2
    a.scale = 1.0;
    Matrix x = Matrix::Zero(1, 4);
    x(0, 0) = 1.0;
    Matrix expected = Matrix::Zero(1, 4);
    expected(0, 0) = 1.0;
    expected(0, 1) = 1.0;
    CHECK(bit_equal(adapted_site_forward(W, a, x), expected));
}

TEST_CASE("fresh adapters leave the backbone output unchanged") {
    const auto c = test::tiny_config();
    const Backbone b = build_backbone(c);
    Rng rng(3);
    const Matrix x = random_images(rng, 5, c);
    for (auto combo : {AdapterCombo::V, AdapterCombo::QK, AdapterCombo::ALL}) {
        const AdapterSet set = init_adapter_set(b, combo, 4, 2.0, 11);
        CHECK(bit_equal(adapted_forward(b, set, x), forward(b, x)));
    }
}

TEST_CASE("merged weights match the adapted path") {
    const auto c = test::tiny_config();
    const Backbone b = build_backbone(c);
    Rng rng(9);
    AdapterSet set = init_adapter_set(b, AdapterCombo::ALL, 2, 1.5, 4);
    for (auto& [id, a] : set.mutable_adapters()) a.B = random_matrix(rng, static_cast<int>(a.B.rows()), a.rank, 0.1);
    CHECK_THROWS_AS(merge(b, set), StateError);
    set.freeze();
    const Backbone merged = merge(b, set);
    const Matrix x = random_images(rng, 4, c);
    const Matrix lhs = adapted_forward(b, set, x);
    const Matrix rhs = forward(merged, x);
    CHECK((lhs - rhs).norm() <= 1e-5 * rhs.norm());
    CHECK((lhs - forward(b, x)).norm() > 1e-6);  // the update does something
}

TEST_CASE("compatibility checks") {
    const Backbone b = build_backbone(test::tiny_config());
    AdapterSet set = init_adapter_set(b, AdapterCombo::V, 2, 1.0, 4);
    CHECK_NOTHROW(check_compatible(b, set));
    LoraAdapter bogus = set.adapters().begin()->second;
    bogus.site_id = "block9.attn.v";
    set.insert(bogus);
    CHECK_THROWS_AS(check_compatible(b, set), InputError);

    AdapterSet wrong = init_adapter_set(b, AdapterCombo::V, 2, 1.0, 4);
    wrong.mutable_adapters().begin()->second.A = Matrix::Zero(2, 5);
    CHECK_THROWS_AS(check_compatible(b, wrong), InputError);
}

TEST_CASE("exemplar image equivalents") {
    CHECK(image_parameter_equivalent(224, 224, 3) == 37632);
    CHECK(image_parameter_equivalent(32, 32, 1) == 256);
    CHECK(exemplar_image_equivalents(37632 * 65, 224, 224, 3) == doctest::Approx(65.0));
}
