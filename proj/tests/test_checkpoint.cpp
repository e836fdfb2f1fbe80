#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lorax/checkpoint.hpp"
#include "lorax/engine.hpp"
#include "lorax/errors.hpp"
#include "test_util.hpp"

using namespace lorax;
using lorax::test::bit_equal;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lorax_ckpt_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

Scenario scenario() {
    StreamConfig cfg;
    cfg.num_tasks = 2;
    cfg.samples_per_class = 16;
    cfg.image_size = 16;
    cfg.seed = 2;
    Scenario s;
    s.tasks = generate_stream(cfg);
    s.budget = 8;
    s.training.epochs = 1;
    s.training.preprocess.target_size = 16;
    return s;
}

}  // namespace

TEST_CASE("tensor file round trip") {
    const fs::path dir = scratch("tensors");
    Rng rng(1);
    NamedTensors t{{"a", test::random_matrix(rng, 3, 4)}, {"b.c", Matrix::Zero(0, 5)}, {"d", test::random_matrix(rng, 1, 1)}};
    write_tensors(dir / "t.lrxt", t);
    const auto back = read_tensors(dir / "t.lrxt");
    REQUIRE(back.size() == 3);
    for (const auto& [name, m] : t) CHECK(bit_equal(back.at(name), m));

    std::ofstream(dir / "bad.lrxt") << "LRXT0001garbage";
    CHECK_THROWS_AS(read_tensors(dir / "bad.lrxt"), DataError);
    std::ofstream(dir / "magic.lrxt") << "NOTATENSORFILE";
    CHECK_THROWS_AS(read_tensors(dir / "magic.lrxt"), DataError);
    CHECK_THROWS_AS(read_tensors(dir / "missing.lrxt"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("backbone and adapters round trip") {
    const fs::path dir = scratch("parts");
    auto c = test::tiny_config();
    c.fused_blocks = 1;
    const Backbone b = build_backbone(c);
    save_backbone(dir / "bb", b);
    const Backbone lb = load_backbone(dir / "bb");
    CHECK(lb.config() == c);
    CHECK(lb.params().bit_equal(b.params()));

    Rng rng(2);
    AdapterSet set = init_adapter_set(b, AdapterCombo::ALL, 2, 3.0, 9, 4);
    for (auto& [id, a] : set.mutable_adapters()) a.B = test::random_matrix(rng, static_cast<int>(a.B.rows()), 2);
    save_adapters(dir / "ad", set);
    const AdapterSet back = load_adapters(dir / "ad");
    CHECK(back.frozen());
    CHECK(back.task_id() == 4);
    REQUIRE(back.size() == set.size());
    for (const auto& [id, a] : set.adapters()) {
        const LoraAdapter* l = back.find(id);
        REQUIRE(l != nullptr);
        CHECK(l->kind == a.kind);
        CHECK(l->scale == a.scale);
        CHECK(bit_equal(l->A, a.A));
        CHECK(bit_equal(l->B, a.B));
    }
    fs::remove_all(dir);
}

TEST_CASE("trained models and buffers round trip") {
    const fs::path dir = scratch("model");
    const Backbone base = build_backbone(test::tiny_config());
    const auto s = scenario();
    Rng rng(3);
    const Matrix probe = test::random_images(rng, 6, test::tiny_config());
    for (auto kind : {StrategyKind::Lorax, StrategyKind::FullRankExpansion, StrategyKind::Finetune}) {
        Strategy st;
        st.kind = kind;
        st.lora.rank = 2;
        const auto r = run_scenario(s, st, base);
        const fs::path md = dir / to_string(kind);
        save_model(md, *r.model);
        const IncrementalModel m = load_model(md);
        CHECK(m.architecture() == r.model->architecture());
        CHECK(m.num_tasks() == 2);
        CHECK(bit_equal(m.super_feature(probe), r.model->super_feature(probe)));
        CHECK(bit_equal(m.predict_proba(probe), r.model->predict_proba(probe)));
        CHECK(m.total_parameters() == r.model->total_parameters());

        save_buffer(md / "buffer.json", r.buffer);
        const ExemplarBuffer b = load_buffer(md / "buffer.json");
        CHECK(b.budget() == r.buffer.budget());
        CHECK(b.per_class() == r.buffer.per_class());
    }
    std::ofstream(dir / "broken.json") << "{";
    CHECK_THROWS(load_buffer(dir / "broken.json"));
    fs::remove_all(dir);
}
