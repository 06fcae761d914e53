#include <doctest.h>

#include <fstream>

#include "amsf/config.hpp"
#include "test_support.hpp"

using namespace amsf;
using namespace amsf::config;

TEST_CASE("defaults round-trip through json") {
    RunConfig cfg = from_json(defaults());
    CHECK(cfg.model.amff.dwt_levels == 3);
    CHECK(cfg.model.backbone.d_model == 64);
    CHECK(cfg.model.backbone.insertion_layer == 3);
    CHECK(cfg.model.similarity.tau_init == 15.0);
    CHECK(cfg.model.similarity.gamma == 10.0);
    CHECK(cfg.model.similarity.eps == 0.01);
    CHECK(cfg.train.lr == 2e-5);
    CHECK(cfg.train.weight_decay == 5e-5);
    CHECK(cfg.train.n_way == 4);
    CHECK(cfg.train.n_query == 15);
    CHECK(cfg.eval.episodes == 500);
    CHECK(cfg.split_ratios == std::array<int, 3>{5, 3, 2});
    CHECK(to_json(cfg) == defaults());
}

TEST_CASE("overrides parse numbers, booleans, arrays and strings") {
    nlohmann::json j = defaults();
    apply_override(j, "model.dwt_levels=2");
    apply_override(j, "train.milestones=[10,20]");
    apply_override(j, "model.use_acasff=false");
    apply_override(j, "recipe.variant=freq");
    apply_override(j, "train.lr=0.001");
    RunConfig cfg = from_json(j);
    CHECK(cfg.model.amff.dwt_levels == 2);
    CHECK(cfg.train.milestones == std::vector<int>{10, 20});
    CHECK_FALSE(cfg.model.use_acasff);
    CHECK(cfg.recipe.variant == "freq");
    CHECK(cfg.train.lr == doctest::Approx(0.001));
    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST_CASE("config files merge over the defaults") {
    amsf_test::ScopedTempDir dir("config_merge");
    std::ofstream(dir.path / "c.json") << R"({"model": {"d_model": 32}, "train": {"seed": 9}})";
    nlohmann::json j = load_file(dir.path / "c.json");
    RunConfig cfg = from_json(j);
    CHECK(cfg.model.backbone.d_model == 32);
    CHECK(cfg.train.seed == 9);
    CHECK(cfg.model.backbone.depth == 4);  // untouched default
}

TEST_CASE("fingerprints are stable and sensitive") {
    nlohmann::json a = defaults();
    nlohmann::json b = defaults();
    CHECK(fingerprint(a) == fingerprint(b));
    apply_override(b, "train.seed=123456");
    CHECK(fingerprint(a) != fingerprint(b));
    CHECK(fingerprint(a).size() == 16);
}

TEST_CASE("model image size follows the preprocess output size") {
    nlohmann::json j = defaults();
    apply_override(j, "preprocess.out_size=64");
    RunConfig cfg = from_json(j);
    CHECK(cfg.model.backbone.image_size == 64);
}
