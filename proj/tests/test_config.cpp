#include <doctest.h>

#include "treerank/config.hpp"
#include "treerank/errors.hpp"

using namespace treerank;

TEST_CASE("defaults") {
  const Config cfg;
  CHECK(cfg.model.dim == 8);
  CHECK(cfg.model.list_len == 8);
  CHECK(cfg.model.hidden == std::vector<std::size_t>{1024, 256, 128});
  CHECK(cfg.train.lr == 0.001);
  CHECK(cfg.train.alpha == 0.05);
  CHECK(cfg.train.batch_size == 1024);
  CHECK(cfg.model.tree_levels() == 3);
  CHECK(cfg.model.head_input_dim() == 5 * 8);
  validate_config(cfg);
}

TEST_CASE("render then parse is lossless") {
  Config cfg;
  apply_setting(cfg, "model.hidden", "32,16");
  apply_setting(cfg, "train.alpha", "0.1");
  apply_setting(cfg, "ablate", "irm,tcem");
  apply_setting(cfg, "world.bias", "-2.25");
  apply_setting(cfg, "seed", "99");
  const Config back = parse_config(render_config(cfg));
  CHECK(render_config(back) == render_config(cfg));
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(back.model.no_irm);
  CHECK(back.model.no_tcem);
  CHECK(back.model.hidden == std::vector<std::size_t>{32, 16});
}

TEST_CASE("comments, whitespace and format version") {
  const Config cfg = parse_config("# run\nformat_version = 1\n  seed=7   # inline\n\nmodel.m = 4\n");
  CHECK(cfg.seed == 7);
  CHECK(cfg.model.list_len == 4);
  CHECK_THROWS_AS(parse_config("format_version = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("no equals sign\n"), ConfigError);
}

TEST_CASE("unknown keys and bad values are rejected") {
  Config cfg;
  CHECK_THROWS_AS(apply_setting(cfg, "model.dimm", "8"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "model.dim", "eight"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "model.dim", "-1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(cfg, "ablate", "everything"), ConfigError);
}

TEST_CASE("structural validation") {
  Config cfg;
  cfg.model.list_len = 6;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg.model.list_len = 16;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);  // n < m
  cfg.model.num_candidates = 16;
  validate_config(cfg);
}

TEST_CASE("conflicting ablation flags") {
  Config cfg;
  apply_setting(cfg, "ablate", "tcem");
  apply_setting(cfg, "model.per_level_set_attention", "1");
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);

  Config g;
  apply_setting(g, "ablate", "gbpr");
  validate_config(g);  // default alpha is not an explicit request
  apply_setting(g, "train.alpha", "0.1");
  CHECK_THROWS_AS(validate_config(g), ConfigError);

  // A rendered no_gbpr config carries its effective alpha and reloads cleanly.
  Config h;
  apply_setting(h, "ablate", "gbpr");
  validate_config(parse_config(render_config(h)));
}
