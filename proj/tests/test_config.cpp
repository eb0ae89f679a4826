#include "doctest.h"
#include "tinyformer/config.hpp"

using namespace tinyformer;

TEST_CASE("defaults, comments and blank lines") {
  const RunConfig c = parse_run_config("# comment only\n\n  seed = 42   # trailing\nneck=baseline\nssa = off\n");
  CHECK(c.seed == 42);
  CHECK(c.neck == NeckMode::Baseline3Scale);
  CHECK_FALSE(c.ssa);
  CHECK(c.preset == Preset::Toy);
  CHECK(c.model().image_size == 64);
  CHECK(c.model().n_queries == 10);
  CHECK(parse_run_config("").epochs == 30);
}

TEST_CASE("unknown, duplicate and malformed lines are rejected with their line number") {
  CHECK_THROWS_WITH_AS(parse_run_config("seed = 1\nlearning_rate = 0.1\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_run_config("seed = 1\nseed = 2\n"), doctest::Contains("duplicate"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("seed 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(" = 1\n"), ConfigError);
}

TEST_CASE("out-of-range and mistyped values are rejected") {
  for (const char* text : {"lr = 2", "lr = 0", "lr = abc", "n_bifusion = 3", "image_size = 50", "neck = fpn",
                           "ssa = maybe", "epochs = -1", "batch_size = 0", "seed = 1.5", "max_iou = 0",
                           "min_objects = 5\nmax_objects = 2", "mix_small = -1", "dump_levels = 2,6",
                           "ssa_variant = f3_only\nneck = pbm\nssa = on\nn_bifusion = 2\nemit_f2_tokens = on",
                           "ablate_seeds = 0", "preset = XXL", "checkpoint ="}) {
    CAPTURE(text);
    CHECK_THROWS_AS(parse_run_config(text), ConfigError);
  }
}

TEST_CASE("render and parse round trip") {
  RunConfig c;
  c.preset = Preset::S;
  c.image_size = 320;
  c.neck = NeckMode::PBM;
  c.fusion_mode = FusionMode::AddShallowConcatDeep;
  c.n_bifusion = 1;
  c.lr = 3.0e-3 / 7.0;
  c.train_data = "some/dir";
  c.dump_levels = {3, 5};
  c.eval_on_train = true;
  const std::string text = render_run_config(c);
  const RunConfig back = parse_run_config(text);
  CHECK(render_run_config(back) == text);
  CHECK(back.lr == c.lr);
  CHECK(back.dump_levels == c.dump_levels);
  CHECK(back.model().image_size == 320);
  CHECK(render_run_config(parse_run_config("")) == render_run_config(RunConfig{}));
}

TEST_CASE("one seed drives both data splits") {
  RunConfig a, b;
  b.seed = 2;
  CHECK(a.train_data_seed() != a.eval_data_seed());
  CHECK(a.train_data_seed() != b.train_data_seed());
  CHECK(a.synth(a.train_data_seed()).seed == a.train_data_seed());
  CHECK_THROWS_AS(load_run_config("/nonexistent/file.cfg"), ConfigError);
}
