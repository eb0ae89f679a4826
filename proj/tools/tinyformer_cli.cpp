// tinyformer: command-line front end.
//
//   tinyformer <verb> [--config FILE] [--seed N] [--out DIR] [verb options]
//
// Exit status: 0 success, 1 validation error (bad flags, config, shapes),
// 2 runtime failure (I/O, corrupt checkpoint, failed gradient check).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "tinyformer/checkpoint.hpp"
#include "tinyformer/config.hpp"
#include "tinyformer/features.hpp"
#include "tinyformer/flops.hpp"
#include "tinyformer/gradcheck.hpp"
#include "tinyformer/train.hpp"

namespace fs = std::filesystem;
using namespace tinyformer;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Globals& g) {
  fs::create_directories(g.out);
  return g.out;
}

void print_eval(const EvalResult& r, std::ostream& os) {
  char line[160];
  std::snprintf(line, sizeof line, "%8s %8s %8s %8s %8s %8s\n", "AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L");
  os << line;
  std::snprintf(line, sizeof line, "%8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", r.ap, r.ap50, r.ap75, r.ap_s, r.ap_m,
                r.ap_l);
  os << line;
  std::snprintf(line, sizeof line, "ap=%.6f\nap50=%.6f\nap75=%.6f\nap_s=%.6f\nap_m=%.6f\nap_l=%.6f\n", r.ap, r.ap50,
                r.ap75, r.ap_s, r.ap_m, r.ap_l);
  os << line;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) os << "ap_class" << c << "=" << r.per_class[c] << "\n";
}

int gen_data(const Globals& g) {
  const RunConfig cfg = resolve(g);
  const fs::path dir = out_dir(g);
  struct Split {
    const char* name;
    std::uint64_t seed;
    std::size_t n;
  };
  for (const Split& s : {Split{"train", cfg.train_data_seed(), cfg.n_train}, Split{"eval", cfg.eval_data_seed(), cfg.n_eval}}) {
    const Dataset ds = synth_generate(cfg.synth(s.seed), s.n);
    save_dataset(dir / s.name, ds);
    std::size_t objects = 0, small = 0;
    for (const auto& smp : ds.samples) {
      for (const auto& o : smp.objects) {
        ++objects;
        if (o.box.w * o.box.h * ds.extent * ds.extent < ds.small_area) ++small;
      }
    }
    std::printf("%s: images=%zu objects=%zu small_fraction=%.4f dropped=%zu -> %s\n", s.name, ds.samples.size(), objects,
                objects ? static_cast<double>(small) / objects : 0.0, ds.dropped, (dir / s.name).string().c_str());
  }
  return 0;
}

int train(const Globals& g) {
  const RunConfig cfg = resolve(g);
  const fs::path dir = out_dir(g);
  const Dataset train_set = train_dataset(cfg);
  const Dataset eval_set = eval_dataset(cfg);
  Detector<float> model(cfg.model(), cfg.seed);
  {
    std::ofstream resolved(dir / "resolved.cfg");
    resolved << render_run_config(cfg);
  }
  std::ofstream log(dir / cfg.log, std::ios::app);
  if (!log) throw std::runtime_error("cannot open log " + (dir / cfg.log).string());
  train_detector(model, train_set, &eval_set, TrainOptions::from(cfg), [&](const EpochRecord& r) {
    const std::string line = format_record(r);
    log << line << "\n" << std::flush;
    std::cout << line << "\n" << std::flush;
  });
  save_checkpoint(dir / cfg.checkpoint, model.params());
  std::printf("checkpoint=%s params=%zu\n", (dir / cfg.checkpoint).string().c_str(), model.params().parameter_count());
  return 0;
}

int eval(const Globals& g, const std::string& checkpoint, const std::string& data) {
  RunConfig cfg = resolve(g);
  if (!data.empty()) cfg.eval_data = data;
  const fs::path ck = checkpoint.empty() ? fs::path(g.out) / cfg.checkpoint : fs::path(checkpoint);
  Detector<float> model(cfg.model(), cfg.seed);
  load_checkpoint(ck, model.params());
  const Dataset ds = eval_dataset(cfg);
  print_eval(evaluate(model, ds, cfg.batch_size), std::cout);
  return 0;
}

int ablate(const Globals& g) {
  const RunConfig cfg = resolve(g);
  const fs::path dir = out_dir(g);
  const Dataset train_set = train_dataset(cfg);
  const Dataset eval_set = eval_dataset(cfg);
  const auto rows = run_ablation(cfg, train_set, eval_set, [](const std::string& s) {
    std::cerr << s << "\n" << std::flush;
  });
  const std::string table = format_ablation(rows);
  std::ofstream(dir / cfg.report) << table;
  std::cout << table;
  return 0;
}

int flops(const Globals& g) {
  const RunConfig cfg = resolve(g);
  const ModelConfig m = cfg.model();
  std::printf("preset=%s image=%zu neck=%s ssa=%s\n", std::string(to_string(m.preset)).c_str(), m.image_size,
              std::string(to_string(m.neck)).c_str(), m.use_ssa ? std::string(to_string(m.ssa_variant)).c_str() : "off");
  std::cout << flops_count(m).table();
  return 0;
}

int gradcheck() {
  std::size_t failed = 0;
  run_gradcheck_suite({}, [&](const GradSuiteEntry& e) {
    std::printf("%-22s trials=%zu max_rel_error=%.3e %s\n", e.name.c_str(), e.trials, e.worst.max_rel_error,
                e.passed() ? "PASS" : "FAIL");
    if (!e.passed()) {
      ++failed;
      std::printf("  worst: %s\n", e.worst.worst.c_str());
    }
  });
  std::printf("gradcheck: %s\n", failed ? "FAIL" : "PASS");
  return failed ? 2 : 0;
}

int dump(const Globals& g, const std::string& checkpoint, std::string image, const std::vector<int>& levels) {
  const RunConfig cfg = resolve(g);
  if (image.empty()) image = cfg.dump_image;
  if (image.empty()) throw ConfigError("dump-features needs --image or dump_image");
  const fs::path ck = checkpoint.empty() ? fs::path(g.out) / cfg.checkpoint : fs::path(checkpoint);
  Detector<float> model(cfg.model(), cfg.seed);
  load_checkpoint(ck, model.params());
  const Image img = read_ppm(image);
  for (const auto& p : dump_features(model, img, levels.empty() ? cfg.dump_levels : levels, out_dir(g))) {
    std::cout << p.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TinyFormer desk-scale detector"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "flat key = value configuration file");
  app.add_option("--seed", g.seed, "overrides the config seed");
  app.add_option("--out", g.out, "output directory")->capture_default_str();

  std::string checkpoint, data, image;
  std::vector<int> levels;
  auto* gen = app.add_subcommand("gen-data", "write synthetic train/eval datasets under --out");
  auto* tr = app.add_subcommand("train", "train a detector; writes the log and checkpoint under --out");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/<checkpoint key>)");
  ev->add_option("--data", data, "dataset directory (default: eval_data key or synthetic)");
  auto* ab = app.add_subcommand("ablate", "baseline / +SSA / +PBM / both grid over tied seeds");
  auto* fl = app.add_subcommand("flops", "analytic MAC, FLOP and parameter table");
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  auto* df = app.add_subcommand("dump-features", "write channel-mean PGM maps per pyramid level");
  df->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/<checkpoint key>)");
  df->add_option("--image", image, "input PPM image");
  df->add_option("--levels", levels, "pyramid levels (2..5)")->check(CLI::Range(2, 5))->delimiter(',');
  for (auto* sub : {gen, tr, ev, ab, fl, gc, df}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(g);
    if (*tr) return train(g);
    if (*ev) return eval(g, checkpoint, data);
    if (*ab) return ablate(g);
    if (*fl) return flops(g);
    if (*gc) return gradcheck();
    if (*df) return dump(g, checkpoint, image, levels);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
