#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinyformer/data.hpp"
#include "tinyformer/model.hpp"

namespace tinyformer {

/// Raised for malformed or out-of-range configuration. The CLI maps it to
/// exit code 1.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything one process needs. Parsed from flat `key = value` text;
/// '#' starts a comment, blank lines are skipped, unknown keys are errors.
struct RunConfig {
  // model
  Preset preset = Preset::Toy;
  // 0 = the preset's own value
  std::size_t image_size = 0;
  std::size_t num_classes = 0;
  std::size_t n_queries = 0;
  NeckMode neck = NeckMode::PBM;
  bool ssa = true;
  SsaVariant ssa_variant = SsaVariant::Proposed;
  std::size_t n_bifusion = 2;
  FusionMode fusion_mode = FusionMode::AddDeepConcatShallow;
  bool emit_f2_tokens = false;

  // optimization
  std::uint64_t seed = 1;
  double lr = 5e-4;
  double weight_decay = 1.25e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t warmup = 100;   // linear LR warmup, in steps
  double grad_clip = 0.1;     // global L2 norm; 0 disables
  std::size_t max_steps = 0;  // 0 = no cap
  std::size_t eval_every = 1; // epochs between evaluations; 0 = final only

  // data: empty paths mean "generate in memory from the seed"
  std::string train_data, eval_data;
  std::size_t n_train = 2000, n_eval = 500;
  std::size_t min_objects = 1, max_objects = 6;
  double mix_small = 0.6, mix_medium = 0.25, mix_large = 0.15;
  double max_iou = 0.3;
  bool eval_on_train = false;  // score the training images instead

  // outputs
  std::string checkpoint = "model.tfck";
  std::string log = "train.log";
  std::string report = "ablation.txt";
  std::size_t ablate_seeds = 3;
  std::string dump_image;
  std::vector<int> dump_levels{2, 3, 4, 5};

  /// Cross-field checks; throws ConfigError.
  void validate() const;
  ModelConfig model() const;
  /// Synthetic generator settings; `seed` selects the split.
  SynthConfig synth(std::uint64_t seed) const;
  std::uint64_t train_data_seed() const;
  std::uint64_t eval_data_seed() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical `key = value` rendering; parse(render(c)) reproduces c.
std::string render_run_config(const RunConfig& cfg);

}  // namespace tinyformer
