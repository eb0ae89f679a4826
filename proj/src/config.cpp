#include "tinyformer/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace tinyformer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key + ": not an unsigned integer: '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": not a finite number: '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

std::vector<int> to_levels(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto n = to_u64(key, trim(item));
    if (n < 2 || n > 5) throw ConfigError(key + ": levels must lie in 2..5");
    out.push_back(static_cast<int>(n));
  }
  if (out.empty()) throw ConfigError(key + ": empty level list");
  if (std::set<int>(out.begin(), out.end()).size() != out.size()) throw ConfigError(key + ": repeated level");
  return out;
}

template <typename E, typename Parse>
E to_enum(const std::string& key, const std::string& v, Parse parse) {
  auto r = parse(v);
  if (!r) throw ConfigError(key + ": unknown value '" + v + "'");
  return *r;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  auto sz = [](std::size_t RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = to_u64(k, v); });
  };
  auto dbl = [](double RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = to_double(k, v); });
  };
  auto flag = [](bool RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string& k, const std::string& v) { c.*f = to_bool(k, v); });
  };
  auto str = [](std::string RunConfig::*f) {
    return Setter([f](RunConfig& c, const std::string&, const std::string& v) { c.*f = v; });
  };
  static const std::map<std::string, Setter> table{
      {"preset", [](RunConfig& c, const std::string& k,
                    const std::string& v) { c.preset = to_enum<Preset>(k, v, parse_preset); }},
      {"image_size", sz(&RunConfig::image_size)},
      {"num_classes", sz(&RunConfig::num_classes)},
      {"n_queries", sz(&RunConfig::n_queries)},
      {"neck", [](RunConfig& c, const std::string& k,
                  const std::string& v) { c.neck = to_enum<NeckMode>(k, v, parse_neck_mode); }},
      {"ssa", flag(&RunConfig::ssa)},
      {"ssa_variant", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.ssa_variant = to_enum<SsaVariant>(k, v, parse_ssa_variant); }},
      {"n_bifusion", sz(&RunConfig::n_bifusion)},
      {"fusion_mode", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.fusion_mode = to_enum<FusionMode>(k, v, parse_fusion_mode); }},
      {"emit_f2_tokens", flag(&RunConfig::emit_f2_tokens)},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }},
      {"lr", dbl(&RunConfig::lr)},
      {"weight_decay", dbl(&RunConfig::weight_decay)},
      {"epochs", sz(&RunConfig::epochs)},
      {"batch_size", sz(&RunConfig::batch_size)},
      {"warmup", sz(&RunConfig::warmup)},
      {"grad_clip", dbl(&RunConfig::grad_clip)},
      {"max_steps", sz(&RunConfig::max_steps)},
      {"eval_every", sz(&RunConfig::eval_every)},
      {"train_data", str(&RunConfig::train_data)},
      {"eval_data", str(&RunConfig::eval_data)},
      {"n_train", sz(&RunConfig::n_train)},
      {"n_eval", sz(&RunConfig::n_eval)},
      {"min_objects", sz(&RunConfig::min_objects)},
      {"max_objects", sz(&RunConfig::max_objects)},
      {"mix_small", dbl(&RunConfig::mix_small)},
      {"mix_medium", dbl(&RunConfig::mix_medium)},
      {"mix_large", dbl(&RunConfig::mix_large)},
      {"max_iou", dbl(&RunConfig::max_iou)},
      {"eval_on_train", flag(&RunConfig::eval_on_train)},
      {"checkpoint", str(&RunConfig::checkpoint)},
      {"log", str(&RunConfig::log)},
      {"report", str(&RunConfig::report)},
      {"ablate_seeds", sz(&RunConfig::ablate_seeds)},
      {"dump_image", str(&RunConfig::dump_image)},
      {"dump_levels", [](RunConfig& c, const std::string& k,
                         const std::string& v) { c.dump_levels = to_levels(k, v); }},
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(image_size == 0 || (image_size % 32 == 0 && image_size <= 4096),
       "image_size must be a multiple of 32 no larger than 4096");
  need(num_classes <= 1000, "num_classes must be at most 1000");
  need(n_queries <= 1000, "n_queries must be at most 1000");
  need(n_bifusion <= 2, "n_bifusion must be 0, 1 or 2");
  need(lr > 0 && lr < 1, "lr must lie in (0, 1)");
  need(weight_decay >= 0 && weight_decay < 1, "weight_decay must lie in [0, 1)");
  need(batch_size >= 1, "batch_size must be positive");
  need(grad_clip >= 0, "grad_clip must be non-negative");
  need(n_eval >= 1 || !eval_data.empty() || eval_on_train, "n_eval must be positive");
  need(n_train >= 1 || !train_data.empty(), "n_train must be positive");
  need(min_objects <= max_objects && max_objects <= 64, "object count range must satisfy min <= max <= 64");
  need(mix_small >= 0 && mix_medium >= 0 && mix_large >= 0 && mix_small + mix_medium + mix_large > 0,
       "size mixture weights must be non-negative and not all zero");
  need(max_iou > 0 && max_iou <= 1, "max_iou must lie in (0, 1]");
  need(ablate_seeds >= 1 && ablate_seeds <= 100, "ablate_seeds must lie in 1..100");
  need(!checkpoint.empty() && !log.empty() && !report.empty(), "output file names must be non-empty");
  try {
    model().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig RunConfig::model() const {
  ModelConfig m = ModelConfig::preset_config(preset);
  if (image_size) m.image_size = image_size;
  if (num_classes) m.num_classes = num_classes;
  if (n_queries) m.n_queries = n_queries;
  m.neck = neck;
  m.use_ssa = ssa;
  m.ssa_variant = ssa_variant;
  m.n_bifusion = n_bifusion;
  m.fusion = fusion_mode;
  m.emit_f2_tokens = emit_f2_tokens;
  return m;
}

SynthConfig RunConfig::synth(std::uint64_t s) const {
  SynthConfig c;
  const ModelConfig m = model();
  c.extent = m.image_size;
  c.min_objects = min_objects;
  c.max_objects = max_objects;
  c.num_classes = m.num_classes;
  c.mix_small = mix_small;
  c.mix_medium = mix_medium;
  c.mix_large = mix_large;
  c.max_iou = max_iou;
  c.seed = s;
  return c;
}

std::uint64_t RunConfig::train_data_seed() const { return derive_seed(seed, "data.train"); }
std::uint64_t RunConfig::eval_data_seed() const { return derive_seed(seed, "data.eval"); }

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string render_run_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto onoff = [](bool b) { return b ? "on" : "off"; };
  os << "preset = " << to_string(c.preset) << "\n"
     << "image_size = " << c.image_size << "\n"
     << "num_classes = " << c.num_classes << "\n"
     << "n_queries = " << c.n_queries << "\n"
     << "neck = " << to_string(c.neck) << "\n"
     << "ssa = " << onoff(c.ssa) << "\n"
     << "ssa_variant = " << to_string(c.ssa_variant) << "\n"
     << "n_bifusion = " << c.n_bifusion << "\n"
     << "fusion_mode = " << to_string(c.fusion_mode) << "\n"
     << "emit_f2_tokens = " << onoff(c.emit_f2_tokens) << "\n"
     << "seed = " << c.seed << "\n"
     << "lr = " << c.lr << "\n"
     << "weight_decay = " << c.weight_decay << "\n"
     << "epochs = " << c.epochs << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "warmup = " << c.warmup << "\n"
     << "grad_clip = " << c.grad_clip << "\n"
     << "max_steps = " << c.max_steps << "\n"
     << "eval_every = " << c.eval_every << "\n";
  if (!c.train_data.empty()) os << "train_data = " << c.train_data << "\n";
  if (!c.eval_data.empty()) os << "eval_data = " << c.eval_data << "\n";
  os << "n_train = " << c.n_train << "\n"
     << "n_eval = " << c.n_eval << "\n"
     << "min_objects = " << c.min_objects << "\n"
     << "max_objects = " << c.max_objects << "\n"
     << "mix_small = " << c.mix_small << "\n"
     << "mix_medium = " << c.mix_medium << "\n"
     << "mix_large = " << c.mix_large << "\n"
     << "max_iou = " << c.max_iou << "\n"
     << "eval_on_train = " << onoff(c.eval_on_train) << "\n"
     << "checkpoint = " << c.checkpoint << "\n"
     << "log = " << c.log << "\n"
     << "report = " << c.report << "\n"
     << "ablate_seeds = " << c.ablate_seeds << "\n";
  if (!c.dump_image.empty()) os << "dump_image = " << c.dump_image << "\n";
  os << "dump_levels = ";
  for (std::size_t i = 0; i < c.dump_levels.size(); ++i) os << (i ? "," : "") << c.dump_levels[i];
  os << "\n";
  return os.str();
}

}  // namespace tinyformer
