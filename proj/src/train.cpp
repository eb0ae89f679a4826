#include "tinyformer/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace tinyformer {

TrainOptions TrainOptions::from(const RunConfig& cfg) {
  TrainOptions o;
  o.lr = cfg.lr;
  o.weight_decay = cfg.weight_decay;
  o.epochs = cfg.epochs;
  o.batch_size = cfg.batch_size;
  o.warmup = cfg.warmup;
  o.grad_clip = cfg.grad_clip;
  o.max_steps = cfg.max_steps;
  o.eval_every = cfg.eval_every;
  o.seed = cfg.seed;
  return o;
}

std::string format_record(const EpochRecord& r) {
  char buf[320];
  auto ap = [&](double v) { return r.evaluated ? v : std::nan(""); };
  std::snprintf(buf, sizeof buf,
                "epoch=%zu steps=%zu loss=%.6f loss_cls=%.6f loss_l1=%.6f loss_giou=%.6f ap=%.6f ap50=%.6f ap_s=%.6f",
                r.epoch, r.steps, r.loss, r.loss_cls, r.loss_l1, r.loss_giou, ap(r.eval.ap), ap(r.eval.ap50),
                ap(r.eval.ap_s));
  return buf;
}

EvalSettings eval_settings(const Dataset& ds) {
  EvalSettings s;
  s.small_area = ds.small_area;
  s.medium_area = ds.medium_area;
  s.extent = static_cast<double>(ds.extent);
  s.num_classes = ds.num_classes;
  return s;
}

namespace {

std::vector<std::vector<GtObject>> gts_of(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<std::vector<GtObject>> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(ds.samples[i].objects);
  return out;
}

template <typename T>
double clip_global_norm(ParamStore<T>& store, double max_norm) {
  double sq = 0;
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    for (T g : e.value.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& e : store.entries()) {
      if (!e.trainable) continue;
      for (T& g : e.value.grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace

template <typename T>
std::vector<std::vector<Detection>> predict(const Detector<T>& model, const Dataset& ds, std::size_t batch_size) {
  const ModelConfig& cfg = model.config();
  if (ds.extent != cfg.image_size) {
    throw std::invalid_argument("dataset extent " + std::to_string(ds.extent) + " differs from model input " +
                                std::to_string(cfg.image_size));
  }
  const std::size_t k = std::min<std::size_t>(100, cfg.n_queries * cfg.num_classes);
  std::vector<std::vector<Detection>> out;
  out.reserve(ds.samples.size());
  for (std::size_t start = 0; start < ds.samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, ds.samples.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    Tape<T> tape;
    tape.set_grad_enabled(false);
    Context<T> ctx{tape, false};
    auto fr = model.forward(ctx, tape.constant(batch_images<T>(ds, idx)));
    for (std::size_t b = 0; b < n; ++b) out.push_back(postprocess_topk(fr.head, b, k));
  }
  return out;
}

template <typename T>
EvalResult evaluate(const Detector<T>& model, const Dataset& ds, std::size_t batch_size) {
  auto dets = predict(model, ds, batch_size);
  std::vector<std::vector<GtObject>> gts;
  gts.reserve(ds.samples.size());
  for (const auto& s : ds.samples) gts.push_back(s.objects);
  return ap_eval(dets, gts, eval_settings(ds));
}

template <typename T>
TrainResult train_detector(Detector<T>& model, const Dataset& train_set, const Dataset* eval_set,
                           const TrainOptions& opt, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (opt.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (train_set.samples.empty() && opt.epochs > 0) throw std::invalid_argument("train: empty training set");
  const HeadConfig head = model.config().head();
  auto& store = model.params();
  TrainResult result;
  std::vector<std::size_t> order(train_set.samples.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    if (opt.max_steps && step >= opt.max_steps) break;
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(opt.seed, "shuffle" + std::to_string(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      if (opt.max_steps && step >= opt.max_steps) break;
      const std::size_t n = std::min(opt.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      const auto gts = gts_of(train_set, idx);

      Tape<T> tape;
      Context<T> ctx{tape, true};
      auto fr = model.forward(ctx, tape.constant(batch_images<T>(train_set, idx)));
      const auto matches = match_batch(fr.head, gts, head);
      const auto loss = set_loss(fr.head, gts, matches, head);
      const double total = loss.total.value()[0];
      if (!std::isfinite(total)) throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));

      store.zero_grads();
      tape.backward(loss.total);
      clip_global_norm(store, opt.grad_clip);
      const double warm = opt.warmup ? std::min(1.0, static_cast<double>(step + 1) / opt.warmup) : 1.0;
      adamw_step(store, AdamWOptions{opt.lr * warm, 0.9, 0.999, opt.weight_decay, 1e-8});
      ++step;
      ++epoch_steps;

      result.step_losses.push_back(total);
      rec.loss += total;
      rec.loss_cls += loss.cls.value()[0];
      rec.loss_l1 += loss.l1.value()[0];
      rec.loss_giou += loss.giou.value()[0];
    }
    if (epoch_steps) {
      const double inv = 1.0 / static_cast<double>(epoch_steps);
      rec.loss *= inv;
      rec.loss_cls *= inv;
      rec.loss_l1 *= inv;
      rec.loss_giou *= inv;
    }
    rec.steps = step;
    const bool last = epoch == opt.epochs || (opt.max_steps && step >= opt.max_steps);
    if (eval_set && ((opt.eval_every && epoch % opt.eval_every == 0) || last)) {
      rec.eval = evaluate(model, *eval_set, opt.batch_size);
      rec.evaluated = true;
    }
    for (auto& e : store.entries()) e.value.drop_grad();
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace {

Dataset dataset_from(const RunConfig& cfg, const std::string& path, std::uint64_t seed, std::size_t n,
                     std::size_t first_index) {
  Dataset ds = path.empty() ? synth_generate(cfg.synth(seed), n, first_index) : load_dataset(path);
  const ModelConfig m = cfg.model();
  if (ds.extent != m.image_size) {
    throw std::invalid_argument("dataset extent " + std::to_string(ds.extent) + " does not match image_size " +
                                std::to_string(m.image_size));
  }
  if (ds.num_classes > m.num_classes) {
    throw std::invalid_argument("dataset has " + std::to_string(ds.num_classes) + " classes, model has " +
                                std::to_string(m.num_classes));
  }
  return ds;
}

}  // namespace

Dataset train_dataset(const RunConfig& cfg) {
  return dataset_from(cfg, cfg.train_data, cfg.train_data_seed(), cfg.n_train, 0);
}

Dataset eval_dataset(const RunConfig& cfg) {
  if (cfg.eval_on_train) return train_dataset(cfg);
  return dataset_from(cfg, cfg.eval_data, cfg.eval_data_seed(), cfg.n_eval, 0);
}

std::uint64_t ablation_seed(std::uint64_t base, std::size_t k) {
  return derive_seed(base, "ablation.seed" + std::to_string(k));
}

namespace {

EvalResult mean_of(const std::vector<EvalResult>& rs) {
  EvalResult m;
  if (rs.empty()) return m;
  const double inv = 1.0 / static_cast<double>(rs.size());
  m.per_class.assign(rs.front().per_class.size(), 0.0);
  for (const auto& r : rs) {
    m.ap += r.ap * inv;
    m.ap50 += r.ap50 * inv;
    m.ap75 += r.ap75 * inv;
    m.ap_s += r.ap_s * inv;
    m.ap_m += r.ap_m * inv;
    m.ap_l += r.ap_l * inv;
    for (std::size_t c = 0; c < m.per_class.size() && c < r.per_class.size(); ++c) m.per_class[c] += r.per_class[c] * inv;
  }
  return m;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& cfg, const Dataset& train_set, const Dataset& eval_set,
                                      const std::function<void(const std::string&)>& progress) {
  const AblationArm arms[] = {AblationArm::Baseline, AblationArm::SsaOnly, AblationArm::PbmOnly, AblationArm::Both};
  std::vector<AblationRow> rows;
  for (AblationArm arm : arms) rows.push_back({arm, {}, {}});
  for (std::size_t k = 0; k < cfg.ablate_seeds; ++k) {
    const std::uint64_t seed = ablation_seed(cfg.seed, k);
    for (auto& row : rows) {
      const ModelConfig mc = with_arm(cfg.model(), row.arm);
      Detector<float> model(mc, seed);
      TrainOptions opt = TrainOptions::from(cfg);
      opt.seed = seed;
      opt.eval_every = 0;
      auto res = train_detector(model, train_set, nullptr, opt);
      row.per_seed.push_back(evaluate(model, eval_set, opt.batch_size));
      if (progress) {
        char buf[200];
        const auto& r = row.per_seed.back();
        std::snprintf(buf, sizeof buf, "seed=%zu arm=%s final_loss=%.6f ap=%.4f ap_s=%.4f", k,
                      std::string(to_string(row.arm)).c_str(), res.epochs.empty() ? 0.0 : res.epochs.back().loss,
                      r.ap, r.ap_s);
        progress(buf);
      }
    }
  }
  for (auto& row : rows) row.mean = mean_of(row.per_seed);
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char line[200];
  std::snprintf(line, sizeof line, "%-10s %8s %8s %8s %8s %8s %8s %10s %10s\n", "arm", "AP", "AP50", "AP75", "AP_S",
                "AP_M", "AP_L", "dAP", "dAP_S");
  os << line;
  const EvalResult* base = nullptr;
  for (const auto& r : rows) {
    if (r.arm == AblationArm::Baseline) base = &r.mean;
  }
  for (const auto& r : rows) {
    const auto& m = r.mean;
    const double dap = base ? 100 * (m.ap - base->ap) : 0.0, daps = base ? 100 * (m.ap_s - base->ap_s) : 0.0;
    std::snprintf(line, sizeof line, "%-10s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f %+10.2f %+10.2f\n",
                  std::string(to_string(r.arm)).c_str(), 100 * m.ap, 100 * m.ap50, 100 * m.ap75, 100 * m.ap_s,
                  100 * m.ap_m, 100 * m.ap_l, dap, daps);
    os << line;
  }
  os << "(AP in points, mean over " << (rows.empty() ? 0 : rows.front().per_seed.size()) << " seeds)\n";
  return os.str();
}

template std::vector<std::vector<Detection>> predict(const Detector<float>&, const Dataset&, std::size_t);
template std::vector<std::vector<Detection>> predict(const Detector<double>&, const Dataset&, std::size_t);
template EvalResult evaluate(const Detector<float>&, const Dataset&, std::size_t);
template EvalResult evaluate(const Detector<double>&, const Dataset&, std::size_t);
template TrainResult train_detector(Detector<float>&, const Dataset&, const Dataset*, const TrainOptions&,
                                    const std::function<void(const EpochRecord&)>&);
template TrainResult train_detector(Detector<double>&, const Dataset&, const Dataset*, const TrainOptions&,
                                    const std::function<void(const EpochRecord&)>&);

}  // namespace tinyformer
