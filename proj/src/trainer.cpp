#include "trajcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "trajcl/rng.hpp"

namespace trajcl {

using json = nlohmann::json;

Precision precision_from_string(const std::string& s) {
  if (s == "f32") return Precision::kFloat32;
  if (s == "f64") return Precision::kFloat64;
  throw std::invalid_argument("unknown precision: " + s);
}

std::string to_string(Precision p) { return p == Precision::kFloat32 ? "f32" : "f64"; }

void TrainConfig::validate() const {
  if (!(lr0 > 0)) throw std::invalid_argument("train config: lr0 must be positive");
  if (!(lr_decay > 0)) throw std::invalid_argument("train config: lr_decay must be positive");
  if (decay_every < 1) throw std::invalid_argument("train config: decay_every must be >= 1");
  if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (d < 1 || k < 1) throw std::invalid_argument("train config: d and k must be >= 1");
  if (!(tau > 0)) throw std::invalid_argument("train config: tau must be positive");
  if (weights.lambda < 0 || weights.phi < 0 || weights.eta < 0)
    throw std::invalid_argument("train config: loss weights must be non-negative");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr0 * std::pow(cfg.lr_decay, std::floor(static_cast<double>(epoch) /
                                                     static_cast<double>(cfg.decay_every)));
}

namespace {

std::string fmt(double v) {
  char buf[40];
  snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

ModelConfig model_config_from(const TrainConfig& cfg, int n_classes) {
  ModelConfig mc;
  mc.mode = cfg.mode;
  mc.variant = cfg.variant;
  mc.f_traj = feature_dim(cfg.feature_mode);
  mc.f_env = kNumContextFeatures;
  mc.d = cfg.d;
  mc.k = cfg.k;
  mc.n_classes = n_classes;
  mc.tau = cfg.tau;
  mc.share_heads = cfg.share_heads;
  mc.detach_intervention = cfg.detach_intervention;
  mc.weights = cfg.weights;
  return mc;
}

int infer_classes(const std::vector<TrajInstance>& train, int configured) {
  if (configured > 0) return configured;
  int mx = 0;
  for (const auto& inst : train) mx = std::max(mx, inst.label);
  return mx + 1;
}

template <typename S>
double accuracy_of(const TrajCLModel<S>& model, const std::vector<TrajInstance>& split) {
  if (split.empty()) return 0.0;
  constexpr size_t kChunk = 256;  // fixed for reproducibility
  int64_t correct = 0;
  for (size_t base = 0; base < split.size(); base += kChunk) {
    std::vector<size_t> idx;
    for (size_t i = base; i < std::min(split.size(), base + kChunk); ++i) idx.push_back(i);
    auto batch = build_batch<S>(split, idx, model.cfg.f_traj);
    auto pred = model.predict(batch);
    for (size_t i = 0; i < idx.size(); ++i)
      if (pred[i] == split[idx[i]].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

template <typename S>
TrainResult train_impl(const DatasetSplits& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.train.empty() || data.val.empty())
    throw std::invalid_argument("train: empty train or val split");
  for (const auto& inst : data.train)
    if (inst.normalized)
      throw std::invalid_argument("train: expects raw (unnormalized) instances");

  const int n_classes = infer_classes(data.train, cfg.n_classes);
  FeatureConfig fc;
  fc.mode = cfg.feature_mode;
  const NormStats stats = fit_normalization(data.train, fc);
  std::vector<TrajInstance> train = data.train;
  std::vector<TrajInstance> val = data.val;
  apply_normalization(train, stats);
  apply_normalization(val, stats);

  auto model = TrajCLModel<S>::init(model_config_from(cfg, n_classes), cfg.seed);

  TrainReport report;
  Checkpoint best_ck;
  double best_val = -1.0;
  int best_epoch = -1;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::vector<size_t> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    auto shuffle_rng = make_rng({cfg.seed, 0xe0u, static_cast<uint64_t>(epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double sum_cau = 0, sum_con = 0, sum_int = 0, sum_total = 0;
    int64_t seen = 0;
    const size_t bs = static_cast<size_t>(cfg.batch_size);
    for (size_t base = 0, bi = 0; base < order.size(); base += bs, ++bi) {
      std::vector<size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(base),
                              order.begin() +
                                  static_cast<std::ptrdiff_t>(std::min(order.size(), base + bs)));
      auto batch = build_batch<S>(train, idx, model.cfg.f_traj);
      Tape<S> tape;
      tape.check_finite = false;  // the loss is checked below instead
      std::optional<Tensor<S>> noise;
      if (cfg.mode == RunMode::kTrajCL && cfg.variant != Variant::kNoDise) {
        auto noise_rng = make_rng({cfg.seed, 0x6bu, static_cast<uint64_t>(epoch), bi});
        noise = gumbel_noise<S>({batch.T, batch.b, cfg.k}, noise_rng);
      }
      const uint64_t perm_seed = mix_seed({cfg.seed, 0x9eu, static_cast<uint64_t>(epoch), bi});
      auto out = model.forward(tape, batch, MaskMode::kTrain, noise, perm_seed);
      const double total = static_cast<double>(out.total.val().v[0]);
      if (!std::isfinite(total))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(bi) +
                           " (param_norm=" + std::to_string(model.params.param_norm()) +
                           ", grad_norm=" + std::to_string(model.params.grad_norm()) + ")");
      tape.backward(out.total);
      model.params.adam_step(static_cast<S>(lr));
      const auto b = static_cast<double>(batch.b);
      sum_cau += static_cast<double>(out.l_cau.val().v[0]) * b;
      sum_con += static_cast<double>(out.l_con.val().v[0]) * b;
      sum_int += static_cast<double>(out.l_int.val().v[0]) * b;
      sum_total += total * b;
      seen += batch.b;
    }

    const double val_acc = accuracy_of(model, val);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.l_cau = sum_cau / static_cast<double>(seen);
    rec.l_con = sum_con / static_cast<double>(seen);
    rec.l_int = sum_int / static_cast<double>(seen);
    rec.total = sum_total / static_cast<double>(seen);
    rec.val_acc = val_acc;
    rec.lr = lr;
    report.epochs.push_back(rec);

    if (val_acc > best_val) {
      best_val = val_acc;
      best_epoch = epoch;
      best_ck = Checkpoint::from_store(
          model.params, checkpoint_metadata_json(cfg, stats, n_classes, epoch, val_acc));
    }
    if (epoch - best_epoch >= cfg.patience) {
      report.stop_reason = "early_stop";
      break;
    }
  }
  if (report.stop_reason.empty()) report.stop_reason = "max_epochs";
  report.best_epoch = best_epoch;
  report.best_val_acc = best_val;

  TrainResult result;
  result.checkpoint = std::move(best_ck);
  result.report = std::move(report);
  result.report.checkpoint_val_acc = evaluate(result.checkpoint, data.val);
  return result;
}

}  // namespace

std::string checkpoint_metadata_json(const TrainConfig& cfg, const NormStats& stats,
                                     int n_classes, int best_epoch, double best_val_acc) {
  json j;
  j["format"] = "trajcl-checkpoint";
  j["version"] = 1;
  j["mode"] = to_string(cfg.mode);
  j["variant"] = to_string(cfg.variant);
  j["d"] = cfg.d;
  j["k"] = cfg.k;
  j["tau"] = cfg.tau;
  j["share_heads"] = cfg.share_heads;
  j["detach_intervention"] = cfg.detach_intervention;
  j["feature_mode"] = to_string(cfg.feature_mode);
  j["n_classes"] = n_classes;
  j["weights"] = {cfg.weights.lambda, cfg.weights.phi, cfg.weights.eta};
  j["seed"] = cfg.seed;
  j["best_epoch"] = best_epoch;
  j["best_val_acc"] = best_val_acc;
  j["norm_stats"] = json::parse(stats.to_json());
  return j.dump();
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os << "epoch,l_cau,l_con,l_int,total,val_acc,lr\n";
  for (const auto& r : epochs)
    os << r.epoch << ',' << fmt(r.l_cau) << ',' << fmt(r.l_con) << ',' << fmt(r.l_int) << ','
       << fmt(r.total) << ',' << fmt(r.val_acc) << ',' << fmt(r.lr) << "\n";
  os << "# best_epoch=" << best_epoch << " best_val_acc=" << fmt(best_val_acc)
     << " checkpoint_val_acc=" << fmt(checkpoint_val_acc) << " stop=" << stop_reason << "\n";
  return os.str();
}

TrainResult train(const DatasetSplits& data, const TrainConfig& cfg) {
  if (cfg.precision == Precision::kFloat64) return train_impl<double>(data, cfg);
  return train_impl<float>(data, cfg);
}

namespace {

struct LoadedModel {
  TrajCLModel<float> model;
  NormStats stats;
};

LoadedModel load_model(const Checkpoint& ck) {
  const json meta = json::parse(ck.metadata);
  if (meta.at("format").get<std::string>() != "trajcl-checkpoint")
    throw std::runtime_error("checkpoint: unexpected metadata format");
  ModelConfig mc;
  mc.mode = run_mode_from_string(meta.at("mode").get<std::string>());
  mc.variant = variant_from_string(meta.at("variant").get<std::string>());
  mc.d = meta.at("d").get<int>();
  mc.k = meta.at("k").get<int>();
  mc.tau = meta.at("tau").get<double>();
  mc.share_heads = meta.at("share_heads").get<bool>();
  mc.detach_intervention = meta.at("detach_intervention").get<bool>();
  mc.n_classes = meta.at("n_classes").get<int>();
  NormStats stats = NormStats::from_json(meta.at("norm_stats").dump());
  mc.f_traj = feature_dim(stats.cfg.mode);
  LoadedModel lm{TrajCLModel<float>::init(mc, 0), std::move(stats)};
  ck.into_store(lm.model.params);
  return lm;
}

std::vector<TrajInstance> normalized_copy(const std::vector<TrajInstance>& split,
                                          const NormStats& stats) {
  std::vector<TrajInstance> out = split;
  apply_normalization(out, stats);
  return out;
}

}  // namespace

double evaluate(const Checkpoint& ck, const std::vector<TrajInstance>& split) {
  LoadedModel lm = load_model(ck);
  return accuracy_of(lm.model, normalized_copy(split, lm.stats));
}

std::vector<int> predict_with_checkpoint(const Checkpoint& ck,
                                         const std::vector<TrajInstance>& split) {
  LoadedModel lm = load_model(ck);
  auto data = normalized_copy(split, lm.stats);
  std::vector<int> pred;
  constexpr size_t kChunk = 256;
  for (size_t base = 0; base < data.size(); base += kChunk) {
    std::vector<size_t> idx;
    for (size_t i = base; i < std::min(data.size(), base + kChunk); ++i) idx.push_back(i);
    auto batch = build_batch<float>(data, idx, lm.model.cfg.f_traj);
    auto p = lm.model.predict(batch);
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return pred;
}

std::vector<PointAlignment> alignment_with_checkpoint(const Checkpoint& ck,
                                                      const std::vector<TrajInstance>& split) {
  LoadedModel lm = load_model(ck);
  auto data = normalized_copy(split, lm.stats);
  std::vector<PointAlignment> out;
  out.reserve(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    auto batch = build_batch<float>(data, {i}, lm.model.cfg.f_traj);
    std::vector<int> ids;
    Tensor<float> mask;
    lm.model.predict(batch, nullptr, &ids, &mask);
    PointAlignment pa;
    const auto n = static_cast<size_t>(batch.lengths[0]);
    pa.proto_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
    for (size_t t = 0; t < n; ++t) pa.mask_values.push_back(static_cast<double>(mask.v[t]));
    out.push_back(std::move(pa));
  }
  return out;
}

double run_ablation(Variant variant, const DatasetSplits& data, TrainConfig cfg) {
  cfg.mode = RunMode::kTrajCL;
  cfg.variant = variant;
  auto result = train(data, cfg);
  return evaluate(result.checkpoint, data.test);
}

double run_mode(RunMode mode, const DatasetSplits& data, TrainConfig cfg) {
  cfg.mode = mode;
  cfg.variant = mode == RunMode::kTrajCL ? cfg.variant : Variant::kFull;
  auto result = train(data, cfg);
  return evaluate(result.checkpoint, data.test);
}

}  // namespace trajcl
