#pragma once

#include <algorithm>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "s3pet/adam.hpp"
#include "s3pet/checkpoint.hpp"
#include "s3pet/image.hpp"
#include "s3pet/metrics.hpp"
#include "s3pet/model.hpp"

namespace s3pet {

struct TrainConfig {
  ModelDims dims;
  LossWeights weights;
  int batch_size = 32;
  double lr = 2e-4;
  int stage1_epochs = 300;
  int stage2_epochs = 100;
  int stage1_steps = 0;  // when > 0, caps the epoch-derived step count
  int stage2_steps = 0;
  std::uint64_t seed = 0;
  std::string config_hash = "0000000000000000";
};

inline void validate_train_config(const TrainConfig& cfg) {
  validate_dims(cfg.dims);
  validate_weights(cfg.weights);
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (cfg.lr < 0) throw ConfigError("train: negative learning rate");
  if (cfg.stage1_epochs < 0 || cfg.stage2_epochs < 0 || cfg.stage1_steps < 0 ||
      cfg.stage2_steps < 0) {
    throw ConfigError("train: negative step budget");
  }
}

inline std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Stage I

template <typename T>
Dsmae<T> build_stage1_model(const TrainConfig& cfg, char dose) {
  validate_train_config(cfg);
  Dsmae<T> model;
  const double keep = dose == 'L' ? cfg.dims.keep_l : cfg.dims.keep_s;
  model.init(cfg.dims.slice, cfg.dims.p, cfg.dims.d, cfg.dims.t_blocks, cfg.dims.h,
             dose, keep, cfg.seed);
  return model;
}

/// Deterministic per-sample mask seed: epoch-independent function of the
/// global sample counter.
inline std::uint64_t mask_seed(std::uint64_t run_seed, std::int64_t counter) {
  return mix_seed(mix_seed(run_seed, 0x51A6Eu), static_cast<std::uint64_t>(counter));
}

/// Mean Stage-I loss over a dataset at a fixed mask-seed schedule.
template <typename T>
double eval_stage1_loss(const Dsmae<T>& model, const std::vector<Mat<T>>& slices,
                        std::uint64_t run_seed) {
  double acc = 0.0;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    MaeCache<T> cache;
    Mat<T> recon = model.mae_forward(slices[i], mask_seed(run_seed ^ 0xE7A1u, i), cache);
    acc += double(stage1_loss(recon, slices[i]));
  }
  return acc / double(slices.size());
}

/// Trains one DsMAE in place; returns "step,loss" log lines (loss is the
/// batch loss before that step's update).
template <typename T>
std::vector<std::string> train_stage1(Dsmae<T>& model, const std::vector<Mat<T>>& slices,
                                      const TrainConfig& cfg, std::int64_t* steps_done = nullptr) {
  if (slices.empty()) throw ConfigError("stage1: empty dataset");
  validate_train_config(cfg);
  ParamRegistry<T> reg;
  model.collect("", reg);
  Adam<T> adam;
  std::vector<std::string> log;
  log.push_back("step,loss");

  const int steps_per_epoch =
      static_cast<int>((slices.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::int64_t budget = static_cast<std::int64_t>(cfg.stage1_epochs) * steps_per_epoch;
  if (cfg.stage1_steps > 0) budget = cfg.stage1_steps;

  std::int64_t step = 0;
  std::int64_t sample_counter = 0;
  for (int epoch = 0; step < budget; ++epoch) {
    std::vector<int> order(slices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(mix_seed(cfg.seed, 0xE90C0 + epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size() && step < budget;
         pos += cfg.batch_size, ++step) {
      const std::size_t take =
          std::min<std::size_t>(cfg.batch_size, order.size() - pos);
      reg.zero_grads();
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < take; ++b) {
        const Mat<T>& x = slices[order[pos + b]];
        MaeCache<T> cache;
        Mat<T> recon = model.mae_forward(x, mask_seed(cfg.seed, sample_counter++), cache);
        batch_loss += double(stage1_loss(recon, x));
        Mat<T> drecon = stage1_loss_backward(recon, x) / static_cast<T>(take);
        model.mae_backward(cache, drecon);
      }
      batch_loss /= double(take);
      adam.step(reg, cfg.lr);
      log.push_back(std::to_string(step) + "," + csv_num(batch_loss));
    }
  }
  if (steps_done) *steps_done = step;
  return log;
}

template <typename T>
Checkpoint stage1_checkpoint(Dsmae<T>& model, const TrainConfig& cfg, char dose,
                             std::int64_t steps) {
  ParamRegistry<T> reg;
  model.collect("", reg);
  Checkpoint ckpt;
  ckpt.stage = "I";
  ckpt.dose = std::string(1, dose);
  ckpt.variant = "-";
  ckpt.config_hash = cfg.config_hash;
  ckpt.steps = steps;
  ckpt.d = cfg.dims.d;
  ckpt.t_blocks = cfg.dims.t_blocks;
  ckpt.h = cfg.dims.h;
  ckpt.p = cfg.dims.p;
  ckpt.slice = cfg.dims.slice;
  export_params(reg, ckpt);
  return ckpt;
}

struct Stage1Result {
  Checkpoint ckpt;
  std::vector<std::string> log;
};

/// Full Stage-I pretraining of one dose-specific MAE on unpaired slices.
template <typename T>
Stage1Result pretrain_stage1(const std::vector<Mat<T>>& slices, char dose,
                             const TrainConfig& cfg) {
  Dsmae<T> model = build_stage1_model<T>(cfg, dose);
  std::int64_t steps = 0;
  Stage1Result res;
  res.log = train_stage1(model, slices, cfg, &steps);
  res.ckpt = stage1_checkpoint(model, cfg, dose, steps);
  return res;
}

// ---------------------------------------------------------------------------
// Stage II

inline void check_stage1_checkpoint(const Checkpoint& ckpt, const ModelDims& dims,
                                    char dose) {
  if (ckpt.stage != "I") {
    throw ConfigError("stage2: expected a stage-I checkpoint, got stage " + ckpt.stage);
  }
  if (ckpt.dose != std::string(1, dose)) {
    throw ConfigError("stage2: checkpoint dose " + ckpt.dose + " does not match " +
                      std::string(1, dose));
  }
  if (ckpt.d != dims.d || ckpt.t_blocks != dims.t_blocks || ckpt.h != dims.h ||
      ckpt.p != dims.p || ckpt.slice != dims.slice) {
    throw ConfigError("stage2: checkpoint model dims do not match the config");
  }
}

/// Assembles the Stage-II model; pretrained encoders initialize both packs
/// for every variant except the cold baseline.
template <typename T>
Stage2Model<T> build_stage2_model(const TrainConfig& cfg, Variant variant,
                                  const Checkpoint* ckpt_l, const Checkpoint* ckpt_s) {
  validate_train_config(cfg);
  Stage2Model<T> model;
  model.init(cfg.dims, variant, mix_seed(cfg.seed, 0x57A6E2u));
  if (variant != Variant::baseline) {
    if (!ckpt_l || !ckpt_s) {
      throw ConfigError("stage2: variant " + std::string(variant_name(variant)) +
                        " requires both stage-I checkpoints");
    }
    check_stage1_checkpoint(*ckpt_l, cfg.dims, 'L');
    check_stage1_checkpoint(*ckpt_s, cfg.dims, 'S');
    ParamRegistry<T> reg;
    model.collect(reg);
    import_prefixed(*ckpt_l, "enc_L.", reg);
    import_prefixed(*ckpt_s, "enc_S.", reg);
  }
  return model;
}

/// Trains Stage II in place; returns CSV log lines
/// `step,align,transfer,rec,total` (per-step batch losses before update).
template <typename T>
std::vector<std::string> train_stage2(Stage2Model<T>& model,
                                      const std::vector<std::pair<Mat<T>, Mat<T>>>& pairs,
                                      const TrainConfig& cfg,
                                      std::int64_t* steps_done = nullptr) {
  if (pairs.empty()) throw ConfigError("stage2: empty paired dataset");
  validate_train_config(cfg);
  ParamRegistry<T> reg;
  model.collect(reg);
  Adam<T> adam;
  std::vector<std::string> log;
  log.push_back("step,align,transfer,rec,total");

  const int steps_per_epoch =
      static_cast<int>((pairs.size() + cfg.batch_size - 1) / cfg.batch_size);
  std::int64_t budget = static_cast<std::int64_t>(cfg.stage2_epochs) * steps_per_epoch;
  if (cfg.stage2_steps > 0) budget = cfg.stage2_steps;

  std::int64_t step = 0;
  for (int epoch = 0; step < budget; ++epoch) {
    std::vector<int> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng(mix_seed(cfg.seed, 0x2E90C0 + epoch));
    shuffle_rng.shuffle(order);
    for (std::size_t pos = 0; pos < order.size() && step < budget;
         pos += cfg.batch_size, ++step) {
      const std::size_t take =
          std::min<std::size_t>(cfg.batch_size, pairs.size() - pos);
      std::vector<std::pair<Mat<T>, Mat<T>>> batch;
      batch.reserve(take);
      for (std::size_t b = 0; b < take; ++b) batch.push_back(pairs[order[pos + b]]);
      reg.zero_grads();
      Stage2Cache<T> cache;
      const LossReport r =
          model.forward(batch, cfg.weights, /*train=*/true, /*update_running=*/true, cache);
      model.backward(cache, cfg.weights);
      adam.step(reg, cfg.lr);
      log.push_back(std::to_string(step) + "," + csv_num(r.align) + "," +
                    csv_num(r.transfer) + "," + csv_num(r.rec) + "," + csv_num(r.total));
    }
  }
  if (steps_done) *steps_done = step;
  return log;
}

template <typename T>
Checkpoint stage2_checkpoint(Stage2Model<T>& model, const TrainConfig& cfg,
                             std::int64_t steps) {
  ParamRegistry<T> reg;
  model.collect(reg);
  Checkpoint ckpt;
  ckpt.stage = "II";
  ckpt.dose = "-";
  ckpt.variant = variant_name(model.variant);
  ckpt.config_hash = cfg.config_hash;
  ckpt.steps = steps;
  ckpt.d = cfg.dims.d;
  ckpt.t_blocks = cfg.dims.t_blocks;
  ckpt.h = cfg.dims.h;
  ckpt.p = cfg.dims.p;
  ckpt.slice = cfg.dims.slice;
  export_params(reg, ckpt);
  return ckpt;
}

struct Stage2Result {
  Checkpoint ckpt;
  std::vector<std::string> log;
};

/// Paired fine-tuning of the full model from two Stage-I checkpoints.
template <typename T>
Stage2Result finetune_stage2(const std::vector<std::pair<Mat<T>, Mat<T>>>& pairs,
                             const Checkpoint& ckpt_l, const Checkpoint& ckpt_s,
                             const TrainConfig& cfg, Variant variant = Variant::full) {
  Stage2Model<T> model = build_stage2_model<T>(cfg, variant, &ckpt_l, &ckpt_s);
  std::int64_t steps = 0;
  Stage2Result res;
  res.log = train_stage2(model, pairs, cfg, &steps);
  res.ckpt = stage2_checkpoint(model, cfg, steps);
  return res;
}

// ---------------------------------------------------------------------------
// Inference

/// Rebuilds the Stage-II model named by the checkpoint and runs the master
/// branch slice by slice in eval mode.
inline ImageVolume infer(const ImageVolume& lpet, const Checkpoint& ckpt) {
  if (ckpt.stage != "II") {
    throw ConfigError("infer: needs a stage-II checkpoint, got stage " + ckpt.stage);
  }
  validate_volume(lpet);
  if (lpet.height != ckpt.slice || lpet.width != ckpt.slice) {
    throw ConfigError("infer: volume slice size does not match the checkpoint");
  }
  ModelDims dims;
  dims.d = ckpt.d;
  dims.t_blocks = ckpt.t_blocks;
  dims.h = ckpt.h;
  dims.p = ckpt.p;
  dims.slice = ckpt.slice;
  Stage2Model<float> model;
  model.init(dims, variant_from_name(ckpt.variant), 0);
  ParamRegistry<float> reg;
  model.collect(reg);
  import_params(ckpt, reg);
  std::vector<Mat<float>> out;
  out.reserve(lpet.depth);
  for (int k = 0; k < lpet.depth; ++k) {
    out.push_back(model.infer_slice(volume_slice<float>(lpet, k)));
  }
  return restack(out);
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckEntry {
  std::string param;
  int row = 0, col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err_stage1 = 0.0;
  double max_rel_err_stage2 = 0.0;
  int checked_stage1 = 0;
  int checked_stage2 = 0;
  std::vector<GradCheckEntry> worst;

  double max_rel_err() const {
    return std::max(max_rel_err_stage1, max_rel_err_stage2);
  }
};

inline double rel_err(double a, double n) {
  const double denom = std::max({std::abs(a), std::abs(n), 1e-8});
  return std::abs(a - n) / denom;
}

/// Central finite differences against analytic gradients on a tiny model
/// (slice 16, P=8 -> N=4 tokens, d=8, T=1, h=2), one sampled scalar per
/// learnable tensor, both stages. fd_step defaults to the 64-bit value.
template <typename T>
GradCheckReport gradient_check(std::uint64_t seed, double fd_step = 1e-4) {
  TrainConfig cfg;
  cfg.dims.d = 8;
  cfg.dims.t_blocks = 1;
  cfg.dims.h = 2;
  cfg.dims.p = 8;
  cfg.dims.slice = 16;
  cfg.dims.keep_l = 0.5;
  cfg.dims.keep_s = 0.75;
  cfg.seed = seed;

  Rng data_rng(mix_seed(seed, 0xDA7Au));
  auto random_slice = [&]() {
    Mat<T> s(cfg.dims.slice, cfg.dims.slice);
    for (int i = 0; i < cfg.dims.slice; ++i)
      for (int j = 0; j < cfg.dims.slice; ++j)
        s(i, j) = static_cast<T>(data_rng.uniform01());
    return s;
  };

  GradCheckReport report;
  auto record = [&](const std::string& name, int r, int c, double a, double n,
                    double& max_err, int& count) {
    const double e = rel_err(a, n);
    ++count;
    if (e > max_err) max_err = e;
    GradCheckEntry entry{name, r, c, a, n, e};
    report.worst.push_back(entry);
  };

  // --- Stage I ---
  {
    Dsmae<T> model = build_stage1_model<T>(cfg, 'L');
    std::vector<Mat<T>> slices = {random_slice(), random_slice()};
    auto loss_fn = [&]() {
      double acc = 0.0;
      for (std::size_t i = 0; i < slices.size(); ++i) {
        MaeCache<T> cache;
        Mat<T> recon = model.mae_forward(slices[i], mask_seed(seed, i), cache);
        acc += double(stage1_loss(recon, slices[i]));
      }
      return acc / double(slices.size());
    };
    ParamRegistry<T> reg;
    model.collect("", reg);
    reg.zero_grads();
    for (std::size_t i = 0; i < slices.size(); ++i) {
      MaeCache<T> cache;
      Mat<T> recon = model.mae_forward(slices[i], mask_seed(seed, i), cache);
      Mat<T> drecon = stage1_loss_backward(recon, slices[i]) / static_cast<T>(slices.size());
      model.mae_backward(cache, drecon);
    }
    Rng pick(mix_seed(seed, 0x91Cu));
    for (const auto& e : reg.entries()) {
      if (!e.learnable()) continue;
      const int r = static_cast<int>(pick.below(e.value->rows()));
      const int c = static_cast<int>(pick.below(e.value->cols()));
      const T saved = (*e.value)(r, c);
      (*e.value)(r, c) = saved + static_cast<T>(fd_step);
      const double lp = loss_fn();
      (*e.value)(r, c) = saved - static_cast<T>(fd_step);
      const double lm = loss_fn();
      (*e.value)(r, c) = saved;
      const double numeric = (lp - lm) / (2.0 * fd_step);
      record(e.name, r, c, double((*e.grad)(r, c)), numeric,
             report.max_rel_err_stage1, report.checked_stage1);
    }
  }

  // --- Stage II (full variant) ---
  {
    Stage2Model<T> model;
    model.init(cfg.dims, Variant::full, mix_seed(seed, 0x57A6E2u));
    std::vector<std::pair<Mat<T>, Mat<T>>> batch = {
        {random_slice(), random_slice()}, {random_slice(), random_slice()}};

    ParamRegistry<T> reg;
    model.collect(reg);
    reg.zero_grads();
    Stage2Cache<T> cache;
    model.forward(batch, cfg.weights, /*train=*/true, /*update_running=*/false, cache);
    model.backward(cache, cfg.weights);
    // Detached transfer targets stay frozen during the finite-difference
    // re-evaluations, matching the stop-gradient semantics.
    const std::vector<Mat<T>> targets = model.transfer_targets(cache);
    auto loss_fn = [&]() {
      Stage2Cache<T> c2;
      const LossReport r = model.forward(batch, cfg.weights, /*train=*/true,
                                         /*update_running=*/false, c2, &targets);
      return r.total;
    };
    Rng pick(mix_seed(seed, 0x92Cu));
    for (const auto& e : reg.entries()) {
      if (!e.learnable()) continue;
      const int r = static_cast<int>(pick.below(e.value->rows()));
      const int c = static_cast<int>(pick.below(e.value->cols()));
      const T saved = (*e.value)(r, c);
      (*e.value)(r, c) = saved + static_cast<T>(fd_step);
      const double lp = loss_fn();
      (*e.value)(r, c) = saved - static_cast<T>(fd_step);
      const double lm = loss_fn();
      (*e.value)(r, c) = saved;
      const double numeric = (lp - lm) / (2.0 * fd_step);
      record(e.name, r, c, double((*e.grad)(r, c)), numeric,
             report.max_rel_err_stage2, report.checked_stage2);
    }
  }

  std::sort(report.worst.begin(), report.worst.end(),
            [](const GradCheckEntry& a, const GradCheckEntry& b) {
              return a.rel_err > b.rel_err;
            });
  if (report.worst.size() > 10) report.worst.resize(10);
  return report;
}

}  // namespace s3pet
