// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Desk-scale optimization: Adam with global-norm clipping over the weight
// map, a single-threaded training loop on synthesized scenes, and the
// evaluation sweeps that produce the results tables.

#ifndef DSE_TRAIN_HPP
#define DSE_TRAIN_HPP

#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dse/dataset.hpp"
#include "dse/loss.hpp"
#include "dse/model.hpp"

namespace dse {

struct TrainConfig {
  int steps = 400;
  int batch_size = 2;
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  DatasetKind kind = DatasetKind::fixed;
  FeatureLayout variant = FeatureLayout::directional;
  double width_deg = 7.0;
  int log_every = 20;
  int eval_every = 0;  // 0 = only at the end
  LossConfig loss;

  void validate() const {
    if (steps < 0 || batch_size <= 0 || lr <= 0) throw ConfigError("TrainConfig: bad steps/batch/lr");
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::int64_t t = 0;
  int skipped = 0;  // steps dropped because a gradient went non-finite

  static AdamState init(const WeightMap<float>& w) {
    AdamState s;
    for (const auto& [name, tensor] : w.entries()) {
      s.m.emplace_back(tensor.numel(), 0.0f);
      s.v.emplace_back(tensor.numel(), 0.0f);
    }
    return s;
  }
};

// One Adam update from the gradients currently stored in the weight map.
// Gradients are globally norm-clipped first; a non-finite gradient anywhere
// skips the step (counted in state.skipped).
inline void adam_step(WeightMap<float>& w, AdamState& state, const TrainConfig& cfg) {
  double norm_sq = 0.0;
  bool finite = true;
  for (auto& [name, t] : w.entries())
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double g = t.grad()[i];
      if (!std::isfinite(g)) finite = false;
      norm_sq += g * g;
    }
  if (!finite || !std::isfinite(norm_sq)) {
    ++state.skipped;
    return;
  }
  const double norm = std::sqrt(norm_sq);
  const double clip = cfg.clip_norm > 0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  std::size_t idx = 0;
  for (auto& [name, t] : w.entries()) {
    float* m = state.m[idx].data();
    float* v = state.v[idx].data();
    ++idx;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double g = t.grad()[i] * clip;
      m[i] = float(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g);
      v[i] = float(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      t.data()[i] -= float(cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

inline void zero_gradients(WeightMap<float>& w) {
  for (auto& [name, t] : w.entries()) t.zero_grad();
}

// ---------------------------------------------------------------------------
// Batched forward to the loss
// ---------------------------------------------------------------------------

namespace detail {

struct PreparedExample {
  ad::Tensor<float> features;   // [1, C, K, T]
  ad::Tensor<float> mix_spec;   // [2, K, T] near-mic STFT, constant
  ad::Tensor<float> reference;  // [N]
  int num_samples = 0;
  int near = 0;
};

inline PreparedExample prepare_example(const MixtureExample& ex, const ModelConfig& cfg,
                                       double width_deg, const StftConfig& stft_cfg) {
  PreparedExample p;
  const double target = ex.metadata.target.azimuth;
  p.near = near_mic_select(target);
  p.num_samples = static_cast<int>(ex.mixture.size());
  const FeatureBlock fb =
      build_features(ex.mixture, target, width_deg, cfg.features, stft_cfg, ex.metadata.array);
  p.features = feature_tensor<float>(fb);

  const auto spec = stft(ex.mixture.channels[p.near], stft_cfg);
  p.mix_spec = ad::Tensor<float>::zeros({2, spec.num_bins, spec.num_frames});
  for (int k = 0; k < spec.num_bins; ++k)
    for (int t = 0; t < spec.num_frames; ++t) {
      p.mix_spec.data()[std::size_t(k) * spec.num_frames + t] = float(spec.at(k, t).real());
      p.mix_spec.data()[(std::size_t(spec.num_bins) + k) * spec.num_frames + t] =
          float(spec.at(k, t).imag());
    }
  p.reference = ad::Tensor<float>::zeros({p.num_samples});
  for (int i = 0; i < p.num_samples; ++i)
    p.reference.data()[i] = float(ex.target_reference.samples[i]);
  return p;
}

// Masked resynthesis of one example given the batch mask row.
inline ad::Tensor<float> masked_waveform(ad::Tape<float>* tp, const ad::Tensor<float>& mask_row,
                                         const PreparedExample& p, const StftConfig& stft_cfg) {
  using namespace ad;
  const int K = p.mix_spec.dim(1), F = p.mix_spec.dim(2);
  auto m2d = reshape(tp, mask_row, {K, F});
  auto re = mul(tp, m2d, reshape(tp, slice(tp, p.mix_spec, 0, 0, 1), {K, F}));
  auto im = mul(tp, m2d, reshape(tp, slice(tp, p.mix_spec, 0, 1, 1), {K, F}));
  auto spec = concat(tp, {reshape(tp, re, {1, K, F}), reshape(tp, im, {1, K, F})}, 0);
  return istft_op(tp, spec, stft_cfg, p.num_samples);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

enum class MaskOverride { none, ones, zeros };

// Mean SI-SNRi over examples. The identity override bypasses the network and
// applies a unit mask, which should score 0 dB by construction.
inline double evaluate_si_snri(const WeightMap<float>& w, const ModelConfig& cfg,
                               const std::vector<MixtureExample>& examples, double width_deg,
                               const StftConfig& stft_cfg = StftConfig(),
                               MaskOverride override = MaskOverride::none) {
  if (examples.empty()) throw ConfigError("evaluate: no examples");
  double acc = 0.0;
  for (const auto& ex : examples) {
    const double target = ex.metadata.target.azimuth;
    const int near = near_mic_select(target);
    Waveform est;
    if (override == MaskOverride::none) {
      EnhancementRequest req{ex.mixture, target, width_deg};
      est = enhance<float>(req, cfg, w, stft_cfg, /*finite_checks=*/false);
    } else {
      auto spec = stft(ex.mixture.channels[near], stft_cfg);
      if (override == MaskOverride::zeros)
        for (auto& z : spec.data) z = 0.0;
      est = istft(spec);
    }
    acc += si_snri(ex.target_reference, est, ex.mixture.channels[near]);
  }
  return acc / double(examples.size());
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRecord {
  int step = 0;
  double loss = 0.0;
  std::optional<double> si_snri;
};

struct TrainResult {
  WeightMap<float> weights;
  std::vector<MetricsRecord> log;
  int skipped_steps = 0;
};

// Deterministic given cfg.seed and the datasets. Aborts when the loss goes
// non-finite twice in a row.
inline TrainResult train(const TrainConfig& cfg, const std::vector<MixtureExample>& dataset,
                         const std::vector<MixtureExample>& holdout = {},
                         const std::function<void(const MetricsRecord&)>& on_record = nullptr) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  const StftConfig stft_cfg;
  ModelConfig mcfg;
  mcfg.features = cfg.variant;

  TrainResult result;
  result.weights = init_weights<float>(mcfg, cfg.seed);
  AdamState adam = AdamState::init(result.weights);
  Rng rng(mix_seed(cfg.seed, 0x7472ULL));

  // Features and reference spectra are recomputed per visit; only the raw
  // examples stay resident.
  std::vector<detail::PreparedExample> cache(dataset.size());
  std::vector<bool> cached(dataset.size(), false);
  auto prepared = [&](std::size_t i) -> const detail::PreparedExample& {
    if (!cached[i]) {
      cache[i] = detail::prepare_example(dataset[i], mcfg, cfg.width_deg, stft_cfg);
      cached[i] = true;
    }
    return cache[i];
  };

  auto emit = [&](MetricsRecord rec) {
    if (on_record) on_record(rec);
    result.log.push_back(std::move(rec));
  };

  int consecutive_bad = 0;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<std::size_t> batch(cfg.batch_size);
    for (auto& b : batch) b = rng() % dataset.size();

    ad::Tape<float> tape;
    std::vector<ad::Tensor<float>> feats;
    feats.reserve(batch.size());
    for (auto b : batch) feats.push_back(prepared(b).features);
    ad::Tensor<float> x = feats.size() == 1 ? feats[0] : ad::concat(&tape, feats, 0);
    ad::Tensor<float> mask = mask_network(&tape, x, mcfg, result.weights);

    ad::Tensor<float> loss = ad::Tensor<float>::scalar(0.0f);
    for (std::size_t bi = 0; bi < batch.size(); ++bi) {
      const auto& p = prepared(batch[bi]);
      auto row = ad::slice(&tape, mask, 0, int(bi), 1);
      auto est = detail::masked_waveform(&tape, row, p, stft_cfg);
      auto term = combined_loss_t(&tape, est, p.reference, cfg.loss);
      loss = bi == 0 ? term : ad::add(&tape, loss, term);
    }
    loss = ad::scale(&tape, loss, 1.0f / float(batch.size()));

    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      if (++consecutive_bad >= 2)
        throw Error("train: loss diverged (non-finite twice in a row at step " +
                    std::to_string(step) + ")");
    } else {
      consecutive_bad = 0;
    }

    zero_gradients(result.weights);
    tape.backward(loss);
    adam_step(result.weights, adam, cfg);

    const bool log_now = cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps);
    const bool eval_now =
        !holdout.empty() && cfg.eval_every > 0 && step > 0 && step % cfg.eval_every == 0;
    if (log_now || eval_now) {
      MetricsRecord rec;
      rec.step = step;
      rec.loss = loss_value;
      if (eval_now)
        rec.si_snri = evaluate_si_snri(result.weights, mcfg, holdout, cfg.width_deg, stft_cfg);
      emit(rec);
    }
  }

  if (!holdout.empty()) {
    MetricsRecord rec;
    rec.step = cfg.steps;
    rec.loss = result.log.empty() ? 0.0 : result.log.back().loss;
    rec.si_snri = evaluate_si_snri(result.weights, mcfg, holdout, cfg.width_deg, stft_cfg);
    emit(rec);
  }
  result.skipped_steps = adam.skipped;
  return result;
}

// ---------------------------------------------------------------------------
// Protocol sweeps (the machine-readable analogues of the results tables)
// ---------------------------------------------------------------------------

struct SweepTable {
  std::vector<double> columns;             // angle (or width) per column
  std::vector<std::string> row_labels;     // e.g. "snr=0"
  std::vector<std::vector<double>> cells;  // [row][column] mean SI-SNRi

  std::string to_csv() const {
    std::string out = "label";
    char buf[64];
    for (double c : columns) {
      std::snprintf(buf, sizeof buf, ",%g", c);
      out += buf;
    }
    out += ",avg\n";
    for (std::size_t r = 0; r < cells.size(); ++r) {
      out += row_labels[r];
      double sum = 0.0;
      for (double v : cells[r]) {
        std::snprintf(buf, sizeof buf, ",%.4f", v);
        out += buf;
        sum += v;
      }
      std::snprintf(buf, sizeof buf, ",%.4f\n", sum / double(cells[r].size()));
      out += buf;
    }
    return out;
  }
};

namespace detail {

// Evaluation scene at a pinned target/interferer geometry; rooms and
// placements otherwise follow the dataset distribution.
inline MixtureExample eval_example(double target_deg, double interferer_deg, double snr_db,
                                   std::uint64_t seed, std::uint64_t index,
                                   const SpeechPool& pool, const DatasetOptions& opt) {
  SceneSpec scene = sample_scene(DatasetKind::fixed, seed, index, opt);
  Rng rng(mix_seed(seed, index ^ 0x5045454bULL));
  scene.target = sample_placement(rng, scene.room, scene.array, target_deg);
  scene.interferer = sample_placement(rng, scene.room, scene.array, interferer_deg);
  scene.snr_db = snr_db;
  const Waveform target = pool.draw(rng, opt.clip_seconds, opt.sample_rate);
  const Waveform interferer = pool.draw(rng, opt.clip_seconds, opt.sample_rate);
  SynthesisOptions synth = opt.synthesis;
  synth.rir.sample_rate = opt.sample_rate;
  MixtureExample ex = synthesize_example(scene, target, interferer, synth);
  trim_example(ex, std::size_t(opt.clip_seconds * opt.sample_rate));
  return ex;
}

}  // namespace detail

// Interference-angle sweep at a fixed 90-degree target: 0..180 in 15-degree
// steps, one row per SNR.
inline SweepTable interference_sweep(const WeightMap<float>& w, const ModelConfig& cfg,
                                     const SpeechPool& pool, int scenes_per_cell,
                                     std::uint64_t seed, double width_deg = 7.0,
                                     std::vector<double> snrs = {0.0, 5.0},
                                     MaskOverride override = MaskOverride::none) {
  SweepTable table;
  for (int a = 0; a <= 180; a += 15) table.columns.push_back(a);
  DatasetOptions opt;
  std::uint64_t idx = 0;
  for (double snr : snrs) {
    std::vector<double> row;
    for (double angle : table.columns) {
      // The 90-degree cell is collinear with the target and expected to be
      // the hardest column; it stays in the table like every other cell.
      std::vector<MixtureExample> cell;
      for (int s = 0; s < scenes_per_cell; ++s)
        cell.push_back(detail::eval_example(90.0, angle, snr, seed, idx++, pool, opt));
      row.push_back(evaluate_si_snri(w, cfg, cell, width_deg, StftConfig(), override));
    }
    table.cells.push_back(std::move(row));
    table.row_labels.push_back("snr=" + std::to_string(int(snr)));
  }
  return table;
}

// Target-angle sweep with the interferer pinned 15 degrees away (the
// variable-target protocol).
inline SweepTable target_sweep(const WeightMap<float>& w, const ModelConfig& cfg,
                               const SpeechPool& pool, int scenes_per_cell, std::uint64_t seed,
                               double width_deg = 7.0,
                               std::vector<double> targets = {0.0, 30.0, 60.0, 90.0},
                               double snr = 0.0) {
  SweepTable table;
  table.columns = targets;
  DatasetOptions opt;
  std::uint64_t idx = 0;
  std::vector<double> row;
  for (double target : targets) {
    const double interferer = target < 15.0 ? target + 15.0 : target - 15.0;
    std::vector<MixtureExample> cell;
    for (int s = 0; s < scenes_per_cell; ++s)
      cell.push_back(detail::eval_example(target, interferer, snr, seed, idx++, pool, opt));
    row.push_back(evaluate_si_snri(w, cfg, cell, width_deg));
  }
  table.cells.push_back(std::move(row));
  table.row_labels.push_back("snr=" + std::to_string(int(snr)));
  return table;
}

// Width sweep at the fixed 90-degree target.
inline SweepTable width_sweep(const WeightMap<float>& w, const ModelConfig& cfg,
                              const SpeechPool& pool, int scenes_per_cell, std::uint64_t seed,
                              std::vector<double> widths = {3, 5, 7, 15, 20, 60},
                              double snr = 0.0) {
  SweepTable table;
  table.columns = widths;
  DatasetOptions opt;
  std::vector<double> row;
  for (double width : widths) {
    std::uint64_t idx = 0;  // same scenes for every width
    std::vector<MixtureExample> cell;
    for (int s = 0; s < scenes_per_cell; ++s) {
      const double angle = 15.0 * (1 + int(idx) % 5);  // interferers 15..75 deg off
      cell.push_back(detail::eval_example(90.0, angle, snr, seed, idx++, pool, opt));
    }
    row.push_back(evaluate_si_snri(w, cfg, cell, width));
  }
  table.cells.push_back(std::move(row));
  table.row_labels.push_back("snr=" + std::to_string(int(snr)));
  return table;
}

}  // namespace dse

#endif  // DSE_TRAIN_HPP
