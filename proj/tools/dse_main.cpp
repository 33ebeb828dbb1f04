// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// dse: two-channel directional speech enhancement toolkit.
//
//   simulate   synthesize reverberant two-channel datasets
//   train      fit a mask-estimation model on a dataset
//   enhance    run a trained model over a stereo WAV
//   eval       SI-SNRi sweeps over interference angle, target angle or width
//   gradcheck  finite-difference audit of every differentiable layer
//   beamform   plain DAS/GSC beamforming of a stereo WAV
//
// Exit codes: 0 success, 1 runtime/IO failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "dse/beamform.hpp"
#include "dse/dataset.hpp"
#include "dse/gradcheck.hpp"
#include "dse/model.hpp"
#include "dse/train.hpp"
#include "dse/wav.hpp"

namespace {

using namespace dse;

FeatureLayout layout_from_name(const std::string& name) {
  if (name == "cdunet") return FeatureLayout::directional;
  if (name == "unet_plain") return FeatureLayout::plain;
  if (name == "unet_ipd") return FeatureLayout::plain_ipd;
  if (name == "unet_bf") return FeatureLayout::plain_beam;
  throw ConfigError("unknown model variant '" + name + "'");
}

FeatureLayout layout_from_weights(const WeightMap<float>& w) {
  const int in = w.at("enc0.w").dim(1);
  switch (in) {
    case 10: return FeatureLayout::directional;
    case 4: return FeatureLayout::plain;
    case 5: return FeatureLayout::plain_ipd;
    case 6: return FeatureLayout::plain_beam;
  }
  throw Error("weights declare unsupported input width " + std::to_string(in));
}

std::unique_ptr<SpeechPool> make_pool(const std::string& speech_dir) {
  if (speech_dir.empty()) return std::make_unique<SyntheticSpeechPool>();
  return std::make_unique<WavDirPool>(speech_dir);
}

int cmd_simulate(const std::string& kind, int count, std::uint64_t seed, const std::string& out,
                 const std::string& speech_dir, double duration) {
  DatasetOptions opt;
  opt.clip_seconds = duration;
  const auto pool = make_pool(speech_dir);
  const auto manifest = write_dataset(out, dataset_kind_from(kind), count, seed, *pool, opt);
  std::printf("wrote %d examples, manifest %s\n", count, manifest.c_str());
  return 0;
}

int cmd_train(const std::string& data_dir, int synth_count, const std::string& kind, int steps,
              int batch, double lr, std::uint64_t seed, const std::string& variant, double width,
              const std::string& out, const std::string& log_path, int holdout, int eval_every,
              const std::string& speech_dir) {
  TrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = batch;
  cfg.lr = lr;
  cfg.seed = seed;
  cfg.kind = dataset_kind_from(kind);
  cfg.variant = layout_from_name(variant);
  cfg.width_deg = width;
  cfg.eval_every = eval_every;

  const auto pool = make_pool(speech_dir);
  std::vector<MixtureExample> data;
  if (!data_dir.empty()) {
    data = load_dataset(data_dir);
  } else {
    std::fprintf(stderr, "synthesizing %d %s scenes...\n", synth_count, kind.c_str());
    data = build_dataset(cfg.kind, synth_count, seed, *pool);
  }
  std::vector<MixtureExample> held;
  if (holdout > 0) held = build_dataset(cfg.kind, holdout, mix_seed(seed, 0xd15501ULL), *pool);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::trunc);
    if (!log) throw IoError("train: cannot open log '" + log_path + "'");
  }
  auto on_record = [&](const MetricsRecord& r) {
    nlohmann::json j{{"step", r.step}, {"loss", r.loss}};
    if (r.si_snri) j["si_snri"] = *r.si_snri;
    if (log.is_open()) log << j.dump() << "\n";
    std::fprintf(stderr, "step %d loss %.4f%s\n", r.step, r.loss,
                 r.si_snri ? (" si_snri " + std::to_string(*r.si_snri)).c_str() : "");
  };

  const TrainResult result = train(cfg, data, held, on_record);
  save_weights(result.weights, out);
  std::printf("saved %lld parameters to %s (%d skipped steps)\n",
              static_cast<long long>(param_count(result.weights)), out.c_str(),
              result.skipped_steps);
  return 0;
}

int cmd_enhance(const std::string& in, double angle, double width, const std::string& weights_path,
                const std::string& out) {
  const auto audio = read_wav(in);
  if (audio.channels.size() != 2)
    throw Error("enhance: '" + in + "' has " + std::to_string(audio.channels.size()) +
                " channel(s); a 2-channel recording is required");
  const auto w = load_weights(weights_path);
  ModelConfig cfg;
  cfg.features = layout_from_weights(w);
  validate_weights(w, cfg);

  EnhancementRequest req{audio, angle, width};
  const auto t0 = std::chrono::steady_clock::now();
  const Waveform enhanced = enhance<float>(req, cfg, w);
  const auto t1 = std::chrono::steady_clock::now();
  write_wav(out, enhanced, WavFormat::float32);

  const double wall = std::chrono::duration<double>(t1 - t0).count();
  std::printf("wrote %s (%.2f s audio, %.2f s wall, real-time factor %.3f)\n", out.c_str(),
              enhanced.duration(), wall, wall / enhanced.duration());
  return 0;
}

int cmd_eval(const std::string& weights_path, const std::string& sweep, int scenes,
             std::uint64_t seed, const std::string& out, std::vector<double> snrs, double width,
             const std::string& speech_dir, bool identity_mask) {
  const auto w = load_weights(weights_path);
  ModelConfig cfg;
  cfg.features = layout_from_weights(w);
  validate_weights(w, cfg);
  const auto pool = make_pool(speech_dir);
  const auto override_mode = identity_mask ? MaskOverride::ones : MaskOverride::none;

  SweepTable table;
  if (sweep == "interference") {
    table = interference_sweep(w, cfg, *pool, scenes, seed, width, snrs, override_mode);
  } else if (sweep == "target") {
    table = target_sweep(w, cfg, *pool, scenes, seed, width);
  } else if (sweep == "width") {
    table = width_sweep(w, cfg, *pool, scenes, seed);
  } else {
    throw ConfigError("eval: sweep must be interference, target or width");
  }

  const std::string csv = table.to_csv();
  if (out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw IoError("eval: cannot open '" + out + "'");
    f << csv;
    std::printf("wrote %s\n", out.c_str());
  }
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto entries = gradient_audit(seed);
  bool ok = true;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_error < 1e-4;
    ok = ok && pass;
    std::printf("%-20s max rel error %.3e  %s\n", e.layer.c_str(), e.max_rel_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int cmd_beamform(const std::string& in, const std::string& method, double angle,
                 const std::string& out, double mu) {
  const auto audio = read_wav(in);
  if (audio.channels.size() != 2) throw Error("beamform: need a 2-channel recording");
  const StftConfig cfg;
  ArrayGeometry geometry;
  const auto sv = steering_vector(angle, geometry, cfg, audio.sample_rate());
  const auto s1 = stft(audio.channels[0], cfg);
  const auto s2 = stft(audio.channels[1], cfg);
  ComplexSpectrogram result;
  if (method == "das") {
    result = das_beamform(s1, s2, sv);
  } else if (method == "gsc") {
    result = gsc_beamform(s1, s2, sv, mu);
  } else {
    throw ConfigError("beamform: method must be das or gsc");
  }
  write_wav(out, istft(result), WavFormat::float32);
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dse: two-channel directional speech enhancement"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value configuration file; flags win over file entries");

  // simulate
  auto* sim = app.add_subcommand("simulate", "synthesize a reverberant two-channel dataset");
  std::string sim_kind, sim_out, sim_speech;
  int sim_count = 100;
  std::uint64_t sim_seed = 0;
  double sim_duration = 2.0;
  sim->add_option("--kind", sim_kind, "dataset kind")->required()->check(
      CLI::IsMember({"fixed", "variable"}));
  sim->add_option("--count", sim_count, "number of examples")->required()->check(
      CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "dataset seed");
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--speech", sim_speech, "directory of mono WAV source material");
  sim->add_option("--duration", sim_duration, "clip length, seconds")->check(CLI::PositiveNumber);

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_kind = "fixed", tr_variant = "cdunet", tr_out = "weights.bin", tr_log,
              tr_speech;
  int tr_steps = 400, tr_batch = 2, tr_synth = 200, tr_holdout = 0, tr_eval_every = 0;
  double tr_lr = 1e-3, tr_width = 7.0;
  std::uint64_t tr_seed = 1;
  tr->add_option("--data", tr_data, "dataset directory (from simulate)");
  tr->add_option("--synth-count", tr_synth, "scenes to synthesize when --data is absent");
  tr->add_option("--kind", tr_kind, "dataset kind for synthesis")
      ->check(CLI::IsMember({"fixed", "variable"}));
  tr->add_option("--steps", tr_steps, "optimization steps")->check(CLI::NonNegativeNumber);
  tr->add_option("--batch", tr_batch, "batch size")->check(CLI::PositiveNumber);
  tr->add_option("--lr", tr_lr, "learning rate")->check(CLI::PositiveNumber);
  tr->add_option("--seed", tr_seed, "training seed");
  tr->add_option("--variant", tr_variant, "model variant")
      ->check(CLI::IsMember({"cdunet", "unet_plain", "unet_ipd", "unet_bf"}));
  tr->add_option("--width", tr_width, "steering width, degrees")->check(CLI::NonNegativeNumber);
  tr->add_option("--out", tr_out, "weights file to write");
  tr->add_option("--log", tr_log, "metrics log (one JSON object per line)");
  tr->add_option("--holdout", tr_holdout, "held-out scenes for SI-SNRi reporting");
  tr->add_option("--eval-every", tr_eval_every, "steps between held-out evaluations");
  tr->add_option("--speech", tr_speech, "directory of mono WAV source material");

  // enhance
  auto* en = app.add_subcommand("enhance", "enhance a stereo recording");
  std::string en_in, en_weights, en_out = "enhanced.wav";
  double en_angle = 90.0, en_width = 7.0;  // 7 degrees is the best-performing width
  en->add_option("--in", en_in, "stereo input WAV")->required();
  en->add_option("--angle", en_angle, "target azimuth, degrees")
      ->required()
      ->check(CLI::Range(0.0, 180.0));
  en->add_option("--width", en_width, "enhancement width, degrees")
      ->check(CLI::NonNegativeNumber);
  en->add_option("--weights", en_weights, "trained weights")->required();
  en->add_option("--out", en_out, "output WAV");

  // eval
  auto* ev = app.add_subcommand("eval", "SI-SNRi sweeps");
  std::string ev_weights, ev_sweep = "interference", ev_out, ev_speech;
  int ev_scenes = 10;
  std::uint64_t ev_seed = 77;
  double ev_width = 7.0;
  std::vector<double> ev_snrs{0.0, 5.0};
  bool ev_identity = false;
  ev->add_option("--weights", ev_weights, "trained weights")->required();
  ev->add_option("--sweep", ev_sweep, "sweep axis")
      ->check(CLI::IsMember({"interference", "target", "width"}));
  ev->add_option("--scenes", ev_scenes, "scenes per cell")->check(CLI::PositiveNumber);
  ev->add_option("--seed", ev_seed, "evaluation seed");
  ev->add_option("--out", ev_out, "CSV output path (stdout when omitted)");
  ev->add_option("--snr", ev_snrs, "SNR rows for the interference sweep");
  ev->add_option("--width", ev_width, "steering width, degrees");
  ev->add_option("--speech", ev_speech, "directory of mono WAV source material");
  ev->add_flag("--identity-mask", ev_identity, "bypass the network with a unit mask");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every layer");
  std::uint64_t gc_seed = 2024;
  gc->add_option("--seed", gc_seed, "audit seed");

  // beamform
  auto* bf = app.add_subcommand("beamform", "DAS or GSC beamforming");
  std::string bf_in, bf_method = "das", bf_out = "beamformed.wav";
  double bf_angle = 90.0, bf_mu = 0.1;
  bf->add_option("--in", bf_in, "stereo input WAV")->required();
  bf->add_option("--method", bf_method, "beamformer")->check(CLI::IsMember({"das", "gsc"}));
  bf->add_option("--angle", bf_angle, "steering azimuth, degrees")
      ->required()
      ->check(CLI::Range(0.0, 180.0));
  bf->add_option("--out", bf_out, "output WAV");
  bf->add_option("--mu", bf_mu, "GSC adaptation step size")->check(CLI::Range(0.0, 1.0));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(sim_kind, sim_count, sim_seed, sim_out, sim_speech, sim_duration);
    if (tr->parsed())
      return cmd_train(tr_data, tr_synth, tr_kind, tr_steps, tr_batch, tr_lr, tr_seed, tr_variant,
                       tr_width, tr_out, tr_log, tr_holdout, tr_eval_every, tr_speech);
    if (en->parsed()) return cmd_enhance(en_in, en_angle, en_width, en_weights, en_out);
    if (ev->parsed())
      return cmd_eval(ev_weights, ev_sweep, ev_scenes, ev_seed, ev_out, ev_snrs, ev_width,
                      ev_speech, ev_identity);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
    if (bf->parsed()) return cmd_beamform(bf_in, bf_method, bf_angle, bf_out, bf_mu);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
