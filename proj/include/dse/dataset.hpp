// Copyright 2026 The dse authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// Scene sampling and dataset assembly. Every example derives its entire
// random stream from (dataset_seed, index), so examples can be produced in
// any order, or in parallel, without changing a single sample.

#ifndef DSE_DATASET_HPP
#define DSE_DATASET_HPP

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dse/room.hpp"
#include "dse/speech.hpp"
#include "dse/wav.hpp"

namespace dse {

enum class DatasetKind { fixed, variable };

inline const char* to_string(DatasetKind k) {
  return k == DatasetKind::fixed ? "fixed" : "variable";
}

inline DatasetKind dataset_kind_from(const std::string& s) {
  if (s == "fixed") return DatasetKind::fixed;
  if (s == "variable") return DatasetKind::variable;
  throw ConfigError("dataset kind must be 'fixed' or 'variable', got '" + s + "'");
}

struct DatasetOptions {
  double clip_seconds = 2.0;
  int sample_rate = 16000;
  double snr_lo = -5.0, snr_hi = 10.0;
  SynthesisOptions synthesis;
};

namespace detail {

// Longest source distance that stays clear of the walls along `azimuth`.
inline double max_source_distance(const RoomSpec& room, const ArrayGeometry& array,
                                  double azimuth_deg, double clearance = 0.15) {
  const Vec3 d = array.direction(azimuth_deg);
  double t = 1e9;
  if (d.x > 1e-12) t = std::min(t, (room.width - clearance - array.center.x) / d.x);
  if (d.x < -1e-12) t = std::min(t, (clearance - array.center.x) / d.x);
  if (d.y > 1e-12) t = std::min(t, (room.length - clearance - array.center.y) / d.y);
  if (d.y < -1e-12) t = std::min(t, (clearance - array.center.y) / d.y);
  return std::max(t, 0.0);
}

inline SourcePlacement sample_placement(Rng& rng, const RoomSpec& room,
                                        const ArrayGeometry& array, double azimuth_deg) {
  const double want = uniform(rng, 1.0, 2.5);
  const double height = uniform(rng, 1.2, 1.9);
  const double dmax = 0.9 * max_source_distance(room, array, azimuth_deg);
  const double dist = std::max(0.3, std::min(want, dmax));
  return SourcePlacement::at(array, azimuth_deg, dist, height);
}

}  // namespace detail

// Deterministic scene for (dataset_seed, index). Fixed kind: target uniform
// in [85, 95] with the interferer anywhere at >= 15 degrees separation;
// variable kind: target uniform in [0, 180] with the interferer exactly 15
// degrees away on a side that stays inside [0, 180].
inline SceneSpec sample_scene(DatasetKind kind, std::uint64_t dataset_seed, std::uint64_t index,
                              const DatasetOptions& opt = {}) {
  Rng rng(mix_seed(dataset_seed, index));
  SceneSpec scene;
  scene.seed = mix_seed(dataset_seed, index);
  scene.room = sample_room(rng());

  scene.array.center = {scene.room.width / 2.0 + uniform(rng, -0.5, 0.5),
                        scene.room.length / 2.0 + uniform(rng, -0.5, 0.5), 1.5};

  double target_deg = 0.0, interferer_deg = 0.0;
  if (kind == DatasetKind::fixed) {
    target_deg = uniform(rng, 85.0, 95.0);
    do {
      interferer_deg = uniform(rng, 0.0, 180.0);
    } while (std::abs(interferer_deg - target_deg) < 15.0);
  } else {
    target_deg = uniform(rng, 0.0, 180.0);
    bool plus = rng() % 2 == 0;
    if (target_deg < 15.0) plus = true;
    if (target_deg > 165.0) plus = false;
    interferer_deg = target_deg + (plus ? 15.0 : -15.0);
  }

  scene.target = detail::sample_placement(rng, scene.room, scene.array, target_deg);
  scene.interferer = detail::sample_placement(rng, scene.room, scene.array, interferer_deg);
  scene.snr_db = uniform(rng, opt.snr_lo, opt.snr_hi);
  return scene;
}

// Fixed-length clips: the convolution tails are cut at the nominal clip
// length so every example in a dataset shares one frame count.
inline void trim_example(MixtureExample& ex, std::size_t n) {
  for (auto& ch : ex.mixture.channels) ch.samples.resize(n, 0.0);
  ex.target_reference.samples.resize(n, 0.0);
}

inline MixtureExample build_example(DatasetKind kind, std::uint64_t dataset_seed,
                                    std::uint64_t index, const SpeechPool& pool,
                                    const DatasetOptions& opt = {}) {
  const SceneSpec scene = sample_scene(kind, dataset_seed, index, opt);
  Rng rng(mix_seed(dataset_seed, index ^ 0x5045454bULL));
  const Waveform target = pool.draw(rng, opt.clip_seconds, opt.sample_rate);
  const Waveform interferer = pool.draw(rng, opt.clip_seconds, opt.sample_rate);
  SynthesisOptions synth = opt.synthesis;
  synth.rir.sample_rate = opt.sample_rate;
  MixtureExample ex = synthesize_example(scene, target, interferer, synth);
  trim_example(ex, std::size_t(opt.clip_seconds * opt.sample_rate));
  return ex;
}

inline std::vector<MixtureExample> build_dataset(DatasetKind kind, int count,
                                                 std::uint64_t seed, const SpeechPool& pool,
                                                 const DatasetOptions& opt = {}) {
  if (count <= 0) throw ConfigError("build_dataset: count must be positive");
  std::vector<MixtureExample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(build_example(kind, seed, i, pool, opt));
  return out;
}

// ---------------------------------------------------------------------------
// On-disk layout: float32 WAVs plus one JSON object per line in
// manifest.jsonl.
// ---------------------------------------------------------------------------

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  return nlohmann::json{
      {"seed", s.seed},
      {"snr_db", s.snr_db},
      {"room",
       {{"width", s.room.width},
        {"length", s.room.length},
        {"height", s.room.height},
        {"t60", s.room.t60}}},
      {"array",
       {{"center", {s.array.center.x, s.array.center.y, s.array.center.z}},
        {"spacing", s.array.spacing}}},
      {"target",
       {{"azimuth", s.target.azimuth},
        {"distance", s.target.distance},
        {"height", s.target.height}}},
      {"interferer",
       {{"azimuth", s.interferer.azimuth},
        {"distance", s.interferer.distance},
        {"height", s.interferer.height}}}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.snr_db = j.at("snr_db").get<double>();
  const auto& r = j.at("room");
  s.room = {r.at("width"), r.at("length"), r.at("height"), r.at("t60")};
  const auto& a = j.at("array");
  s.array.center = {a.at("center")[0], a.at("center")[1], a.at("center")[2]};
  s.array.spacing = a.at("spacing");
  const auto& t = j.at("target");
  s.target = SourcePlacement::at(s.array, t.at("azimuth"), t.at("distance"), t.at("height"));
  const auto& i = j.at("interferer");
  s.interferer = SourcePlacement::at(s.array, i.at("azimuth"), i.at("distance"), i.at("height"));
  return s;
}

// Writes WAVs and the manifest; returns the manifest path.
inline std::string write_dataset(const std::string& dir, DatasetKind kind, int count,
                                 std::uint64_t seed, const SpeechPool& pool,
                                 const DatasetOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  const std::string manifest_path = (std::filesystem::path(dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw IoError("write_dataset: cannot open '" + manifest_path + "'");

  for (int i = 0; i < count; ++i) {
    const MixtureExample ex = build_example(kind, seed, i, pool, opt);
    char mix_name[32], ref_name[32];
    std::snprintf(mix_name, sizeof mix_name, "mixture_%05d.wav", i);
    std::snprintf(ref_name, sizeof ref_name, "reference_%05d.wav", i);
    write_wav((std::filesystem::path(dir) / mix_name).string(), ex.mixture, WavFormat::float32);
    write_wav((std::filesystem::path(dir) / ref_name).string(), ex.target_reference,
              WavFormat::float32);

    nlohmann::json line = scene_to_json(ex.metadata);
    line["index"] = i;
    line["kind"] = to_string(kind);
    line["sample_rate"] = opt.sample_rate;
    line["mixture"] = mix_name;
    line["reference"] = ref_name;
    manifest << line.dump() << "\n";
  }
  return manifest_path;
}

inline std::vector<MixtureExample> load_dataset(const std::string& dir) {
  const std::string manifest_path = (std::filesystem::path(dir) / "manifest.jsonl").string();
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("load_dataset: cannot open '" + manifest_path + "'");
  std::vector<MixtureExample> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line);
    MixtureExample ex;
    ex.metadata = scene_from_json(j);
    ex.mixture = read_wav((std::filesystem::path(dir) / j.at("mixture").get<std::string>()).string());
    const auto ref =
        read_wav((std::filesystem::path(dir) / j.at("reference").get<std::string>()).string());
    ex.target_reference = ref.channels.at(0);
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw IoError("load_dataset: empty manifest in '" + dir + "'");
  return out;
}

}  // namespace dse

#endif  // DSE_DATASET_HPP
