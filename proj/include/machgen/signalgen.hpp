// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "machgen/common.hpp"
#include "machgen/dsp.hpp"
#include "machgen/manifest.hpp"
#include "machgen/wav.hpp"

namespace machgen::signal {

// ===========================================================================
// Domain types
// ===========================================================================

enum class MachineType { bearing, gearbox, fan, slide_rail, valve };

inline constexpr MachineType kAllMachines[] = {
    MachineType::bearing, MachineType::gearbox, MachineType::fan,
    MachineType::slide_rail, MachineType::valve};

inline const char* machine_name(MachineType m) {
  switch (m) {
    case MachineType::bearing: return "bearing";
    case MachineType::gearbox: return "gearbox";
    case MachineType::fan: return "fan";
    case MachineType::slide_rail: return "slide_rail";
    case MachineType::valve: return "valve";
  }
  fail("invalid machine type");
}

inline MachineType parse_machine(const std::string& name) {
  for (MachineType m : kAllMachines)
    if (name == machine_name(m)) return m;
  fail("unknown machine type '" + name + "'");
}

enum class Condition { normal, anomalous };

inline const char* condition_name(Condition c) {
  return c == Condition::normal ? "normal" : "anomalous";
}

inline Condition parse_condition(const std::string& name) {
  if (name == "normal") return Condition::normal;
  if (name == "anomalous") return Condition::anomalous;
  fail("unknown condition '" + name + "'");
}

struct MetadataRecord {
  MachineType machine = MachineType::fan;
  Condition condition = Condition::normal;
  // Ordered key/value pairs, e.g. {"anomaly","axis damage"}, {"velocity","24 krpm"}.
  std::vector<std::pair<std::string, std::string>> attributes;
  std::uint64_t seed = 0;

  std::optional<std::string> attr(const std::string& key) const {
    for (const auto& [k, v] : attributes)
      if (k == key) return v;
    return std::nullopt;
  }

  void validate() const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
      for (std::size_t j = i + 1; j < attributes.size(); ++j)
        if (attributes[i].first == attributes[j].first)
          fail("duplicate attribute key '" + attributes[i].first + "'");
    if (condition == Condition::anomalous && !attr("anomaly"))
      fail("anomalous record lacks an anomaly attribute");
  }
};

struct AudioClip {
  std::vector<double> samples;  // all in [-1, 1]
  int sample_rate = 16000;
  MetadataRecord metadata;

  double duration() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

inline MetadataRecord metadata_from_manifest(const manifest::Record& r) {
  MetadataRecord m;
  m.machine = parse_machine(r.machine);
  m.condition = parse_condition(r.condition);
  m.attributes = r.attributes;
  m.seed = r.seed;
  return m;
}

// ===========================================================================
// Synthesis recipes.
//
// Each machine type has a fixed parametric recipe; parameters come from the
// attribute values plus small seeded jitter so clips within one class vary.
// The jitter draw order is part of the recipe: shared components are drawn
// before anomaly extras, so a normal and an anomalous clip with the same
// seed differ only by the anomaly transform.
//
//   fan        harmonic stack (f0 ~ 100..135 Hz, 10 partials) + broadband
//              noise lowpassed at 3.6 kHz
//   bearing    two AM carriers (~620 / ~1250 Hz) modulated at a rate set by
//              the rotation velocity
//   gearbox    gear-mesh harmonics (mesh = 24 x shaft rate from voltage)
//              with shaft-rate AM + low rumble
//   slide_rail triangle frequency sweeps 280 Hz .. ~1.7 kHz, period set by
//              the traverse velocity, plus a mains-like hum
//   valve      sparse resonant click train (~2.8 kHz), rate set by the
//              moving pattern, plus faint hum
//
// Anomaly transforms, keyed on the "anomaly" attribute value:
//   "over voltage"     scales the fundamental/rate up and lifts amplitudes
//   *"damage"*         injects periodic resonant impulse bursts
//   *"contamination"*  adds band-limited noise
//
// All spectral content stays below ~4.2 kHz so the codec's 4.8 kHz analysis
// band preserves these clips.
// ===========================================================================

namespace detail {

enum class AnomalyKind { none, over_voltage, damage, contamination };

struct AnomalySpec {
  AnomalyKind kind = AnomalyKind::none;
  double severity = 1.0;  // "damage type 2" -> 2
};

inline double parse_leading_number(const std::string& s, double fallback) {
  std::size_t i = 0;
  while (i < s.size() && !(std::isdigit(static_cast<unsigned char>(s[i])) ||
                           s[i] == '-' || s[i] == '.'))
    ++i;
  if (i == s.size()) return fallback;
  try {
    return std::stod(s.substr(i));
  } catch (...) {
    return fallback;
  }
}

inline AnomalySpec parse_anomaly(const MetadataRecord& meta) {
  AnomalySpec spec;
  if (meta.condition != Condition::anomalous) return spec;
  const auto value = meta.attr("anomaly");
  require(value.has_value(), "anomalous record lacks an anomaly attribute");
  const std::string& v = *value;
  if (v.find("over voltage") != std::string::npos) {
    spec.kind = AnomalyKind::over_voltage;
  } else if (v.find("damage") != std::string::npos) {
    spec.kind = AnomalyKind::damage;
    spec.severity = parse_leading_number(v, 1.0);
    if (spec.severity < 0.5 || spec.severity > 4.0) spec.severity = 1.0;
  } else if (v.find("contamination") != std::string::npos) {
    spec.kind = AnomalyKind::contamination;
  } else {
    fail("unknown anomaly attribute '" + v + "'");
  }
  return spec;
}

inline void add_tone(std::vector<double>& y, int sr, double freq, double amp,
                     double phase0, double am_rate = 0.0,
                     double am_depth = 0.0, double am_phase = 0.0) {
  const double w = 2.0 * M_PI * freq / sr;
  const double wm = 2.0 * M_PI * am_rate / sr;
  for (std::size_t i = 0; i < y.size(); ++i) {
    double env = 1.0;
    if (am_depth != 0.0) env += am_depth * std::sin(wm * i + am_phase);
    y[i] += amp * env * std::sin(w * i + phase0);
  }
}

inline void add_burst(std::vector<double>& y, int sr, double t0, double freq,
                      double amp, double decay_s) {
  const double attack_s = 0.0005;  // half-cosine ramp tames the onset skirt
  const long start = static_cast<long>(std::floor(t0 * sr));
  const long span = static_cast<long>(std::ceil(8.0 * decay_s * sr));
  const long n = static_cast<long>(y.size());
  for (long i = std::max(start, 0L); i < std::min(start + span, n); ++i) {
    const double t = static_cast<double>(i) / sr - t0;
    if (t < 0) continue;
    double env = std::exp(-t / decay_s);
    if (t < attack_s) env *= 0.5 - 0.5 * std::cos(M_PI * t / attack_s);
    y[static_cast<std::size_t>(i)] +=
        amp * env * std::sin(2.0 * M_PI * freq * t);
  }
}

/// Bounded band noise: uniform white noise shaped by zero-phase FIRs.
/// Output magnitude is bounded by ~3x amp via the filters' L1 norms.
inline void add_band_noise(std::vector<double>& y, Rng& rng, int sr,
                           double f_lo, double f_hi, double amp) {
  std::vector<double> white(y.size());
  for (auto& x : white) x = amp * (2.0 * rng.uniform() - 1.0);
  std::vector<double> shaped = dsp::fir_lowpass(white, f_hi / sr);
  if (f_lo > 0.0) {
    std::vector<double> low = dsp::fir_lowpass(white, f_lo / sr);
    for (std::size_t i = 0; i < shaped.size(); ++i) shaped[i] -= low[i];
  }
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += shaped[i];
}

/// Triangle frequency sweep across the whole clip, phase-continuous.
inline void add_sweep(std::vector<double>& y, int sr, double period_s,
                      double f_lo, double f_hi, double amp, double curve,
                      double phase0) {
  double phase = phase0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    double tau = std::fmod(t, period_s) / period_s;
    const double frac = tau < 0.5 ? 2.0 * tau : 2.0 * (1.0 - tau);
    const double f = f_lo + (f_hi - f_lo) * std::pow(frac, curve);
    phase += 2.0 * M_PI * f / sr;
    y[i] += amp * std::sin(phase);
  }
}

inline void synth_fan(std::vector<double>& y, int sr,
                      const MetadataRecord& meta, const AnomalySpec& anom,
                      Rng& rng) {
  const std::string model = meta.attr("model").value_or("");
  double f0 = 100.0 + static_cast<double>(hash_str(model) % 5) * 7.0 +
              (rng.uniform() - 0.5) * 8.0;
  double harm_gain = 1.0, noise_amp = 0.05;
  if (anom.kind == AnomalyKind::over_voltage) {
    f0 *= 1.35;
    harm_gain = 1.10;
    noise_amp *= 1.5;
  }
  const double am_rate = 0.4 + rng.uniform();
  const double am_phase = rng.uniform() * 2.0 * M_PI;
  const double stack_gain = 0.85 + 0.3 * rng.uniform();
  const double bed_gain = 0.7 + 0.6 * rng.uniform();
  for (int h = 1; h <= 10; ++h) {
    const double amp = 0.109 * std::pow(0.82, h - 1) * harm_gain * stack_gain;
    add_tone(y, sr, f0 * h, amp, rng.uniform() * 2.0 * M_PI, am_rate, 0.05,
             am_phase);
  }
  add_band_noise(y, rng, sr, 0.0, 4300.0, noise_amp * bed_gain);
  if (anom.kind == AnomalyKind::damage)
    for (double t = 0.11; t < y.size() / double(sr); t += 0.125)
      add_burst(y, sr, t + (rng.uniform() - 0.5) * 0.004, 2400.0,
                0.22 * anom.severity, 0.0025);
  if (anom.kind == AnomalyKind::contamination)
    add_band_noise(y, rng, sr, 1000.0, 3000.0, 0.05);
}

inline void synth_bearing(std::vector<double>& y, int sr,
                          const MetadataRecord& meta, const AnomalySpec& anom,
                          Rng& rng) {
  const double krpm =
      parse_leading_number(meta.attr("velocity").value_or(""), 18.0);
  const std::string loc = meta.attr("location").value_or("A");
  double fm = krpm * 1000.0 / 60.0 / 16.0;  // AM rate from rotation speed
  double c1 = 620.0 * (1.0 + (rng.uniform() - 0.5) * 0.03);
  double c2 = (1250.0 + 60.0 * static_cast<double>(hash_str(loc) % 3)) *
              (1.0 + (rng.uniform() - 0.5) * 0.03);
  if (anom.kind == AnomalyKind::over_voltage) {
    fm *= 1.3;
    c1 *= 1.15;
    c2 *= 1.15;
  }
  const double gain1 = 0.85 + 0.3 * rng.uniform();
  const double gain2 = 0.85 + 0.3 * rng.uniform();
  const double bed_gain = 0.7 + 0.6 * rng.uniform();
  add_tone(y, sr, c1, 0.24 * gain1, rng.uniform() * 2.0 * M_PI, fm, 0.45,
           rng.uniform() * 2.0 * M_PI);
  add_tone(y, sr, c2, 0.18 * gain2, rng.uniform() * 2.0 * M_PI, fm, 0.45,
           rng.uniform() * 2.0 * M_PI);
  add_band_noise(y, rng, sr, 0.0, 4300.0, 0.02 * bed_gain);
  if (anom.kind == AnomalyKind::damage) {
    const double rate = 10.0 + fm * 0.2;
    for (double t = 0.07; t < y.size() / double(sr); t += 1.0 / rate)
      add_burst(y, sr, t + (rng.uniform() - 0.5) * 0.004, 2250.0,
                0.03 * anom.severity, 0.0025);
  }
  if (anom.kind == AnomalyKind::contamination)
    add_band_noise(y, rng, sr, 1000.0, 3000.0, 0.05);
}

inline void synth_gearbox(std::vector<double>& y, int sr,
                          const MetadataRecord& meta, const AnomalySpec& anom,
                          Rng& rng) {
  const double volts =
      parse_leading_number(meta.attr("voltage").value_or(""), 2.3);
  const double grams =
      parse_leading_number(meta.attr("weight").value_or(""), 0.0);
  double shaft = (20.0 + 6.0 * volts) * (1.0 - grams / 4000.0) *
                 (1.0 + (rng.uniform() - 0.5) * 0.02);
  double mesh_gain = 1.0;
  if (anom.kind == AnomalyKind::over_voltage) shaft *= 1.3;
  if (anom.kind == AnomalyKind::damage) mesh_gain = 1.05;
  const double mesh = shaft * 55.0;  // 1.6-2.1 kHz across the voltage pool
  const double amps[2] = {0.22, 0.12};
  const double am_phase = rng.uniform() * 2.0 * M_PI;
  const double tone_gain = 0.85 + 0.3 * rng.uniform();
  const double bed_gain = 0.7 + 0.6 * rng.uniform();
  for (int m = 1; m <= 2; ++m) {
    const double f = mesh * m;
    if (f > 4000.0) break;
    add_tone(y, sr, f, amps[m - 1] * mesh_gain * tone_gain,
             rng.uniform() * 2.0 * M_PI, shaft, 0.3, am_phase);
  }
  add_tone(y, sr, shaft * 2.0, 0.10 * tone_gain, rng.uniform() * 2.0 * M_PI);
  add_band_noise(y, rng, sr, 0.0, 4300.0, 0.02 * bed_gain);
  if (anom.kind == AnomalyKind::damage)
    for (double t = 0.09; t < y.size() / double(sr); t += 4.0 / shaft)
      add_burst(y, sr, t + (rng.uniform() - 0.5) * 0.003, 2600.0,
                0.022 * anom.severity, 0.003);
  if (anom.kind == AnomalyKind::contamination)
    add_band_noise(y, rng, sr, 1000.0, 3000.0, 0.05);
}

inline void synth_slide_rail(std::vector<double>& y, int sr,
                             const MetadataRecord& meta,
                             const AnomalySpec& anom, Rng& rng) {
  const double vel =
      parse_leading_number(meta.attr("velocity").value_or(""), 1000.0);
  const double accel =
      parse_leading_number(meta.attr("acceleration").value_or(""), 0.3);
  const bool ball = meta.attr("type").value_or("ball-type") == "ball-type";
  double period = 700.0 / std::max(vel, 100.0);
  if (anom.kind == AnomalyKind::over_voltage) period /= 1.3;
  const double f_hi = (ball ? 1750.0 : 1480.0);
  const double curve = 1.0 + accel;
  const double sweep_gain = 0.85 + 0.3 * rng.uniform();
  const double bed_gain = 0.7 + 0.6 * rng.uniform();
  add_sweep(y, sr, period * (1.0 + (rng.uniform() - 0.5) * 0.04), 280.0, f_hi,
            0.34 * sweep_gain, curve, rng.uniform() * 2.0 * M_PI);
  add_tone(y, sr, 95.0, 0.06, rng.uniform() * 2.0 * M_PI);
  add_band_noise(y, rng, sr, 0.0, 4300.0, 0.02 * bed_gain);
  if (anom.kind == AnomalyKind::damage)
    for (double t = 0.06; t < y.size() / double(sr); t += period * 0.5)
      add_burst(y, sr, t + (rng.uniform() - 0.5) * 0.006, 2650.0,
                0.07 * anom.severity, 0.002);
  if (anom.kind == AnomalyKind::contamination)
    add_band_noise(y, rng, sr, 1000.0, 3000.0, 0.05);
}

inline void synth_valve(std::vector<double>& y, int sr,
                        const MetadataRecord& meta, const AnomalySpec& anom,
                        Rng& rng) {
  const double pattern =
      parse_leading_number(meta.attr("pattern").value_or(""), 1.0);
  const bool open = meta.attr("surroundings").value_or("open") == "open";
  double rate = 1.6 + 1.3 * pattern;  // clicks per second
  if (anom.kind == AnomalyKind::over_voltage) rate *= 1.4;
  const double f_res = open ? 2850.0 : 2250.0;
  const double click_gain = 0.85 + 0.3 * rng.uniform();
  const double bed_gain = 0.7 + 0.6 * rng.uniform();
  add_tone(y, sr, 118.0, 0.05, rng.uniform() * 2.0 * M_PI);
  for (double t = 0.05; t < y.size() / double(sr); t += 1.0 / rate)
    add_burst(y, sr, t + (rng.uniform() - 0.5) * 0.016, f_res, 0.5 * click_gain,
              0.0022);
  add_band_noise(y, rng, sr, 0.0, 4300.0, 0.015 * bed_gain);
  if (anom.kind == AnomalyKind::damage)
    for (double t = 0.21; t < y.size() / double(sr); t += 0.33)
      add_burst(y, sr, t + (rng.uniform() - 0.5) * 0.006, 2600.0,
                0.3 * anom.severity, 0.002);
  if (anom.kind == AnomalyKind::contamination)
    add_band_noise(y, rng, sr, 1300.0, 3300.0, 0.009);
}

}  // namespace detail

// ===========================================================================
// Operations
// ===========================================================================

inline AudioClip synthesize(const MetadataRecord& metadata, double duration,
                            int sample_rate) {
  require(duration > 0.0, "duration must be positive");
  require(sample_rate == 16000 || sample_rate == 24000,
          "sample_rate must be 16000 or 24000");
  metadata.validate();
  const double n_real = duration * sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(n_real));
  require(std::abs(n_real - static_cast<double>(n)) < 1e-6,
          "duration * sample_rate must be an integer sample count");

  const detail::AnomalySpec anom = detail::parse_anomaly(metadata);
  Rng rng(hash_mix(metadata.seed, hash_str("signalgen")));
  std::vector<double> y(n, 0.0);
  switch (metadata.machine) {
    case MachineType::fan: detail::synth_fan(y, sample_rate, metadata, anom, rng); break;
    case MachineType::bearing: detail::synth_bearing(y, sample_rate, metadata, anom, rng); break;
    case MachineType::gearbox: detail::synth_gearbox(y, sample_rate, metadata, anom, rng); break;
    case MachineType::slide_rail: detail::synth_slide_rail(y, sample_rate, metadata, anom, rng); break;
    case MachineType::valve: detail::synth_valve(y, sample_rate, metadata, anom, rng); break;
  }

  // Peak guard: recipes budget below 0.95; rescale the rare seed that lands
  // above so every sample stays inside [-1, 1].
  double peak = 0.0;
  for (double s : y) peak = std::max(peak, std::abs(s));
  if (peak > 0.95) {
    const double g = 0.95 / peak;
    for (auto& s : y) s *= g;
  }

  AudioClip clip;
  clip.samples = std::move(y);
  clip.sample_rate = sample_rate;
  clip.metadata = metadata;
  return clip;
}

inline AudioClip read_wav(const std::string& path) {
  wav::PcmData pcm = wav::read_pcm16(path);
  AudioClip clip;
  clip.samples = std::move(pcm.samples);
  clip.sample_rate = pcm.sample_rate;
  return clip;
}

inline void write_wav(const AudioClip& clip, const std::string& path) {
  wav::write_pcm16(path, clip.samples, clip.sample_rate);
}

// ===========================================================================
// Dataset construction
// ===========================================================================

struct SplitCounts {
  int train_normal = 0;
  int train_anomalous = 0;
  int eval_normal = 0;
  int eval_anomalous = 0;
};

struct DatasetSpec {
  double duration = 10.0;
  int sample_rate = 16000;
  std::uint64_t root_seed = 1;
  int attribute_variety = 3;  // values drawn from the first N of each pool
  SplitCounts counts;         // per machine type

  /// Evaluation protocol shape of the source dataset: 990 normal training
  /// clips and a 50 normal + 50 anomalous eval set per machine.
  static DatasetSpec paper_protocol() {
    DatasetSpec s;
    s.counts = {990, 0, 50, 50};
    return s;
  }
};

struct PlannedClip {
  MetadataRecord meta;
  std::string split;
  std::string filename;
};

namespace detail {

inline const char* pick(const std::vector<const char*>& pool, int variety,
                        Rng& rng) {
  const auto n = std::min<std::size_t>(pool.size(),
                                       static_cast<std::size_t>(
                                           std::max(variety, 1)));
  return pool[static_cast<std::size_t>(rng.below(n))];
}

inline std::vector<std::pair<std::string, std::string>> draw_attributes(
    MachineType machine, Condition condition, int variety, Rng& rng) {
  std::vector<std::pair<std::string, std::string>> a;
  const bool anom = condition == Condition::anomalous;
  switch (machine) {
    case MachineType::bearing:
      if (anom) a.emplace_back("anomaly", "axis damage");
      a.emplace_back("velocity",
                     pick({"24 krpm", "16 krpm", "20 krpm"}, variety, rng));
      a.emplace_back("location", pick({"A", "B", "C"}, variety, rng));
      break;
    case MachineType::gearbox:
      if (anom) a.emplace_back("anomaly", "damage type 2");
      a.emplace_back("model", pick({"B", "A", "C"}, variety, rng));
      a.emplace_back("voltage",
                     pick({"2.3 (V)", "1.5 (V)", "3.1 (V)"}, variety, rng));
      a.emplace_back("weight",
                     pick({"0 (g)", "50 (g)", "100 (g)"}, variety, rng));
      break;
    case MachineType::fan:
      a.emplace_back("model", pick({"", "W-01", "Z-42"}, variety, rng));
      if (anom)
        a.emplace_back("anomaly", "over voltage");
      else
        a.emplace_back("power", "normal voltage");
      break;
    case MachineType::slide_rail:
      if (anom) a.emplace_back("anomaly", "damage");
      a.emplace_back("type", pick({"ball-type", "roller-type"}, variety, rng));
      a.emplace_back(
          "velocity",
          pick({"1000.0 (mm/s)", "500.0 (mm/s)", "1500.0 (mm/s)"}, variety,
               rng));
      a.emplace_back("acceleration", pick({"0.3", "0.1", "0.5"}, variety, rng));
      break;
    case MachineType::valve:
      if (anom) a.emplace_back("anomaly", "contamination");
      a.emplace_back("pattern", pick({"1", "2", "3"}, variety, rng));
      a.emplace_back("surroundings", pick({"open", "closed"}, variety, rng));
      break;
  }
  return a;
}

}  // namespace detail

inline std::vector<PlannedClip> plan_dataset(const DatasetSpec& spec) {
  require(spec.counts.train_normal >= 0 && spec.counts.train_anomalous >= 0 &&
              spec.counts.eval_normal >= 0 && spec.counts.eval_anomalous >= 0,
          "dataset counts must be >= 0");
  std::vector<PlannedClip> plan;
  struct Block {
    const char* split;
    Condition condition;
    int count;
  };
  for (MachineType machine : kAllMachines) {
    const Block blocks[] = {
        {"train", Condition::normal, spec.counts.train_normal},
        {"train", Condition::anomalous, spec.counts.train_anomalous},
        {"eval", Condition::normal, spec.counts.eval_normal},
        {"eval", Condition::anomalous, spec.counts.eval_anomalous},
    };
    for (const Block& b : blocks) {
      for (int i = 0; i < b.count; ++i) {
        const std::string label = std::string(machine_name(machine)) + "/" +
                                  b.split + "/" + condition_name(b.condition);
        const std::uint64_t seed =
            derive_seed(spec.root_seed, label, static_cast<std::uint64_t>(i));
        Rng rng(hash_mix(seed, hash_str("attributes")));
        PlannedClip p;
        p.meta.machine = machine;
        p.meta.condition = b.condition;
        p.meta.attributes = detail::draw_attributes(
            machine, b.condition, spec.attribute_variety, rng);
        p.meta.seed = seed;
        p.split = b.split;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "_%04d.wav", i);
        p.filename = std::string(machine_name(machine)) + "_" + b.split + "_" +
                     condition_name(b.condition) + buf;
        plan.push_back(std::move(p));
      }
    }
  }
  return plan;
}

/// Synthesizes every planned clip, writes WAVs under <out_dir>/wav/ and a
/// manifest.jsonl next to them. Returns the manifest records.
inline std::vector<manifest::Record> build_dataset(const DatasetSpec& spec,
                                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "wav", ec);
  if (ec) fail("cannot create output directory '" + out_dir + "': " + ec.message());

  const std::vector<PlannedClip> plan = plan_dataset(spec);
  std::vector<manifest::Record> records;
  records.reserve(plan.size());
  for (const PlannedClip& p : plan) {
    AudioClip clip = synthesize(p.meta, spec.duration, spec.sample_rate);
    const std::string rel = "wav/" + p.filename;
    write_wav(clip, (fs::path(out_dir) / rel).string());
    manifest::Record r;
    r.path = rel;
    r.machine = machine_name(p.meta.machine);
    r.condition = condition_name(p.meta.condition);
    r.attributes = p.meta.attributes;
    r.seed = p.meta.seed;
    r.split = p.split;
    records.push_back(std::move(r));
  }
  manifest::write((fs::path(out_dir) / "manifest.jsonl").string(), records);
  return records;
}

}  // namespace machgen::signal
