// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "machgen/asd.hpp"
#include "machgen/captions.hpp"
#include "machgen/codec.hpp"
#include "machgen/config.hpp"
#include "machgen/manifest.hpp"
#include "machgen/metrics.hpp"
#include "machgen/signalgen.hpp"
#include "machgen/trainer.hpp"

// Subcommand implementations behind the machgen CLI. Stages communicate
// only through files (manifests, latent stores, checkpoints, report JSON),
// so each block of the pipeline is independently runnable and testable.

namespace machgen::pipeline {

namespace fs = std::filesystem;

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail("cannot create directory '" + dir + "': " + ec.message());
}

// ---------------------------------------------------------------------------
// dataset: synthesize clips + manifest per the dataset section
// ---------------------------------------------------------------------------

inline signal::DatasetSpec dataset_spec_from(const config::Config& cfg) {
  signal::DatasetSpec spec;
  spec.duration = cfg.get_double("dataset", "duration", 3.0);
  spec.sample_rate =
      static_cast<int>(cfg.get_u64("dataset", "sample_rate", 16000));
  spec.root_seed = cfg.get_u64("dataset", "root_seed", 42);
  spec.attribute_variety =
      static_cast<int>(cfg.get_u64("dataset", "attribute_variety", 2));
  spec.counts.train_normal =
      static_cast<int>(cfg.get_u64("dataset", "train_normal", 40));
  spec.counts.train_anomalous =
      static_cast<int>(cfg.get_u64("dataset", "train_anomalous", 20));
  spec.counts.eval_normal =
      static_cast<int>(cfg.get_u64("dataset", "eval_normal", 8));
  spec.counts.eval_anomalous =
      static_cast<int>(cfg.get_u64("dataset", "eval_anomalous", 8));
  return spec;
}

inline void cmd_dataset(const config::Config& cfg, const std::string& out_dir) {
  ensure_dir(out_dir);
  signal::build_dataset(dataset_spec_from(cfg), out_dir);
  config::write_snapshot(cfg, out_dir);
}

// ---------------------------------------------------------------------------
// caption: manifest in -> manifest with caption fields
// ---------------------------------------------------------------------------

inline void cmd_caption(const std::string& manifest_in,
                        const std::string& manifest_out) {
  auto records = manifest::read(manifest_in);
  for (auto& r : records)
    r.caption =
        caption::caption_from_metadata(signal::metadata_from_manifest(r)).text;
  manifest::write(manifest_out, records);
}

// ---------------------------------------------------------------------------
// prepare: manifest -> latent store
// ---------------------------------------------------------------------------

inline std::size_t cmd_prepare(const config::Config& cfg,
                               const std::string& manifest_path,
                               const std::string& out_dir) {
  const auto records = manifest::read(manifest_path);
  trainer::PrepareOptions opts;
  opts.rvq_stages = codec::stages_for_bandwidth(
      cfg.get_double("prepare", "bandwidth_kbps", 6.0));
  opts.codebook_size = cfg.get_size("prepare", "codebook_size", 64);
  opts.kmeans_iterations =
      static_cast<int>(cfg.get_u64("prepare", "kmeans_iterations", 15));
  opts.max_kmeans_frames = cfg.get_size("prepare", "max_kmeans_frames", 40000);
  opts.seed = cfg.get_u64("prepare", "seed", 1);
  const std::string base_dir = fs::path(manifest_path).parent_path().string();
  const auto store = trainer::prepare_latents(records, base_dir, opts);
  ensure_dir(out_dir);
  trainer::save_store(store, out_dir);
  config::write_snapshot(cfg, out_dir);
  return store.skipped;
}

// ---------------------------------------------------------------------------
// train: latent store -> checkpoint + loss curve
// ---------------------------------------------------------------------------

inline trainer::TrainConfig train_config_from(const config::Config& cfg) {
  trainer::TrainConfig tc;
  tc.steps = cfg.get_size("train", "steps", 2000);
  tc.batch_size = cfg.get_size("train", "batch_size", 4);
  tc.learning_rate = cfg.get_double("train", "learning_rate", 1e-3);
  tc.seed = cfg.get_u64("train", "seed", 11);
  tc.schedule_steps = cfg.get_size("train", "schedule_steps", 100);
  tc.beta_start = cfg.get_double("train", "beta_start", 1e-3);
  tc.beta_end = cfg.get_double("train", "beta_end", 0.09);
  tc.checkpoint_interval = cfg.get_size("train", "checkpoint_interval", 500);
  tc.model.base_width = cfg.get_size("model", "base_width", 16);
  tc.model.depth = cfg.get_size("model", "depth", 1);
  tc.model.attn_dim = cfg.get_size("model", "attn_dim", 32);
  tc.model.heads = cfg.get_size("model", "heads", 2);
  return tc;
}

inline void cmd_train(const config::Config& cfg, const std::string& store_dir,
                      const std::string& out_dir,
                      const std::string& resume_path = "") {
  const auto store = trainer::load_store(store_dir);
  const auto tc = train_config_from(cfg);
  ensure_dir(out_dir);
  const std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
  trainer::TrainResult result;
  if (!resume_path.empty()) {
    const auto resume = trainer::load_checkpoint(resume_path);
    result = trainer::train(store, tc, ckpt_path, &resume);
  } else {
    result = trainer::train(store, tc, ckpt_path);
  }
  trainer::write_loss_curve(result.loss_curve,
                            (fs::path(out_dir) / "loss.csv").string());
  config::write_snapshot(cfg, out_dir);
}

// ---------------------------------------------------------------------------
// generate: checkpoint + captions -> WAVs + generation manifest
// ---------------------------------------------------------------------------

struct GenerateRequest {
  std::string caption;
  // carried into the generation manifest so downstream evaluation can group
  // by machine and condition
  std::string machine;
  std::string condition;
  std::vector<std::pair<std::string, std::string>> attributes;
};

inline std::vector<manifest::Record> generate_clips(
    const trainer::Checkpoint& ckpt, const std::vector<GenerateRequest>& reqs,
    double duration, std::uint64_t seed, std::size_t sample_steps,
    const std::string& out_dir) {
  ensure_dir(out_dir);
  ensure_dir((fs::path(out_dir) / "wav").string());
  const double frames_real = duration * 75.0;  // hop 320 at 24 kHz
  const auto frames = static_cast<std::size_t>(std::llround(frames_real));
  require(frames >= 1 && std::abs(frames_real - static_cast<double>(frames)) < 1e-9,
          "duration must land on the 24 kHz frame grid (multiples of 1/75 s)");
  const double out_samples_real = duration * 16000.0;
  const auto out_samples =
      static_cast<std::size_t>(std::llround(out_samples_real));
  require(std::abs(out_samples_real - static_cast<double>(out_samples)) < 1e-6,
          "duration * 16000 must be an integer sample count");

  const std::size_t multiple = static_cast<std::size_t>(1)
                               << ckpt.config.model.depth;
  const std::size_t padded = trainer::padded_frames(frames, multiple);
  const std::size_t steps =
      sample_steps == 0 ? ckpt.schedule.steps : sample_steps;

  std::vector<manifest::Record> records;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    const auto& req = reqs[i];
    require(!req.caption.empty(), "generation request with empty caption");
    const auto emb = caption::encode_text(req.caption);
    const Tensor cond = denoiser::cond_tensor(emb);
    Rng rng(derive_seed(seed, "generate", i));
    const auto eps_fn = [&](const Tensor& z, std::size_t t) {
      return denoiser::forward(ckpt.config.model, ckpt.params, z, t, cond);
    };
    const auto sampled =
        diffusion::sample_strided(ckpt.schedule, padded, rng, eps_fn, steps);
    const auto trimmed = trainer::trim_frames(sampled, frames);
    const auto flat = codec::reshape_to_flat(trimmed, ckpt.norm_stats);
    const auto clip24 = codec::decode(flat);
    signal::AudioClip clip;
    clip.sample_rate = 16000;
    clip.samples = dsp::resample(clip24.samples, 2, 3);
    require(clip.samples.size() == out_samples,
            "generated clip length mismatch");
    for (auto& s : clip.samples) s = std::clamp(s, -1.0, 1.0);

    char name[32];
    std::snprintf(name, sizeof(name), "wav/gen_%04zu.wav", i);
    signal::write_wav(clip, (fs::path(out_dir) / name).string());
    manifest::Record rec;
    rec.path = name;
    rec.machine = req.machine;
    rec.condition = req.condition;
    rec.attributes = req.attributes;
    rec.seed = derive_seed(seed, "generate", i);
    rec.split = "generated";
    rec.caption = req.caption;
    records.push_back(std::move(rec));
  }
  manifest::write((fs::path(out_dir) / "manifest.jsonl").string(), records);
  return records;
}

/// --caption mode: one caption repeated `count` times; the machine and
/// condition fields of the generation manifest come from parsing the
/// caption text.
inline void cmd_generate_caption(const config::Config& cfg,
                                 const std::string& ckpt_path,
                                 const std::string& text, std::size_t count,
                                 std::uint64_t seed,
                                 const std::string& out_dir) {
  const auto ckpt = trainer::load_checkpoint(ckpt_path);
  std::vector<GenerateRequest> reqs;
  for (std::size_t i = 0; i < count; ++i) {
    GenerateRequest r;
    r.caption = text;
    const auto parsed = caption::parse_caption(text);
    r.machine = signal::machine_name(parsed.machine);
    r.condition = signal::condition_name(parsed.condition);
    reqs.push_back(std::move(r));
  }
  generate_clips(ckpt, reqs, cfg.get_double("generate", "duration", 3.0), seed,
                 cfg.get_size("generate", "steps", 0), out_dir);
  config::write_snapshot(cfg, out_dir);
}

/// --captions-from mode: one clip per manifest record, reusing each record's
/// caption (computed from metadata when absent) and identity fields.
inline void cmd_generate_manifest(const config::Config& cfg,
                                  const std::string& ckpt_path,
                                  const std::string& manifest_path,
                                  std::uint64_t seed,
                                  const std::string& out_dir) {
  const auto ckpt = trainer::load_checkpoint(ckpt_path);
  const auto records = manifest::read(manifest_path);
  require(!records.empty(), "empty caption manifest");
  std::vector<GenerateRequest> reqs;
  for (const auto& rec : records) {
    GenerateRequest r;
    r.caption = rec.caption.empty()
                    ? caption::caption_from_metadata(
                          signal::metadata_from_manifest(rec))
                          .text
                    : rec.caption;
    r.machine = rec.machine;
    r.condition = rec.condition;
    r.attributes = rec.attributes;
    reqs.push_back(std::move(r));
  }
  generate_clips(ckpt, reqs, cfg.get_double("generate", "duration", 3.0), seed,
                 cfg.get_size("generate", "steps", 0), out_dir);
  config::write_snapshot(cfg, out_dir);
}

// ---------------------------------------------------------------------------
// eval-gen: real + generated manifests -> metric report JSON
// ---------------------------------------------------------------------------

inline metrics::MetricReport cmd_eval_gen(const std::string& real_manifest,
                                          const std::string& gen_manifest,
                                          const std::string& out_path) {
  const auto real_records = manifest::read(real_manifest);
  const auto gen_records = manifest::read(gen_manifest);
  const metrics::BuiltinBackend backend;
  const auto report = metrics::evaluate_generation(
      real_records, fs::path(real_manifest).parent_path().string(),
      gen_records, fs::path(gen_manifest).parent_path().string(), backend);
  if (!out_path.empty()) {
    ensure_dir(fs::path(out_path).parent_path().string());
    std::ofstream f(out_path, std::ios::binary);
    require(static_cast<bool>(f), "cannot write report: " + out_path);
    f << metrics::report_to_json(report).dump(2) << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// eval-asd: detector training + paired AUC evaluation -> report JSON
// ---------------------------------------------------------------------------

inline asd::AsdReport cmd_eval_asd(const config::Config& cfg,
                                   const std::string& train_manifest,
                                   const std::string& eval_real_manifest,
                                   const std::string& eval_gen_manifest,
                                   const std::string& out_path) {
  const auto train_records = manifest::read(train_manifest);
  const std::string train_dir =
      fs::path(train_manifest).parent_path().string();
  asd::DetectorConfig dc;
  dc.epochs = cfg.get_size("asd", "epochs", 30);
  dc.batch_size = cfg.get_size("asd", "batch_size", 64);
  dc.learning_rate = cfg.get_double("asd", "learning_rate", 1e-3);
  dc.seed = cfg.get_u64("asd", "seed", 3);

  // the manifest filter, not convention, keeps anomalies out of training
  std::map<std::string, asd::DetectorModel> detectors;
  for (signal::MachineType m : signal::kAllMachines) {
    std::vector<signal::AudioClip> clips;
    for (const auto& r : train_records) {
      if (r.machine != signal::machine_name(m) || r.split != "train" ||
          r.condition != "normal")
        continue;
      auto clip = signal::read_wav((fs::path(train_dir) / r.path).string());
      clip.metadata = signal::metadata_from_manifest(r);
      clips.push_back(std::move(clip));
    }
    require(!clips.empty(), std::string("no normal training clips for ") +
                                signal::machine_name(m));
    detectors[signal::machine_name(m)] = asd::train_detector(clips, dc);
  }

  const auto eval_real = manifest::read(eval_real_manifest);
  const auto eval_gen = manifest::read(eval_gen_manifest);
  const auto report = asd::evaluate_asd(
      detectors, eval_real, fs::path(eval_real_manifest).parent_path().string(),
      eval_gen, fs::path(eval_gen_manifest).parent_path().string());
  if (!out_path.empty()) {
    ensure_dir(fs::path(out_path).parent_path().string());
    std::ofstream f(out_path, std::ios::binary);
    require(static_cast<bool>(f), "cannot write report: " + out_path);
    f << asd::report_to_json(report).dump(2) << "\n";
  }
  return report;
}

// ---------------------------------------------------------------------------
// report: render metric + ASD JSON into text tables
// ---------------------------------------------------------------------------

inline std::string cmd_report(const std::string& run_dir) {
  const std::string gen_path = (fs::path(run_dir) / "metrics_report.json").string();
  const std::string asd_path = (fs::path(run_dir) / "asd_report.json").string();
  std::string missing;
  if (!fs::exists(gen_path)) missing += " metrics_report.json";
  if (!fs::exists(asd_path)) missing += " asd_report.json";
  if (!missing.empty())
    fail("run directory '" + run_dir + "' is missing:" + missing);

  std::ifstream gf(gen_path), af(asd_path);
  nlohmann::json gj = nlohmann::json::parse(gf, nullptr, false);
  nlohmann::json aj = nlohmann::json::parse(af, nullptr, false);
  require(!gj.is_discarded(), gen_path + " is not valid JSON");
  require(!aj.is_discarded(), asd_path + " is not valid JSON");
  const auto gen = metrics::from_report_json(gj);
  const auto asd_report = asd::from_report_json(aj);

  char line[160];
  std::string out;
  out += "Generation quality (backend " + gen.backend + ", " +
         std::to_string(gen.real_count) + " real / " +
         std::to_string(gen.generated_count) + " generated)\n";
  out += "  FAD       KL        IS        CLAP score\n";
  std::snprintf(line, sizeof(line), "  %-9.4f %-9.4f %-9.4f %.4f-%.4f\n",
                gen.fad, gen.kl, gen.is_score, gen.clap_original,
                gen.clap_generated);
  out += line;
  out += "\nAnomaly detection AUC\n";
  out += "  machine       original   generated\n";
  for (const auto& [machine, aucs] : asd_report.auc_by_machine) {
    std::snprintf(line, sizeof(line), "  %-12s  %-9.4f  %-9.4f\n",
                  machine.c_str(), aucs.first, aucs.second);
    out += line;
  }
  std::snprintf(line, sizeof(line),
                "  mean |AUC gap| = %.4f   rank correlation = %.4f\n",
                asd_report.mean_abs_gap, asd_report.rank_correlation);
  out += "\n";
  out += line;
  return out;
}

// ===========================================================================
// CLI dispatch
// ===========================================================================

inline int run_cli(int argc, const char* const* argv) {
  CLI::App app{"machine-sound generation and anomaly-detection evaluation"};
  app.require_subcommand(1);
  std::string config_path, out_dir, manifest_in, manifest_out;
  std::string store_dir, ckpt_path, resume_path, caption_text, captions_from;
  std::string real_manifest, gen_manifest, train_manifest, run_dir;
  std::size_t count = 0, steps = 0;
  std::uint64_t seed = 0;
  bool print_config = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "configuration file");
    sub->add_flag("--print-config", print_config,
                  "print the resolved configuration and exit");
  };

  auto* c_dataset = app.add_subcommand("dataset", "synthesize a dataset");
  add_common(c_dataset);
  c_dataset->add_option("--out", out_dir, "output directory");

  auto* c_caption = app.add_subcommand("caption", "add captions to a manifest");
  add_common(c_caption);
  c_caption->add_option("--manifest", manifest_in, "input manifest")->required();
  c_caption->add_option("--out", manifest_out, "output manifest path");

  auto* c_prepare = app.add_subcommand("prepare", "build the latent store");
  add_common(c_prepare);
  c_prepare->add_option("--manifest", manifest_in, "dataset manifest")->required();
  c_prepare->add_option("--out", out_dir, "store directory");

  auto* c_train = app.add_subcommand("train", "train the denoiser");
  add_common(c_train);
  c_train->add_option("--latents", store_dir, "latent store directory")->required();
  c_train->add_option("--out", out_dir, "run directory");
  c_train->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* c_generate = app.add_subcommand("generate", "sample clips");
  add_common(c_generate);
  c_generate->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  c_generate->add_option("--caption", caption_text, "caption text");
  c_generate->add_option("--captions-from", captions_from,
                         "manifest supplying one caption per clip");
  c_generate->add_option("--count", count, "clips per caption");
  c_generate->add_option("--seed", seed, "generation seed");
  c_generate->add_option("--steps", steps, "sampler steps (0 = full chain)");
  c_generate->add_option("--out", out_dir, "output directory");

  auto* c_eval_gen = app.add_subcommand("eval-gen", "generation metrics");
  add_common(c_eval_gen);
  c_eval_gen->add_option("--real", real_manifest, "real manifest")->required();
  c_eval_gen->add_option("--generated", gen_manifest, "generated manifest")->required();
  c_eval_gen->add_option("--out", manifest_out, "report JSON path");

  auto* c_eval_asd = app.add_subcommand("eval-asd", "anomaly-detection AUCs");
  add_common(c_eval_asd);
  c_eval_asd->add_option("--train-manifest", train_manifest,
                         "manifest with detector training clips")->required();
  c_eval_asd->add_option("--eval-real", real_manifest,
                         "real-anomaly eval manifest")->required();
  c_eval_asd->add_option("--eval-generated", gen_manifest,
                         "generated-anomaly eval manifest")->required();
  c_eval_asd->add_option("--out", manifest_out, "report JSON path");

  auto* c_report = app.add_subcommand("report", "render run-directory reports");
  add_common(c_report);
  c_report->add_option("--run-dir", run_dir, "directory with report JSON files")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help() << std::flush;
      return 0;
    }
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    config::Config cfg = config::defaults();
    if (!config_path.empty()) cfg.overlay(config::parse_file(config_path));
    if (print_config) {
      std::cout << config::render(cfg);
      return 0;
    }
    auto default_out = [&](const char* stage) {
      return out_dir.empty()
                 ? (fs::path(config::run_root()) / stage).string()
                 : out_dir;
    };
    if (c_dataset->parsed()) {
      cmd_dataset(cfg, default_out("dataset"));
    } else if (c_caption->parsed()) {
      cmd_caption(manifest_in,
                  manifest_out.empty() ? manifest_in : manifest_out);
    } else if (c_prepare->parsed()) {
      const std::size_t skipped =
          cmd_prepare(cfg, manifest_in, default_out("latents"));
      if (skipped > 0) {
        std::cerr << "error: " << skipped
                  << " clip(s) were unreadable and skipped\n";
        return 3;
      }
    } else if (c_train->parsed()) {
      cmd_train(cfg, store_dir, default_out("train"), resume_path);
    } else if (c_generate->parsed()) {
      require(caption_text.empty() != captions_from.empty(),
              "pass exactly one of --caption or --captions-from");
      if (c_generate->count("--seed") == 0)
        seed = cfg.get_u64("generate", "seed", 7);
      if (c_generate->count("--steps") > 0)
        cfg.set("generate", "steps", std::to_string(steps));
      if (!caption_text.empty()) {
        if (c_generate->count("--count") == 0)
          count = cfg.get_size("generate", "count", 8);
        cmd_generate_caption(cfg, ckpt_path, caption_text, count, seed,
                             default_out("generated"));
      } else {
        cmd_generate_manifest(cfg, ckpt_path, captions_from, seed,
                              default_out("generated"));
      }
    } else if (c_eval_gen->parsed()) {
      const std::string out = manifest_out.empty()
                                  ? (fs::path(config::run_root()) /
                                     "metrics_report.json")
                                        .string()
                                  : manifest_out;
      cmd_eval_gen(real_manifest, gen_manifest, out);
    } else if (c_eval_asd->parsed()) {
      const std::string out = manifest_out.empty()
                                  ? (fs::path(config::run_root()) /
                                     "asd_report.json")
                                        .string()
                                  : manifest_out;
      cmd_eval_asd(cfg, train_manifest, real_manifest, gen_manifest, out);
    } else if (c_report->parsed()) {
      std::cout << cmd_report(run_dir);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace machgen::pipeline
