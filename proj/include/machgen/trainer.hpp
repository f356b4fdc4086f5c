// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "machgen/captions.hpp"
#include "machgen/codec.hpp"
#include "machgen/common.hpp"
#include "machgen/denoiser.hpp"
#include "machgen/diffusion.hpp"
#include "machgen/manifest.hpp"
#include "machgen/signalgen.hpp"

// Optimization of the noise-prediction objective over dataset latents.
// The codec codebooks, normalization stats and caption embeddings are frozen
// inputs; only the denoiser parameters train. Checkpoints capture the full
// loop state (parameters, Adam moments, rng) so a resumed run reproduces an
// uninterrupted one bit-exactly.

namespace machgen::trainer {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'M', 'G', 'C', 'K',
                                             'P', 'T', '0', '1'};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  double learning_rate = 2e-4;
  std::uint64_t seed = 1;
  std::size_t schedule_steps = diffusion::kDefaultSteps;
  double beta_start = diffusion::kDefaultBetaStart;
  double beta_end = diffusion::kDefaultBetaEnd;
  std::size_t checkpoint_interval = 500;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  denoiser::DenoiserConfig model;

  void validate() const {
    require(steps >= 1, "steps must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(learning_rate > 0.0, "learning_rate must be > 0");
    model.validate();
  }
};

// ===========================================================================
// Latent preparation
// ===========================================================================

struct PrepareOptions {
  std::size_t rvq_stages = codec::stages_for_bandwidth(24.0);
  std::size_t codebook_size = 64;
  int kmeans_iterations = 20;
  std::size_t max_kmeans_frames = 60000;
  std::uint64_t seed = 1;
};

struct LatentRecord {
  std::string path;
  signal::MachineType machine = signal::MachineType::fan;
  signal::Condition condition = signal::Condition::normal;
  std::string split;
  std::uint64_t seed = 0;
  std::string caption;
  caption::ConditionEmbedding embedding;
  codec::LatentTensor latent;  // diffusion layout, normalized
};

struct LatentStore {
  std::vector<LatentRecord> records;
  codec::NormStats stats;
  codec::CodebookSet codebooks;
  std::size_t skipped = 0;  // unreadable clips dropped with a warning
};

/// Full per-clip pipeline: caption -> embedding, waveform -> encode ->
/// quantize -> dequantize -> reshape+normalize. Stats and codebooks come
/// from the training split only. Unreadable clips are skipped with a logged
/// warning and counted in the returned summary.
inline LatentStore prepare_latents(const std::vector<manifest::Record>& records,
                                   const std::string& base_dir,
                                   const PrepareOptions& opts = {}) {
  namespace fs = std::filesystem;
  LatentStore store;
  std::vector<codec::LatentTensor> flats;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    try {
      const signal::AudioClip clip =
          signal::read_wav((fs::path(base_dir) / rec.path).string());
      flats.push_back(codec::encode(clip));
      keep.push_back(i);
    } catch (const Error& e) {
      std::cerr << "warning: skipping clip '" << rec.path << "': " << e.what()
                << "\n";
      store.skipped += 1;
    }
  }
  require(!flats.empty(), "no readable clips in the manifest");

  std::vector<codec::LatentTensor> train_flats;
  for (std::size_t j = 0; j < keep.size(); ++j)
    if (records[keep[j]].split == "train") train_flats.push_back(flats[j]);
  require(!train_flats.empty(), "manifest has no training-split clips");

  store.codebooks = codec::train_codebooks(
      train_flats, opts.rvq_stages, opts.codebook_size, opts.seed,
      opts.kmeans_iterations, opts.max_kmeans_frames);

  // De-quantized latents are the diffusion inputs; stats come from the
  // training split of those, before normalization.
  std::vector<codec::LatentTensor> dequantized(flats.size());
  std::vector<codec::LatentTensor> train_deq;
  for (std::size_t j = 0; j < flats.size(); ++j) {
    const auto idx = codec::rvq_quantize(flats[j], store.codebooks);
    dequantized[j] = codec::rvq_dequantize(idx, store.codebooks);
    if (records[keep[j]].split == "train") train_deq.push_back(dequantized[j]);
  }
  store.stats = codec::compute_norm_stats(train_deq);

  for (std::size_t j = 0; j < flats.size(); ++j) {
    const auto& rec = records[keep[j]];
    LatentRecord out;
    out.path = rec.path;
    out.machine = signal::parse_machine(rec.machine);
    out.condition = signal::parse_condition(rec.condition);
    out.split = rec.split;
    out.seed = rec.seed;
    out.caption = rec.caption.empty()
                      ? caption::caption_from_metadata(
                            signal::metadata_from_manifest(rec))
                            .text
                      : rec.caption;
    out.embedding = caption::encode_text(out.caption);
    out.latent = codec::reshape_to_diffusion(dequantized[j], store.stats);
    store.records.push_back(std::move(out));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Latent store persistence: latents.json sidecar + latents.bin payload of
// little-endian 32-bit floats.
// ---------------------------------------------------------------------------

inline void save_store(const LatentStore& store, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail("cannot create store directory '" + dir + "': " + ec.message());

  std::string payload;
  nlohmann::json header;
  header["schema_version"] = 1;
  header["skipped"] = store.skipped;
  {
    nlohmann::json stats;
    for (std::size_t c = 0; c < codec::kChannels; ++c) {
      stats["mean"].push_back(store.stats.mean[c]);
      stats["std"].push_back(store.stats.stddev[c]);
    }
    header["norm_stats"] = stats;
  }
  {
    nlohmann::json books;
    books["n_stages"] = store.codebooks.n_stages;
    books["k"] = store.codebooks.k;
    books["dim"] = store.codebooks.dim;
    books["offset"] = payload.size();
    for (double v : store.codebooks.data)
      le::put_f32(payload, static_cast<float>(v));
    header["codebooks"] = books;
  }
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : store.records) {
    nlohmann::json j;
    j["path"] = r.path;
    j["machine"] = signal::machine_name(r.machine);
    j["condition"] = signal::condition_name(r.condition);
    j["split"] = r.split;
    j["seed"] = r.seed;
    j["caption"] = r.caption;
    j["tokens"] = r.embedding.token_count;
    j["layout"] = "diffusion";
    j["dims"] = {codec::kChannels, codec::kRowsPerChannel, r.latent.frames};
    j["normalized"] = r.latent.normalized;
    j["emb_offset"] = payload.size();
    for (double v : r.embedding.values)
      le::put_f32(payload, static_cast<float>(v));
    j["lat_offset"] = payload.size();
    for (double v : r.latent.values.v)
      le::put_f32(payload, static_cast<float>(v));
    recs.push_back(std::move(j));
  }
  header["records"] = std::move(recs);

  std::ofstream jf((fs::path(dir) / "latents.json").string(),
                   std::ios::binary);
  require(static_cast<bool>(jf), "cannot write latents.json in " + dir);
  jf << header.dump(2) << "\n";
  std::ofstream bf((fs::path(dir) / "latents.bin").string(), std::ios::binary);
  require(static_cast<bool>(bf), "cannot write latents.bin in " + dir);
  bf.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

inline LatentStore load_store(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream jf((fs::path(dir) / "latents.json").string(),
                   std::ios::binary);
  require(static_cast<bool>(jf), "cannot open latents.json in " + dir);
  nlohmann::json header = nlohmann::json::parse(jf, nullptr, false);
  require(!header.is_discarded(), "latents.json is not valid JSON");
  require(header.value("schema_version", 0) == 1,
          "unsupported latent store schema version");
  std::ifstream bf((fs::path(dir) / "latents.bin").string(), std::ios::binary);
  require(static_cast<bool>(bf), "cannot open latents.bin in " + dir);
  std::string payload((std::istreambuf_iterator<char>(bf)),
                      std::istreambuf_iterator<char>());

  LatentStore store;
  store.skipped = header.value("skipped", 0);
  for (std::size_t c = 0; c < codec::kChannels; ++c) {
    store.stats.mean[c] = header["norm_stats"]["mean"][c].get<double>();
    store.stats.stddev[c] = header["norm_stats"]["std"][c].get<double>();
  }
  {
    const auto& books = header["codebooks"];
    store.codebooks.n_stages = books["n_stages"].get<std::size_t>();
    store.codebooks.k = books["k"].get<std::size_t>();
    store.codebooks.dim = books["dim"].get<std::size_t>();
    const std::size_t count =
        store.codebooks.n_stages * store.codebooks.k * store.codebooks.dim;
    std::size_t off = books["offset"].get<std::size_t>();
    store.codebooks.data.resize(count);
    for (std::size_t i = 0; i < count; ++i, off += 4)
      store.codebooks.data[i] = static_cast<double>(le::get_f32(payload, off));
  }
  for (const auto& j : header["records"]) {
    LatentRecord r;
    r.path = j["path"].get<std::string>();
    r.machine = signal::parse_machine(j["machine"].get<std::string>());
    r.condition = signal::parse_condition(j["condition"].get<std::string>());
    r.split = j["split"].get<std::string>();
    r.seed = j["seed"].get<std::uint64_t>();
    r.caption = j["caption"].get<std::string>();
    const std::size_t tokens = j["tokens"].get<std::size_t>();
    r.embedding.token_count = tokens;
    r.embedding.values.resize(tokens * caption::kEmbedDim);
    std::size_t off = j["emb_offset"].get<std::size_t>();
    for (auto& v : r.embedding.values) {
      v = static_cast<double>(le::get_f32(payload, off));
      off += 4;
    }
    const std::size_t frames = j["dims"][2].get<std::size_t>();
    r.latent = codec::LatentTensor::make_diffusion(
        frames, j["normalized"].get<bool>());
    off = j["lat_offset"].get<std::size_t>();
    for (auto& v : r.latent.values.v) {
      v = static_cast<double>(le::get_f32(payload, off));
      off += 4;
    }
    store.records.push_back(std::move(r));
  }
  return store;
}

// ---------------------------------------------------------------------------
// Frame padding: the U-Net needs F divisible by 2^depth; latents keep their
// natural frame count and get zero-padded per batch, then samples are
// trimmed back before decoding.
// ---------------------------------------------------------------------------

inline std::size_t padded_frames(std::size_t frames, std::size_t multiple) {
  return (frames + multiple - 1) / multiple * multiple;
}

inline codec::LatentTensor pad_frames(const codec::LatentTensor& z,
                                      std::size_t multiple) {
  require(z.layout == codec::Layout::diffusion, "pad_frames expects diffusion");
  const std::size_t target = padded_frames(z.frames, multiple);
  if (target == z.frames) return z;
  auto out = codec::LatentTensor::make_diffusion(target, z.normalized);
  for (std::size_t c = 0; c < codec::kChannels; ++c)
    for (std::size_t r = 0; r < codec::kRowsPerChannel; ++r)
      for (std::size_t f = 0; f < z.frames; ++f)
        out.values.at(c, r, f) = z.values.at(c, r, f);
  return out;
}

inline codec::LatentTensor trim_frames(const codec::LatentTensor& z,
                                       std::size_t frames) {
  require(z.layout == codec::Layout::diffusion, "trim_frames expects diffusion");
  require(frames <= z.frames, "cannot trim to more frames than present");
  if (frames == z.frames) return z;
  auto out = codec::LatentTensor::make_diffusion(frames, z.normalized);
  for (std::size_t c = 0; c < codec::kChannels; ++c)
    for (std::size_t r = 0; r < codec::kRowsPerChannel; ++r)
      for (std::size_t f = 0; f < frames; ++f)
        out.values.at(c, r, f) = z.values.at(c, r, f);
  return out;
}

// ===========================================================================
// Checkpoint container: magic + version + JSON header + raw f64 payload.
// ===========================================================================

struct Checkpoint {
  TrainConfig config;
  diffusion::NoiseSchedule schedule;
  denoiser::DenoiserParams params;
  codec::CodebookSet codebooks;
  codec::NormStats norm_stats;
  std::size_t step = 0;
  std::uint64_t rng_state = 0;
  std::vector<double> adam_m, adam_v;
  std::uint64_t adam_t = 0;
};

namespace detail {

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  j["schedule_steps"] = c.schedule_steps;
  j["beta_start"] = c.beta_start;
  j["beta_end"] = c.beta_end;
  j["checkpoint_interval"] = c.checkpoint_interval;
  j["adam_beta1"] = c.adam_beta1;
  j["adam_beta2"] = c.adam_beta2;
  j["adam_eps"] = c.adam_eps;
  j["model"] = {{"in_channels", c.model.in_channels},
                {"base_width", c.model.base_width},
                {"depth", c.model.depth},
                {"attn_dim", c.model.attn_dim},
                {"heads", c.model.heads},
                {"cond_dim", c.model.cond_dim},
                {"groups", c.model.groups}};
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.steps = j["steps"].get<std::size_t>();
  c.batch_size = j["batch_size"].get<std::size_t>();
  c.learning_rate = j["learning_rate"].get<double>();
  c.seed = j["seed"].get<std::uint64_t>();
  c.schedule_steps = j["schedule_steps"].get<std::size_t>();
  c.beta_start = j["beta_start"].get<double>();
  c.beta_end = j["beta_end"].get<double>();
  c.checkpoint_interval = j["checkpoint_interval"].get<std::size_t>();
  c.adam_beta1 = j["adam_beta1"].get<double>();
  c.adam_beta2 = j["adam_beta2"].get<double>();
  c.adam_eps = j["adam_eps"].get<double>();
  const auto& m = j["model"];
  c.model.in_channels = m["in_channels"].get<std::size_t>();
  c.model.base_width = m["base_width"].get<std::size_t>();
  c.model.depth = m["depth"].get<std::size_t>();
  c.model.attn_dim = m["attn_dim"].get<std::size_t>();
  c.model.heads = m["heads"].get<std::size_t>();
  c.model.cond_dim = m["cond_dim"].get<std::size_t>();
  c.model.groups = m["groups"].get<std::size_t>();
  return c;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string payload;
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = detail::config_to_json(ckpt.config);
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  header["adam_t"] = ckpt.adam_t;

  auto put_block = [&](const std::vector<double>& data) {
    const std::size_t off = payload.size();
    for (double v : data) le::put_f64(payload, v);
    return off;
  };
  header["schedule"] = {{"steps", ckpt.schedule.steps},
                        {"beta_offset", put_block(ckpt.schedule.beta)},
                        {"alpha_bar_offset", put_block(ckpt.schedule.alpha_bar)}};
  {
    std::vector<double> stats_flat;
    for (double v : ckpt.norm_stats.mean) stats_flat.push_back(v);
    for (double v : ckpt.norm_stats.stddev) stats_flat.push_back(v);
    header["norm_stats_offset"] = put_block(stats_flat);
  }
  header["codebooks"] = {{"n_stages", ckpt.codebooks.n_stages},
                         {"k", ckpt.codebooks.k},
                         {"dim", ckpt.codebooks.dim},
                         {"offset", put_block(ckpt.codebooks.data)}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, tensor] : ckpt.params.entries) {
    nlohmann::json tj;
    tj["name"] = name;
    tj["shape"] = tensor.shape;
    tj["dtype"] = "f64";
    tj["offset"] = put_block(tensor.v);
    tensors.push_back(std::move(tj));
  }
  header["tensors"] = std::move(tensors);
  header["adam_m_offset"] = put_block(ckpt.adam_m);
  header["adam_v_offset"] = put_block(ckpt.adam_v);
  header["adam_len"] = ckpt.adam_m.size();

  const std::string head = header.dump();
  std::string out;
  out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  le::put_u64(out, head.size());
  out += head;
  out += payload;

  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open checkpoint for write: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), "checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  require(bytes.size() > sizeof(kCheckpointMagic) + 8,
          path + ": truncated checkpoint");
  require(bytes.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic,
                        sizeof(kCheckpointMagic)) == 0,
          path + ": not a machgen checkpoint");
  const std::uint64_t head_len = le::get_u64(bytes, sizeof(kCheckpointMagic));
  const std::size_t head_start = sizeof(kCheckpointMagic) + 8;
  require(head_start + head_len <= bytes.size(), path + ": corrupt header");
  nlohmann::json header = nlohmann::json::parse(
      bytes.substr(head_start, head_len), nullptr, false);
  require(!header.is_discarded(), path + ": corrupt header JSON");
  const auto version = header.value("format_version", 0u);
  require(version == kCheckpointVersion,
          path + ": unsupported checkpoint version " + std::to_string(version) +
              " (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::string payload = bytes.substr(head_start + head_len);

  auto read_block = [&](std::size_t off, std::size_t count) {
    std::vector<double> out(count);
    require(off + 8 * count <= payload.size(), path + ": payload overrun");
    for (std::size_t i = 0; i < count; ++i)
      out[i] = le::get_f64(payload, off + 8 * i);
    return out;
  };

  Checkpoint ckpt;
  ckpt.config = detail::config_from_json(header["config"]);
  ckpt.step = header["step"].get<std::size_t>();
  ckpt.rng_state = header["rng_state"].get<std::uint64_t>();
  ckpt.adam_t = header["adam_t"].get<std::uint64_t>();
  ckpt.schedule.steps = header["schedule"]["steps"].get<std::size_t>();
  ckpt.schedule.beta = read_block(
      header["schedule"]["beta_offset"].get<std::size_t>(), ckpt.schedule.steps);
  ckpt.schedule.alpha_bar =
      read_block(header["schedule"]["alpha_bar_offset"].get<std::size_t>(),
                 ckpt.schedule.steps);
  {
    const auto stats_flat =
        read_block(header["norm_stats_offset"].get<std::size_t>(),
                   2 * codec::kChannels);
    for (std::size_t c = 0; c < codec::kChannels; ++c) {
      ckpt.norm_stats.mean[c] = stats_flat[c];
      ckpt.norm_stats.stddev[c] = stats_flat[codec::kChannels + c];
    }
  }
  {
    const auto& books = header["codebooks"];
    ckpt.codebooks.n_stages = books["n_stages"].get<std::size_t>();
    ckpt.codebooks.k = books["k"].get<std::size_t>();
    ckpt.codebooks.dim = books["dim"].get<std::size_t>();
    ckpt.codebooks.data =
        read_block(books["offset"].get<std::size_t>(),
                   ckpt.codebooks.n_stages * ckpt.codebooks.k *
                       ckpt.codebooks.dim);
  }
  ckpt.params = denoiser::param_layout(ckpt.config.model);
  for (const auto& tj : header["tensors"]) {
    Tensor& t = ckpt.params.at(tj["name"].get<std::string>());
    const auto shape = tj["shape"].get<std::vector<std::size_t>>();
    require(shape == t.shape,
            path + ": tensor shape mismatch for " + tj["name"].get<std::string>());
    t.v = read_block(tj["offset"].get<std::size_t>(), t.size());
  }
  const std::size_t adam_len = header["adam_len"].get<std::size_t>();
  ckpt.adam_m = read_block(header["adam_m_offset"].get<std::size_t>(), adam_len);
  ckpt.adam_v = read_block(header["adam_v_offset"].get<std::size_t>(), adam_len);
  return ckpt;
}

// ===========================================================================
// Training loop
// ===========================================================================

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, loss)
};

inline void write_loss_curve(
    const std::vector<std::pair<std::size_t, double>>& curve,
    const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot write loss curve: " + path);
  f << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", step, loss);
    f << buf;
  }
}

/// Trains the denoiser on the store's training split. Pass a checkpoint to
/// resume; the resumed trajectory is identical to an uninterrupted run.
/// `checkpoint_path`, when non-empty, receives periodic and final snapshots.
inline TrainResult train(const LatentStore& store, const TrainConfig& config,
                         const std::string& checkpoint_path = "",
                         const Checkpoint* resume = nullptr) {
  config.validate();
  std::vector<const LatentRecord*> train_set;
  for (const auto& r : store.records)
    if (r.split == "train") train_set.push_back(&r);
  require(!train_set.empty(), "latent store has no training records");
  const std::size_t frames = train_set.front()->latent.frames;
  for (const auto* r : train_set)
    require(r->latent.frames == frames,
            "training latents must share one frame count");
  const std::size_t multiple = static_cast<std::size_t>(1)
                               << config.model.depth;

  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  if (resume) {
    ckpt = *resume;
    require(ckpt.params.total_parameters() ==
                denoiser::param_layout(config.model).total_parameters(),
            "resume checkpoint does not match the model config");
  } else {
    ckpt.config = config;
    ckpt.schedule = diffusion::make_schedule(config.schedule_steps,
                                             config.beta_start, config.beta_end);
    ckpt.params = denoiser::init_params(config.model, config.seed);
    ckpt.codebooks = store.codebooks;
    ckpt.norm_stats = store.stats;
    ckpt.rng_state = Rng(hash_mix(config.seed, hash_str("train-loop"))).state;
    ckpt.adam_m.assign(ckpt.params.total_parameters(), 0.0);
    ckpt.adam_v.assign(ckpt.params.total_parameters(), 0.0);
  }

  // precompute condition tensors per training record
  std::vector<Tensor> conds;
  conds.reserve(train_set.size());
  for (const auto* r : train_set)
    conds.push_back(denoiser::cond_tensor(r->embedding));

  Rng rng(0);
  rng.state = ckpt.rng_state;
  denoiser::DenoiserParams grads = ckpt.params.shaped_zeros();
  denoiser::ForwardTrace trace;
  const double inv_batch = 1.0 / static_cast<double>(config.batch_size);

  for (std::size_t step = ckpt.step + 1; step <= config.steps; ++step) {
    for (auto& [name, g] : grads.entries) g.fill(0.0);
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::size_t pick =
          static_cast<std::size_t>(rng.below(train_set.size()));
      const LatentRecord& rec = *train_set[pick];
      const std::size_t t =
          1 + static_cast<std::size_t>(rng.below(ckpt.schedule.steps));
      const codec::LatentTensor z0 = pad_frames(rec.latent, multiple);
      Tensor eps(z0.values.shape);
      for (auto& v : eps.v) v = rng.normal();
      const auto noisy = diffusion::forward_noise_with(z0, t, ckpt.schedule,
                                                       std::move(eps));
      const Tensor out = denoiser::forward(config.model, ckpt.params,
                                           noisy.z_t.values, t, conds[pick],
                                           trace);
      const std::size_t numel = out.size();
      double loss_b = 0.0;
      Tensor d_out(out.shape);
      const double scale = 2.0 / (static_cast<double>(numel)) * inv_batch;
      for (std::size_t i = 0; i < numel; ++i) {
        const double diff = out.v[i] - noisy.eps.v[i];
        loss_b += diff * diff;
        d_out.v[i] = scale * diff;
      }
      batch_loss += loss_b / static_cast<double>(numel) * inv_batch;
      denoiser::backward(config.model, ckpt.params, trace, d_out, grads);
    }

    if (!std::isfinite(batch_loss)) {
      // leave the last written checkpoint in place and stop
      fail("non-finite loss at step " + std::to_string(step) +
           "; last good checkpoint retained");
    }

    // Adam update
    ckpt.adam_t += 1;
    const double b1 = config.adam_beta1, b2 = config.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(ckpt.adam_t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(ckpt.adam_t));
    std::size_t flat = 0;
    for (std::size_t e = 0; e < ckpt.params.entries.size(); ++e) {
      auto& theta = ckpt.params.entries[e].second.v;
      const auto& g = grads.entries[e].second.v;
      for (std::size_t i = 0; i < theta.size(); ++i, ++flat) {
        double& m = ckpt.adam_m[flat];
        double& v = ckpt.adam_v[flat];
        m = b1 * m + (1.0 - b1) * g[i];
        v = b2 * v + (1.0 - b2) * g[i] * g[i];
        theta[i] -= config.learning_rate * (m / bc1) /
                    (std::sqrt(v / bc2) + config.adam_eps);
      }
    }

    ckpt.step = step;
    ckpt.rng_state = rng.state;
    result.loss_curve.emplace_back(step, batch_loss);
    if (!checkpoint_path.empty() && config.checkpoint_interval > 0 &&
        step % config.checkpoint_interval == 0 && step != config.steps) {
      save_checkpoint(ckpt, checkpoint_path);
    }
  }

  require(ckpt.params.all_finite(), "non-finite parameters after training");
  if (!checkpoint_path.empty()) save_checkpoint(ckpt, checkpoint_path);
  return result;
}

}  // namespace machgen::trainer
