// Copyright 2026 The htr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "htr/checkpoint.hpp"
#include "htr/config.hpp"
#include "htr/frontend.hpp"
#include "htr/image.hpp"
#include "htr/metrics.hpp"
#include "htr/model.hpp"
#include "htr/optim.hpp"
#include "htr/schedule.hpp"
#include "htr/synth.hpp"
#include "htr/tokenizer.hpp"

namespace htr {

struct Sample {
  std::string relative;
  std::string transcript;
  LineImage raw;
  LineImage processed;
  std::vector<int> target;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t unknown_tokens = 0;  // UNK ids produced while encoding transcripts
};

// Reads every image of a manifest eagerly. Any unreadable image is fatal
// here; evaluation has its own tolerant path.
inline Dataset load_dataset(const std::filesystem::path& manifest, const Vocabulary& vocab,
                            const FrontendSpec& frontend, std::ostream* warn = nullptr) {
  const auto entries = read_manifest(manifest);
  if (entries.empty()) throw ContractError("manifest " + manifest.string() + " has no rows");
  Dataset d;
  for (const auto& e : entries) {
    Sample s;
    s.relative = e.relative;
    s.transcript = e.transcript;
    s.raw = read_pgm(e.image);
    s.processed = preprocess(s.raw, frontend);
    s.target = vocab.encode(e.transcript);
    const auto unk = static_cast<std::size_t>(
        std::count(s.target.begin(), s.target.end(), Vocabulary::kUnk));
    if (unk && warn)
      *warn << "warning: " << unk << " unknown token(s) in transcript of " << e.relative << "\n";
    d.unknown_tokens += unk;
    if (s.target.empty()) throw ContractError("empty transcript for " + e.relative);
    d.samples.push_back(std::move(s));
  }
  return d;
}

struct TrainBatch {
  PatchBatch patches;
  std::vector<std::vector<int>> targets;
  std::vector<std::size_t> indices;
};

// Sample j of step s is stream position p = s*B + j. Positions walk through
// per-epoch permutations keyed by (seed, epoch), so a batch is a pure
// function of (seed, step) and costs nothing to skip to on resume.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, std::uint64_t seed)
      : n_(n), batch_(batch), seed_(seed) {
    if (n == 0 || batch == 0) throw ContractError("batch stream needs samples and a batch size");
  }

  std::vector<std::size_t> indices(std::uint64_t step) const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < batch_; ++j) {
      const std::uint64_t p = step * batch_ + j;
      out.push_back(permutation(p / n_)[p % n_]);
    }
    return out;
  }

  std::size_t batch() const { return batch_; }

 private:
  const std::vector<std::size_t>& permutation(std::uint64_t epoch) const {
    std::lock_guard lock(mu_);
    auto it = cache_.find(epoch);
    if (it != cache_.end()) return it->second;
    if (cache_.size() > 4) cache_.erase(cache_.begin());
    std::vector<std::size_t> perm(n_);
    for (std::size_t i = 0; i < n_; ++i) perm[i] = i;
    CounterRng rng(hash_combine(seed_, 0x70e1ULL), epoch);
    for (std::size_t i = n_; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    return cache_.emplace(epoch, std::move(perm)).first->second;
  }

  std::size_t n_, batch_;
  std::uint64_t seed_;
  mutable std::mutex mu_;
  mutable std::map<std::uint64_t, std::vector<std::size_t>> cache_;
};

inline TrainBatch make_batch(const Dataset& data, const BatchStream& stream,
                             const FrontendSpec& frontend, const TrainConfig& cfg,
                             std::uint64_t step) {
  TrainBatch b;
  b.indices = stream.indices(step);
  std::vector<LineImage> lines;
  AugmentSpec aug = cfg.augmentation;
  aug.seed = hash_combine(cfg.seed, 0xa06ULL);
  for (std::size_t j = 0; j < b.indices.size(); ++j) {
    const Sample& s = data.samples[b.indices[j]];
    if (cfg.augment)
      lines.push_back(preprocess(augment(s.raw, aug, step * stream.batch() + j), frontend));
    else
      lines.push_back(s.processed);
    b.targets.push_back(s.target);
  }
  b.patches = collate(lines, frontend);
  return b;
}

// Greedy (or beam) transcripts of already preprocessed lines, encoded
// `batch` at a time.
template <typename T>
std::vector<std::string> transcribe(const Recognizer<T>& model, const Vocabulary& vocab,
                                    const std::vector<LineImage>& lines,
                                    const FrontendSpec& frontend, const DecodeOptions& opt = {},
                                    std::size_t batch = 8) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lines.size(); i += batch) {
    const std::size_t n = std::min(batch, lines.size() - i);
    PatchBatch pb = collate(std::span<const LineImage>(lines.data() + i, n), frontend);
    Tensor<T> visual = model.encode(pb);
    for (std::size_t b = 0; b < n; ++b)
      out.push_back(vocab.decode(model.decode(visual, pb, b, opt).tokens));
  }
  return out;
}

template <typename T>
double training_cer(const Recognizer<T>& model, const Vocabulary& vocab, const Dataset& data,
                    const FrontendSpec& frontend, const DecodeOptions& opt = {}) {
  std::vector<LineImage> lines;
  for (const auto& s : data.samples) lines.push_back(s.processed);
  const auto hyps = transcribe(model, vocab, lines, frontend, opt);
  CerAccumulator acc;
  for (std::size_t i = 0; i < hyps.size(); ++i) acc.add(hyps[i], data.samples[i].transcript);
  return acc.value();
}

struct TrainOptions {
  std::filesystem::path dir;  // checkpoints and metrics.tsv
  bool resume = true;
  std::ostream* log = nullptr;
  // Called after every completed step; throwing from it aborts training as
  // an interruption would.
  std::function<void(std::uint64_t step, double loss)> on_step;
};

struct TrainResult {
  std::uint64_t start_step = 0;
  std::uint64_t end_step = 0;
  double last_loss = 0;
  bool early_stopped = false;
  double training_cer = -1;  // last early-stop check, -1 when none ran
  std::size_t rejected_steps = 0;
  std::filesystem::path checkpoint;
};

inline std::filesystem::path latest_checkpoint(const std::filesystem::path& dir) {
  return dir / "latest.ckpt";
}

namespace detail {

inline std::string format_metrics_line(std::uint64_t step, double loss, double lr) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%llu\t%.9g\t%.17g\n", static_cast<unsigned long long>(step),
                loss, lr);
  return buf;
}

// Drops rows at or after `step`: they belong to the interrupted run past
// the checkpoint and will be produced again.
inline void truncate_metrics(const std::filesystem::path& path, std::uint64_t step) {
  std::string kept;
  if (std::ifstream in{path}) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      try {
        if (std::stoull(line.substr(0, tab)) >= step) break;
      } catch (const std::exception&) {
        throw IntegrityError("malformed metrics row in " + path.string() + ": " + line);
      }
      kept += line + "\n";
    }
  }
  write_file_atomic(path, kept);
}

inline bool same_model(const ModelConfig& a, const ModelConfig& b) {
  RunConfig x, y;
  x.model = a;
  y.model = b;
  return x.to_ini() == y.to_ini();
}

}  // namespace detail

// Runs the configured number of steps, resuming from dir/latest.ckpt when
// present. The run is bit-reproducible: batches, dropout and augmentation
// draws are all keyed by (seed, step).
template <typename T>
TrainResult train(const RunConfig& requested, const Vocabulary& vocab, const Dataset& data,
                  const TrainOptions& opt) {
  namespace fs = std::filesystem;
  requested.validate();
  if (data.samples.empty()) throw ContractError("training set is empty");
  std::error_code ec;
  fs::create_directories(opt.dir, ec);
  if (ec) throw IoError("cannot create " + opt.dir.string() + ": " + ec.message());

  RunConfig cfg = requested;
  std::optional<Checkpoint> resumed;
  if (opt.resume && fs::exists(latest_checkpoint(opt.dir))) {
    resumed = Checkpoint::load(latest_checkpoint(opt.dir));
    if (!detail::same_model(resumed->config.model, requested.model))
      throw ContractError("checkpoint in " + opt.dir.string() +
                          " was trained with a different model configuration");
    if (!(resumed->vocabulary == vocab))
      throw ContractError("checkpoint in " + opt.dir.string() + " uses a different vocabulary");
    if (resumed->seed != requested.train.seed)
      throw ContractError("checkpoint seed " + std::to_string(resumed->seed) +
                          " differs from the requested seed");
  }

  Recognizer<T> model(cfg.model, vocab.size());
  const AdamOptions aopt{cfg.train.beta1, cfg.train.beta2, cfg.train.epsilon, cfg.train.clip_norm};
  Adam<T> adam(model.parameters(), aopt);
  TrainResult result;
  if (resumed) {
    restore(*resumed, model, &adam);
    result.start_step = resumed->step;
  }
  const fs::path metrics = opt.dir / "metrics.tsv";
  detail::truncate_metrics(metrics, result.start_step);
  std::ofstream log(metrics, std::ios::app);
  if (!log) throw IoError("cannot append to " + metrics.string());
  std::ofstream incidents;

  const FrontendSpec frontend = cfg.model.frontend();
  const BatchStream stream(data.samples.size(), cfg.train.batch_size, cfg.train.seed);
  auto save = [&](std::uint64_t step) {
    Checkpoint c = capture(model, adam, cfg, vocab, step, step * cfg.train.batch_size);
    c.save(latest_checkpoint(opt.dir));
    result.checkpoint = latest_checkpoint(opt.dir);
    if (cfg.train.checkpoint_interval && step % cfg.train.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof name, "step-%08llu.ckpt", static_cast<unsigned long long>(step));
      fs::copy_file(result.checkpoint, opt.dir / name, fs::copy_options::overwrite_existing, ec);
      if (ec) throw IoError("cannot write " + (opt.dir / name).string() + ": " + ec.message());
    }
  };
  if (!resumed) save(0);

  auto fetch = [&](std::uint64_t step) {
    return std::async(std::launch::async, [&, step] {
      return make_batch(data, stream, frontend, cfg.train, step);
    });
  };

  std::uint64_t step = result.start_step;
  const std::uint64_t end = cfg.train.steps;
  std::future<TrainBatch> next;
  if (step < end) next = fetch(step);
  for (; step < end; ++step) {
    TrainBatch batch = next.get();
    if (step + 1 < end) next = fetch(step + 1);  // overlaps with this step's compute
    const double lr = lr_at(step, cfg.train.schedule);
    Tensor<T> loss = model.loss(batch.patches, batch.targets, cfg.train.seed, step,
                                cfg.train.label_smoothing);
    const double value = static_cast<double>(loss.item());
    backward(loss);
    const AdamReport rep = adam.step(lr, "step " + std::to_string(step));
    adam.zero_grad();
    if (!rep.applied) {
      ++result.rejected_steps;
      if (!incidents.is_open()) incidents.open(opt.dir / "incidents.log", std::ios::app);
      incidents << adam.incidents().back() << "\n";
      if (opt.log) *opt.log << adam.incidents().back() << "\n";
    }
    log << detail::format_metrics_line(step, value, lr);
    log.flush();
    result.last_loss = value;
    const std::uint64_t done = step + 1;
    if (opt.log && (done % 100 == 0 || done == end))
      *opt.log << "step " << done << "/" << end << " loss " << value << " lr " << lr << "\n";
    bool stop = false;
    if (cfg.train.eval_interval && done % cfg.train.eval_interval == 0) {
      result.training_cer = training_cer(model, vocab, data, frontend);
      if (opt.log) *opt.log << "step " << done << " training CER " << result.training_cer << "\n";
      stop = result.training_cer < cfg.train.target_cer;
    }
    if ((cfg.train.checkpoint_interval && done % cfg.train.checkpoint_interval == 0) || stop)
      save(done);
    if (opt.on_step) opt.on_step(step, value);
    if (stop) {
      result.early_stopped = true;
      ++step;
      break;
    }
  }
  if (next.valid()) next.wait();
  result.end_step = step;
  save(step);
  return result;
}

struct EvalOptions {
  DecodeOptions decode;
  std::size_t batch = 1;    // lines encoded together
  std::size_t threads = 1;  // >1 decodes chunks in parallel; latencies then overlap
};

struct LineResult {
  std::string relative;
  std::string reference;
  std::string hypothesis;
  std::string error;  // non-empty when the line could not be evaluated
  double encoder_ms = 0;
  double total_ms = 0;
};

struct EvalReport {
  double cer = 0;
  std::size_t lines = 0;
  std::size_t failed = 0;
  std::size_t reference_chars = 0;
  double mean_ms = 0;
  double median_ms = 0;
  double encoder_mean_ms = 0;
  std::vector<LineResult> results;

  bool partial() const { return failed > 0; }
};

// Decodes every manifest line. With one thread (the default) per-line
// latencies are comparable across models. Lines whose image cannot be read
// are recorded and skipped.
template <typename T>
EvalReport evaluate(const Recognizer<T>& model, const Vocabulary& vocab,
                    const std::vector<ManifestEntry>& entries, const EvalOptions& opt = {}) {
  using clock = std::chrono::steady_clock;
  if (entries.empty()) throw ContractError("evaluation manifest has no rows");
  if (opt.decode.beam == 0) throw ContractError("beam width must be at least 1");
  const FrontendSpec frontend = model.config().frontend();
  EvalReport rep;
  std::vector<LineImage> images;
  std::vector<std::size_t> owners;  // result index of each loaded image
  for (const auto& e : entries) {
    LineResult r;
    r.relative = e.relative;
    r.reference = e.transcript;
    try {
      // Loading and preprocessing are not part of recognition latency.
      images.push_back(preprocess(read_pgm(e.image), frontend));
      owners.push_back(rep.results.size());
    } catch (const Error& ex) {
      r.error = ex.what();
    }
    rep.results.push_back(std::move(r));
  }

  const std::size_t chunk = std::max<std::size_t>(1, opt.batch);
  const std::size_t chunks = (images.size() + chunk - 1) / chunk;
  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * chunk, n = std::min(chunk, images.size() - begin);
    const auto t0 = clock::now();
    PatchBatch pb = collate(std::span<const LineImage>(images.data() + begin, n), frontend);
    Tensor<T> visual = model.encode(pb);
    const double enc = std::chrono::duration<double, std::milli>(clock::now() - t0).count() / n;
    for (std::size_t b = 0; b < n; ++b) {
      const auto t1 = clock::now();
      Hypothesis h = model.decode(visual, pb, b, opt.decode);
      LineResult& r = rep.results[owners[begin + b]];
      r.hypothesis = vocab.decode(h.tokens);
      r.encoder_ms = enc;
      r.total_ms = enc + std::chrono::duration<double, std::milli>(clock::now() - t1).count();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(1, opt.threads), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.push_back(std::async(std::launch::async, [&] {
        for (std::size_t c; (c = next.fetch_add(1)) < chunks;) run_chunk(c);
      }));
    for (auto& f : pool) f.get();
  }

  CerAccumulator acc;
  std::vector<double> times;
  double enc_sum = 0;
  for (const auto& r : rep.results) {
    if (!r.error.empty()) {
      ++rep.failed;
      continue;
    }
    acc.add(r.hypothesis, r.reference);
    times.push_back(r.total_ms);
    enc_sum += r.encoder_ms;
  }
  rep.lines = times.size();
  rep.cer = rep.lines ? acc.value() : 0.0;
  rep.reference_chars = acc.totals().reference_length;
  if (!times.empty()) {
    double sum = 0;
    for (double t : times) sum += t;
    rep.mean_ms = sum / times.size();
    rep.encoder_mean_ms = enc_sum / times.size();
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size() / 2;
    rep.median_ms = times.size() % 2 ? times[m] : 0.5 * (times[m - 1] + times[m]);
  }
  return rep;
}

}  // namespace htr
