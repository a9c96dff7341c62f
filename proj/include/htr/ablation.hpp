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

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "htr/train.hpp"

namespace htr {

struct AblationGrid {
  std::vector<Architecture> architectures{Architecture::transducer};
  std::vector<std::pair<std::size_t, std::size_t>> splits;  // (encoder, decoder) layers
  std::vector<std::size_t> beams{1};
  std::vector<bool> augmentation{false};

  std::size_t size() const {
    return architectures.size() * std::max<std::size_t>(1, splits.size()) * beams.size() *
           augmentation.size();
  }
};

struct AblationRow {
  Architecture architecture = Architecture::transducer;
  std::size_t encoder_layers = 0, decoder_layers = 0;
  bool augmentation = false;
  std::size_t beam = 1;
  double cer = 0;
  double mean_ms = 0, median_ms = 0, encoder_ms = 0;
  std::size_t parameters = 0;
  std::size_t failed_lines = 0;
};

// Trains one model per (architecture, split, augmentation) cell under
// dir/<cell> and evaluates it at every beam width. An empty split list
// means the base configuration's layer counts.
template <typename T>
std::vector<AblationRow> run_ablation(const RunConfig& base, const Vocabulary& vocab,
                                      const Dataset& train_set,
                                      const std::vector<ManifestEntry>& eval_set,
                                      const AblationGrid& grid, const std::filesystem::path& dir,
                                      std::ostream* log = nullptr) {
  if (grid.size() == 0) throw ContractError("ablation grid is empty");
  auto splits = grid.splits;
  if (splits.empty()) splits.push_back({base.model.encoder.layers, base.model.decoder.layers});
  std::vector<AblationRow> rows;
  for (Architecture arch : grid.architectures)
    for (const auto& [enc, dec] : splits)
      for (bool aug : grid.augmentation) {
        RunConfig cfg = base;
        cfg.model.architecture = arch;
        cfg.model.encoder.layers = enc;
        cfg.model.decoder.layers = dec;
        cfg.train.augment = aug;
        cfg.validate();
        const std::string cell = to_string(arch) + "-e" + std::to_string(enc) + "-d" +
                                 std::to_string(dec) + (aug ? "-aug" : "-noaug");
        if (log) *log << "ablation cell " << cell << "\n";
        TrainOptions topt;
        topt.dir = dir / cell;
        topt.log = log;
        train<T>(cfg, vocab, train_set, topt);
        const Recognizer<T> model =
            model_from_checkpoint<T>(Checkpoint::load(latest_checkpoint(topt.dir)));
        for (std::size_t beam : grid.beams) {
          EvalOptions eopt;
          eopt.decode.beam = beam;
          const EvalReport rep = evaluate(model, vocab, eval_set, eopt);
          AblationRow r;
          r.architecture = arch;
          r.encoder_layers = enc;
          r.decoder_layers = dec;
          r.augmentation = aug;
          r.beam = beam;
          r.cer = rep.cer;
          r.mean_ms = rep.mean_ms;
          r.median_ms = rep.median_ms;
          r.encoder_ms = rep.encoder_mean_ms;
          r.parameters = model.parameter_count();
          r.failed_lines = rep.failed;
          rows.push_back(r);
        }
      }
  return rows;
}

inline std::string ablation_tsv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "architecture\tencoder_layers\tdecoder_layers\taugmentation\tbeam\tcer\t"
        "mean_latency_ms\tmedian_latency_ms\tencoder_latency_ms\tparameters\tfailed_lines\n";
  char buf[64];
  for (const auto& r : rows) {
    os << to_string(r.architecture) << '\t' << r.encoder_layers << '\t' << r.decoder_layers
       << '\t' << (r.augmentation ? "on" : "off") << '\t' << r.beam;
    for (double v : {r.cer, r.mean_ms, r.median_ms, r.encoder_ms}) {
      std::snprintf(buf, sizeof buf, "\t%.6f", v);
      os << buf;
    }
    os << '\t' << r.parameters << '\t' << r.failed_lines << '\n';
  }
  return os.str();
}

// Fixed-width text table: one block per architecture, rows by layer split,
// augmentation and beam.
inline std::string ablation_summary(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  char buf[160];
  std::string current;
  for (const auto& r : rows) {
    const std::string arch = to_string(r.architecture);
    if (arch != current) {
      if (!current.empty()) os << '\n';
      current = arch;
      os << "Architecture: " << arch << '\n';
      std::snprintf(buf, sizeof buf, "  %-9s %-5s %-4s %9s %12s %12s %12s\n", "enc/dec", "aug",
                    "beam", "CER(%)", "latency(ms)", "encoder(ms)", "params");
      os << buf;
    }
    const std::string split = std::to_string(r.encoder_layers) + "/" + std::to_string(r.decoder_layers);
    std::snprintf(buf, sizeof buf, "  %-9s %-5s %-4zu %9.2f %12.3f %12.3f %12zu\n", split.c_str(),
                  r.augmentation ? "on" : "off", r.beam, 100.0 * r.cer, r.mean_ms, r.encoder_ms,
                  r.parameters);
    os << buf;
  }
  return os.str();
}

}  // namespace htr
