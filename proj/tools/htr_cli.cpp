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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "htr.hpp"

namespace fs = std::filesystem;
using namespace htr;

namespace {

enum Exit { kOk = 0, kFailure = 1, kContract = 2, kIo = 3, kPartial = 4 };

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ------------------------------------------------------------ generate

struct GenerateArgs {
  fs::path out, corpus, atlas, save_atlas, vocab_out;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz ";
  std::size_t count = 100, lines = 0, threads = 1, min_len = 4, max_len = 12;
  std::uint64_t seed = 0;
  bool no_augment = false, rtl = false;
  std::vector<std::string> set;
};

int run_generate(const GenerateArgs& a) {
  const std::u32string alphabet = utf8::decode(a.alphabet);
  GlyphAtlas atlas = a.atlas.empty() ? GlyphAtlas::procedural(alphabet, a.seed) : GlyphAtlas::load(a.atlas);
  if (a.rtl) atlas.right_to_left = true;
  if (!a.save_atlas.empty()) atlas.save(a.save_atlas);
  const std::vector<std::string> corpus =
      a.corpus.empty() ? synthetic_corpus(atlas.alphabet(), a.lines ? a.lines : a.count, a.seed,
                                          a.min_len, a.max_len)
                       : read_lines(a.corpus);
  GenerateSpec spec;
  spec.count = a.count;
  spec.seed = a.seed;
  spec.augment = !a.no_augment;
  spec.threads = a.threads;
  if (!a.set.empty()) spec.augmentation = RunConfig{}.with_overrides(a.set).train.augmentation;
  const auto entries = generate_dataset(corpus, atlas, spec, a.out);
  if (!a.vocab_out.empty()) Vocabulary::build_char(corpus).save(a.vocab_out);
  std::cout << "wrote " << entries.size() << " images and " << (a.out / "manifest.tsv").string()
            << "\n";
  return kOk;
}

// --------------------------------------------------------------- train

struct ModelArgs {
  fs::path config;
  std::vector<std::string> set;
  std::string architecture;
  std::string preset;  // "full" or "tiny"
  std::size_t steps = 0, batch = 0;
  bool steps_given = false;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

RunConfig resolve_config(const ModelArgs& a) {
  RunConfig base;
  if (a.preset == "tiny") base.model = ModelConfig::tiny(Architecture::transducer);
  RunConfig c = a.config.empty() ? base : RunConfig::load(a.config, base);
  std::vector<std::string> set = a.set;
  if (!a.architecture.empty()) set.push_back("model.architecture=" + a.architecture);
  if (a.steps_given) set.push_back("train.steps=" + std::to_string(a.steps));
  if (a.batch) set.push_back("train.batch_size=" + std::to_string(a.batch));
  if (a.seed_given) {
    set.push_back("train.seed=" + std::to_string(a.seed));
    set.push_back("model.init_seed=" + std::to_string(a.seed));
  }
  return set.empty() ? c : c.with_overrides(set);
}

Vocabulary resolve_vocabulary(RunConfig& cfg, const fs::path& manifest, const fs::path& out) {
  if (!cfg.model.vocabulary_path.empty()) return Vocabulary::load(cfg.model.vocabulary_path);
  std::vector<std::string> lines;
  for (const auto& e : read_manifest(manifest)) lines.push_back(e.transcript);
  if (lines.empty()) throw ContractError("manifest " + manifest.string() + " has no rows");
  Vocabulary v = Vocabulary::build_char(lines);
  fs::create_directories(out);
  v.save(out / "vocab.txt");
  return v;
}

int run_train(ModelArgs a, const fs::path& manifest, const fs::path& out, bool no_resume,
              bool print_config) {
  RunConfig cfg = resolve_config(a);
  if (print_config) {
    std::cout << cfg.to_ini();
    return kOk;
  }
  // An existing checkpoint already fixes the vocabulary.
  Vocabulary vocab = !no_resume && fs::exists(latest_checkpoint(out))
                         ? Checkpoint::load(latest_checkpoint(out)).vocabulary
                         : resolve_vocabulary(cfg, manifest, out);
  const Dataset data = load_dataset(manifest, vocab, cfg.model.frontend(), &std::cerr);
  TrainOptions opt;
  opt.dir = out;
  opt.resume = !no_resume;
  opt.log = &std::cerr;
  const TrainResult r = train<float>(cfg, vocab, data, opt);
  std::cout << "trained steps " << r.start_step << ".." << r.end_step << ", last loss "
            << r.last_loss;
  if (r.training_cer >= 0) std::cout << ", training CER " << r.training_cer;
  if (r.rejected_steps) std::cout << ", " << r.rejected_steps << " rejected step(s)";
  std::cout << "\ncheckpoint " << r.checkpoint.string() << "\n";
  return kOk;
}

// ------------------------------------------------------------ evaluate

int run_evaluate(const fs::path& ckpt, const fs::path& manifest, const EvalOptions& opt,
                 const fs::path& lines_out) {
  const Checkpoint c = Checkpoint::load(ckpt);
  const Recognizer<float> model = model_from_checkpoint<float>(c);
  const EvalReport r = evaluate(model, c.vocabulary, read_manifest(manifest), opt);
  if (!lines_out.empty()) {
    std::ostringstream os;
    os << "image\treference\thypothesis\tlatency_ms\terror\n";
    for (const auto& l : r.results)
      os << l.relative << '\t' << l.reference << '\t' << l.hypothesis << '\t' << l.total_ms
         << '\t' << l.error << '\n';
    write_file_atomic(lines_out, os.str());
  }
  for (const auto& l : r.results)
    if (!l.error.empty()) std::cerr << "error: " << l.relative << ": " << l.error << "\n";
  std::cout << "architecture\t" << to_string(c.config.model.architecture) << "\n"
            << "beam\t" << opt.decode.beam << "\n"
            << "lines\t" << r.lines << "\n"
            << "failed\t" << r.failed << "\n"
            << "cer\t" << r.cer << "\n"
            << "mean_latency_ms\t" << r.mean_ms << "\n"
            << "median_latency_ms\t" << r.median_ms << "\n"
            << "encoder_latency_ms\t" << r.encoder_mean_ms << "\n";
  return r.partial() ? kPartial : kOk;
}

// -------------------------------------------------------------- ablate

int run_ablate(const ModelArgs& a, const fs::path& manifest, fs::path eval_manifest,
               const fs::path& out, const std::string& archs, const std::string& splits,
               const std::string& beams, const std::string& augment) {
  RunConfig cfg = resolve_config(a);
  if (eval_manifest.empty()) eval_manifest = manifest;
  AblationGrid g;
  g.architectures.clear();
  for (const auto& s : split(archs, ',')) g.architectures.push_back(parse_architecture(s));
  for (const auto& s : split(splits, ',')) {
    const auto parts = split(s, '/');
    if (parts.size() != 2) throw ContractError("layer split '" + s + "' is not ENC/DEC");
    try {
      g.splits.push_back({std::stoul(parts[0]), std::stoul(parts[1])});
    } catch (const std::exception&) {
      throw ContractError("layer split '" + s + "' is not numeric");
    }
  }
  g.beams.clear();
  for (const auto& s : split(beams, ',')) {
    try {
      g.beams.push_back(std::stoul(s));
    } catch (const std::exception&) {
      throw ContractError("beam width '" + s + "' is not numeric");
    }
    if (g.beams.back() == 0) throw ContractError("beam width must be at least 1");
  }
  g.augmentation.clear();
  for (const auto& s : split(augment, ',')) {
    if (s != "on" && s != "off") throw ContractError("augmentation must be on or off, got " + s);
    g.augmentation.push_back(s == "on");
  }
  const Vocabulary vocab = resolve_vocabulary(cfg, manifest, out);
  const Dataset data = load_dataset(manifest, vocab, cfg.model.frontend(), &std::cerr);
  const auto rows =
      run_ablation<float>(cfg, vocab, data, read_manifest(eval_manifest), g, out, &std::cerr);
  write_file_atomic(out / "results.tsv", ablation_tsv(rows));
  const std::string summary = ablation_summary(rows);
  write_file_atomic(out / "summary.txt", summary);
  std::cout << summary;
  for (const auto& r : rows)
    if (r.failed_lines) return kPartial;
  return kOk;
}

// -------------------------------------------------- inspect-checkpoint

int run_inspect(const fs::path& ckpt, bool tensors) {
  const Checkpoint c = Checkpoint::load(ckpt);
  const std::size_t analytic = analytic_parameter_count(c.config.model, c.vocabulary.size());
  std::cout << "format_version\t" << Checkpoint::kVersion << "\n"
            << "architecture\t" << to_string(c.config.model.architecture) << "\n"
            << "encoder_layers\t" << c.config.model.encoder.layers << "\n"
            << "decoder_layers\t" << c.config.model.decoder.layers << "\n"
            << "vocabulary_size\t" << c.vocabulary.size() << "\n"
            << "step\t" << c.step << "\n"
            << "seed\t" << c.seed << "\n"
            << "data_position\t" << c.data_position << "\n"
            << "adam_updates\t" << c.adam_updates << "\n"
            << "tensors\t" << c.entries.size() << "\n"
            << "parameters\t" << c.parameter_count() << "\n"
            << "analytic_parameters\t" << analytic << "\n";
  if (tensors)
    for (const auto& e : c.entries) std::cout << e.name << "\t" << shape_str(e.shape) << "\n";
  if (analytic != c.parameter_count()) {
    std::cerr << "error: stored parameter count differs from the configuration's formula\n";
    return kContract;
  }
  return kOk;
}

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--config", m.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--set", m.set, "Override a config key: section.key=value (repeatable)");
  cmd->add_option("--arch", m.architecture, "transducer | cross_attention");
  cmd->add_option("--preset", m.preset, "Base configuration: full (default) or tiny")
      ->check(CLI::IsMember({"full", "tiny"}));
  cmd->add_option("--batch-size", m.batch, "Training batch size");
  cmd->add_option_function<std::size_t>(
      "--steps", [&m](std::size_t s) { m.steps = s, m.steps_given = true; }, "Total training steps");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Handwritten text-line recognition: data synthesis, training and evaluation"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  bool seed_given = false;
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed = s, seed_given = true; }, "Random seed");
  };

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render a synthetic line dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--count", gen.count, "Number of images");
  g->add_option("--corpus", gen.corpus, "Text lines to render (default: random words)");
  g->add_option("--lines", gen.lines, "Distinct random lines when no corpus is given");
  g->add_option("--min-length", gen.min_len, "Shortest random line");
  g->add_option("--max-length", gen.max_len, "Longest random line");
  g->add_option("--alphabet", gen.alphabet, "Characters of the procedural atlas");
  g->add_option("--atlas", gen.atlas, "Glyph atlas directory")->check(CLI::ExistingDirectory);
  g->add_option("--save-atlas", gen.save_atlas, "Write the atlas used to this directory");
  g->add_option("--vocab-out", gen.vocab_out, "Write a character vocabulary of the corpus");
  g->add_option("--threads", gen.threads, "Render threads");
  g->add_flag("--no-augment", gen.no_augment, "Render clean images");
  g->add_flag("--rtl", gen.rtl, "Lay glyphs out right to left");
  g->add_option("--set", gen.set, "Override an augment.* key (repeatable)");
  add_seed(g);

  ModelArgs tm;
  fs::path t_manifest, t_out;
  bool no_resume = false, print_config = false;
  auto* t = app.add_subcommand("train", "Train or resume a model");
  add_model_flags(t, tm);
  t->add_option("--manifest", t_manifest, "Training manifest");
  t->add_option("--out", t_out, "Checkpoint directory");
  t->add_flag("--no-resume", no_resume, "Ignore an existing checkpoint in --out");
  t->add_flag("--print-config", print_config, "Print the resolved configuration and exit");
  add_seed(t);

  fs::path e_ckpt, e_manifest, e_lines;
  EvalOptions eopt;
  auto* e = app.add_subcommand("evaluate", "Decode a manifest and report CER and latency");
  e->add_option("--checkpoint", e_ckpt, "Checkpoint file")->required();
  e->add_option("--manifest", e_manifest, "Evaluation manifest")->required();
  e->add_option("--beam", eopt.decode.beam, "Beam width K");
  e->add_option("--batch", eopt.batch, "Lines encoded together");
  e->add_option("--threads", eopt.threads, "Parallel decoding (latencies then overlap)");
  e->add_option("--max-symbols", eopt.decode.max_symbols, "Transducer labels per frame");
  e->add_flag("--length-norm", eopt.decode.length_norm, "Length-normalized beam ranking");
  e->add_option("--lines-out", e_lines, "Write per-line results (TSV)");
  add_seed(e);

  ModelArgs am;
  fs::path a_manifest, a_eval, a_out;
  std::string a_archs = "transducer,cross_attention", a_splits, a_beams = "1", a_aug = "off";
  auto* ab = app.add_subcommand("ablate", "Train and evaluate a grid of configurations");
  add_model_flags(ab, am);
  ab->add_option("--manifest", a_manifest, "Training manifest")->required();
  ab->add_option("--eval-manifest", a_eval, "Evaluation manifest (default: training manifest)");
  ab->add_option("--out", a_out, "Output directory")->required();
  ab->add_option("--architectures", a_archs, "Comma-separated architectures");
  ab->add_option("--splits", a_splits, "Comma-separated ENC/DEC layer counts");
  ab->add_option("--beams", a_beams, "Comma-separated beam widths");
  ab->add_option("--augment", a_aug, "Comma-separated on/off");
  add_seed(ab);

  fs::path i_ckpt;
  bool i_tensors = false;
  auto* in = app.add_subcommand("inspect-checkpoint", "Print checkpoint metadata");
  in->add_option("checkpoint", i_ckpt, "Checkpoint file")->required();
  in->add_flag("--tensors", i_tensors, "List every tensor");
  add_seed(in);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kContract;
  }

  try {
    if (g->parsed()) {
      gen.seed = seed;
      return run_generate(gen);
    }
    if (t->parsed()) {
      if (!print_config && (t_manifest.empty() || t_out.empty()))
        throw ContractError("train needs --manifest and --out");
      tm.seed = seed;
      tm.seed_given = seed_given;
      return run_train(tm, t_manifest, t_out, no_resume, print_config);
    }
    if (e->parsed()) return run_evaluate(e_ckpt, e_manifest, eopt, e_lines);
    if (ab->parsed()) {
      am.seed = seed;
      am.seed_given = seed_given;
      return run_ablate(am, a_manifest, a_eval, a_out, a_archs, a_splits, a_beams, a_aug);
    }
    if (in->parsed()) return run_inspect(i_ckpt, i_tensors);
  } catch (const ContractError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kContract;
  } catch (const IoError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kIo;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
