#pragma once

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deae/bias.hpp"
#include "deae/corpus_io.hpp"
#include "deae/evaluation.hpp"
#include "deae/manifest.hpp"
#include "deae/model.hpp"
#include "deae/training.hpp"
#include "deae/version.hpp"

namespace deae {
namespace cli {

// One machine-parsable line on stderr for every failure path.
inline std::string error_record(const std::string& type, const std::string& message) {
  Json j;
  j["error"] = Json{{"type", type}, {"message", message}};
  return j.dump();
}

inline std::map<std::string, int> parse_slot_specs(const std::vector<std::string>& specs) {
  std::map<std::string, int> out;
  for (const auto& spec : specs) {
    auto pos = spec.rfind('=');
    if (pos == std::string::npos || pos == 0 || pos + 1 >= spec.size())
      throw ValidationError("slot spec must look like role=count: " + spec);
    const std::string role = spec.substr(0, pos);
    int count = 0;
    try {
      count = std::stoi(spec.substr(pos + 1));
    } catch (const std::exception&) {
      throw ValidationError("slot spec must look like role=count: " + spec);
    }
    out[role] = count;
  }
  return out;
}

inline double parse_grid_number(const std::string& item) {
  try {
    std::size_t used = 0;
    const double value = std::stod(item, &used);
    if (used != item.size()) throw std::invalid_argument(item);
    return value;
  } catch (const std::exception&) {
    throw ValidationError("grid entries must be numbers: '" + item + "'");
  }
}

// Accepts "0,0.5,1" or the range form "start:end:step".
inline std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  if (text.find(':') != std::string::npos) {
    const std::size_t c1 = text.find(':');
    const std::size_t c2 = text.find(':', c1 + 1);
    if (c2 == std::string::npos || text.find(':', c2 + 1) != std::string::npos) {
      throw ValidationError("range grids must look like start:end:step: '" + text + "'");
    }
    const double lo = parse_grid_number(text.substr(0, c1));
    const double hi = parse_grid_number(text.substr(c1 + 1, c2 - c1 - 1));
    const double step = parse_grid_number(text.substr(c2 + 1));
    if (!(step > 0.0)) throw ValidationError("grid step must be positive");
    if (hi < lo) throw ValidationError("grid end must not be below its start");
    // i*step instead of repeated addition so 0:1:0.1 lands on 1.0 exactly enough.
    for (int i = 0;; ++i) {
      const double v = lo + i * step;
      if (v > hi + step * 1e-9) break;
      grid.push_back(std::min(v, hi));
    }
    return grid;
  }
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) grid.push_back(parse_grid_number(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct CorpusArgs {
  std::string corpus;
  std::string ontology;
  std::string format = "generic";
  std::string deps;

  void attach(CLI::App* cmd, bool with_deps = true, bool gold_names = false) {
    cmd->add_option(gold_names ? "--corpus,--gold" : "--corpus", corpus, "Corpus JSONL file")
        ->required();
    cmd->add_option("--ontology", ontology, "Ontology JSON file")->required();
    cmd->add_option("--format", format, "Corpus format")
        ->check(CLI::IsMember({"generic", "rams", "wikievents"}));
    if (with_deps)
      cmd->add_option(gold_names ? "--deps,--parses" : "--deps", deps,
                      "Dependency parse JSONL file");
  }

  void digest_into(RunManifest& man) const {
    man.add_input(ontology);
    man.add_input(corpus);
    if (!deps.empty()) man.add_input(deps);
  }

  Corpus load() const {
    Corpus c = load_corpus(corpus, corpus_format_from_string(format), load_ontologies(ontology));
    if (!deps.empty()) load_dependencies(c, deps);
    return c;
  }

  Json to_json() const {
    return Json{{"corpus", corpus},
                {"ontology", ontology},
                {"format", format},
                {"deps", deps}};
  }
};

struct ModelArgs {
  int h = 32;
  double lambda = 1.0;
  int max_span_length = 10;
  int max_input_length = 512;
  std::uint64_t seed = 42;
  std::vector<std::string> slot_specs;
  std::string style = "ontology";

  void attach(CLI::App* cmd, bool with_lambda = true, bool with_style = true) {
    cmd->add_option("--hidden-dim", h, "Hidden dimension");
    if (with_lambda)
      cmd->add_option("--lambda", lambda, "Mixture weight of the base prompt");
    cmd->add_option("--max-span-length", max_span_length, "Longest decodable span");
    cmd->add_option("--max-input-length", max_input_length, "Context window cap in tokens");
    cmd->add_option("--seed", seed, "Seed for initialization, batching and stubs")
        ->envname("DEAE_SEED");
    cmd->add_option("--slots", slot_specs,
                    "Per-role slot count as role=count (repeatable, max 3)");
    if (with_style)
      cmd->add_option("--style", style, "Base prompt style")
          ->check(CLI::IsMember({"name", "ontology", "debias"}));
  }

  ModelConfig config() const {
    ModelConfig cfg;
    cfg.h = h;
    cfg.lambda = lambda;
    cfg.max_span_length = max_span_length;
    cfg.max_input_length = max_input_length;
    cfg.seed = seed;
    cfg.slots_per_role = parse_slot_specs(slot_specs);
    validate_config(cfg);
    return cfg;
  }

  Json to_json() const {
    Json j = config_to_json(config());
    j["style"] = style;
    return j;
  }
};

struct PromptArgs {
  std::string cluster_file;
  int stub_k = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--cluster-file", cluster_file, "Generated prompt cluster JSONL");
    cmd->add_option("--stub-k", stub_k, "Generate stub clusters of this size");
  }

  void digest_into(RunManifest& man) const {
    if (!cluster_file.empty()) man.add_input(cluster_file);
  }

  PromptOptions options(std::uint64_t seed) const {
    PromptOptions opts;
    if (!cluster_file.empty()) opts.cluster_file = cluster_file;
    opts.stub_k = stub_k;
    opts.stub_seed = seed;
    return opts;
  }

  Json to_json() const {
    return Json{{"cluster_file", cluster_file}, {"stub_k", stub_k}};
  }
};

struct TrainArgs {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 8;
  int max_steps = 200;
  int eval_every = 0;
  double clip_norm = 1.0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lr", learning_rate, "Learning rate");
    cmd->add_option("--weight-decay", weight_decay, "Decoupled weight decay");
    cmd->add_option("--batch-size", batch_size, "Instances per step");
    cmd->add_option("--max-steps", max_steps, "Optimization steps");
    cmd->add_option("--eval-every", eval_every, "Dev evaluation cadence (0: final step only)");
    cmd->add_option("--clip-norm", clip_norm, "Global gradient norm cap");
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig tc;
    tc.learning_rate = learning_rate;
    tc.weight_decay = weight_decay;
    tc.batch_size = batch_size;
    tc.max_steps = max_steps;
    tc.eval_every = eval_every;
    tc.clip_norm = clip_norm;
    tc.seed = seed;
    validate_train_config(tc);
    return tc;
  }

  Json to_json() const {
    return Json{{"learning_rate", learning_rate}, {"weight_decay", weight_decay},
                {"batch_size", batch_size},       {"max_steps", max_steps},
                {"eval_every", eval_every},       {"clip_norm", clip_norm}};
  }
};

inline SplitTag split_from_flag(const std::string& s) {
  if (s == "train") return SplitTag::train;
  if (s == "dev") return SplitTag::dev;
  if (s == "test") return SplitTag::test;
  throw ValidationError("unknown split: " + s);
}

// Runs `work` between the manifest's initial and final writes.
template <typename Fn>
void with_manifest(RunManifest& man, const std::string& path, Fn&& work) {
  man.started_at = iso8601_utc_now();
  man.write(path);
  try {
    work();
  } catch (const std::exception& e) {
    man.status = "failed";
    man.error = e.what();
    man.finished_at = iso8601_utc_now();
    man.write(path);
    throw;
  }
  man.status = "complete";
  man.finished_at = iso8601_utc_now();
  man.write(path);
}

inline void maybe_print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestOpts {
  std::string ontology;
  std::string format = "generic";
  std::vector<std::string> train_files, dev_files, test_files;
  std::string deps;
  std::string out;
  std::string manifest;
  bool print_config = false;

  Json to_json() const {
    return Json{{"ontology", ontology}, {"format", format},   {"train_files", train_files},
                {"dev_files", dev_files}, {"test_files", test_files}, {"deps", deps},
                {"out", out}};
  }
};

inline void run_ingest(const IngestOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  if (o.train_files.empty() && o.dev_files.empty() && o.test_files.empty())
    throw ValidationError("ingest needs at least one input file");
  RunManifest man;
  man.command = "ingest";
  man.argv = argv;
  man.config = o.to_json();
  const std::string manifest_path = o.manifest.empty() ? o.out + ".manifest.json" : o.manifest;
  man.add_input(o.ontology);
  for (const auto& group : {o.train_files, o.dev_files, o.test_files})
    for (const auto& f : group) man.add_input(f);
  if (!o.deps.empty()) man.add_input(o.deps);

  with_manifest(man, manifest_path, [&] {
    Corpus corpus;
    corpus.ontologies = load_ontologies(o.ontology);
    const CorpusFormat fmt = corpus_format_from_string(o.format);
    for (const auto& f : o.train_files) load_corpus_into(corpus, f, fmt, SplitTag::train);
    for (const auto& f : o.dev_files) load_corpus_into(corpus, f, fmt, SplitTag::dev);
    for (const auto& f : o.test_files) load_corpus_into(corpus, f, fmt, SplitTag::test);
    if (!o.deps.empty()) load_dependencies(corpus, o.deps);
    write_file(o.out, serialize_corpus(corpus));
    man.record_output(o.out);

    long n_train = 0, n_dev = 0, n_test = 0;
    for (const auto& inst : corpus.instances) {
      if (inst.split == SplitTag::train) ++n_train;
      else if (inst.split == SplitTag::dev) ++n_dev;
      else ++n_test;
    }
    std::cout << "documents " << corpus.documents.size() << " instances "
              << corpus.instances.size() << " (train " << n_train << ", dev " << n_dev
              << ", test " << n_test << ")\n";
    std::cout << "wrote " << o.out << "\n";
  });
}

struct TrainOpts {
  CorpusArgs corpus;
  ModelArgs model;
  PromptArgs prompts;
  TrainArgs train;
  std::string checkpoint_out;
  std::string curve_out;
  std::string manifest;
  bool verbose = false;
  bool print_config = false;

  Json to_json() const {
    Json j;
    j["corpus"] = corpus.to_json();
    j["model"] = model.to_json();
    j["prompts"] = prompts.to_json();
    j["train"] = train.to_json();
    j["checkpoint_out"] = checkpoint_out;
    j["curve_out"] = curve_out;
    return j;
  }
};

inline std::string curve_to_jsonl(const std::vector<TrainLogEntry>& curve) {
  std::string out;
  for (const auto& e : curve) {
    Json j;
    j["step"] = e.step;
    j["loss"] = e.loss;
    j["grad_norm"] = e.grad_norm;
    if (e.dev_arg_c) j["dev_arg_c"] = *e.dev_arg_c;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline void run_train(const TrainOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  if (o.model.style != "debias" && (!o.prompts.cluster_file.empty() || o.prompts.stub_k > 0)) {
    throw ValidationError("prompt clusters only apply to --style debias");
  }
  RunManifest man;
  man.command = "train";
  man.argv = argv;
  man.config = o.to_json();
  man.seed = o.model.seed;
  const std::string manifest_path =
      o.manifest.empty() ? o.checkpoint_out + ".manifest.json" : o.manifest;
  o.corpus.digest_into(man);
  o.prompts.digest_into(man);

  with_manifest(man, manifest_path, [&] {
    Corpus corpus = o.corpus.load();
    const PromptOptions popts = o.prompts.options(o.model.seed);
    std::vector<std::string> warnings;
    Model model =
        make_model(corpus, o.model.config(), extraction_style_from_string(o.model.style));
    std::vector<int> needed = instance_indices_of_split(corpus, SplitTag::train);
    for (int idx : instance_indices_of_split(corpus, SplitTag::dev)) needed.push_back(idx);
    auto inputs = build_prompt_inputs(model, corpus, needed, popts, &warnings);
    TrainResult result = train(std::move(model), corpus, o.train.config(o.model.seed), inputs,
                               &warnings, o.verbose ? &std::cout : nullptr);
    save_checkpoint(result.model, o.checkpoint_out);
    man.record_output(o.checkpoint_out);
    if (!o.curve_out.empty()) {
      write_file(o.curve_out, curve_to_jsonl(result.curve));
      man.record_output(o.curve_out);
    }
    maybe_print_warnings(warnings);
    std::cout << "trained " << result.curve.size() << " steps, final loss "
              << result.final_loss << "\n";
    if (result.best_step >= 0)
      std::cout << "selected checkpoint from step " << result.best_step << " (dev Arg-C F1 "
                << result.best_dev_arg_c << ")\n";
    else
      std::cout << "no dev split: kept the final parameters\n";
    std::cout << "wrote " << o.checkpoint_out << "\n";
  });
}

struct SweepOpts {
  CorpusArgs corpus;
  ModelArgs model;
  PromptArgs prompts;
  TrainArgs train;
  std::string grid = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  std::string checkpoint_out;
  std::string report_out;
  std::string manifest;
  bool print_config = false;

  Json to_json() const {
    Json j;
    j["corpus"] = corpus.to_json();
    j["model"] = model.to_json();
    j["prompts"] = prompts.to_json();
    j["train"] = train.to_json();
    j["grid"] = grid;
    j["checkpoint_out"] = checkpoint_out;
    j["report_out"] = report_out;
    return j;
  }
};

inline void run_sweep(const SweepOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  RunManifest man;
  man.command = "sweep-lambda";
  man.argv = argv;
  man.config = o.to_json();
  man.seed = o.model.seed;
  const std::string manifest_path =
      o.manifest.empty() ? o.checkpoint_out + ".manifest.json" : o.manifest;
  o.corpus.digest_into(man);
  o.prompts.digest_into(man);

  with_manifest(man, manifest_path, [&] {
    Corpus corpus = o.corpus.load();
    const PromptOptions popts = o.prompts.options(o.model.seed);
    std::vector<std::string> warnings;
    SweepResult result = sweep_lambda(corpus, o.model.config(), o.train.config(o.model.seed),
                                      parse_grid(o.grid), popts, &warnings, &std::cout);
    save_checkpoint(result.best_run.model, o.checkpoint_out);
    man.record_output(o.checkpoint_out);
    if (!o.report_out.empty()) {
      Json j;
      Json points = Json::array();
      for (const auto& p : result.points)
        points.push_back(Json{{"lambda", p.lambda}, {"dev_arg_c", p.dev_arg_c}});
      j["points"] = std::move(points);
      j["best_lambda"] = result.best_lambda;
      j["best_dev_arg_c"] = result.best_dev_arg_c;
      write_file(o.report_out, j.dump(2) + "\n");
      man.record_output(o.report_out);
    }
    maybe_print_warnings(warnings);
    std::cout << "best lambda " << result.best_lambda << " (dev Arg-C F1 "
              << result.best_dev_arg_c << ")\n";
    std::cout << "wrote " << o.checkpoint_out << "\n";
  });
}

struct EvalOpts {
  CorpusArgs corpus;
  PromptArgs prompts;
  std::string checkpoint;
  std::string split = "test";
  std::optional<std::uint64_t> seed;  // default: the checkpoint's seed
  std::string predictions_out;
  std::string report_out;
  std::string manifest;
  bool print_config = false;

  Json to_json() const {
    Json j;
    j["corpus"] = corpus.to_json();
    j["prompts"] = prompts.to_json();
    j["checkpoint"] = checkpoint;
    j["split"] = split;
    if (seed) j["seed"] = *seed;
    j["predictions_out"] = predictions_out;
    j["report_out"] = report_out;
    return j;
  }
};

inline void run_eval_cmd(const EvalOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  RunManifest man;
  man.command = "eval";
  man.argv = argv;
  man.config = o.to_json();
  man.add_input(o.checkpoint);
  const std::string manifest_path =
      o.manifest.empty()
          ? (o.report_out.empty() ? o.checkpoint + ".eval.manifest.json"
                                  : o.report_out + ".manifest.json")
          : o.manifest;
  o.corpus.digest_into(man);
  o.prompts.digest_into(man);

  with_manifest(man, manifest_path, [&] {
    std::vector<std::string> warnings;
    Corpus corpus = o.corpus.load();
    Model model = load_checkpoint(o.checkpoint);
    const std::uint64_t seed = o.seed.value_or(model.config.seed);
    man.seed = seed;
    const PromptOptions popts = o.prompts.options(seed);
    EvalRun run = run_eval(model, corpus, split_from_flag(o.split), popts, &warnings);
    if (!o.predictions_out.empty()) {
      write_predictions(o.predictions_out, run.predictions);
      man.record_output(o.predictions_out);
    }
    if (!o.report_out.empty()) {
      write_file(o.report_out, report_to_json(run.report).dump(2) + "\n");
      man.record_output(o.report_out);
    }
    maybe_print_warnings(warnings);
    std::cout << report_to_text(run.report);
  });
}

struct ZeroshotOpts {
  std::string corpus;
  std::string ontology;
  std::string format = "generic";
  int n = 4;
  std::string out;
  std::string manifest;
  bool print_config = false;

  Json to_json() const {
    return Json{{"corpus", corpus}, {"ontology", ontology}, {"format", format},
                {"n", n},           {"out", out}};
  }
};

inline void run_zeroshot(const ZeroshotOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  RunManifest man;
  man.command = "zeroshot-split";
  man.argv = argv;
  man.config = o.to_json();
  man.add_input(o.ontology);
  man.add_input(o.corpus);
  const std::string manifest_path = o.manifest.empty() ? o.out + ".manifest.json" : o.manifest;

  with_manifest(man, manifest_path, [&] {
    Corpus corpus = load_corpus(o.corpus, corpus_format_from_string(o.format),
                                load_ontologies(o.ontology));
    Corpus split = zero_shot_split(std::move(corpus), o.n);
    write_file(o.out, serialize_corpus(split));
    man.record_output(o.out);

    std::map<std::string, std::pair<long, bool>> by_type;  // count, unseen
    for (const auto& inst : split.instances) {
      auto& entry = by_type[inst.event_type];
      entry.first += 1;
      if (inst.split == SplitTag::test) entry.second = true;
    }
    std::cout << "seen types keep train/dev; unseen types move to test\n";
    for (const auto& [type, entry] : by_type)
      std::cout << "  " << type << " " << entry.first << " instance(s) "
                << (entry.second ? "unseen" : "seen") << "\n";
    std::cout << "wrote " << o.out << "\n";
  });
}

struct BiasOpts {
  CorpusArgs corpus;
  std::string predictions;
  std::string predictions_b;
  std::string split = "test";
  std::string report_out;
  std::string manifest;
  bool print_config = false;

  Json to_json() const {
    Json j;
    j["corpus"] = corpus.to_json();
    j["predictions"] = predictions;
    j["predictions_b"] = predictions_b;
    j["split"] = split;
    j["report_out"] = report_out;
    return j;
  }
};

inline void run_bias(const BiasOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  RunManifest man;
  man.command = "analyze-bias";
  man.argv = argv;
  man.config = o.to_json();
  man.add_input(o.predictions);
  if (!o.predictions_b.empty()) man.add_input(o.predictions_b);
  const std::string manifest_path =
      o.manifest.empty()
          ? (o.report_out.empty() ? o.predictions + ".bias.manifest.json"
                                  : o.report_out + ".manifest.json")
          : o.manifest;
  o.corpus.digest_into(man);

  with_manifest(man, manifest_path, [&] {
    Corpus corpus = o.corpus.load();
    const std::vector<int> idxs = instance_indices_of_split(corpus, split_from_flag(o.split));
    if (idxs.empty()) throw ValidationError("split has no instances: " + o.split);
    auto preds = load_predictions(o.predictions, corpus);

    Json report;
    const BiasRatio spurious = spurious_role_error_ratio(corpus, preds, idxs);
    report["spurious_role_error"] = ratio_to_json(spurious);
    std::cout << "spurious role error ratio " << spurious.ratio() << " (" << spurious.numerator
              << "/" << spurious.denominator << ")\n";
    if (!o.corpus.deps.empty()) {
      const BiasRatio syn = syntactic_match_ratio(corpus, preds, idxs);
      report["syntactic_match"] = ratio_to_json(syn);
      std::cout << "syntactic match ratio " << syn.ratio() << " (" << syn.numerator << "/"
                << syn.denominator << ")\n";
    }
    if (!o.predictions_b.empty()) {
      auto preds_b = load_predictions(o.predictions_b, corpus);
      StyleComparison cmp = compare_prompt_styles(corpus, preds, preds_b, idxs);
      report["style_comparison"] = comparison_to_json(cmp);
      std::cout << "style A Arg-C F1 " << cmp.report_a.overall.arg_c.f1() << ", style B Arg-C F1 "
                << cmp.report_b.overall.arg_c.f1() << ", " << cmp.disagreements.size()
                << " role-level disagreement(s)\n";
    }
    if (!o.report_out.empty()) {
      write_file(o.report_out, report.dump(2) + "\n");
      man.record_output(o.report_out);
      std::cout << "wrote " << o.report_out << "\n";
    }
  });
}

struct RobustnessOpts {
  CorpusArgs corpus;
  PromptArgs prompts;
  std::string checkpoint;
  std::string perturbed;
  std::string split = "test";
  std::optional<std::uint64_t> seed;  // default: the checkpoint's seed
  std::string report_out;
  std::string predictions_raw_out;
  std::string predictions_perturbed_out;
  std::string manifest;
  bool print_config = false;

  Json to_json() const {
    Json j;
    j["corpus"] = corpus.to_json();
    j["prompts"] = prompts.to_json();
    j["checkpoint"] = checkpoint;
    j["perturbed"] = perturbed;
    j["split"] = split;
    if (seed) j["seed"] = *seed;
    j["report_out"] = report_out;
    j["predictions_raw_out"] = predictions_raw_out;
    j["predictions_perturbed_out"] = predictions_perturbed_out;
    return j;
  }
};

inline void run_robustness(const RobustnessOpts& o, const std::vector<std::string>& argv) {
  if (o.print_config) {
    std::cout << o.to_json().dump() << "\n";
    return;
  }
  RunManifest man;
  man.command = "robustness";
  man.argv = argv;
  man.config = o.to_json();
  man.add_input(o.checkpoint);
  man.add_input(o.perturbed);
  const std::string manifest_path =
      o.manifest.empty()
          ? (o.report_out.empty() ? o.checkpoint + ".robustness.manifest.json"
                                  : o.report_out + ".manifest.json")
          : o.manifest;
  o.corpus.digest_into(man);
  o.prompts.digest_into(man);

  with_manifest(man, manifest_path, [&] {
    std::vector<std::string> warnings;
    Corpus corpus = o.corpus.load();
    Model model = load_checkpoint(o.checkpoint);
    const std::uint64_t seed = o.seed.value_or(model.config.seed);
    man.seed = seed;
    const PromptOptions popts = o.prompts.options(seed);
    const SplitTag split = split_from_flag(o.split);

    EvalRun raw = run_eval(model, corpus, split, popts, &warnings);

    auto overrides = load_perturbed_templates(o.perturbed, corpus.ontologies);
    PromptOptions popts_perturbed = popts;
    popts_perturbed.base_override = &overrides;
    EvalRun perturbed = run_eval(model, corpus, split, popts_perturbed, &warnings);

    RobustnessReport report = robustness_delta(raw.report, perturbed.report);
    if (!o.predictions_raw_out.empty()) {
      write_predictions(o.predictions_raw_out, raw.predictions);
      man.record_output(o.predictions_raw_out);
    }
    if (!o.predictions_perturbed_out.empty()) {
      write_predictions(o.predictions_perturbed_out, perturbed.predictions);
      man.record_output(o.predictions_perturbed_out);
    }
    if (!o.report_out.empty()) {
      write_file(o.report_out, robustness_to_json(report).dump(2) + "\n");
      man.record_output(o.report_out);
    }
    maybe_print_warnings(warnings);
    std::cout << "raw Arg-C F1 " << report.raw_arg_c_f1 << "\n";
    std::cout << "perturbed Arg-C F1 " << report.perturbed_arg_c_f1 << "\n";
    std::cout << "delta " << report.delta << "\n";
  });
}

}  // namespace cli

// Entry point shared by the binary and the tests. Returns the process exit
// code: 0 success, 1 usage, 2 invalid data, 3 runtime failure.
inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Prompt-based event argument extraction toolkit"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "Read options from a TOML/INI file (flags win)");
  app.require_subcommand(1);

  std::vector<std::string> argv_copy;
  for (int i = 0; i < argc; ++i) argv_copy.emplace_back(argv[i]);

  cli::IngestOpts ingest;
  CLI::App* c_ingest = app.add_subcommand("ingest", "Validate and normalize corpora");
  c_ingest->add_option("--ontology", ingest.ontology, "Ontology JSON file")->required();
  c_ingest->add_option("--format", ingest.format, "Input corpus format")
      ->check(CLI::IsMember({"generic", "rams", "wikievents"}));
  c_ingest->add_option("--train-file", ingest.train_files, "Corpus file ingested as train");
  c_ingest->add_option("--dev-file", ingest.dev_files, "Corpus file ingested as dev");
  c_ingest->add_option("--test-file", ingest.test_files, "Corpus file ingested as test");
  c_ingest->add_option("--deps", ingest.deps, "Dependency parse JSONL to validate");
  c_ingest->add_option("--out", ingest.out, "Normalized corpus JSONL")->required();
  c_ingest->add_option("--manifest", ingest.manifest, "Manifest path");
  c_ingest->add_flag("--print-config", ingest.print_config, "Print the effective config");
  c_ingest->callback([&] { cli::run_ingest(ingest, argv_copy); });

  cli::TrainOpts train_o;
  CLI::App* c_train = app.add_subcommand("train", "Train an extraction model");
  train_o.corpus.attach(c_train, /*with_deps=*/false);
  train_o.model.attach(c_train);
  train_o.prompts.attach(c_train);
  train_o.train.attach(c_train);
  c_train->add_option("--checkpoint-out,--out", train_o.checkpoint_out, "Checkpoint JSON")
      ->required();
  c_train->add_option("--curve-out", train_o.curve_out, "Training curve JSONL");
  c_train->add_option("--manifest", train_o.manifest, "Manifest path");
  c_train->add_flag("--verbose", train_o.verbose, "Log every step");
  c_train->add_flag("--print-config", train_o.print_config, "Print the effective config");
  c_train->callback([&] { cli::run_train(train_o, argv_copy); });

  cli::SweepOpts sweep_o;
  CLI::App* c_sweep = app.add_subcommand("sweep-lambda", "Train across a lambda grid");
  sweep_o.corpus.attach(c_sweep, /*with_deps=*/false);
  sweep_o.model.attach(c_sweep, /*with_lambda=*/false, /*with_style=*/false);
  sweep_o.prompts.attach(c_sweep);
  sweep_o.train.attach(c_sweep);
  c_sweep->add_option("--grid", sweep_o.grid, "Lambda grid: 0,0.5,1 or start:end:step");
  c_sweep->add_option("--checkpoint-out,--out", sweep_o.checkpoint_out, "Best checkpoint JSON")
      ->required();
  c_sweep->add_option("--report-out,--report", sweep_o.report_out, "Sweep report JSON");
  c_sweep->add_option("--manifest", sweep_o.manifest, "Manifest path");
  c_sweep->add_flag("--print-config", sweep_o.print_config, "Print the effective config");
  c_sweep->callback([&] { cli::run_sweep(sweep_o, argv_copy); });

  cli::EvalOpts eval_o;
  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  eval_o.corpus.attach(c_eval);
  eval_o.prompts.attach(c_eval);
  c_eval->add_option("--checkpoint,--ckpt", eval_o.checkpoint, "Checkpoint JSON")->required();
  c_eval->add_option("--split", eval_o.split, "Split to score")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  c_eval->add_option("--seed", eval_o.seed, "Seed for stub cluster generation")
      ->envname("DEAE_SEED");
  c_eval->add_option("--predictions-out", eval_o.predictions_out, "Predictions JSONL");
  c_eval->add_option("--report-out,--report", eval_o.report_out, "Report JSON");
  c_eval->add_option("--manifest", eval_o.manifest, "Manifest path");
  c_eval->add_flag("--print-config", eval_o.print_config, "Print the effective config");
  c_eval->callback([&] { cli::run_eval_cmd(eval_o, argv_copy); });

  cli::ZeroshotOpts zs_o;
  CLI::App* c_zs = app.add_subcommand("zeroshot-split", "Re-split so test holds unseen types");
  c_zs->add_option("--corpus", zs_o.corpus, "Corpus JSONL file")->required();
  c_zs->add_option("--ontology", zs_o.ontology, "Ontology JSON file")->required();
  c_zs->add_option("--format", zs_o.format, "Corpus format")
      ->check(CLI::IsMember({"generic", "rams", "wikievents"}));
  c_zs->add_option("--n", zs_o.n, "Number of seen event types")->required();
  c_zs->add_option("--out", zs_o.out, "Rewritten corpus JSONL")->required();
  c_zs->add_option("--manifest", zs_o.manifest, "Manifest path");
  c_zs->add_flag("--print-config", zs_o.print_config, "Print the effective config");
  c_zs->callback([&] { cli::run_zeroshot(zs_o, argv_copy); });

  cli::BiasOpts bias_o;
  CLI::App* c_bias = app.add_subcommand("analyze-bias", "Bias diagnostics over predictions");
  bias_o.corpus.attach(c_bias, /*with_deps=*/true, /*gold_names=*/true);
  c_bias->add_option("--predictions,--pred", bias_o.predictions, "Predictions JSONL")->required();
  c_bias->add_option("--predictions-b,--pred-b", bias_o.predictions_b,
                     "Second predictions JSONL to compare against");
  c_bias->add_option("--split", bias_o.split, "Split to score")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  c_bias->add_option("--report-out,--report", bias_o.report_out, "Report JSON");
  c_bias->add_option("--manifest", bias_o.manifest, "Manifest path");
  c_bias->add_flag("--print-config", bias_o.print_config, "Print the effective config");
  c_bias->callback([&] { cli::run_bias(bias_o, argv_copy); });

  cli::RobustnessOpts rob_o;
  CLI::App* c_rob = app.add_subcommand("robustness", "Template perturbation sensitivity");
  rob_o.corpus.attach(c_rob);
  rob_o.prompts.attach(c_rob);
  c_rob->add_option("--checkpoint,--ckpt", rob_o.checkpoint, "Checkpoint JSON")->required();
  c_rob->add_option("--perturbed,--alt-prompts", rob_o.perturbed, "Perturbed template JSON")
      ->required();
  c_rob->add_option("--split", rob_o.split, "Split to score")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  c_rob->add_option("--seed", rob_o.seed, "Seed for stub cluster generation")
      ->envname("DEAE_SEED");
  c_rob->add_option("--report-out,--report", rob_o.report_out, "Report JSON");
  c_rob->add_option("--predictions-raw-out", rob_o.predictions_raw_out,
                    "Raw-template predictions JSONL");
  c_rob->add_option("--predictions-perturbed-out", rob_o.predictions_perturbed_out,
                    "Perturbed-template predictions JSONL");
  c_rob->add_option("--manifest", rob_o.manifest, "Manifest path");
  c_rob->add_flag("--print-config", rob_o.print_config, "Print the effective config");
  c_rob->callback([&] { cli::run_robustness(rob_o, argv_copy); });

  try {
    app.parse(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << cli::error_record("validation", e.what()) << "\n";
    return 2;
  } catch (const ComputeError& e) {
    std::cerr << cli::error_record("runtime", e.what()) << "\n";
    return 3;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << cli::error_record("usage", e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << cli::error_record("runtime", e.what()) << "\n";
    return 3;
  }
  return 0;
}

}  // namespace deae
