#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deae/model.hpp"
#include "deae/prompts.hpp"

namespace deae {

// Where the prompts for each instance come from.
struct PromptOptions {
  std::optional<std::string> cluster_file;  // cluster JSONL covering the instances
  int stub_k = 0;                           // >0: generate stub clusters of size k
  std::uint64_t stub_seed = 42;
  // Replacement base prompts keyed by event type (used by the robustness
  // harness); events without an entry keep their regular base prompt.
  const std::map<std::string, Prompt>* base_override = nullptr;
};

inline PromptInput prompts_for_instance(const Model& model, const Corpus& corpus,
                                        const EventInstance& inst, const PromptOptions& opts,
                                        std::vector<std::string>* warnings = nullptr) {
  auto oit = corpus.ontologies.find(inst.event_type);
  if (oit == corpus.ontologies.end())
    throw ValidationError("no ontology entry for event type " + inst.event_type);
  const EventOntology& ont = oit->second;

  PromptInput pin;
  bool overridden = false;
  if (opts.base_override) {
    auto bit = opts.base_override->find(inst.event_type);
    if (bit != opts.base_override->end()) {
      pin.base = bit->second;
      overridden = true;
    }
  }
  if (!overridden) {
    pin.base = model.style == ExtractionStyle::name_based ? build_name_prompt(ont)
                                                          : build_ontology_prompt(ont);
  }

  // The cluster only participates below lambda=1; at lambda=1 the run must be
  // indistinguishable from single-prompt extraction, so skip it entirely.
  if (model.style == ExtractionStyle::debiased && model.config.lambda < 1.0) {
    if (opts.cluster_file) {
      pin.cluster = load_prompt_cluster(*opts.cluster_file, corpus, inst, warnings);
    } else if (opts.stub_k > 0) {
      pin.cluster = stub_generate_cluster(ont, corpus, inst, opts.stub_k, opts.stub_seed);
    } else {
      throw ValidationError(
          "debias extraction below lambda=1 needs a prompt cluster: pass a cluster file or a "
          "stub cluster size");
    }
  }
  return pin;
}

// One prompt input per instance, built up front so training epochs and
// evaluation never re-read cluster files.
inline std::map<InstanceKey, PromptInput> build_prompt_inputs(
    const Model& model, const Corpus& corpus, const std::vector<int>& instance_indices,
    const PromptOptions& opts, std::vector<std::string>* warnings = nullptr) {
  std::map<InstanceKey, PromptInput> inputs;
  for (int idx : instance_indices) {
    const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
    inputs[key_of(corpus, inst)] = prompts_for_instance(model, corpus, inst, opts, warnings);
  }
  return inputs;
}

inline std::vector<int> instance_indices_of_split(const Corpus& corpus, SplitTag split) {
  std::vector<int> idxs;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i)
    if (corpus.instances[i].split == split) idxs.push_back(static_cast<int>(i));
  return idxs;
}

}  // namespace deae
