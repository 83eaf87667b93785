#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "deae/corpus_io.hpp"
#include "deae/evaluation.hpp"

namespace deae {

struct BiasRatio {
  long numerator = 0;
  long denominator = 0;
  double ratio() const {
    return denominator == 0 ? 0.0 : static_cast<double>(numerator) / denominator;
  }
};

// Fraction of predicted arguments whose role has no gold filler in the same
// instance. High values indicate the model answers role prompts that the
// event does not actually fill.
inline BiasRatio spurious_role_error_ratio(
    const Corpus& corpus, const std::map<InstanceKey, std::vector<Prediction>>& predictions,
    const std::vector<int>& instance_indices) {
  BiasRatio r;
  for (int idx : instance_indices) {
    const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
    auto pit = predictions.find(key_of(corpus, inst));
    if (pit == predictions.end())
      throw ValidationError("no predictions recorded for instance " +
                            to_string(key_of(corpus, inst)));
    std::set<std::string> gold_roles;
    for (const auto& arg : inst.arguments) gold_roles.insert(arg.role);
    for (const auto& p : pit->second) {
      if (!p.span) continue;
      r.denominator += 1;
      if (!gold_roles.count(p.role)) r.numerator += 1;
    }
  }
  return r;
}

// Fraction of predicted arguments whose span head carries the dependency
// label the ontology expects for that role. Requires a parse for every
// scored document and a label expectation for every predicted role.
inline BiasRatio syntactic_match_ratio(
    const Corpus& corpus, const std::map<InstanceKey, std::vector<Prediction>>& predictions,
    const std::vector<int>& instance_indices) {
  BiasRatio r;
  for (int idx : instance_indices) {
    const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
    auto pit = predictions.find(key_of(corpus, inst));
    if (pit == predictions.end())
      throw ValidationError("no predictions recorded for instance " +
                            to_string(key_of(corpus, inst)));
    const std::string& doc_id = corpus.doc_of(inst).doc_id;
    const EventOntology& ont = corpus.ontologies.at(inst.event_type);
    for (const auto& p : pit->second) {
      if (!p.span) continue;
      auto parse_it = corpus.parses.find(doc_id);
      if (parse_it == corpus.parses.end())
        throw ValidationError("syntactic analysis needs a dependency parse for document " +
                              doc_id);
      auto lit = ont.role_dep_labels.find(p.role);
      if (lit == ont.role_dep_labels.end())
        throw ValidationError("ontology for " + inst.event_type +
                              " does not map role '" + p.role + "' to a dependency label");
      const int head = derived_span_head(parse_it->second, *p.span);
      r.denominator += 1;
      if (parse_it->second.labels[static_cast<std::size_t>(head)] == lit->second)
        r.numerator += 1;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Prompt style comparison

struct StyleDisagreement {
  InstanceKey key;
  std::string role;
  std::vector<Span> a_spans;  // predicted spans for the role under each style
  std::vector<Span> b_spans;
};

struct StyleComparison {
  EvalReport report_a, report_b;
  BiasRatio spurious_a, spurious_b;
  std::vector<StyleDisagreement> disagreements;
};

// Scores two prediction sets over the same instances and records every
// (instance, role) whose predicted spans differ between the two.
inline StyleComparison compare_prompt_styles(
    const Corpus& corpus, const std::map<InstanceKey, std::vector<Prediction>>& preds_a,
    const std::map<InstanceKey, std::vector<Prediction>>& preds_b,
    const std::vector<int>& instance_indices) {
  StyleComparison cmp;
  cmp.report_a = evaluate(corpus, preds_a, instance_indices);
  cmp.report_b = evaluate(corpus, preds_b, instance_indices);
  cmp.spurious_a = spurious_role_error_ratio(corpus, preds_a, instance_indices);
  cmp.spurious_b = spurious_role_error_ratio(corpus, preds_b, instance_indices);

  for (int idx : instance_indices) {
    const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
    const InstanceKey key = key_of(corpus, inst);
    auto spans_by_role = [](const std::vector<Prediction>& preds) {
      std::map<std::string, std::vector<Span>> by_role;
      for (const auto& p : preds) {
        auto& v = by_role[p.role];
        if (p.span) v.push_back(*p.span);
      }
      for (auto& [role, v] : by_role) std::sort(v.begin(), v.end());
      return by_role;
    };
    auto a = spans_by_role(preds_a.at(key));
    auto b = spans_by_role(preds_b.at(key));
    std::set<std::string> roles;
    for (const auto& [role, v] : a) roles.insert(role);
    for (const auto& [role, v] : b) roles.insert(role);
    for (const auto& role : roles) {
      std::vector<Span> va = a.count(role) ? a[role] : std::vector<Span>{};
      std::vector<Span> vb = b.count(role) ? b[role] : std::vector<Span>{};
      if (va != vb) cmp.disagreements.push_back({key, role, std::move(va), std::move(vb)});
    }
  }
  return cmp;
}

// ---------------------------------------------------------------------------
// Template robustness

// Perturbed template files hold a JSON array of {event_type, template}.
// A perturbed template must keep every role of the event mentioned exactly
// once (otherwise the comparison would change what is asked, not how).
inline std::map<std::string, Prompt> load_perturbed_templates(const std::string& path,
                                                              const OntologyMap& ontologies) {
  Json root = parse_json_file(path);
  if (!root.is_array())
    throw ValidationError(path + ": perturbed template file must be a JSON array");
  std::map<std::string, Prompt> out;
  int idx = 0;
  for (const Json& entry : root) {
    JsonAt at{entry, path + "[" + std::to_string(idx) + "]"};
    const std::string event_type = at.str("event_type");
    auto oit = ontologies.find(event_type);
    if (oit == ontologies.end())
      throw ValidationError(at.where + ": no ontology entry for event type " + event_type);
    if (out.count(event_type))
      throw ValidationError(at.where + ": duplicate perturbed template for " + event_type);
    EventOntology perturbed = oit->second;
    perturbed.template_text = at.str("template");
    perturbed.template_tokens = whitespace_tokenize(perturbed.template_text);
    compute_template_slots(perturbed, "perturbed template for " + event_type);
    Prompt prompt;
    prompt.event_type = event_type;
    prompt.tokens = perturbed.template_tokens;
    prompt.role_slots = perturbed.template_slots;
    prompt.style = PromptStyle::ontology_based;
    out[event_type] = std::move(prompt);
    ++idx;
  }
  return out;
}

struct RobustnessReport {
  EvalReport raw;
  EvalReport perturbed;
  double raw_arg_c_f1 = 0.0;
  double perturbed_arg_c_f1 = 0.0;
  double delta = 0.0;  // perturbed minus raw; negative = degradation
};

inline RobustnessReport robustness_delta(const EvalReport& raw, const EvalReport& perturbed) {
  RobustnessReport r;
  r.raw = raw;
  r.perturbed = perturbed;
  r.raw_arg_c_f1 = raw.overall.arg_c.f1();
  r.perturbed_arg_c_f1 = perturbed.overall.arg_c.f1();
  r.delta = r.perturbed_arg_c_f1 - r.raw_arg_c_f1;
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline Json ratio_to_json(const BiasRatio& r) {
  Json j;
  j["numerator"] = r.numerator;
  j["denominator"] = r.denominator;
  j["ratio"] = r.ratio();
  return j;
}

inline Json comparison_to_json(const StyleComparison& cmp) {
  Json j;
  j["a"] = Json{{"report", report_to_json(cmp.report_a)},
                {"spurious_role_error", ratio_to_json(cmp.spurious_a)}};
  j["b"] = Json{{"report", report_to_json(cmp.report_b)},
                {"spurious_role_error", ratio_to_json(cmp.spurious_b)}};
  Json arr = Json::array();
  for (const auto& d : cmp.disagreements) {
    Json e;
    e["doc_id"] = d.key.doc_id;
    e["event_type"] = d.key.event_type;
    e["trigger"] = Json{{"start", d.key.trigger.start}, {"end", d.key.trigger.end}};
    e["role"] = d.role;
    auto spans = [](const std::vector<Span>& v) {
      Json a = Json::array();
      for (const Span& s : v) a.push_back(Json{{"start", s.start}, {"end", s.end}});
      return a;
    };
    e["a_spans"] = spans(d.a_spans);
    e["b_spans"] = spans(d.b_spans);
    arr.push_back(std::move(e));
  }
  j["disagreements"] = std::move(arr);
  return j;
}

inline Json robustness_to_json(const RobustnessReport& r) {
  Json j;
  j["raw"] = report_to_json(r.raw);
  j["perturbed"] = report_to_json(r.perturbed);
  j["raw_arg_c_f1"] = r.raw_arg_c_f1;
  j["perturbed_arg_c_f1"] = r.perturbed_arg_c_f1;
  j["delta"] = r.delta;
  return j;
}

}  // namespace deae
