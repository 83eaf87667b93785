#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "deae/corpus_io.hpp"
#include "deae/rng.hpp"
#include "deae/types.hpp"

namespace deae {

enum class PromptStyle { name_based, ontology_based, generated };

struct Prompt {
  std::string event_type;
  std::vector<std::string> tokens;
  std::map<std::string, Span> role_slots;  // role -> token range within tokens
  PromptStyle style = PromptStyle::ontology_based;
  bool operator==(const Prompt&) const = default;

  std::string text() const {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) out += ' ';
      out += tokens[i];
    }
    return out;
  }
};

// An ordered set of generated prompts for one instance, with the generation
// log-likelihoods and their softmax-normalized weights.
struct PromptCluster {
  InstanceKey instance_key;
  std::vector<Prompt> prompts;
  std::vector<double> logliks;
  std::vector<double> weights;
};

// Concatenation of the role names, in ontology order; each role's slot covers
// its own name.
inline Prompt build_name_prompt(const EventOntology& ontology) {
  Prompt p;
  p.event_type = ontology.event_type;
  p.style = PromptStyle::name_based;
  for (const std::string& role : ontology.roles) {
    auto role_tokens = whitespace_tokenize(role);
    int start = static_cast<int>(p.tokens.size());
    p.tokens.insert(p.tokens.end(), role_tokens.begin(), role_tokens.end());
    p.role_slots[role] = Span{start, static_cast<int>(p.tokens.size()) - 1};
  }
  return p;
}

// The ontology template itself, with the slot positions located at load time.
inline Prompt build_ontology_prompt(const EventOntology& ontology) {
  Prompt p;
  p.event_type = ontology.event_type;
  p.style = PromptStyle::ontology_based;
  p.tokens = ontology.template_tokens;
  p.role_slots = ontology.template_slots;
  return p;
}

// Softmax of the generation log-likelihoods, computed stably (max subtracted
// before exponentiation).
inline std::vector<double> normalize_cluster_weights(const std::vector<double>& logliks) {
  if (logliks.empty())
    throw ValidationError("cannot normalize an empty log-likelihood list");
  double mx = logliks[0];
  for (double l : logliks) {
    if (!std::isfinite(l)) throw ValidationError("non-finite log-likelihood in cluster");
    mx = std::max(mx, l);
  }
  std::vector<double> w(logliks.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logliks.size(); ++i) {
    w[i] = std::exp(logliks[i] - mx);
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// ---------------------------------------------------------------------------
// Generated prompt validation (the coverage constraint)

// A generated prompt is usable when it covers the trigger surface form (as a
// substring, case-insensitive) and every role name can be located as a token
// subsequence so the role gets a slot. First occurrences become the slots;
// slots must not collide.
inline std::optional<Prompt> try_make_generated_prompt(const std::string& text,
                                                       const EventOntology& ontology,
                                                       const std::string& trigger_surface,
                                                       std::string* reason = nullptr) {
  auto fail = [&](const std::string& why) -> std::optional<Prompt> {
    if (reason) *reason = why;
    return std::nullopt;
  };
  Prompt p;
  p.event_type = ontology.event_type;
  p.style = PromptStyle::generated;
  p.tokens = whitespace_tokenize(text);
  if (p.tokens.empty()) return fail("empty prompt text");
  if (ascii_lower(p.text()).find(ascii_lower(trigger_surface)) == std::string::npos)
    return fail("does not cover the trigger '" + trigger_surface + "'");
  for (const std::string& role : ontology.roles) {
    int pos = find_token_subsequence(p.tokens, whitespace_tokenize(role));
    if (pos < 0) return fail("does not cover role '" + role + "'");
    p.role_slots[role] =
        Span{pos, pos + static_cast<int>(whitespace_tokenize(role).size()) - 1};
  }
  std::vector<Span> slots;
  for (const auto& [role, sp] : p.role_slots) slots.push_back(sp);
  std::sort(slots.begin(), slots.end());
  for (std::size_t i = 1; i < slots.size(); ++i)
    if (slots[i].start <= slots[i - 1].end) return fail("role slots collide");
  return p;
}

inline std::string trigger_surface_of(const Corpus& corpus, const EventInstance& inst) {
  const Document& doc = corpus.doc_of(inst);
  std::string out;
  for (int i = inst.trigger.start; i <= inst.trigger.end; ++i) {
    if (i > inst.trigger.start) out += ' ';
    out += doc.tokens[static_cast<std::size_t>(i)];
  }
  return out;
}

// Loads the cluster records for one instance from a JSON-lines file of
//   {doc_id, trigger:{start,end}, event_type, prompt_text, loglik}.
// Candidates failing the coverage constraint are excluded (reported through
// `warnings`) and the remaining log-likelihoods renormalized.
inline PromptCluster load_prompt_cluster(const std::string& path, const Corpus& corpus,
                                         const EventInstance& inst,
                                         std::vector<std::string>* warnings = nullptr) {
  const InstanceKey key = key_of(corpus, inst);
  const EventOntology& ontology = corpus.ontologies.at(inst.event_type);
  const std::string trigger = trigger_surface_of(corpus, inst);

  PromptCluster cluster;
  cluster.instance_key = key;
  int candidates = 0;
  for_each_json_line(path, [&](int lineno, const Json& obj) {
    std::string where = path + ":" + std::to_string(lineno);
    JsonAt at{obj, where};
    JsonAt trig{at.get("trigger"), where + " trigger"};
    InstanceKey rec_key{at.str("doc_id"), Span{trig.integer("start"), trig.integer("end")},
                        at.str("event_type")};
    if (!(rec_key == key)) return;
    ++candidates;
    std::string reason;
    auto prompt = try_make_generated_prompt(at.str("prompt_text"), ontology, trigger, &reason);
    if (!prompt) {
      if (warnings)
        warnings->push_back(where + ": candidate rejected: " + reason);
      return;
    }
    cluster.prompts.push_back(std::move(*prompt));
    cluster.logliks.push_back(at.real("loglik"));
  });
  if (candidates == 0)
    throw ValidationError(path + ": no prompt-cluster records for instance " + to_string(key));
  if (cluster.prompts.empty())
    throw ValidationError(path + ": all prompt candidates for instance " + to_string(key) +
                          " fail the coverage constraint; fall back to the ontology prompt "
                          "only (equivalent to lambda=1)");
  cluster.weights = normalize_cluster_weights(cluster.logliks);
  return cluster;
}

// ---------------------------------------------------------------------------
// Deterministic stub generator (test double for the external
// keywords-to-sentence model)

namespace detail {

// Token-level Levenshtein distance.
inline int token_edit_distance(const std::vector<std::string>& a,
                               const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Splits the template into one segment per role slot: boundaries fall at each
// slot start except the first, so any leading text sticks to the first
// segment and trailing text to the last.
inline std::vector<std::vector<std::string>> template_segments(const EventOntology& ontology) {
  std::vector<Span> slots;
  for (const auto& [role, sp] : ontology.template_slots) slots.push_back(sp);
  std::sort(slots.begin(), slots.end());
  std::vector<int> cuts{0};
  for (std::size_t i = 1; i < slots.size(); ++i) cuts.push_back(slots[i].start);
  cuts.push_back(static_cast<int>(ontology.template_tokens.size()));
  std::vector<std::vector<std::string>> segments;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    segments.emplace_back(ontology.template_tokens.begin() + cuts[i],
                          ontology.template_tokens.begin() + cuts[i + 1]);
  return segments;
}

}  // namespace detail

// Produces k deterministic prompt candidates: the trigger surface form
// followed by the template's clause segments, the first candidate in template
// order and the rest in seeded permutations. Log-likelihood of a candidate is
// minus its token edit distance to the template.
inline PromptCluster stub_generate_cluster(const EventOntology& ontology,
                                           const Corpus& corpus, const EventInstance& inst,
                                           int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("stub generator requires k >= 1");
  const std::string trigger = trigger_surface_of(corpus, inst);
  auto trigger_tokens = whitespace_tokenize(trigger);
  auto segments = detail::template_segments(ontology);

  PromptCluster cluster;
  cluster.instance_key = key_of(corpus, inst);
  SplitMix64 rng = stream_rng(seed, "stub_cluster/" + to_string(cluster.instance_key));
  for (int draw = 0; draw < k; ++draw) {
    std::vector<int> order(segments.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    if (draw > 0) rng.shuffle(order);
    std::vector<std::string> tokens = trigger_tokens;
    for (int idx : order)
      tokens.insert(tokens.end(), segments[idx].begin(), segments[idx].end());
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) text += ' ';
      text += tokens[i];
    }
    auto prompt = try_make_generated_prompt(text, ontology, trigger);
    if (!prompt)
      throw ComputeError("stub generator produced an invalid candidate: " + text);
    cluster.prompts.push_back(std::move(*prompt));
    cluster.logliks.push_back(
        -static_cast<double>(detail::token_edit_distance(tokens, ontology.template_tokens)));
  }
  cluster.weights = normalize_cluster_weights(cluster.logliks);
  return cluster;
}

// Writes a cluster in the cluster-file schema (one JSON line per prompt).
inline std::string serialize_cluster(const PromptCluster& cluster) {
  std::string out;
  for (std::size_t i = 0; i < cluster.prompts.size(); ++i) {
    Json obj;
    obj["doc_id"] = cluster.instance_key.doc_id;
    obj["trigger"] = Json{{"start", cluster.instance_key.trigger.start},
                          {"end", cluster.instance_key.trigger.end}};
    obj["event_type"] = cluster.instance_key.event_type;
    obj["prompt_text"] = cluster.prompts[i].text();
    obj["loglik"] = cluster.logliks[i];
    out += obj.dump();
    out += '\n';
  }
  return out;
}

}  // namespace deae
