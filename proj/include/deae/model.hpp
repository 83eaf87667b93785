#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "deae/encdec.hpp"
#include "deae/json_util.hpp"
#include "deae/prompts.hpp"
#include "deae/tensor.hpp"
#include "deae/types.hpp"

namespace deae {

struct ModelConfig {
  int h = 32;
  double lambda = 1.0;       // weight of the original prompt in the mixture
  int max_span_length = 10;  // L_max
  int max_input_length = 512;
  std::uint64_t seed = 42;
  std::map<std::string, int> slots_per_role;  // default 1, capped at 3

  int slots_for(const std::string& role) const {
    auto it = slots_per_role.find(role);
    return it == slots_per_role.end() ? 1 : it->second;
  }
};

inline void validate_config(const ModelConfig& cfg) {
  if (cfg.h <= 0) throw ValidationError("model dimension h must be positive");
  if (cfg.max_span_length <= 0) throw ValidationError("max_span_length must be positive");
  if (cfg.max_input_length <= 0) throw ValidationError("max_input_length must be positive");
  if (!(cfg.lambda >= 0.0 && cfg.lambda <= 1.0))
    throw ValidationError("lambda must lie in [0,1]");
  for (const auto& [role, k] : cfg.slots_per_role)
    if (k < 1 || k > 3)
      throw ValidationError("slots_per_role for '" + role + "' must be in [1,3]");
}

// Which base prompt drives extraction for a checkpoint.
enum class ExtractionStyle { name_based, ontology_based, debiased };

inline const char* to_string(ExtractionStyle s) {
  switch (s) {
    case ExtractionStyle::name_based: return "name";
    case ExtractionStyle::ontology_based: return "ontology";
    case ExtractionStyle::debiased: return "debias";
  }
  return "?";
}

inline ExtractionStyle extraction_style_from_string(const std::string& s) {
  if (s == "name") return ExtractionStyle::name_based;
  if (s == "ontology") return ExtractionStyle::ontology_based;
  if (s == "debias") return ExtractionStyle::debiased;
  throw ValidationError("unknown extraction style: " + s);
}

// Per-role span selector parameters.
struct RoleSelector {
  std::string role;
  Matrix w_start;  // 1 x h
  Matrix w_end;    // 1 x h
};

struct Model {
  ModelConfig config;
  ExtractionStyle style = ExtractionStyle::ontology_based;
  ToyEncoderDecoder backbone;
  Matrix sentinel;  // 1 x h, scored at augmented index 0 (no-argument)
  std::map<std::string, RoleSelector> selectors;
};

// Gradient buffers mirroring Model's trainable tensors.
struct ModelGrads {
  EncDecParams encdec;
  Matrix sentinel;
  std::map<std::string, RoleSelector> selectors;
};

inline ModelGrads zero_grads(const Model& model) {
  ModelGrads g;
  g.encdec = model.backbone.zero_grads();
  g.sentinel = Matrix(1, model.config.h);
  for (const auto& [role, sel] : model.selectors) {
    RoleSelector s;
    s.role = role;
    s.w_start = Matrix(1, model.config.h);
    s.w_end = Matrix(1, model.config.h);
    g.selectors[role] = std::move(s);
  }
  return g;
}

// Named view over every trainable tensor, in a fixed deterministic order.
// Registries of a Model and of its ModelGrads align index by index.
inline std::vector<std::pair<std::string, Matrix*>> parameter_registry(EncDecParams& p,
                                                                       Matrix& sentinel,
                                                                       std::map<std::string, RoleSelector>& sel) {
  std::vector<std::pair<std::string, Matrix*>> out;
  p.for_each([&](const std::string& name, Matrix& m) { out.emplace_back(name, &m); });
  out.emplace_back("sentinel", &sentinel);
  for (auto& [role, s] : sel) {
    out.emplace_back("selector." + role + ".w_start", &s.w_start);
    out.emplace_back("selector." + role + ".w_end", &s.w_end);
  }
  return out;
}

inline std::vector<std::pair<std::string, Matrix*>> parameter_registry(Model& m) {
  return parameter_registry(m.backbone.params(), m.sentinel, m.selectors);
}

inline std::vector<std::pair<std::string, Matrix*>> parameter_registry(ModelGrads& g) {
  return parameter_registry(g.encdec, g.sentinel, g.selectors);
}

inline Model make_model(const Corpus& corpus, const ModelConfig& cfg, ExtractionStyle style) {
  validate_config(cfg);
  Model m;
  m.config = cfg;
  m.style = style;
  m.backbone = ToyEncoderDecoder(Vocab::build(corpus), cfg.h, cfg.max_input_length, cfg.seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.h));
  {
    SplitMix64 rng = stream_rng(cfg.seed, "init/sentinel");
    m.sentinel = random_uniform(1, cfg.h, scale, rng);
  }
  for (const auto& [type, ont] : corpus.ontologies) {
    for (const auto& role : ont.roles) {
      if (m.selectors.count(role)) continue;
      RoleSelector sel;
      sel.role = role;
      SplitMix64 rs = stream_rng(cfg.seed, "init/selector/" + role + "/w_start");
      sel.w_start = random_uniform(1, cfg.h, scale, rs);
      SplitMix64 re = stream_rng(cfg.seed, "init/selector/" + role + "/w_end");
      sel.w_end = random_uniform(1, cfg.h, scale, re);
      m.selectors[role] = std::move(sel);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Windowing

// The model consumes the instance's context window, defaulting to the whole
// document truncated symmetrically around the trigger to max_input_length.
inline Span compute_window(const EventInstance& inst, const Document& doc, int max_len) {
  int cs = 0, ce = static_cast<int>(doc.tokens.size()) - 1;
  if (inst.context_window) {
    cs = inst.context_window->start;
    ce = inst.context_window->end;
  }
  if (ce - cs + 1 <= max_len) return Span{cs, ce};
  const int trig_len = inst.trigger.length();
  if (trig_len > max_len)
    throw ValidationError("trigger span of " + std::to_string(trig_len) +
                          " tokens exceeds max_input_length " + std::to_string(max_len));
  int start = inst.trigger.start - (max_len - trig_len) / 2;
  start = std::max(cs, std::min(start, ce - max_len + 1));
  return Span{start, start + max_len - 1};
}

inline std::vector<std::string> window_tokens(const Document& doc, Span window) {
  return std::vector<std::string>(doc.tokens.begin() + window.start,
                                  doc.tokens.begin() + window.end + 1);
}

// ---------------------------------------------------------------------------
// Pipeline operations

// H_X: the instance representation, a decoder pass over the instance tokens
// conditioned on the encoder memory of the same tokens.
inline HiddenStates encode_instance(const Model& model, const Corpus& corpus,
                                    const EventInstance& inst) {
  Span window = compute_window(inst, corpus.doc_of(inst), model.config.max_input_length);
  auto tokens = window_tokens(corpus.doc_of(inst), window);
  HiddenStates memory = model.backbone.encode(tokens);
  return model.backbone.decode(tokens, memory);
}

// H_pt: a decoder pass over the prompt tokens against the instance memory.
inline HiddenStates encode_prompt(const Model& model, const Prompt& prompt,
                                  const HiddenStates& encoder_memory) {
  if (prompt.tokens.empty()) throw ValidationError("cannot encode an empty prompt");
  return model.backbone.decode(prompt.tokens, encoder_memory);
}

// Convex combination with coefficients (lambda, (1-lambda) w_1, ...). The
// boundaries are exact: lambda=1 returns H_orig bit for bit, lambda=0 with a
// singleton weight-1 cluster returns that representation bit for bit.
inline HiddenStates debias_mixture(const HiddenStates& H_orig,
                                   const std::vector<std::pair<HiddenStates, double>>& cluster_reps,
                                   double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ValidationError("lambda must lie in [0,1]");
  if (lambda == 1.0) return H_orig;
  double wsum = 0.0;
  for (const auto& [H, w] : cluster_reps) {
    if (!H.same_shape(H_orig))
      throw ValidationError("mixture shape mismatch: " + std::to_string(H.rows) + "x" +
                            std::to_string(H.cols) + " vs " + std::to_string(H_orig.rows) +
                            "x" + std::to_string(H_orig.cols));
    wsum += w;
  }
  if (cluster_reps.empty() || std::abs(wsum - 1.0) > 1e-9)
    throw ValidationError("cluster weights must sum to 1");
  if (lambda == 0.0 && cluster_reps.size() == 1 && cluster_reps[0].second == 1.0)
    return cluster_reps[0].first;
  Matrix out(H_orig.rows, H_orig.cols);
  if (lambda > 0.0) add_inplace(out, H_orig, lambda);
  for (const auto& [H, w] : cluster_reps) {
    const double coef = (1.0 - lambda) * w;
    if (coef > 0.0) add_inplace(out, H, coef);
  }
  return out;
}

// phi_a: mean-pool of the prompt hidden states over the role's slot.
inline Matrix role_representation(const HiddenStates& H_p, const Prompt& prompt,
                                  const std::string& role) {
  auto it = prompt.role_slots.find(role);
  if (it == prompt.role_slots.end())
    throw ValidationError("prompt for " + prompt.event_type + " has no slot for role '" +
                          role + "'");
  const Span slot = it->second;
  Matrix phi(1, H_p.cols);
  for (int i = slot.start; i <= slot.end; ++i)
    for (int j = 0; j < H_p.cols; ++j) phi.a[static_cast<std::size_t>(j)] += H_p.at(i, j);
  if (slot.length() > 1)
    for (double& v : phi.a) v /= static_cast<double>(slot.length());
  return phi;
}

// Start/end distributions over augmented positions 0..N (0 = no-argument
// sentinel, i>=1 = window position i-1).
struct SpanDistributions {
  std::vector<double> p_start, p_end;
  std::vector<double> logp_start, logp_end;
  int positions() const { return static_cast<int>(p_start.size()); }
};

inline SpanDistributions span_distributions(const RoleSelector& selector, const Matrix& phi_a,
                                            const Matrix& H_X, const Matrix& sentinel) {
  const int h = H_X.cols;
  if (phi_a.cols != h || selector.w_start.cols != h || selector.w_end.cols != h ||
      sentinel.cols != h)
    throw ValidationError("span selector dimension mismatch");
  auto one_side = [&](const Matrix& w, std::vector<double>& p, std::vector<double>& logp) {
    // phi = w (elementwise) phi_a; logits_i = dot(phi, H_aug[i])
    std::vector<double> phi(static_cast<std::size_t>(h));
    for (int j = 0; j < h; ++j)
      phi[static_cast<std::size_t>(j)] =
          w.a[static_cast<std::size_t>(j)] * phi_a.a[static_cast<std::size_t>(j)];
    std::vector<double> logits(static_cast<std::size_t>(H_X.rows) + 1);
    double s0 = 0.0;
    for (int j = 0; j < h; ++j) s0 += phi[static_cast<std::size_t>(j)] * sentinel.a[static_cast<std::size_t>(j)];
    logits[0] = s0;
    for (int i = 0; i < H_X.rows; ++i) {
      double s = 0.0;
      const double* hx = H_X.row(i);
      for (int j = 0; j < h; ++j) s += phi[static_cast<std::size_t>(j)] * hx[j];
      logits[static_cast<std::size_t>(i) + 1] = s;
    }
    logp = log_softmax(logits);
    p.resize(logp.size());
    for (std::size_t i = 0; i < logp.size(); ++i) p[i] = std::exp(logp[i]);
  };
  SpanDistributions d;
  one_side(selector.w_start, d.p_start, d.logp_start);
  one_side(selector.w_end, d.p_end, d.logp_end);
  return d;
}

// Sum over slots of -(log p_start[s] + log p_end[e]); sentinel slots use
// index 0 on both sides.
inline double span_loss(const std::vector<SpanDistributions>& dists,
                        const std::vector<std::pair<int, int>>& gold) {
  if (dists.size() != gold.size())
    throw ValidationError("span_loss: one gold assignment required per slot");
  double loss = 0.0;
  for (std::size_t k = 0; k < dists.size(); ++k) {
    const auto& d = dists[k];
    const auto [s, e] = gold[k];
    if (s < 0 || s >= d.positions() || e < 0 || e >= d.positions())
      throw ValidationError("span_loss: gold index out of range");
    loss -= d.logp_start[static_cast<std::size_t>(s)] + d.logp_end[static_cast<std::size_t>(e)];
  }
  return loss;
}

struct DecodedSpan {
  std::optional<Span> window_span;  // window coordinates; nullopt = no argument
  double score = 0.0;
};

// Scores the sentinel pair (0,0) and every candidate (s,e) with
// 1 <= s <= e, e-s+1 <= L_max: score = log p_start[s] + log p_end[e].
// Ties break toward smaller s, then smaller e; the sentinel has s=0 so it
// wins any tie against a real span.
inline DecodedSpan decode_span(const SpanDistributions& d, int max_span_length) {
  DecodedSpan best;
  best.window_span = std::nullopt;
  best.score = d.logp_start[0] + d.logp_end[0];
  const int n = d.positions() - 1;
  for (int s = 1; s <= n; ++s) {
    for (int e = s; e <= n && e - s + 1 <= max_span_length; ++e) {
      const double score =
          d.logp_start[static_cast<std::size_t>(s)] + d.logp_end[static_cast<std::size_t>(e)];
      if (score > best.score) {
        best.window_span = Span{s - 1, e - 1};
        best.score = score;
      }
    }
  }
  return best;
}

inline std::vector<DecodedSpan> decode_spans(const std::vector<SpanDistributions>& dists,
                                             int max_span_length) {
  std::vector<DecodedSpan> out;
  out.reserve(dists.size());
  for (const auto& d : dists) out.push_back(decode_span(d, max_span_length));
  return out;
}

// Minimal-total-loss assignment of gold spans (augmented coordinates) to
// slots, exhaustive over injective assignments (slots are capped at 3).
// Unassigned slots get the sentinel pair. Excess golds are truncated.
inline std::vector<std::pair<int, int>> assign_gold_to_slots(
    std::vector<std::pair<int, int>> golds, const std::vector<SpanDistributions>& slot_dists,
    std::vector<std::string>* warnings = nullptr) {
  const std::size_t n_slots = slot_dists.size();
  if (golds.size() > n_slots) {
    if (warnings)
      warnings->push_back("more gold spans (" + std::to_string(golds.size()) +
                          ") than slots (" + std::to_string(n_slots) + "); excess truncated");
    golds.resize(n_slots);
  }
  std::vector<std::pair<int, int>> best(n_slots, {0, 0});
  if (golds.empty()) return best;

  auto assignment_loss = [&](const std::vector<int>& slot_of_gold) {
    std::vector<std::pair<int, int>> per_slot(n_slots, {0, 0});
    for (std::size_t g = 0; g < golds.size(); ++g) per_slot[slot_of_gold[g]] = golds[g];
    return span_loss(std::vector<SpanDistributions>(slot_dists), per_slot);
  };

  // Enumerate injective maps gold -> slot in lexicographic order; the first
  // minimum wins, so ties resolve deterministically.
  std::vector<int> slot_of_gold(golds.size(), -1);
  std::vector<bool> used(n_slots, false);
  double best_loss = 0.0;
  bool have_best = false;
  std::function<void(std::size_t)> rec = [&](std::size_t g) {
    if (g == golds.size()) {
      double loss = assignment_loss(slot_of_gold);
      if (!have_best || loss < best_loss) {
        have_best = true;
        best_loss = loss;
        std::fill(best.begin(), best.end(), std::pair<int, int>{0, 0});
        for (std::size_t i = 0; i < golds.size(); ++i) best[slot_of_gold[i]] = golds[i];
      }
      return;
    }
    for (std::size_t s = 0; s < n_slots; ++s) {
      if (used[s]) continue;
      used[s] = true;
      slot_of_gold[g] = static_cast<int>(s);
      rec(g + 1);
      used[s] = false;
    }
  };
  rec(0);
  return best;
}

// ---------------------------------------------------------------------------
// Prompt inputs

// The prompts driving one extraction: the base prompt (ontology- or
// name-based, weight lambda when a cluster is present) plus the optional
// generated cluster.
struct PromptInput {
  Prompt base;
  std::optional<PromptCluster> cluster;
};

struct WeightedPrompt {
  const Prompt* prompt;
  double coef;
};

// Nonzero-coefficient mixture terms. Zero-weight terms are dropped so the
// boundary cases run bit-identically to single-prompt extraction.
inline std::vector<WeightedPrompt> mixture_terms(const PromptInput& pin, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ValidationError("lambda must lie in [0,1]");
  std::vector<WeightedPrompt> terms;
  if (!pin.cluster) {
    terms.push_back({&pin.base, 1.0});
    return terms;
  }
  if (lambda > 0.0) terms.push_back({&pin.base, lambda});
  const auto& cl = *pin.cluster;
  for (std::size_t i = 0; i < cl.prompts.size(); ++i) {
    const double coef = (1.0 - lambda) * cl.weights[i];
    if (coef > 0.0) terms.push_back({&cl.prompts[i], coef});
  }
  if (terms.empty()) throw ValidationError("prompt mixture has no nonzero terms");
  return terms;
}

struct Prediction {
  std::string role;
  int slot = 0;
  std::optional<Span> span;  // document coordinates; nullopt = no argument
  double score = 0.0;
  bool operator==(const Prediction&) const = default;
};

// ---------------------------------------------------------------------------
// Extraction (inference path, runs against the EncoderDecoder contract)

inline std::vector<Prediction> extract_with(const EncoderDecoder& backbone,
                                            const Matrix& sentinel,
                                            const std::map<std::string, RoleSelector>& selectors,
                                            const ModelConfig& cfg, const Corpus& corpus,
                                            const EventInstance& inst, const PromptInput& pin) {
  const EventOntology& ont = corpus.ontologies.at(inst.event_type);
  const Document& doc = corpus.doc_of(inst);
  const Span window = compute_window(inst, doc, cfg.max_input_length);
  auto tokens = window_tokens(doc, window);

  HiddenStates memory = backbone.encode(tokens);
  HiddenStates H_X = backbone.decode(tokens, memory);

  auto terms = mixture_terms(pin, cfg.lambda);
  std::vector<HiddenStates> prompt_states;
  prompt_states.reserve(terms.size());
  for (const auto& t : terms) {
    if (t.prompt->tokens.empty()) throw ValidationError("cannot encode an empty prompt");
    prompt_states.push_back(backbone.decode(t.prompt->tokens, memory));
  }

  std::vector<Prediction> preds;
  for (const std::string& role : ont.roles) {
    auto sit = selectors.find(role);
    if (sit == selectors.end())
      throw ValidationError("model has no selector for role '" + role + "'");
    // Same arithmetic as the training path: a single direct convex sum, with
    // the one-term case passing the pooled state through untouched.
    Matrix phi;
    if (terms.size() == 1) {
      phi = role_representation(prompt_states[0], *terms[0].prompt, role);
    } else {
      phi = Matrix(1, H_X.cols);
      for (std::size_t i = 0; i < terms.size(); ++i)
        add_inplace(phi, role_representation(prompt_states[i], *terms[i].prompt, role),
                    terms[i].coef);
    }
    SpanDistributions dist = span_distributions(sit->second, phi, H_X, sentinel);
    const int n_slots = cfg.slots_for(role);
    for (int slot = 0; slot < n_slots; ++slot) {
      DecodedSpan d = decode_span(dist, cfg.max_span_length);
      Prediction pred;
      pred.role = role;
      pred.slot = slot;
      pred.score = d.score;
      if (d.window_span)
        pred.span = Span{d.window_span->start + window.start, d.window_span->end + window.start};
      preds.push_back(std::move(pred));
    }
  }
  return preds;
}

inline std::vector<Prediction> extract(const Model& model, const Corpus& corpus,
                                       const EventInstance& inst, const PromptInput& pin) {
  return extract_with(model.backbone, model.sentinel, model.selectors, model.config, corpus,
                      inst, pin);
}

// ---------------------------------------------------------------------------
// Training pipeline (cached forward + full backward through the toy model)

namespace detail {

struct RoleForward {
  std::string role;
  Matrix phi;                       // mixed phi_a, 1 x h
  std::vector<Matrix> pooled;       // per mixture term, 1 x h
  SpanDistributions dist;           // shared across the role's slots
  std::vector<std::pair<int, int>> gold_aug;  // per slot
};

}  // namespace detail

// Computes the instance loss; when `grads` is non-null also accumulates
// d loss / d theta for every trainable tensor. Returns the loss. When
// `preds_out` is non-null the decoded predictions are appended (document
// coordinates).
inline double instance_loss(Model& model, const Corpus& corpus, const EventInstance& inst,
                            const PromptInput& pin, ModelGrads* grads,
                            std::vector<Prediction>* preds_out = nullptr,
                            std::vector<std::string>* warnings = nullptr) {
  const EventOntology& ont = corpus.ontologies.at(inst.event_type);
  const Document& doc = corpus.doc_of(inst);
  const ModelConfig& cfg = model.config;
  const Span window = compute_window(inst, doc, cfg.max_input_length);
  auto tokens = window_tokens(doc, window);
  auto ids = model.backbone.token_ids(tokens);
  const int n = static_cast<int>(tokens.size());

  PassCache enc_cache;
  Matrix memory = model.backbone.encode_cached(ids, &enc_cache);
  PassCache decx_cache;
  Matrix H_X = model.backbone.decode_cached(ids, memory, &decx_cache);

  auto terms = mixture_terms(pin, cfg.lambda);
  std::vector<PassCache> prompt_caches(terms.size());
  std::vector<Matrix> prompt_states;
  prompt_states.reserve(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].prompt->tokens.empty())
      throw ValidationError("cannot encode an empty prompt");
    prompt_states.push_back(model.backbone.decode_cached(
        model.backbone.token_ids(terms[i].prompt->tokens), memory, &prompt_caches[i]));
  }

  // Gold spans per role, in augmented window coordinates.
  std::map<std::string, std::vector<std::pair<int, int>>> gold_by_role;
  for (const auto& arg : inst.arguments) {
    if (arg.start < window.start || arg.end > window.end) {
      if (warnings)
        warnings->push_back("gold argument (" + arg.role + ") outside the context window of " +
                            doc.doc_id + "; dropped from training");
      continue;
    }
    gold_by_role[arg.role].emplace_back(arg.start - window.start + 1,
                                        arg.end - window.start + 1);
  }

  double loss = 0.0;
  std::vector<detail::RoleForward> role_fwd;
  for (const std::string& role : ont.roles) {
    auto sit = model.selectors.find(role);
    if (sit == model.selectors.end())
      throw ValidationError("model has no selector for role '" + role + "'");
    detail::RoleForward rf;
    rf.role = role;
    rf.pooled.reserve(terms.size());
    for (std::size_t i = 0; i < terms.size(); ++i)
      rf.pooled.push_back(role_representation(prompt_states[i], *terms[i].prompt, role));
    if (terms.size() == 1) {
      rf.phi = rf.pooled[0];
    } else {
      rf.phi = Matrix(1, cfg.h);
      for (std::size_t i = 0; i < terms.size(); ++i)
        add_inplace(rf.phi, rf.pooled[i], terms[i].coef);
    }
    rf.dist = span_distributions(sit->second, rf.phi, H_X, model.sentinel);
    const int n_slots = cfg.slots_for(role);
    std::vector<SpanDistributions> slot_dists(static_cast<std::size_t>(n_slots), rf.dist);
    auto git = gold_by_role.find(role);
    std::vector<std::pair<int, int>> golds =
        git == gold_by_role.end() ? std::vector<std::pair<int, int>>{} : git->second;
    rf.gold_aug = assign_gold_to_slots(std::move(golds), slot_dists, warnings);
    loss += span_loss(slot_dists, rf.gold_aug);
    if (preds_out) {
      for (int slot = 0; slot < n_slots; ++slot) {
        DecodedSpan d = decode_span(rf.dist, cfg.max_span_length);
        Prediction pred;
        pred.role = role;
        pred.slot = slot;
        pred.score = d.score;
        if (d.window_span)
          pred.span =
              Span{d.window_span->start + window.start, d.window_span->end + window.start};
        preds_out->push_back(std::move(pred));
      }
    }
    role_fwd.push_back(std::move(rf));
  }

  if (!grads) return loss;

  // ---- backward ----
  Matrix dH_X(H_X.rows, H_X.cols);
  std::vector<Matrix> dPrompt(terms.size());
  for (std::size_t i = 0; i < terms.size(); ++i)
    dPrompt[i] = Matrix(prompt_states[i].rows, prompt_states[i].cols);

  for (auto& rf : role_fwd) {
    const RoleSelector& sel = model.selectors.at(rf.role);
    RoleSelector& gsel = grads->selectors.at(rf.role);
    // d loss / d logits = sum over slots of (p - onehot(gold)).
    std::vector<double> dls(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> dle(static_cast<std::size_t>(n) + 1, 0.0);
    for (const auto& [gs, ge] : rf.gold_aug) {
      for (int i = 0; i <= n; ++i) {
        dls[static_cast<std::size_t>(i)] += rf.dist.p_start[static_cast<std::size_t>(i)];
        dle[static_cast<std::size_t>(i)] += rf.dist.p_end[static_cast<std::size_t>(i)];
      }
      dls[static_cast<std::size_t>(gs)] -= 1.0;
      dle[static_cast<std::size_t>(ge)] -= 1.0;
    }
    Matrix dphi(1, cfg.h);
    auto one_side = [&](const Matrix& w, Matrix& gw, const std::vector<double>& dlogits) {
      // logits_i = dot(w . phi, H_aug[i]) with H_aug[0] = sentinel.
      std::vector<double> dphisel(static_cast<std::size_t>(cfg.h), 0.0);
      for (int j = 0; j < cfg.h; ++j)
        dphisel[static_cast<std::size_t>(j)] =
            dlogits[0] * model.sentinel.a[static_cast<std::size_t>(j)];
      for (int i = 0; i < n; ++i) {
        const double d = dlogits[static_cast<std::size_t>(i) + 1];
        if (d == 0.0) continue;
        const double* hx = H_X.row(i);
        for (int j = 0; j < cfg.h; ++j) dphisel[static_cast<std::size_t>(j)] += d * hx[j];
      }
      // phi_sel = w . phi (elementwise)
      for (int j = 0; j < cfg.h; ++j) {
        const double ds = dphisel[static_cast<std::size_t>(j)];
        gw.a[static_cast<std::size_t>(j)] += ds * rf.phi.a[static_cast<std::size_t>(j)];
        dphi.a[static_cast<std::size_t>(j)] += ds * w.a[static_cast<std::size_t>(j)];
      }
      // dH_aug[i] += dlogits[i] * phi_sel
      for (int j = 0; j < cfg.h; ++j) {
        const double phisel =
            w.a[static_cast<std::size_t>(j)] * rf.phi.a[static_cast<std::size_t>(j)];
        grads->sentinel.a[static_cast<std::size_t>(j)] += dlogits[0] * phisel;
        for (int i = 0; i < n; ++i)
          dH_X.at(i, j) += dlogits[static_cast<std::size_t>(i) + 1] * phisel;
      }
    };
    one_side(sel.w_start, gsel.w_start, dls);
    one_side(sel.w_end, gsel.w_end, dle);

    // Mixture and mean-pooling backward.
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const double coef = terms.size() == 1 ? 1.0 : terms[t].coef;
      const Span slot = terms[t].prompt->role_slots.at(rf.role);
      const double inv_len = 1.0 / static_cast<double>(slot.length());
      for (int i = slot.start; i <= slot.end; ++i)
        for (int j = 0; j < cfg.h; ++j)
          dPrompt[t].at(i, j) += coef * inv_len * dphi.a[static_cast<std::size_t>(j)];
    }
  }

  Matrix dMemory(memory.rows, memory.cols);
  for (std::size_t i = 0; i < terms.size(); ++i)
    model.backbone.decode_backward(prompt_caches[i], dPrompt[i], grads->encdec, dMemory);
  model.backbone.decode_backward(decx_cache, dH_X, grads->encdec, dMemory);
  model.backbone.encode_backward(enc_cache, dMemory, grads->encdec);
  return loss;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline Json config_to_json(const ModelConfig& cfg) {
  Json j;
  j["h"] = cfg.h;
  j["lambda"] = cfg.lambda;
  j["max_span_length"] = cfg.max_span_length;
  j["max_input_length"] = cfg.max_input_length;
  j["seed"] = cfg.seed;
  Json slots = Json::object();
  for (const auto& [role, k] : cfg.slots_per_role) slots[role] = k;
  j["slots_per_role"] = std::move(slots);
  return j;
}

inline ModelConfig config_from_json(const Json& j) {
  ModelConfig cfg;
  cfg.h = j.at("h").get<int>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.max_span_length = j.at("max_span_length").get<int>();
  cfg.max_input_length = j.at("max_input_length").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("slots_per_role"))
    for (auto it = j["slots_per_role"].begin(); it != j["slots_per_role"].end(); ++it)
      cfg.slots_per_role[it.key()] = it.value().get<int>();
  validate_config(cfg);
  return cfg;
}

inline void save_checkpoint(Model& model, const std::string& path) {
  Json j;
  j["kind"] = "deae-checkpoint";
  j["format_version"] = 1;
  j["style"] = to_string(model.style);
  j["config"] = config_to_json(model.config);
  j["vocab"] = model.backbone.vocab().tokens;
  Json roles = Json::array();
  for (const auto& [role, sel] : model.selectors) roles.push_back(role);
  j["roles"] = std::move(roles);
  Json tensors = Json::object();
  for (auto& [name, tensor] : parameter_registry(model)) {
    Json t;
    t["rows"] = tensor->rows;
    t["cols"] = tensor->cols;
    t["data"] = tensor->a;
    tensors[name] = std::move(t);
  }
  j["tensors"] = std::move(tensors);
  write_file(path, j.dump());
}

inline Model load_checkpoint(const std::string& path) {
  Json j = parse_json_file(path);
  if (!j.contains("kind") || j["kind"] != "deae-checkpoint")
    throw ValidationError(path + ": not a checkpoint file");
  if (j.at("format_version").get<int>() != 1)
    throw ValidationError(path + ": unsupported checkpoint format version");
  Model m;
  m.config = config_from_json(j.at("config"));
  m.style = extraction_style_from_string(j.at("style").get<std::string>());
  Vocab vocab;
  vocab.tokens = j.at("vocab").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < vocab.tokens.size(); ++i)
    vocab.index[vocab.tokens[i]] = static_cast<int>(i);
  m.backbone = ToyEncoderDecoder(std::move(vocab), m.config.h, m.config.max_input_length,
                                 m.config.seed);
  m.sentinel = Matrix(1, m.config.h);
  for (const auto& role : j.at("roles")) {
    RoleSelector sel;
    sel.role = role.get<std::string>();
    sel.w_start = Matrix(1, m.config.h);
    sel.w_end = Matrix(1, m.config.h);
    m.selectors[sel.role] = std::move(sel);
  }
  const Json& tensors = j.at("tensors");
  for (auto& [name, tensor] : parameter_registry(m)) {
    auto it = tensors.find(name);
    if (it == tensors.end())
      throw ValidationError(path + ": checkpoint is missing tensor " + name);
    if ((*it).at("rows").get<int>() != tensor->rows ||
        (*it).at("cols").get<int>() != tensor->cols)
      throw ValidationError(path + ": tensor " + name + " has unexpected shape");
    tensor->a = (*it).at("data").get<std::vector<double>>();
    if (tensor->a.size() != static_cast<std::size_t>(tensor->rows) *
                                static_cast<std::size_t>(tensor->cols))
      throw ValidationError(path + ": tensor " + name + " has unexpected shape");
    if (!tensor->all_finite())
      throw ValidationError(path + ": tensor " + name + " contains non-finite values");
  }
  return m;
}

}  // namespace deae
