#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deae/json_util.hpp"
#include "deae/pipeline.hpp"

namespace deae {

// Micro-averaged counts; empty denominators score 0 by convention.
struct PRF {
  long tp = 0, fp = 0, fn = 0;
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
  }
};

struct EvalSlice {
  PRF arg_i;   // exact offsets, role-blind
  PRF arg_c;   // exact offsets plus role
  PRF head_c;  // head token plus role; meaningful only when heads resolve
  bool head_c_valid = false;  // some head was resolvable on either side
};

struct EvalReport {
  EvalSlice overall;
  std::map<std::string, EvalSlice> per_event;
  long instances = 0;
  long gold_spans = 0;
  long predicted_spans = 0;
};

// Head of a span under the dependency parse: the leftmost token whose
// governor lies outside the span (or which is the root). Falls back to the
// first token if the span is internally cyclic.
inline int derived_span_head(const DependencyParse& parse, Span span) {
  for (int i = span.start; i <= span.end; ++i) {
    const int h = parse.heads[static_cast<std::size_t>(i)];
    if (h == -1 || h == i || h < span.start || h > span.end) return i;
  }
  return span.start;
}

inline std::optional<int> head_of_span(const Corpus& corpus, const std::string& doc_id,
                                       Span span) {
  auto it = corpus.parses.find(doc_id);
  if (it == corpus.parses.end()) return std::nullopt;
  return derived_span_head(it->second, span);
}

namespace detail {

struct PredArg {
  std::string role;
  Span span;
  double score;
};

struct GoldArg {
  std::string role;
  Span span;
  std::optional<int> head;
};

// Greedy matching in score order; with equality predicates this reaches the
// same totals as exhaustive bipartite matching.
inline void match_instance(const Corpus& corpus, const std::string& doc_id,
                           const std::vector<PredArg>& preds, const std::vector<GoldArg>& golds,
                           EvalSlice& slice) {
  auto run_axis = [&](PRF& prf, auto&& matches) {
    std::vector<bool> used(golds.size(), false);
    long tp = 0;
    for (const auto& p : preds) {
      for (std::size_t g = 0; g < golds.size(); ++g) {
        if (used[g]) continue;
        if (matches(p, golds[g])) {
          used[g] = true;
          ++tp;
          break;
        }
      }
    }
    prf.tp += tp;
    prf.fp += static_cast<long>(preds.size()) - tp;
    prf.fn += static_cast<long>(golds.size()) - tp;
  };
  run_axis(slice.arg_i, [](const PredArg& p, const GoldArg& g) { return p.span == g.span; });
  run_axis(slice.arg_c, [](const PredArg& p, const GoldArg& g) {
    return p.span == g.span && p.role == g.role;
  });
  // Head-C credits a prediction whose head token and role agree with a gold
  // argument, regardless of exact boundaries.
  run_axis(slice.head_c, [&](const PredArg& p, const GoldArg& g) {
    if (p.role != g.role) return false;
    std::optional<int> ph = head_of_span(corpus, doc_id, p.span);
    if (!ph && p.span == g.span) ph = g.head;  // an identical span shares the gold's head
    return ph && g.head && *ph == *g.head;
  });
  for (const auto& g : golds)
    if (g.head) slice.head_c_valid = true;
  if (!slice.head_c_valid)
    for (const auto& p : preds)
      if (head_of_span(corpus, doc_id, p.span)) slice.head_c_valid = true;
}

}  // namespace detail

// Scores predictions against gold arguments over the listed instances. Every
// instance must have a prediction entry, and every prediction entry must
// belong to a known instance.
inline EvalReport evaluate(const Corpus& corpus,
                           const std::map<InstanceKey, std::vector<Prediction>>& predictions,
                           const std::vector<int>& instance_indices) {
  std::set<InstanceKey> known;
  for (const auto& inst : corpus.instances) known.insert(key_of(corpus, inst));
  for (const auto& [key, preds] : predictions)
    if (!known.count(key))
      throw ValidationError("predictions reference unknown instance " + to_string(key));

  EvalReport report;
  for (int idx : instance_indices) {
    const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
    const InstanceKey key = key_of(corpus, inst);
    auto pit = predictions.find(key);
    if (pit == predictions.end())
      throw ValidationError("no predictions recorded for instance " + to_string(key));
    const std::string& doc_id = corpus.doc_of(inst).doc_id;

    std::vector<detail::PredArg> preds;
    for (const auto& p : pit->second)
      if (p.span) preds.push_back({p.role, *p.span, p.score});
    std::sort(preds.begin(), preds.end(), [](const detail::PredArg& a, const detail::PredArg& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.span.start != b.span.start) return a.span.start < b.span.start;
      if (a.span.end != b.span.end) return a.span.end < b.span.end;
      return a.role < b.role;
    });

    std::vector<detail::GoldArg> golds;
    for (const auto& arg : inst.arguments) {
      detail::GoldArg g;
      g.role = arg.role;
      g.span = Span{arg.start, arg.end};
      g.head = arg.head_index ? std::optional<int>(*arg.head_index)
                              : head_of_span(corpus, doc_id, g.span);
      golds.push_back(std::move(g));
    }

    detail::match_instance(corpus, doc_id, preds, golds, report.overall);
    detail::match_instance(corpus, doc_id, preds, golds, report.per_event[inst.event_type]);
    report.instances += 1;
    report.gold_spans += static_cast<long>(golds.size());
    report.predicted_spans += static_cast<long>(preds.size());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Prediction files (JSONL, one instance per line)

inline std::string serialize_predictions(
    const std::vector<std::pair<InstanceKey, std::vector<Prediction>>>& preds) {
  std::string out;
  for (const auto& [key, plist] : preds) {
    Json obj;
    obj["doc_id"] = key.doc_id;
    obj["event_type"] = key.event_type;
    obj["trigger"] = Json{{"start", key.trigger.start}, {"end", key.trigger.end}};
    Json arr = Json::array();
    for (const auto& p : plist) {
      Json e;
      e["role"] = p.role;
      if (p.span) {
        e["start"] = p.span->start;
        e["end"] = p.span->end;
      } else {
        e["start"] = nullptr;
        e["end"] = nullptr;
      }
      e["score"] = p.score;
      arr.push_back(std::move(e));
    }
    obj["predictions"] = std::move(arr);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

inline void write_predictions(
    const std::string& path,
    const std::vector<std::pair<InstanceKey, std::vector<Prediction>>>& preds) {
  write_file(path, serialize_predictions(preds));
}

inline std::map<InstanceKey, std::vector<Prediction>> load_predictions(const std::string& path,
                                                                       const Corpus& corpus) {
  std::map<InstanceKey, std::vector<Prediction>> out;
  for_each_json_line(path, [&](int lineno, const Json& obj) {
    JsonAt at{obj, path + ":" + std::to_string(lineno)};
    InstanceKey key;
    key.doc_id = at.str("doc_id");
    key.event_type = at.str("event_type");
    const Json& trig = at.get("trigger");
    JsonAt tat{trig, path + ":" + std::to_string(lineno) + ": trigger"};
    key.trigger = Span{tat.integer("start"), tat.integer("end")};
    if (out.count(key))
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": duplicate predictions for instance " + to_string(key));

    auto dit = std::find_if(corpus.documents.begin(), corpus.documents.end(),
                            [&](const Document& d) { return d.doc_id == key.doc_id; });
    if (dit == corpus.documents.end())
      throw ValidationError(path + ":" + std::to_string(lineno) + ": unknown document " +
                            key.doc_id);
    auto oit = corpus.ontologies.find(key.event_type);
    if (oit == corpus.ontologies.end())
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": no ontology entry for event type " + key.event_type);

    const Json& parr = at.get("predictions");
    if (!parr.is_array())
      throw ValidationError(path + ":" + std::to_string(lineno) +
                            ": field 'predictions' must be an array");
    std::vector<Prediction> plist;
    std::map<std::string, int> slot_counter;
    for (const Json& e : parr) {
      JsonAt eat{e, path + ":" + std::to_string(lineno) + ": prediction"};
      Prediction p;
      p.role = eat.str("role");
      if (std::find(oit->second.roles.begin(), oit->second.roles.end(), p.role) ==
          oit->second.roles.end())
        throw ValidationError(path + ":" + std::to_string(lineno) + ": role '" + p.role +
                              "' is not part of event type " + key.event_type);
      p.score = eat.real("score");
      const bool has_start = e.contains("start") && !e["start"].is_null();
      const bool has_end = e.contains("end") && !e["end"].is_null();
      if (has_start != has_end)
        throw ValidationError(path + ":" + std::to_string(lineno) +
                              ": start and end must be both present or both null");
      if (has_start) {
        Span s{e["start"].get<int>(), e["end"].get<int>()};
        if (s.start < 0 || s.end < s.start ||
            s.end >= static_cast<int>(dit->tokens.size()))
          throw ValidationError(path + ":" + std::to_string(lineno) + ": span " +
                                std::to_string(s.start) + "-" + std::to_string(s.end) +
                                " outside document " + key.doc_id);
        p.span = s;
      }
      p.slot = slot_counter[p.role]++;
      plist.push_back(std::move(p));
    }
    out[key] = std::move(plist);
  });
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end evaluation of a model over a split

struct EvalRun {
  std::vector<std::pair<InstanceKey, std::vector<Prediction>>> predictions;  // corpus order
  EvalReport report;
};

inline EvalRun run_eval(const Model& model, const Corpus& corpus,
                        const std::vector<int>& instance_indices, const PromptOptions& opts,
                        std::vector<std::string>* warnings = nullptr) {
  if (instance_indices.empty()) throw ValidationError("evaluation set is empty");
  EvalRun run;
  std::map<InstanceKey, std::vector<Prediction>> by_key;
  for (int idx : instance_indices) {
    const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
    PromptInput pin = prompts_for_instance(model, corpus, inst, opts, warnings);
    std::vector<Prediction> preds = extract(model, corpus, inst, pin);
    const InstanceKey key = key_of(corpus, inst);
    by_key[key] = preds;
    run.predictions.emplace_back(key, std::move(preds));
  }
  run.report = evaluate(corpus, by_key, instance_indices);
  return run;
}

inline EvalRun run_eval(const Model& model, const Corpus& corpus, SplitTag split,
                        const PromptOptions& opts, std::vector<std::string>* warnings = nullptr) {
  return run_eval(model, corpus, instance_indices_of_split(corpus, split), opts, warnings);
}

// ---------------------------------------------------------------------------
// Report serialization

inline Json prf_to_json(const PRF& m) {
  Json j;
  j["precision"] = m.precision();
  j["recall"] = m.recall();
  j["f1"] = m.f1();
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["fn"] = m.fn;
  return j;
}

inline Json slice_to_json(const EvalSlice& s) {
  Json j;
  j["arg_i"] = prf_to_json(s.arg_i);
  j["arg_c"] = prf_to_json(s.arg_c);
  j["head_c"] = s.head_c_valid ? prf_to_json(s.head_c) : Json(nullptr);
  return j;
}

inline Json report_to_json(const EvalReport& r) {
  Json j;
  j["overall"] = slice_to_json(r.overall);
  j["instances"] = r.instances;
  j["gold_spans"] = r.gold_spans;
  j["predicted_spans"] = r.predicted_spans;
  Json per = Json::object();
  for (const auto& [type, slice] : r.per_event) per[type] = slice_to_json(slice);
  j["per_event"] = std::move(per);
  return j;
}

inline std::string report_to_text(const EvalReport& r) {
  std::string out;
  char buf[160];
  auto row = [&](const char* name, const PRF& m) {
    std::snprintf(buf, sizeof(buf), "  %-8s %8.4f %8.4f %8.4f %6ld %6ld %6ld\n", name,
                  m.precision(), m.recall(), m.f1(), m.tp, m.fp, m.fn);
    out += buf;
  };
  auto block = [&](const std::string& title, const EvalSlice& s) {
    out += title + "\n";
    std::snprintf(buf, sizeof(buf), "  %-8s %8s %8s %8s %6s %6s %6s\n", "metric", "P", "R",
                  "F1", "TP", "FP", "FN");
    out += buf;
    row("arg-i", s.arg_i);
    row("arg-c", s.arg_c);
    if (s.head_c_valid)
      row("head-c", s.head_c);
    else
      out += "  head-c   (no heads available)\n";
  };
  std::snprintf(buf, sizeof(buf), "instances: %ld  gold spans: %ld  predicted spans: %ld\n",
                r.instances, r.gold_spans, r.predicted_spans);
  out += buf;
  block("overall", r.overall);
  for (const auto& [type, slice] : r.per_event) block(type, slice);
  return out;
}

}  // namespace deae
