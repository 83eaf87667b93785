#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deae/json_util.hpp"
#include "deae/types.hpp"

namespace deae {

enum class CorpusFormat { generic, rams, wikievents };

inline CorpusFormat corpus_format_from_string(const std::string& s) {
  if (s == "generic") return CorpusFormat::generic;
  if (s == "rams") return CorpusFormat::rams;
  if (s == "wikievents") return CorpusFormat::wikievents;
  throw ValidationError("unknown corpus format: " + s);
}

inline std::vector<std::string> whitespace_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// First token index where `needle` occurs as a contiguous subsequence of
// `haystack` (case-insensitive), or -1. `from` restricts the search start.
inline int find_token_subsequence(const std::vector<std::string>& haystack,
                                  const std::vector<std::string>& needle,
                                  int from = 0) {
  if (needle.empty() || haystack.size() < needle.size()) return -1;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (ascii_lower(haystack[i + j]) != ascii_lower(needle[j])) {
        ok = false;
        break;
      }
    }
    if (ok) return static_cast<int>(i);
  }
  return -1;
}

inline int count_token_subsequence(const std::vector<std::string>& haystack,
                                   const std::vector<std::string>& needle) {
  int n = 0;
  int pos = 0;
  while (true) {
    int hit = find_token_subsequence(haystack, needle, pos);
    if (hit < 0) break;
    ++n;
    pos = hit + 1;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Ontologies

// Loads the ontology registry: a JSON array of
//   {event_type, roles:[...], template, role_dep_labels?}
// Role slot positions within the template are located here and cached.
// Locates each role's unique slot in the template tokens. Rejects roles that
// are missing from, repeated in, or overlapping inside the template.
inline void compute_template_slots(EventOntology& ont, const std::string& context) {
  ont.template_slots.clear();
  for (const std::string& role : ont.roles) {
    auto role_tokens = whitespace_tokenize(role);
    int n = count_token_subsequence(ont.template_tokens, role_tokens);
    if (n == 0)
      throw ValidationError(context + ": role '" + role + "' does not appear in template");
    if (n > 1)
      throw ValidationError(context + ": role '" + role + "' appears " + std::to_string(n) +
                            " times in template");
    int pos = find_token_subsequence(ont.template_tokens, role_tokens);
    ont.template_slots[role] = Span{pos, pos + static_cast<int>(role_tokens.size()) - 1};
  }
  std::vector<Span> slots;
  for (const auto& [role, sp] : ont.template_slots) slots.push_back(sp);
  std::sort(slots.begin(), slots.end());
  for (std::size_t i = 1; i < slots.size(); ++i) {
    if (slots[i].start <= slots[i - 1].end)
      throw ValidationError(context + ": role slots overlap in template");
  }
}

inline OntologyMap load_ontologies(const std::string& path) {
  Json root = parse_json_file(path);
  if (!root.is_array())
    throw ValidationError(path + ": ontology file must be a JSON array");
  OntologyMap out;
  int idx = 0;
  for (const Json& entry : root) {
    JsonAt at{entry, path + "[" + std::to_string(idx) + "]"};
    EventOntology ont;
    ont.event_type = at.str("event_type");
    const Json& roles = at.get("roles");
    if (!roles.is_array() || roles.empty())
      throw ValidationError(at.where + ": roles must be a nonempty array (event_type " +
                            ont.event_type + ")");
    for (const Json& r : roles) ont.roles.push_back(r.get<std::string>());
    ont.template_text = at.str("template");
    ont.template_tokens = whitespace_tokenize(ont.template_text);
    if (entry.contains("role_dep_labels")) {
      for (auto it = entry["role_dep_labels"].begin(); it != entry["role_dep_labels"].end(); ++it)
        ont.role_dep_labels[it.key()] = it.value().get<std::string>();
    }
    compute_template_slots(ont, "ontology for " + ont.event_type);
    if (out.count(ont.event_type))
      throw ValidationError(path + ": duplicate event_type " + ont.event_type);
    out[ont.event_type] = std::move(ont);
    ++idx;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus loading

namespace detail {

inline SplitTag split_from_string(const std::string& s, const std::string& where) {
  if (s == "train") return SplitTag::train;
  if (s == "dev") return SplitTag::dev;
  if (s == "test") return SplitTag::test;
  throw ValidationError(where + ": unknown split tag '" + s + "'");
}

struct CorpusBuilder {
  Corpus corpus;
  std::map<std::string, int> doc_index;
  std::set<InstanceKey> seen_keys;

  int add_document(const std::string& doc_id, std::vector<std::string> tokens,
                   const std::string& where) {
    if (tokens.empty())
      throw ValidationError(where + ": document " + doc_id + " has no tokens");
    auto it = doc_index.find(doc_id);
    if (it != doc_index.end()) {
      if (corpus.documents[it->second].tokens != tokens)
        throw ValidationError(where + ": doc_id " + doc_id +
                              " appears with different token sequences");
      return it->second;
    }
    int idx = static_cast<int>(corpus.documents.size());
    corpus.documents.push_back(Document{doc_id, std::move(tokens)});
    doc_index[doc_id] = idx;
    return idx;
  }

  void add_instance(EventInstance inst, const std::string& where) {
    const Document& doc = corpus.documents[inst.doc_index];
    const int n = static_cast<int>(doc.tokens.size());
    auto check_span = [&](const Span& sp, const std::string& what) {
      if (sp.start < 0 || sp.end < sp.start || sp.end >= n)
        throw ValidationError(where + ": " + what + " out of bounds in doc " + doc.doc_id +
                              " (offsets " + std::to_string(sp.start) + ".." +
                              std::to_string(sp.end) + ", doc has " + std::to_string(n) +
                              " tokens)");
    };
    check_span(inst.trigger, "trigger span");
    auto ont = corpus.ontologies.find(inst.event_type);
    if (ont == corpus.ontologies.end())
      throw ValidationError(where + ": unknown event_type '" + inst.event_type + "'");
    std::set<std::tuple<std::string, int, int>> arg_keys;
    for (const auto& arg : inst.arguments) {
      check_span(Span{arg.start, arg.end}, "argument span (role " + arg.role + ")");
      if (std::find(ont->second.roles.begin(), ont->second.roles.end(), arg.role) ==
          ont->second.roles.end())
        throw ValidationError(where + ": role '" + arg.role + "' is not in the ontology of " +
                              inst.event_type);
      if (arg.head_index && (*arg.head_index < arg.start || *arg.head_index > arg.end))
        throw ValidationError(where + ": head_index " + std::to_string(*arg.head_index) +
                              " outside argument span");
      if (!arg_keys.insert({arg.role, arg.start, arg.end}).second)
        throw ValidationError(where + ": duplicate argument (role " + arg.role + ", " +
                              std::to_string(arg.start) + ".." + std::to_string(arg.end) + ")");
    }
    if (inst.context_window) {
      check_span(*inst.context_window, "context window");
      if (inst.trigger.start < inst.context_window->start ||
          inst.trigger.end > inst.context_window->end)
        throw ValidationError(where + ": trigger lies outside the context window");
    }
    InstanceKey key{doc.doc_id, inst.trigger, inst.event_type};
    if (!seen_keys.insert(key).second)
      throw ValidationError(where + ": duplicate instance " + to_string(key));
    corpus.instances.push_back(std::move(inst));
  }
};

inline void load_generic_line(CorpusBuilder& b, const Json& obj, const std::string& where,
                              SplitTag default_split) {
  JsonAt at{obj, where};
  std::string doc_id = at.str("doc_id");
  std::vector<std::string> tokens;
  for (const Json& t : at.get("tokens")) tokens.push_back(t.get<std::string>());
  EventInstance inst;
  inst.doc_index = b.add_document(doc_id, std::move(tokens), where);
  inst.event_type = at.str("event_type");
  JsonAt trig{at.get("trigger"), where + " trigger"};
  inst.trigger = Span{trig.integer("start"), trig.integer("end")};
  for (const Json& a : at.get("arguments")) {
    JsonAt aat{a, where + " argument"};
    ArgumentAnnotation arg;
    arg.role = aat.str("role");
    arg.start = aat.integer("start");
    arg.end = aat.integer("end");
    if (a.contains("head_index") && !a["head_index"].is_null())
      arg.head_index = aat.integer("head_index");
    inst.arguments.push_back(std::move(arg));
  }
  if (obj.contains("context_window") && !obj["context_window"].is_null()) {
    JsonAt cw{obj["context_window"], where + " context_window"};
    inst.context_window = Span{cw.integer("start"), cw.integer("end")};
  }
  inst.split = obj.contains("split") ? split_from_string(obj["split"].get<std::string>(), where)
                                     : default_split;
  b.add_instance(std::move(inst), where);
}

// Native RAMS record: sentences are concatenated into one token sequence;
// one instance per entry of evt_triggers; argument links are matched to their
// trigger and the role label's "evt...arg..." prefix is stripped.
inline void load_rams_line(CorpusBuilder& b, const Json& obj, const std::string& where,
                           SplitTag default_split) {
  JsonAt at{obj, where};
  std::string doc_id = at.str("doc_key");
  std::vector<std::string> tokens;
  for (const Json& sent : at.get("sentences"))
    for (const Json& t : sent) tokens.push_back(t.get<std::string>());
  int doc_index = b.add_document(doc_id, std::move(tokens), where);

  auto strip_role = [](const std::string& label) {
    // e.g. "evt089arg01employee" -> "employee"
    std::size_t i = 0;
    if (label.rfind("evt", 0) == 0) {
      i = 3;
      while (i < label.size() && std::isdigit(static_cast<unsigned char>(label[i]))) ++i;
      if (label.compare(i, 3, "arg") == 0) {
        i += 3;
        while (i < label.size() && std::isdigit(static_cast<unsigned char>(label[i]))) ++i;
        return label.substr(i);
      }
    }
    return label;
  };

  for (const Json& trig : at.get("evt_triggers")) {
    if (!trig.is_array() || trig.size() < 3)
      throw ValidationError(where + ": malformed evt_triggers entry");
    EventInstance inst;
    inst.doc_index = doc_index;
    inst.trigger = Span{trig[0].get<int>(), trig[1].get<int>()};
    inst.event_type = trig[2][0][0].get<std::string>();
    inst.split = default_split;
    if (obj.contains("gold_evt_links")) {
      for (const Json& link : obj["gold_evt_links"]) {
        if (!link.is_array() || link.size() < 3)
          throw ValidationError(where + ": malformed gold_evt_links entry");
        Span link_trig{link[0][0].get<int>(), link[0][1].get<int>()};
        if (!(link_trig == inst.trigger)) continue;
        ArgumentAnnotation arg;
        arg.start = link[1][0].get<int>();
        arg.end = link[1][1].get<int>();
        arg.role = strip_role(link[2].get<std::string>());
        inst.arguments.push_back(std::move(arg));
      }
    }
    b.add_instance(std::move(inst), where);
  }
}

// Native WikiEvents record: argument spans are resolved through
// entity_mentions (end offsets exclusive in the source, inclusive here).
// Coreference fields are ignored; only conventional arguments are kept.
inline void load_wikievents_line(CorpusBuilder& b, const Json& obj, const std::string& where,
                                 SplitTag default_split) {
  JsonAt at{obj, where};
  std::string doc_id = at.str("doc_id");
  std::vector<std::string> tokens;
  for (const Json& t : at.get("tokens")) tokens.push_back(t.get<std::string>());
  int doc_index = b.add_document(doc_id, std::move(tokens), where);

  std::map<std::string, Span> entities;
  if (obj.contains("entity_mentions")) {
    for (const Json& ent : obj["entity_mentions"]) {
      JsonAt eat{ent, where + " entity_mention"};
      entities[eat.str("id")] = Span{eat.integer("start"), eat.integer("end") - 1};
    }
  }
  for (const Json& ev : at.get("event_mentions")) {
    JsonAt eat{ev, where + " event_mention"};
    EventInstance inst;
    inst.doc_index = doc_index;
    inst.event_type = eat.str("event_type");
    JsonAt trig{eat.get("trigger"), where + " trigger"};
    inst.trigger = Span{trig.integer("start"), trig.integer("end") - 1};
    inst.split = default_split;
    for (const Json& a : eat.get("arguments")) {
      JsonAt aat{a, where + " argument"};
      ArgumentAnnotation arg;
      arg.role = aat.str("role");
      std::string entity_id = aat.str("entity_id");
      auto it = entities.find(entity_id);
      if (it == entities.end())
        throw ValidationError(where + ": argument references unknown entity_id " + entity_id);
      arg.start = it->second.start;
      arg.end = it->second.end;
      inst.arguments.push_back(std::move(arg));
    }
    b.add_instance(std::move(inst), where);
  }
}

}  // namespace detail

// Loads one JSON-lines corpus file. All invariants are validated here;
// instances arrive in file order, documents in order of first appearance.
inline Corpus load_corpus(const std::string& path, CorpusFormat format,
                          OntologyMap ontologies,
                          SplitTag default_split = SplitTag::train) {
  detail::CorpusBuilder b;
  b.corpus.ontologies = std::move(ontologies);
  for_each_json_line(path, [&](int lineno, const Json& obj) {
    std::string where = path + ":" + std::to_string(lineno);
    switch (format) {
      case CorpusFormat::generic: detail::load_generic_line(b, obj, where, default_split); break;
      case CorpusFormat::rams: detail::load_rams_line(b, obj, where, default_split); break;
      case CorpusFormat::wikievents:
        detail::load_wikievents_line(b, obj, where, default_split);
        break;
    }
  });
  return std::move(b.corpus);
}

// Appends instances from another file into an existing corpus (used by
// ingest when train/dev/test arrive as separate files).
inline void load_corpus_into(Corpus& corpus, const std::string& path, CorpusFormat format,
                             SplitTag default_split) {
  detail::CorpusBuilder b;
  b.corpus = std::move(corpus);
  for (std::size_t i = 0; i < b.corpus.documents.size(); ++i)
    b.doc_index[b.corpus.documents[i].doc_id] = static_cast<int>(i);
  for (const auto& inst : b.corpus.instances)
    b.seen_keys.insert(key_of(b.corpus, inst));
  for_each_json_line(path, [&](int lineno, const Json& obj) {
    std::string where = path + ":" + std::to_string(lineno);
    switch (format) {
      case CorpusFormat::generic: detail::load_generic_line(b, obj, where, default_split); break;
      case CorpusFormat::rams: detail::load_rams_line(b, obj, where, default_split); break;
      case CorpusFormat::wikievents:
        detail::load_wikievents_line(b, obj, where, default_split);
        break;
    }
  });
  corpus = std::move(b.corpus);
}

// Serializes to the generic JSON-lines schema. Deterministic: key order is
// alphabetical, instance order is corpus order.
inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& inst : corpus.instances) {
    const Document& doc = corpus.doc_of(inst);
    Json obj;
    obj["doc_id"] = doc.doc_id;
    obj["tokens"] = doc.tokens;
    obj["event_type"] = inst.event_type;
    obj["trigger"] = Json{{"start", inst.trigger.start}, {"end", inst.trigger.end}};
    Json args = Json::array();
    for (const auto& arg : inst.arguments) {
      Json a{{"role", arg.role}, {"start", arg.start}, {"end", arg.end}};
      if (arg.head_index) a["head_index"] = *arg.head_index;
      args.push_back(std::move(a));
    }
    obj["arguments"] = std::move(args);
    if (inst.context_window)
      obj["context_window"] =
          Json{{"start", inst.context_window->start}, {"end", inst.context_window->end}};
    obj["split"] = to_string(inst.split);
    out += obj.dump();
    out += '\n';
  }
  return out;
}

// Loads JSON-lines dependency parses {doc_id, labels, heads} and attaches
// them to the corpus, validating lengths against each document.
inline void load_dependencies(Corpus& corpus, const std::string& path) {
  std::map<std::string, std::size_t> doc_len;
  for (const auto& doc : corpus.documents) doc_len[doc.doc_id] = doc.tokens.size();
  for_each_json_line(path, [&](int lineno, const Json& obj) {
    std::string where = path + ":" + std::to_string(lineno);
    JsonAt at{obj, where};
    DependencyParse parse;
    parse.doc_id = at.str("doc_id");
    for (const Json& l : at.get("labels")) parse.labels.push_back(l.get<std::string>());
    for (const Json& h : at.get("heads")) parse.heads.push_back(h.get<int>());
    if (parse.labels.size() != parse.heads.size())
      throw ValidationError(where + ": labels and heads differ in length");
    auto it = doc_len.find(parse.doc_id);
    if (it == doc_len.end()) return;  // parse for a document not in this corpus
    if (parse.labels.size() != it->second)
      throw ValidationError(where + ": parse length " + std::to_string(parse.labels.size()) +
                            " does not match doc " + parse.doc_id + " (" +
                            std::to_string(it->second) + " tokens)");
    corpus.parses[parse.doc_id] = std::move(parse);
  });
}

// ---------------------------------------------------------------------------
// Zero-shot split

// Retags the corpus: the n most frequent event types (counted over the
// original train+dev portions, ties broken by lexicographic event_type)
// stay in train/dev; every instance of any other type moves to test.
// Seen-type instances that were originally tagged test are folded into
// train so the instance multiset is preserved.
inline Corpus zero_shot_split(Corpus corpus, int n) {
  if (n <= 0) throw ValidationError("zero-shot split requires n >= 1");
  std::set<std::string> all_types;
  std::map<std::string, int> traindev_count;
  for (const auto& inst : corpus.instances) {
    all_types.insert(inst.event_type);
    if (inst.split == SplitTag::train || inst.split == SplitTag::dev)
      ++traindev_count[inst.event_type];
  }
  if (n >= static_cast<int>(all_types.size()))
    throw ValidationError("zero-shot split with n=" + std::to_string(n) + " but only " +
                          std::to_string(all_types.size()) +
                          " event types; test set would be empty");
  std::vector<std::pair<std::string, int>> ranked;
  for (const auto& t : all_types) {
    auto it = traindev_count.find(t);
    ranked.emplace_back(t, it == traindev_count.end() ? 0 : it->second);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::set<std::string> seen;
  for (int i = 0; i < n; ++i) seen.insert(ranked[i].first);
  for (auto& inst : corpus.instances) {
    if (!seen.count(inst.event_type)) {
      inst.split = SplitTag::test;
    } else if (inst.split == SplitTag::test) {
      inst.split = SplitTag::train;
    }
  }
  return corpus;
}

}  // namespace deae
