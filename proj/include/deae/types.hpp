#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace deae {

// Inclusive token span [start, end].
struct Span {
  int start = 0;
  int end = 0;
  bool operator==(const Span&) const = default;
  bool operator<(const Span& o) const {
    return start != o.start ? start < o.start : end < o.end;
  }
  int length() const { return end - start + 1; }
};

struct Document {
  std::string doc_id;
  std::vector<std::string> tokens;
  bool operator==(const Document&) const = default;
};

struct ArgumentAnnotation {
  std::string role;
  int start = 0;
  int end = 0;  // inclusive
  std::optional<int> head_index;  // syntactic head token, within [start, end]
  bool operator==(const ArgumentAnnotation&) const = default;
};

enum class SplitTag { train, dev, test };

inline const char* to_string(SplitTag s) {
  switch (s) {
    case SplitTag::train: return "train";
    case SplitTag::dev: return "dev";
    case SplitTag::test: return "test";
  }
  return "?";
}

struct EventInstance {
  int doc_index = 0;  // index into Corpus::documents
  std::string event_type;
  Span trigger;
  std::vector<ArgumentAnnotation> arguments;
  std::optional<Span> context_window;  // document-level datasets
  SplitTag split = SplitTag::train;
  bool operator==(const EventInstance&) const = default;
};

struct EventOntology {
  std::string event_type;
  std::vector<std::string> roles;  // ordered
  std::string template_text;       // contains each role exactly once
  std::map<std::string, std::string> role_dep_labels;  // optional, may be empty
  // Located at load: each role's token range within the whitespace-tokenized
  // template.
  std::vector<std::string> template_tokens;
  std::map<std::string, Span> template_slots;
  bool operator==(const EventOntology&) const = default;
};

struct DependencyParse {
  std::string doc_id;
  std::vector<std::string> labels;  // one per token
  std::vector<int> heads;           // head index per token; self or -1 = root
  bool operator==(const DependencyParse&) const = default;
};

using OntologyMap = std::map<std::string, EventOntology>;

struct Corpus {
  std::vector<Document> documents;
  std::vector<EventInstance> instances;
  OntologyMap ontologies;
  std::map<std::string, DependencyParse> parses;  // by doc_id; optional

  const Document& doc_of(const EventInstance& inst) const {
    return documents[static_cast<std::size_t>(inst.doc_index)];
  }

  bool has_split(SplitTag s) const {
    for (const auto& inst : instances)
      if (inst.split == s) return true;
    return false;
  }

  std::vector<const EventInstance*> split_instances(SplitTag s) const {
    std::vector<const EventInstance*> out;
    for (const auto& inst : instances)
      if (inst.split == s) out.push_back(&inst);
    return out;
  }

  bool operator==(const Corpus&) const = default;
};

// Identifies one event instance across files: (doc_id, trigger, event_type).
struct InstanceKey {
  std::string doc_id;
  Span trigger;
  std::string event_type;
  bool operator==(const InstanceKey&) const = default;
  bool operator<(const InstanceKey& o) const {
    if (doc_id != o.doc_id) return doc_id < o.doc_id;
    if (!(trigger == o.trigger)) return trigger < o.trigger;
    return event_type < o.event_type;
  }
};

inline InstanceKey key_of(const Corpus& corpus, const EventInstance& inst) {
  return InstanceKey{corpus.doc_of(inst).doc_id, inst.trigger, inst.event_type};
}

inline std::string to_string(const InstanceKey& k) {
  return k.doc_id + ":" + std::to_string(k.trigger.start) + "-" +
         std::to_string(k.trigger.end) + ":" + k.event_type;
}

}  // namespace deae
