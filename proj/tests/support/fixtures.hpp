#pragma once

// Synthetic corpora for the test suite. Everything goes through the same
// on-disk formats the real loaders consume, so the fixtures double as
// format documentation.

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <unistd.h>

#include "deae/corpus_io.hpp"
#include "deae/json_util.hpp"

namespace deae::testfix {

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("deae-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }

  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

// ---------------------------------------------------------------------------
// Low-level builders

struct OntologySpec {
  std::string event_type;
  std::vector<std::string> roles;
  std::string tmpl;
  std::map<std::string, std::string> dep_labels;
};

inline Json ontology_entry(const OntologySpec& o) {
  Json j;
  j["event_type"] = o.event_type;
  j["roles"] = o.roles;
  j["template"] = o.tmpl;
  if (!o.dep_labels.empty()) {
    Json d = Json::object();
    for (const auto& [role, label] : o.dep_labels) d[role] = label;
    j["role_dep_labels"] = std::move(d);
  }
  return j;
}

inline std::string ontology_json(const std::vector<OntologySpec>& specs) {
  Json arr = Json::array();
  for (const auto& s : specs) arr.push_back(ontology_entry(s));
  return arr.dump(2) + "\n";
}

struct ArgSpec {
  std::string role;
  int start = 0;
  int end = 0;
  std::optional<int> head;
};

struct InstanceSpec {
  std::string doc_id;
  std::vector<std::string> tokens;
  std::string event_type;
  int trig_start = 0;
  int trig_end = 0;
  std::vector<ArgSpec> args;
  std::string split = "train";
};

inline Json instance_line(const InstanceSpec& s) {
  Json j;
  j["doc_id"] = s.doc_id;
  j["tokens"] = s.tokens;
  j["event_type"] = s.event_type;
  j["trigger"] = Json{{"start", s.trig_start}, {"end", s.trig_end}};
  Json args = Json::array();
  for (const auto& a : s.args) {
    Json aj{{"role", a.role}, {"start", a.start}, {"end", a.end}};
    if (a.head) aj["head_index"] = *a.head;
    args.push_back(std::move(aj));
  }
  j["arguments"] = std::move(args);
  j["split"] = s.split;
  return j;
}

inline std::string corpus_jsonl(const std::vector<InstanceSpec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    out += instance_line(s).dump();
    out += '\n';
  }
  return out;
}

struct ParseSpec {
  std::string doc_id;
  std::vector<std::string> labels;
  std::vector<int> heads;
};

inline std::string deps_jsonl(const std::vector<ParseSpec>& specs) {
  std::string out;
  for (const auto& p : specs) {
    Json j{{"doc_id", p.doc_id}, {"labels", p.labels}, {"heads", p.heads}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical ontologies

inline OntologySpec transfer_ontology() {
  return {"transfer",
          {"giver", "gift", "recipient"},
          "giver handed gift to recipient",
          {{"giver", "nsubj"}, {"gift", "dobj"}, {"recipient", "obl"}}};
}

inline OntologySpec contact_ontology() {
  return {"contact",
          {"communicator", "recipient", "place"},
          "communicator communicated remotely with recipient about topic at place",
          {{"communicator", "nsubj"}, {"recipient", "obl"}, {"place", "obl"}}};
}

inline OntologySpec hire_ontology() {
  return {"hire",
          {"employee", "placeofemployment", "place"},
          "employee started working at placeofemployment in place",
          {{"employee", "nsubj"}, {"placeofemployment", "obl"}, {"place", "obl"}}};
}

// ---------------------------------------------------------------------------
// Named corpora

struct CorpusFiles {
  std::string ontology;
  std::string corpus;
  std::string deps;
};

inline Corpus load_fixture(const CorpusFiles& f) {
  Corpus c = load_corpus(f.corpus, CorpusFormat::generic, load_ontologies(f.ontology));
  if (!f.deps.empty()) load_dependencies(c, f.deps);
  return c;
}

// 20 transfer instances whose role fillers come from disjoint token sets
// (givers vs recipients), so span selection is learnable from token identity
// alone. Positions vary via an optional prefix token; four instances carry a
// two-token gift span, four omit the recipient so the sentinel is exercised.
inline std::vector<InstanceSpec> overfit_instances(const std::string& split = "train") {
  const std::vector<std::string> givers{"anna", "cara"};
  const std::vector<std::string> gifts{"ring", "book", "lamp", "rose"};
  const std::vector<std::string> recips{"bob", "dan"};
  std::vector<InstanceSpec> out;
  int id = 0;
  auto doc_id = [&] { return "ov" + std::to_string(id++); };
  for (int g = 0; g < 2; ++g) {
    for (int f = 0; f < 4; ++f) {
      const std::string& giver = givers[static_cast<std::size_t>(g)];
      const std::string& gift = gifts[static_cast<std::size_t>(f)];
      // plain form: "<giver> handed the <gift> to <recipient> ."
      out.push_back({doc_id(),
                     {giver, "handed", "the", gift, "to", recips[static_cast<std::size_t>(f % 2)], "."},
                     "transfer",
                     1,
                     1,
                     {{"giver", 0, 0, {}}, {"gift", 3, 3, {}}, {"recipient", 5, 5, {}}},
                     split});
      // shifted form: "yesterday <giver> handed the <gift> to <recipient> ."
      out.push_back({doc_id(),
                     {"yesterday", giver, "handed", "the", gift, "to",
                      recips[static_cast<std::size_t>((f + 1) % 2)], "."},
                     "transfer",
                     2,
                     2,
                     {{"giver", 1, 1, {}}, {"gift", 4, 4, {}}, {"recipient", 6, 6, {}}},
                     split});
    }
  }
  for (int f = 0; f < 4; ++f) {
    if (f < 2) {
      // no recipient: the model must pick the sentinel for that role
      out.push_back({doc_id(),
                     {givers[static_cast<std::size_t>(f % 2)], "handed", "the",
                      gifts[static_cast<std::size_t>(f)], "away", "."},
                     "transfer",
                     1,
                     1,
                     {{"giver", 0, 0, {}}, {"gift", 3, 3, {}}},
                     split});
    } else {
      // two-token gift span: "<giver> handed the old <gift> to <recipient> ."
      out.push_back({doc_id(),
                     {givers[static_cast<std::size_t>(f % 2)], "handed", "the", "old",
                      gifts[static_cast<std::size_t>(f)], "to",
                      recips[static_cast<std::size_t>(f % 2)], "."},
                     "transfer",
                     1,
                     1,
                     {{"giver", 0, 0, {}}, {"gift", 3, 4, {}}, {"recipient", 6, 6, {}}},
                     split});
    }
  }
  return out;
}

inline CorpusFiles write_overfit_corpus(const TempDir& dir, const std::string& split = "train") {
  CorpusFiles f;
  f.ontology = dir.file("ontology.json");
  f.corpus = dir.file("corpus.jsonl");
  write_file(f.ontology, ontology_json({transfer_ontology()}));
  write_file(f.corpus, corpus_jsonl(overfit_instances(split)));
  return f;
}

// 50 instances across two event types, all tagged test. Used by the mixture
// boundary checks, where only extraction runs.
inline std::vector<InstanceSpec> fixture50_instances() {
  const std::vector<std::string> givers{"anna", "cara", "erin"};
  const std::vector<std::string> gifts{"ring", "book", "lamp", "rose", "coin"};
  const std::vector<std::string> recips{"bob", "dan"};
  const std::vector<std::string> comms{"ivan", "judy"};
  const std::vector<std::string> topics{"taxes", "rain", "maps"};
  const std::vector<std::string> places{"oslo", "lima"};
  std::vector<InstanceSpec> out;
  int id = 0;
  for (int i = 0; i < 30; ++i) {
    const std::string& giver = givers[static_cast<std::size_t>(i % 3)];
    const std::string& gift = gifts[static_cast<std::size_t>(i % 5)];
    const std::string& recip = recips[static_cast<std::size_t>(i % 2)];
    out.push_back({"fx" + std::to_string(id++),
                   {giver, "handed", "the", gift, "to", recip, "."},
                   "transfer",
                   1,
                   1,
                   {{"giver", 0, 0, {}}, {"gift", 3, 3, {}}, {"recipient", 5, 5, {}}},
                   "test"});
  }
  for (int i = 0; i < 20; ++i) {
    const std::string& comm = comms[static_cast<std::size_t>(i % 2)];
    const std::string& topic = topics[static_cast<std::size_t>(i % 3)];
    const std::string& place = places[static_cast<std::size_t>(i % 2)];
    const std::string& recip = recips[static_cast<std::size_t>((i + 1) % 2)];
    out.push_back({"fx" + std::to_string(id++),
                   {comm, "talked", "to", recip, "about", "the", topic, "at", place, "."},
                   "contact",
                   1,
                   1,
                   {{"communicator", 0, 0, {}}, {"recipient", 3, 3, {}}, {"place", 8, 8, {}}},
                   "test"});
  }
  return out;
}

inline CorpusFiles write_fixture50(const TempDir& dir) {
  CorpusFiles f;
  f.ontology = dir.file("ontology50.json");
  f.corpus = dir.file("corpus50.jsonl");
  write_file(f.ontology, ontology_json({transfer_ontology(), contact_ontology()}));
  write_file(f.corpus, corpus_jsonl(fixture50_instances()));
  return f;
}

// Ten event types ta..tj with a fixed train+dev frequency profile:
// 6,5,5,4,3,3,2,2,1,1. The te/tf and further ties pin down the lexicographic
// tie-break. Every type also has one test instance.
inline std::vector<std::string> zeroshot_types() {
  return {"ta", "tb", "tc", "td", "te", "tf", "tg", "th", "ti", "tj"};
}

inline CorpusFiles write_zeroshot_corpus(const TempDir& dir) {
  const std::vector<int> traindev_counts{6, 5, 5, 4, 3, 3, 2, 2, 1, 1};
  const auto types = zeroshot_types();
  std::vector<OntologySpec> onts;
  for (const auto& t : types)
    onts.push_back({t, {"agent", "target"}, "agent acted on target", {}});
  std::vector<InstanceSpec> insts;
  int id = 0;
  for (std::size_t k = 0; k < types.size(); ++k) {
    for (int i = 0; i < traindev_counts[k]; ++i) {
      const std::string split = (i % 3 == 2) ? "dev" : "train";
      insts.push_back({"zs" + std::to_string(id++),
                       {"x" + std::to_string(i), "acted", "on", "y" + std::to_string(i), "."},
                       types[k],
                       1,
                       1,
                       {{"agent", 0, 0, {}}, {"target", 3, 3, {}}},
                       split});
    }
    insts.push_back({"zs" + std::to_string(id++),
                     {"p" + std::to_string(k), "acted", "on", "q" + std::to_string(k), "."},
                     types[k],
                     1,
                     1,
                     {{"agent", 0, 0, {}}, {"target", 3, 3, {}}},
                     "test"});
  }
  CorpusFiles f;
  f.ontology = dir.file("ontology_zs.json");
  f.corpus = dir.file("corpus_zs.jsonl");
  write_file(f.ontology, ontology_json(onts));
  write_file(f.corpus, corpus_jsonl(insts));
  return f;
}

// One instance, three gold arguments. Paired with two predictions (one exact
// span+role match, one exact span with the wrong role) it yields
// Arg-I F1 = 0.8 and Arg-C F1 = 0.4.
inline CorpusFiles write_metric_corpus(const TempDir& dir) {
  OntologySpec attack{"attack",
                      {"attacker", "target", "time"},
                      "attacker attacked target at time",
                      {{"attacker", "nsubj"}, {"target", "dobj"}, {"time", "obl"}}};
  InstanceSpec inst{"mx0",
                    {"rome", "fell", "to", "goths", "in", "august"},
                    "attack",
                    1,
                    1,
                    {{"attacker", 3, 3, {}}, {"target", 0, 0, {}}, {"time", 5, 5, {}}},
                    "test"};
  CorpusFiles f;
  f.ontology = dir.file("ontology_mx.json");
  f.corpus = dir.file("corpus_mx.jsonl");
  write_file(f.ontology, ontology_json({attack}));
  write_file(f.corpus, corpus_jsonl({inst}));
  return f;
}

}  // namespace deae::testfix
