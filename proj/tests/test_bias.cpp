#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "deae/bias.hpp"
#include "support/fixtures.hpp"

using namespace deae;
using namespace deae::testfix;

namespace {

using PredMap = std::map<InstanceKey, std::vector<Prediction>>;

std::vector<int> all_indices(const Corpus& c) {
  std::vector<int> idxs(c.instances.size());
  for (std::size_t i = 0; i < idxs.size(); ++i) idxs[i] = static_cast<int>(i);
  return idxs;
}

// One transfer instance with golds for giver and gift only; recipient is
// deliberately unfilled so a recipient prediction is spurious.
Corpus spurious_corpus(const TempDir& dir) {
  InstanceSpec inst{"sp0",
                    {"anna", "handed", "the", "ring", "over", "quickly", "."},
                    "transfer",
                    1,
                    1,
                    {{"giver", 0, 0, {}}, {"gift", 3, 3, {}}},
                    "test"};
  CorpusFiles f;
  f.ontology = dir.file("ontology.json");
  f.corpus = dir.file("corpus.jsonl");
  write_file(f.ontology, ontology_json({transfer_ontology()}));
  write_file(f.corpus, corpus_jsonl({inst}));
  return load_corpus(f.corpus, CorpusFormat::generic, load_ontologies(f.ontology));
}

}  // namespace

TEST_CASE("spurious role ratio counts predictions whose role has no gold filler") {
  TempDir dir;
  Corpus c = spurious_corpus(dir);
  const InstanceKey key = key_of(c, c.instances[0]);

  SECTION("the quarter fixture") {
    PredMap preds;
    preds[key] = {
        {"giver", 0, Span{0, 0}, -0.1},
        {"gift", 0, Span{3, 3}, -0.2},
        {"gift", 1, Span{2, 3}, -0.5},      // wrong span, but the role is filled in gold
        {"recipient", 0, Span{5, 5}, -0.9}, // no gold recipient: spurious
        {"recipient", 1, std::nullopt, 0.0} // sentinel, excluded from the denominator
    };
    BiasRatio r = spurious_role_error_ratio(c, preds, all_indices(c));
    REQUIRE(r.numerator == 1);
    REQUIRE(r.denominator == 4);
    REQUIRE(r.ratio() == 0.25);
  }
  SECTION("gold echoed back is never spurious") {
    PredMap preds;
    preds[key] = {{"giver", 0, Span{0, 0}, 0.0}, {"gift", 0, Span{3, 3}, 0.0}};
    BiasRatio r = spurious_role_error_ratio(c, preds, all_indices(c));
    REQUIRE(r.numerator == 0);
    REQUIRE(r.denominator == 2);
    REQUIRE(r.ratio() == 0.0);
  }
  SECTION("all-sentinel output leaves the denominator empty") {
    PredMap preds;
    preds[key] = {{"giver", 0, std::nullopt, 0.0}};
    BiasRatio r = spurious_role_error_ratio(c, preds, all_indices(c));
    REQUIRE(r.denominator == 0);
    REQUIRE(r.ratio() == 0.0);  // convention: empty denominator scores zero
  }
  SECTION("a missing prediction entry is an error") {
    PredMap preds;
    REQUIRE_THROWS_WITH(spurious_role_error_ratio(c, preds, all_indices(c)),
                        Catch::Matchers::ContainsSubstring("no predictions recorded"));
  }
}

TEST_CASE("spurious role ratio equals a brute-force recount on random inputs") {
  TempDir dir;
  const std::vector<std::string> roles{"giver", "gift", "recipient"};
  std::vector<InstanceSpec> specs;
  SplitMix64 rng(777);
  for (int i = 0; i < 50; ++i) {
    InstanceSpec s;
    s.doc_id = "r" + std::to_string(i);
    s.tokens = {"w0", "w1", "w2", "w3", "w4", "w5"};
    s.event_type = "transfer";
    s.trig_start = s.trig_end = 1;
    s.split = "test";
    for (const auto& role : roles) {
      if (rng.next_u64() % 2 == 0) continue;  // leave some roles unfilled
      int start = static_cast<int>(rng.next_u64() % 6);
      s.args.push_back({role, start, start, {}});
    }
    specs.push_back(std::move(s));
  }
  CorpusFiles f;
  f.ontology = dir.file("ontology.json");
  f.corpus = dir.file("corpus.jsonl");
  write_file(f.ontology, ontology_json({transfer_ontology()}));
  write_file(f.corpus, corpus_jsonl(specs));
  Corpus c = load_corpus(f.corpus, CorpusFormat::generic, load_ontologies(f.ontology));

  PredMap preds;
  for (const auto& inst : c.instances) {
    std::vector<Prediction>& pv = preds[key_of(c, inst)];
    const int n = static_cast<int>(rng.next_u64() % 5);
    for (int p = 0; p < n; ++p) {
      Prediction pr;
      pr.role = roles[rng.next_u64() % roles.size()];
      pr.slot = p;
      if (rng.next_u64() % 4 != 0) {
        int start = static_cast<int>(rng.next_u64() % 6);
        pr.span = Span{start, start};
      }
      pv.push_back(pr);
    }
  }

  long want_num = 0, want_den = 0;
  for (const auto& inst : c.instances) {
    for (const auto& p : preds[key_of(c, inst)]) {
      if (!p.span) continue;
      ++want_den;
      bool filled = false;
      for (const auto& a : inst.arguments)
        if (a.role == p.role) filled = true;
      if (!filled) ++want_num;
    }
  }

  BiasRatio r = spurious_role_error_ratio(c, preds, all_indices(c));
  REQUIRE(r.numerator == want_num);
  REQUIRE(r.denominator == want_den);
}

TEST_CASE("syntactic match ratio checks the head label the ontology expects") {
  TempDir dir;
  InstanceSpec inst{"sy0",
                    {"w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9"},
                    "transfer",
                    0,
                    0,
                    {{"giver", 0, 0, {}}},
                    "test"};
  // six tokens carry the label expected for "giver", four do not
  ParseSpec parse{"sy0",
                  {"nsubj", "nsubj", "nsubj", "nsubj", "nsubj", "nsubj",
                   "dobj", "dobj", "dobj", "dobj"},
                  {-1, 0, 0, 0, 0, 0, 0, 0, 0, 0}};
  CorpusFiles f;
  f.ontology = dir.file("ontology.json");
  f.corpus = dir.file("corpus.jsonl");
  f.deps = dir.file("deps.jsonl");
  write_file(f.ontology, ontology_json({transfer_ontology()}));
  write_file(f.corpus, corpus_jsonl({inst}));
  write_file(f.deps, deps_jsonl({parse}));
  Corpus c = load_fixture(f);
  const InstanceKey key = key_of(c, c.instances[0]);

  SECTION("six of ten single-token spans match nsubj") {
    PredMap preds;
    std::vector<Prediction>& pv = preds[key];
    for (int i = 0; i < 10; ++i) pv.push_back({"giver", i, Span{i, i}, 0.0});
    BiasRatio r = syntactic_match_ratio(c, preds, all_indices(c));
    REQUIRE(r.numerator == 6);
    REQUIRE(r.denominator == 10);
    REQUIRE(r.ratio() == 0.6);
  }
  SECTION("a multi-token span is judged by its derived head") {
    PredMap preds;
    // span (1,2): token 1 and 2 both hang off token 0, outside the span,
    // so the leftmost outward token 1 is the head, labeled nsubj
    preds[key] = {{"giver", 0, Span{1, 2}, 0.0}};
    BiasRatio r = syntactic_match_ratio(c, preds, all_indices(c));
    REQUIRE(r.numerator == 1);
    REQUIRE(r.denominator == 1);
  }
  SECTION("sentinels do not enter the ratio") {
    PredMap preds;
    preds[key] = {{"giver", 0, std::nullopt, 0.0}};
    BiasRatio r = syntactic_match_ratio(c, preds, all_indices(c));
    REQUIRE(r.denominator == 0);
  }
  SECTION("a document without a parse is an error") {
    Corpus bare = load_corpus(f.corpus, CorpusFormat::generic, load_ontologies(f.ontology));
    PredMap preds;
    preds[key] = {{"giver", 0, Span{0, 0}, 0.0}};
    REQUIRE_THROWS_WITH(syntactic_match_ratio(bare, preds, all_indices(bare)),
                        Catch::Matchers::ContainsSubstring("needs a dependency parse"));
  }
  SECTION("a role without a label expectation is an error") {
    OntologySpec ont = transfer_ontology();
    ont.dep_labels.erase("giver");
    write_file(f.ontology, ontology_json({ont}));
    Corpus partial = load_fixture(f);
    PredMap preds;
    preds[key] = {{"giver", 0, Span{0, 0}, 0.0}};
    REQUIRE_THROWS_WITH(syntactic_match_ratio(partial, preds, all_indices(partial)),
                        Catch::Matchers::ContainsSubstring("does not map role 'giver'"));
  }
}

TEST_CASE("style comparison records per-role span disagreements") {
  TempDir dir;
  Corpus c = spurious_corpus(dir);
  const InstanceKey key = key_of(c, c.instances[0]);

  PredMap a;
  a[key] = {{"giver", 0, Span{0, 0}, -0.1}, {"gift", 0, Span{2, 3}, -0.2}};

  SECTION("identical predictions produce no disagreements") {
    StyleComparison cmp = compare_prompt_styles(c, a, a, all_indices(c));
    REQUIRE(cmp.disagreements.empty());
    REQUIRE(cmp.report_a.overall.arg_c.tp == cmp.report_b.overall.arg_c.tp);
    REQUIRE(cmp.spurious_a.denominator == cmp.spurious_b.denominator);
  }
  SECTION("differing spans for one role are recorded from both sides") {
    PredMap b;
    b[key] = {{"giver", 0, Span{0, 0}, -0.1}, {"gift", 0, Span{3, 3}, -0.2}};
    StyleComparison cmp = compare_prompt_styles(c, a, b, all_indices(c));
    REQUIRE(cmp.disagreements.size() == 1);
    const StyleDisagreement& d = cmp.disagreements[0];
    REQUIRE(d.key == key);
    REQUIRE(d.role == "gift");
    REQUIRE(d.a_spans == std::vector<Span>{Span{2, 3}});
    REQUIRE(d.b_spans == std::vector<Span>{Span{3, 3}});
  }
  SECTION("a role predicted on one side only is a disagreement") {
    PredMap b;
    b[key] = {{"giver", 0, Span{0, 0}, -0.1}};
    StyleComparison cmp = compare_prompt_styles(c, a, b, all_indices(c));
    REQUIRE(cmp.disagreements.size() == 1);
    REQUIRE(cmp.disagreements[0].role == "gift");
    REQUIRE(cmp.disagreements[0].b_spans.empty());
  }
  SECTION("a sentinel matches an absent prediction") {
    PredMap b;
    b[key] = {{"giver", 0, Span{0, 0}, -0.1}, {"gift", 0, std::nullopt, -0.2}};
    PredMap a2;
    a2[key] = {{"giver", 0, Span{0, 0}, -0.1}};
    StyleComparison cmp = compare_prompt_styles(c, a2, b, all_indices(c));
    REQUIRE(cmp.disagreements.empty());  // no span predicted under either style
  }
  SECTION("swapping the sides mirrors every record") {
    PredMap b;
    b[key] = {{"gift", 0, Span{3, 3}, -0.2}};
    StyleComparison ab = compare_prompt_styles(c, a, b, all_indices(c));
    StyleComparison ba = compare_prompt_styles(c, b, a, all_indices(c));
    REQUIRE(ab.disagreements.size() == ba.disagreements.size());
    for (std::size_t i = 0; i < ab.disagreements.size(); ++i) {
      REQUIRE(ab.disagreements[i].role == ba.disagreements[i].role);
      REQUIRE(ab.disagreements[i].a_spans == ba.disagreements[i].b_spans);
      REQUIRE(ab.disagreements[i].b_spans == ba.disagreements[i].a_spans);
    }
  }
  SECTION("the comparison serializes with both reports and the disagreement list") {
    PredMap b;
    b[key] = {{"gift", 0, Span{3, 3}, -0.2}};
    StyleComparison cmp = compare_prompt_styles(c, a, b, all_indices(c));
    Json j = comparison_to_json(cmp);
    REQUIRE(j["a"].contains("report"));
    REQUIRE(j["a"].contains("spurious_role_error"));
    REQUIRE(j["disagreements"].size() == cmp.disagreements.size());
    REQUIRE(j["disagreements"][0]["role"].is_string());
    REQUIRE(j["disagreements"][0]["a_spans"].is_array());
  }
}

TEST_CASE("perturbed template files enforce full role coverage") {
  TempDir dir;
  OntologyMap onts = load_ontologies([&] {
    const std::string p = dir.file("ontology.json");
    write_file(p, ontology_json({transfer_ontology()}));
    return p;
  }());
  const std::string path = dir.file("alt.json");

  SECTION("a well-formed perturbation loads with fresh slots") {
    write_file(path, Json::array({Json{{"event_type", "transfer"},
                                       {"template",
                                        "recipient received gift from giver"}}})
                         .dump());
    auto prompts = load_perturbed_templates(path, onts);
    REQUIRE(prompts.size() == 1);
    const Prompt& p = prompts.at("transfer");
    REQUIRE(p.tokens == std::vector<std::string>{"recipient", "received", "gift", "from",
                                                 "giver"});
    REQUIRE(p.role_slots.at("recipient") == Span{0, 0});
    REQUIRE(p.role_slots.at("gift") == Span{2, 2});
    REQUIRE(p.role_slots.at("giver") == Span{4, 4});
  }
  SECTION("the file must be a JSON array") {
    write_file(path, "{}");
    REQUIRE_THROWS_WITH(load_perturbed_templates(path, onts),
                        Catch::Matchers::ContainsSubstring("must be a JSON array"));
  }
  SECTION("unknown event types are rejected") {
    write_file(path,
               Json::array({Json{{"event_type", "lease"}, {"template", "x"}}}).dump());
    REQUIRE_THROWS_WITH(load_perturbed_templates(path, onts),
                        Catch::Matchers::ContainsSubstring("no ontology entry"));
  }
  SECTION("duplicate entries for one event are rejected") {
    Json e{{"event_type", "transfer"}, {"template", "recipient received gift from giver"}};
    write_file(path, Json::array({e, e}).dump());
    REQUIRE_THROWS_WITH(load_perturbed_templates(path, onts),
                        Catch::Matchers::ContainsSubstring("duplicate perturbed template"));
  }
  SECTION("a template that drops a role names the role in the error") {
    write_file(path, Json::array({Json{{"event_type", "transfer"},
                                       {"template", "recipient received gift"}}})
                         .dump());
    REQUIRE_THROWS_WITH(
        load_perturbed_templates(path, onts),
        Catch::Matchers::ContainsSubstring("perturbed template for transfer") &&
            Catch::Matchers::ContainsSubstring("role 'giver' does not appear"));
  }
  SECTION("a template that repeats a role is rejected") {
    write_file(path, Json::array({Json{{"event_type", "transfer"},
                                       {"template",
                                        "giver gave giver gift to recipient"}}})
                         .dump());
    REQUIRE_THROWS_WITH(load_perturbed_templates(path, onts),
                        Catch::Matchers::ContainsSubstring("appears 2 times"));
  }
}

TEST_CASE("robustness delta is the perturbed minus raw argument score") {
  TempDir dir;
  Corpus c = spurious_corpus(dir);
  const InstanceKey key = key_of(c, c.instances[0]);

  PredMap good;
  good[key] = {{"giver", 0, Span{0, 0}, -0.1}, {"gift", 0, Span{3, 3}, -0.2}};
  PredMap worse;
  worse[key] = {{"giver", 0, Span{0, 0}, -0.1}, {"gift", 0, Span{2, 3}, -0.2}};

  EvalReport raw = evaluate(c, good, all_indices(c));

  SECTION("identical outputs give exactly zero") {
    RobustnessReport r = robustness_delta(raw, evaluate(c, good, all_indices(c)));
    REQUIRE(r.delta == 0.0);
    REQUIRE(r.raw_arg_c_f1 == r.perturbed_arg_c_f1);
  }
  SECTION("a degraded perturbed run goes negative by the f1 difference") {
    EvalReport perturbed = evaluate(c, worse, all_indices(c));
    RobustnessReport r = robustness_delta(raw, perturbed);
    REQUIRE(r.raw_arg_c_f1 == 1.0);
    REQUIRE(r.perturbed_arg_c_f1 == Catch::Approx(0.5));
    REQUIRE(r.delta == Catch::Approx(-0.5));
    Json j = robustness_to_json(r);
    REQUIRE(j["delta"] == r.delta);
    REQUIRE(j["raw"]["overall"]["arg_c"]["f1"] == 1.0);
  }
}
