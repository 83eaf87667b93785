#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "deae/model.hpp"
#include "deae/pipeline.hpp"
#include "support/fixtures.hpp"

using namespace deae;
using namespace deae::testfix;

namespace {

Matrix row2(double a, double b) {
  Matrix m(1, 2);
  m.a = {a, b};
  return m;
}

// Distributions with all mass on one (start, end) index pair.
SpanDistributions one_hot(int positions, int s, int e) {
  SpanDistributions d;
  d.p_start.assign(static_cast<std::size_t>(positions), 0.0);
  d.p_end.assign(static_cast<std::size_t>(positions), 0.0);
  d.p_start[static_cast<std::size_t>(s)] = 1.0;
  d.p_end[static_cast<std::size_t>(e)] = 1.0;
  d.logp_start.resize(d.p_start.size());
  d.logp_end.resize(d.p_end.size());
  for (std::size_t i = 0; i < d.p_start.size(); ++i) {
    d.logp_start[i] = std::log(d.p_start[i]);
    d.logp_end[i] = std::log(d.p_end[i]);
  }
  return d;
}

SpanDistributions uniform_dist(int positions) {
  SpanDistributions d;
  const double p = 1.0 / positions;
  d.p_start.assign(static_cast<std::size_t>(positions), p);
  d.p_end.assign(static_cast<std::size_t>(positions), p);
  d.logp_start.assign(static_cast<std::size_t>(positions), std::log(p));
  d.logp_end.assign(static_cast<std::size_t>(positions), std::log(p));
  return d;
}

}  // namespace

TEST_CASE("model config validation pins the legal ranges") {
  ModelConfig cfg;
  REQUIRE_NOTHROW(validate_config(cfg));
  SECTION("dimension") {
    cfg.h = 0;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
  }
  SECTION("lambda") {
    cfg.lambda = 1.5;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
    cfg.lambda = -0.1;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
  }
  SECTION("slot counts") {
    cfg.slots_per_role["giver"] = 4;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
    cfg.slots_per_role["giver"] = 0;
    REQUIRE_THROWS_AS(validate_config(cfg), ValidationError);
    cfg.slots_per_role["giver"] = 3;
    REQUIRE_NOTHROW(validate_config(cfg));
  }
}

TEST_CASE("context windows center on the trigger and respect bounds") {
  Document doc;
  doc.doc_id = "d";
  for (int i = 0; i < 12; ++i) doc.tokens.push_back("t" + std::to_string(i));
  EventInstance inst;
  inst.trigger = Span{6, 6};

  SECTION("short documents pass through whole") {
    REQUIRE(compute_window(inst, doc, 12) == Span{0, 11});
    REQUIRE(compute_window(inst, doc, 100) == Span{0, 11});
  }
  SECTION("long documents truncate around the trigger") {
    Span w = compute_window(inst, doc, 5);
    REQUIRE(w.length() == 5);
    REQUIRE(w.start <= 6);
    REQUIRE(6 <= w.end);
    REQUIRE(w.start >= 0);
    REQUIRE(w.end <= 11);
  }
  SECTION("trigger at the edge clamps instead of overflowing") {
    inst.trigger = Span{0, 0};
    REQUIRE(compute_window(inst, doc, 5) == Span{0, 4});
    inst.trigger = Span{11, 11};
    REQUIRE(compute_window(inst, doc, 5) == Span{7, 11});
  }
  SECTION("an explicit context window wins") {
    inst.context_window = Span{4, 9};
    inst.trigger = Span{6, 6};
    REQUIRE(compute_window(inst, doc, 100) == Span{4, 9});
  }
  SECTION("trigger longer than the cap is an error") {
    inst.trigger = Span{2, 9};
    REQUIRE_THROWS_WITH(compute_window(inst, doc, 5),
                        Catch::Matchers::ContainsSubstring("max_input_length"));
  }
}

TEST_CASE("debias mixture is a convex combination of prompt states") {
  Matrix orig = row2(4.0, 4.0);
  std::vector<std::pair<HiddenStates, double>> cluster{{row2(2.0, 0.0), 0.5},
                                                       {row2(0.0, 2.0), 0.5}};

  SECTION("half mixture matches the hand computation") {
    Matrix mixed = debias_mixture(orig, cluster, 0.5);
    REQUIRE(mixed.a == std::vector<double>{2.5, 2.5});
  }
  SECTION("lambda 1 returns the original bitwise") {
    Matrix mixed = debias_mixture(orig, cluster, 1.0);
    REQUIRE(mixed.a == orig.a);
  }
  SECTION("lambda 0 with a singleton cluster returns that prompt bitwise") {
    std::vector<std::pair<HiddenStates, double>> single{{row2(0.3, -0.7), 1.0}};
    Matrix mixed = debias_mixture(orig, single, 0.0);
    REQUIRE(mixed.a == single[0].first.a);
  }
  SECTION("lambda outside [0,1] is rejected") {
    REQUIRE_THROWS_AS(debias_mixture(orig, cluster, 1.0001), ValidationError);
    REQUIRE_THROWS_AS(debias_mixture(orig, cluster, -0.0001), ValidationError);
  }
  SECTION("weights must sum to one") {
    std::vector<std::pair<HiddenStates, double>> bad{{row2(2.0, 0.0), 0.5},
                                                     {row2(0.0, 2.0), 0.6}};
    REQUIRE_THROWS_WITH(debias_mixture(orig, bad, 0.5),
                        Catch::Matchers::ContainsSubstring("sum to 1"));
  }
  SECTION("shape mismatches are rejected") {
    std::vector<std::pair<HiddenStates, double>> bad{{Matrix(2, 2), 0.5}, {Matrix(1, 2), 0.5}};
    REQUIRE_THROWS_AS(debias_mixture(orig, bad, 0.5), ValidationError);
  }
}

TEST_CASE("role representations mean-pool the slot rows") {
  Prompt p;
  p.event_type = "e";
  p.tokens = {"giver", "handed", "gift"};
  p.role_slots["giver"] = Span{0, 0};
  p.role_slots["pair"] = Span{1, 2};

  Matrix H(3, 2);
  H.a = {5.0, -1.0, 1.0, 3.0, 3.0, 1.0};

  SECTION("single-token slot is that row") {
    Matrix phi = role_representation(H, p, "giver");
    REQUIRE(phi.a == std::vector<double>{5.0, -1.0});
  }
  SECTION("two-token slot averages") {
    Matrix phi = role_representation(H, p, "pair");
    REQUIRE(phi.a == std::vector<double>{2.0, 2.0});
  }
  SECTION("unknown role is an error") {
    REQUIRE_THROWS_AS(role_representation(H, p, "recipient"), ValidationError);
  }
}

TEST_CASE("span distributions are softmaxes over sentinel plus positions") {
  const int h = 2;
  RoleSelector sel;
  sel.role = "r";
  sel.w_start = row2(1.0, 1.0);
  sel.w_end = row2(1.0, 1.0);
  Matrix sentinel = row2(0.0, 0.0);

  SECTION("zero scores give the uniform distribution") {
    Matrix phi = row2(0.0, 0.0);
    Matrix H(12, h);
    for (std::size_t i = 0; i < H.a.size(); ++i) H.a[i] = static_cast<double>(i);
    SpanDistributions d = span_distributions(sel, phi, H, sentinel);
    REQUIRE(d.positions() == 13);
    for (double p : d.p_start) REQUIRE(p == Catch::Approx(1.0 / 13).margin(1e-12));
  }
  SECTION("a dominant score takes almost all mass") {
    Matrix phi = row2(1.0, 0.0);
    Matrix H(3, h);
    H.a = {50.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    SpanDistributions d = span_distributions(sel, phi, H, sentinel);
    REQUIRE(d.p_start[1] > 0.999999);
  }
  SECTION("distributions sum to one under random weights") {
    SplitMix64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      Matrix phi = random_uniform(1, h, 2.0, rng);
      Matrix H = random_uniform(9, h, 2.0, rng);
      Matrix sent = random_uniform(1, h, 2.0, rng);
      RoleSelector s2;
      s2.w_start = random_uniform(1, h, 2.0, rng);
      s2.w_end = random_uniform(1, h, 2.0, rng);
      SpanDistributions d = span_distributions(s2, phi, H, sent);
      double sum_s = 0.0, sum_e = 0.0;
      for (double p : d.p_start) sum_s += p;
      for (double p : d.p_end) sum_e += p;
      REQUIRE(std::abs(sum_s - 1.0) <= 1e-6);
      REQUIRE(std::abs(sum_e - 1.0) <= 1e-6);
    }
  }
  SECTION("dimension mismatches are rejected") {
    Matrix phi(1, 3);
    Matrix H(4, h);
    REQUIRE_THROWS_AS(span_distributions(sel, phi, H, sentinel), ValidationError);
  }
}

TEST_CASE("span loss sums the negative log-probabilities of the assigned golds") {
  SECTION("one-hot correct distributions give zero loss") {
    std::vector<SpanDistributions> dists{one_hot(6, 2, 3)};
    REQUIRE(span_loss(dists, {{2, 3}}) == 0.0);
  }
  SECTION("uniform over 13 positions gives 2 ln 13") {
    std::vector<SpanDistributions> dists{uniform_dist(13)};
    REQUIRE(span_loss(dists, {{4, 7}}) == Catch::Approx(2.0 * std::log(13.0)).epsilon(1e-12));
    REQUIRE(2.0 * std::log(13.0) == Catch::Approx(5.1299).margin(5e-5));
  }
  SECTION("slots and golds must align") {
    std::vector<SpanDistributions> dists{uniform_dist(5)};
    REQUIRE_THROWS_AS(span_loss(dists, {}), ValidationError);
    REQUIRE_THROWS_AS(span_loss(dists, {{0, 9}}), ValidationError);
  }
}

TEST_CASE("span decoding picks the argmax candidate under the length cap") {
  SECTION("forced argmax at start 3 end 5") {
    DecodedSpan d = decode_span(one_hot(10, 3, 5), 10);
    REQUIRE(d.window_span.has_value());
    REQUIRE(*d.window_span == Span{2, 4});  // window coordinates of candidate (3,5)
  }
  SECTION("dominant sentinel mass decodes to no argument") {
    SpanDistributions d = uniform_dist(8);
    d.logp_start[0] = std::log(0.9);
    d.logp_end[0] = std::log(0.9);
    REQUIRE_FALSE(decode_span(d, 10).window_span.has_value());
  }
  SECTION("uniform scores keep the sentinel by the tie rule") {
    REQUIRE_FALSE(decode_span(uniform_dist(9), 10).window_span.has_value());
  }
  SECTION("crossing peaks fall back to the best non-crossing candidate") {
    SpanDistributions d = uniform_dist(10);
    d.logp_start[8] = std::log(0.5);
    d.logp_end[2] = std::log(0.5);
    DecodedSpan got = decode_span(d, 10);
    // exhaustive reference over the same candidate set
    double best = d.logp_start[0] + d.logp_end[0];
    std::optional<Span> best_span;
    for (int s = 1; s <= 9; ++s) {
      for (int e = s; e <= 9 && e - s + 1 <= 10; ++e) {
        const double score = d.logp_start[s] + d.logp_end[e];
        if (score > best) {
          best = score;
          best_span = Span{s - 1, e - 1};
        }
      }
    }
    REQUIRE(got.score == best);
    REQUIRE(got.window_span == best_span);
  }
  SECTION("the length cap excludes long spans") {
    SpanDistributions d = uniform_dist(10);
    d.logp_start[1] = std::log(0.6);
    d.logp_end[9] = std::log(0.6);
    DecodedSpan got = decode_span(d, 3);
    if (got.window_span) REQUIRE(got.window_span->length() <= 3);
  }
}

TEST_CASE("gold spans are assigned to slots by minimal total loss") {
  // slot 0 prefers gold (1,1); slot 1 prefers gold (3,3)
  SpanDistributions a = uniform_dist(6);
  a.logp_start[1] = std::log(0.8);
  a.logp_end[1] = std::log(0.8);
  SpanDistributions b = uniform_dist(6);
  b.logp_start[3] = std::log(0.8);
  b.logp_end[3] = std::log(0.8);

  SECTION("each gold lands on the slot that likes it") {
    auto got = assign_gold_to_slots({{3, 3}, {1, 1}}, {a, b}, nullptr);
    REQUIRE(got == std::vector<std::pair<int, int>>{{1, 1}, {3, 3}});
  }
  SECTION("missing golds leave sentinel slots") {
    auto got = assign_gold_to_slots({{3, 3}}, {a, b}, nullptr);
    REQUIRE(got == std::vector<std::pair<int, int>>{{0, 0}, {3, 3}});
  }
  SECTION("excess golds are truncated with a warning") {
    std::vector<std::string> warnings;
    auto got = assign_gold_to_slots({{1, 1}, {3, 3}, {4, 4}}, {a, b}, &warnings);
    REQUIRE(got.size() == 2);
    REQUIRE_FALSE(warnings.empty());
  }
}

TEST_CASE("mixture terms implement the lambda boundaries exactly") {
  Prompt base;
  base.tokens = {"base"};
  PromptCluster cluster;
  cluster.prompts.resize(2);
  cluster.prompts[0].tokens = {"p0"};
  cluster.prompts[1].tokens = {"p1"};
  cluster.logliks = {0.0, 0.0};
  cluster.weights = {0.5, 0.5};

  SECTION("no cluster: the base prompt carries weight one") {
    PromptInput pin{base, std::nullopt};
    auto terms = mixture_terms(pin, 0.25);
    REQUIRE(terms.size() == 1);
    REQUIRE(terms[0].prompt == &pin.base);
    REQUIRE(terms[0].coef == 1.0);
  }
  SECTION("lambda 1 drops the cluster entirely") {
    PromptInput pin{base, cluster};
    auto terms = mixture_terms(pin, 1.0);
    REQUIRE(terms.size() == 1);
    REQUIRE(terms[0].coef == 1.0);
  }
  SECTION("lambda 0 with a singleton keeps only that prompt at weight one") {
    PromptCluster single;
    single.prompts.resize(1);
    single.weights = {1.0};
    PromptInput pin{base, single};
    auto terms = mixture_terms(pin, 0.0);
    REQUIRE(terms.size() == 1);
    REQUIRE(terms[0].prompt == &pin.cluster->prompts[0]);
    REQUIRE(terms[0].coef == 1.0);
  }
  SECTION("interior lambda spreads the residual over the cluster") {
    PromptInput pin{base, cluster};
    auto terms = mixture_terms(pin, 0.5);
    REQUIRE(terms.size() == 3);
    REQUIRE(terms[0].coef == 0.5);
    REQUIRE(terms[1].coef == 0.25);
    REQUIRE(terms[2].coef == 0.25);
  }
  SECTION("zero-weight prompts are dropped") {
    PromptCluster skew = cluster;
    skew.weights = {1.0, 0.0};
    PromptInput pin{base, skew};
    auto terms = mixture_terms(pin, 0.5);
    REQUIRE(terms.size() == 2);
  }
}

TEST_CASE("model construction covers every ontology role with a selector") {
  TempDir dir;
  CorpusFiles f = write_fixture50(dir);
  Corpus c = load_fixture(f);
  ModelConfig cfg;
  cfg.h = 8;
  cfg.seed = 5;
  Model m = make_model(c, cfg, ExtractionStyle::ontology_based);

  for (const auto& role : {"giver", "gift", "recipient", "communicator", "place"})
    REQUIRE(m.selectors.count(role) == 1);
  REQUIRE(m.sentinel.rows == 1);
  REQUIRE(m.sentinel.cols == 8);
  // per-role selectors are independently initialized
  REQUIRE_FALSE(m.selectors.at("giver").w_start.a == m.selectors.at("gift").w_start.a);
  REQUIRE_FALSE(m.selectors.at("giver").w_start.a == m.selectors.at("giver").w_end.a);
}

TEST_CASE("extraction stays inside the context window in document coordinates") {
  TempDir dir;
  CorpusFiles f = write_overfit_corpus(dir);
  Corpus c = load_fixture(f);
  ModelConfig cfg;
  cfg.h = 8;
  cfg.max_input_length = 5;
  cfg.seed = 3;
  Model m = make_model(c, cfg, ExtractionStyle::ontology_based);

  for (const auto& inst : c.instances) {
    const Span window = compute_window(inst, c.doc_of(inst), cfg.max_input_length);
    PromptInput pin = prompts_for_instance(m, c, inst, {});
    auto preds = extract(m, c, inst, pin);
    REQUIRE(preds.size() == 3);  // one slot per role
    for (const auto& p : preds) {
      if (!p.span) continue;
      REQUIRE(p.span->start >= window.start);
      REQUIRE(p.span->end <= window.end);
    }
  }
}

TEST_CASE("checkpoints restore the model bit for bit") {
  TempDir dir;
  CorpusFiles f = write_overfit_corpus(dir);
  Corpus c = load_fixture(f);
  ModelConfig cfg;
  cfg.h = 8;
  cfg.seed = 17;
  Model m = make_model(c, cfg, ExtractionStyle::debiased);

  const std::string path = dir.file("model.ckpt.json");
  save_checkpoint(m, path);
  Model r = load_checkpoint(path);

  auto mine = parameter_registry(m);
  auto theirs = parameter_registry(r);
  REQUIRE(mine.size() == theirs.size());
  for (std::size_t i = 0; i < mine.size(); ++i) {
    REQUIRE(mine[i].first == theirs[i].first);
    REQUIRE(mine[i].second->a == theirs[i].second->a);
  }

  const EventInstance& inst = c.instances[0];
  PromptInput pin = prompts_for_instance(m, c, inst, {});
  auto before = extract(m, c, inst, pin);
  auto after = extract(r, c, inst, pin);
  REQUIRE(before == after);

  SECTION("missing tensors are rejected") {
    Json j = parse_json_file(path);
    j["tensors"].erase("sentinel");
    write_file(path, j.dump());
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("missing tensor"));
  }
  SECTION("shape drift is rejected") {
    Json j = parse_json_file(path);
    j["tensors"]["sentinel"]["cols"] = 9;
    write_file(path, j.dump());
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("unexpected shape"));
  }
  SECTION("non-finite values are rejected") {
    Json j = parse_json_file(path);
    j["tensors"]["sentinel"]["data"][0] = "not a number";
    write_file(path, j.dump());
    REQUIRE_THROWS(load_checkpoint(path));
  }
  SECTION("other file kinds are rejected") {
    write_file(path, "{\"kind\": \"something-else\"}");
    REQUIRE_THROWS_WITH(load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("not a checkpoint"));
  }
}
