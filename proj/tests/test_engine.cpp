#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "rcm/engine.hpp"
#include "rcm/errors.hpp"

using namespace rcm;

namespace {

// Independent enumeration: every assignment and its log mass under full histories.
struct Enumerated {
  std::vector<std::vector<Label>> assignments;
  std::vector<double> log_mass;
};

Enumerated enumerate(const ChainModel& model, std::span<const Observation> x, std::size_t upto) {
  Enumerated e;
  e.assignments.emplace_back();
  e.log_mass.push_back(0.0);
  for (std::size_t i = 1; i <= upto; ++i) {
    Enumerated next;
    for (std::size_t k = 0; k < e.assignments.size(); ++k) {
      for (Label y = 0; y < model.label_count(i); ++y) {
        auto a = e.assignments[k];
        const double w = model.log_weight(i, a, y, x[i - 1]);
        a.push_back(y);
        next.assignments.push_back(std::move(a));
        next.log_mass.push_back(e.log_mass[k] + w);
      }
    }
    e = std::move(next);
  }
  return e;
}

double rel(double a, double b) { return relative_difference(a, b); }

std::vector<Observation> zeros(std::size_t n) { return std::vector<Observation>(n, 0); }

std::size_t full_width(const TableModel& m) {
  std::size_t w = 1;
  for (std::size_t i = 1; i <= m.length(); ++i) w *= m.label_count(i);
  return w;
}

// Start level at position 1 over {a, b} with contexts ["a", "b", root].
struct AbLevel {
  std::shared_ptr<SuffixArena> arena = std::make_shared<SuffixArena>();
  Level level;
  AbLevel(double fa, double fb, double froot) {
    MNode a;
    a.suffix = arena->extend(kNoSuffix, 0);
    a.len = 1;
    a.log_forward = fa;
    MNode b;
    b.suffix = arena->extend(kNoSuffix, 1);
    b.len = 1;
    b.log_forward = fb;
    MNode root;
    root.log_forward = froot;
    level = Level(1, arena, {a, b, root}, {0, 0});
  }
};

}  // namespace

TEST_CASE("expand from [a, b, root] yields six candidates in sorted order") {
  std::mt19937_64 rng(1);
  const TableModel model = TableModel::random({2, 2}, 2, rng);
  AbLevel prev(-0.1, -0.2, -0.3);
  REQUIRE_FALSE(validate_level(prev.level).has_value());
  const Expansion e = expand_level(prev.level, model, 0);
  REQUIRE(e.nodes.size() == 6);
  // aa, ba, *a, ab, bb, *b
  const std::uint32_t parents[] = {0, 1, 2, 0, 1, 2};
  const Label labels[] = {0, 0, 0, 1, 1, 1};
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(e.nodes[k].parent == parents[k]);
    CHECK(e.nodes[k].label == labels[k]);
  }
  CHECK(e.lcs == std::vector<std::uint32_t>{1, 1, 0, 1, 1, 0});
  const double fa = -0.1;
  CHECK(e.nodes[3].log_forward == doctest::Approx(fa + model.get(2, std::vector<Label>{0}, 1)).epsilon(1e-15));
}

TEST_CASE("expand from the root alone") {
  TableModel model({2}, 2, 0.0);
  auto arena = std::make_shared<SuffixArena>();
  MNode start;
  start.log_forward = 0.0;
  const Level prev(0, arena, {start}, {});
  const Expansion e = expand_level(prev, model, 0);
  REQUIRE(e.nodes.size() == 2);
  CHECK(e.lcs == std::vector<std::uint32_t>{0, 0});
  // Uniform weights: candidate forward equals parent forward.
  for (const ENode& n : e.nodes) CHECK(n.log_forward == 0.0);
}

TEST_CASE("select_active takes the top B with earlier index on ties") {
  std::vector<ENode> c(3);
  c[0].log_forward = -0.7;
  c[1].log_forward = -1.2;
  c[2].log_forward = -1.6;
  select_active(c, 2);
  CHECK(c[0].active);
  CHECK(c[1].active);
  CHECK_FALSE(c[2].active);

  select_active(c, 5);
  for (const ENode& n : c) CHECK(n.active);

  c[0].log_forward = 0.0;
  c[1].log_forward = -1.0;
  c[2].log_forward = -1.0;
  select_active(c, 2);
  CHECK(c[1].active);
  CHECK_FALSE(c[2].active);
}

TEST_CASE("merge keeps aa and ab and sends the rest to the root") {
  std::mt19937_64 rng(2);
  const TableModel model = TableModel::random({2, 2}, 2, rng);
  AbLevel prev(-0.1, -0.5, -0.9);
  Expansion e = expand_level(prev.level, model, 0);
  for (ENode& n : e.nodes) n.active = false;
  e.nodes[0].active = true;  // aa
  e.nodes[3].active = true;  // ab
  const Level next = merge_level(e.nodes, e.lcs, prev.level, prev.arena);
  REQUIRE(next.size() == 3);
  CHECK_FALSE(validate_level(next).has_value());
  CHECK(next.context(0).suffix == std::vector<Label>{0, 0});
  CHECK(next.context(1).suffix == std::vector<Label>{0, 1});
  CHECK(next.context(2).is_root());
  std::vector<double> absorbed{e.nodes[1].log_forward, e.nodes[2].log_forward, e.nodes[4].log_forward,
                               e.nodes[5].log_forward};
  CHECK(rel(next.node(2).log_forward, log_sum_exp(absorbed)) <= 1e-14);
  CHECK(next.node(2).absorbed == 4);
  CHECK(next.node(0).log_forward == e.nodes[0].log_forward);
  for (std::size_t k : {1u, 2u, 4u, 5u}) CHECK(e.nodes[k].target == 2);
  CHECK(e.nodes[0].target == 0);
  CHECK(e.nodes[3].target == 1);
}

TEST_CASE("merge with everything active and with a single inactive candidate") {
  std::mt19937_64 rng(3);
  const TableModel model = TableModel::random({2, 2}, 2, rng);
  AbLevel prev(-0.1, -0.5, -0.9);
  Expansion e = expand_level(prev.level, model, 0);
  select_active(e.nodes, 6);
  const Level all = merge_level(e.nodes, e.lcs, prev.level, prev.arena);
  REQUIRE(all.size() == 7);
  CHECK(all.node(6).is_root());
  CHECK(all.node(6).log_forward == kNegInf);
  for (std::size_t k = 0; k < 6; ++k) CHECK(all.node(k).absorbed == 1);

  auto arena = std::make_shared<SuffixArena>();
  MNode start;
  start.log_forward = 0.0;
  const Level root_only(0, arena, {start}, {});
  std::vector<ENode> one(1);
  one[0].parent = 0;
  one[0].label = 0;
  one[0].log_forward = -2.5;
  std::vector<std::uint32_t> lcs{0};
  const Level merged = merge_level(one, lcs, root_only, arena);
  REQUIRE(merged.size() == 1);
  CHECK(merged.node(0).log_forward == -2.5);
}

TEST_CASE("uniform model on two binary positions has mass 4") {
  TableModel model({2, 2}, 2, 0.0);
  for (std::size_t beam : {1u, 2u, 4u}) {
    const Trellis t = run_inference(model, zeros(2), beam);
    CHECK(log_partition(t) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  }
  TableModel five({3, 3, 3, 3, 3}, 2, 0.0);
  CHECK(log_partition(run_inference(five, zeros(5), 2)) == doctest::Approx(5 * std::log(3.0)).epsilon(1e-14));
}

TEST_CASE("forward masses match prefix sums at every level with full width") {
  std::mt19937_64 rng(4);
  const TableModel model = TableModel::random({2, 2, 2}, 2, rng);
  const auto x = zeros(3);
  const Trellis t = forward_pass(model, x, 8);
  for (std::size_t i = 1; i <= 3; ++i) {
    const Enumerated e = enumerate(model, x, i);
    std::vector<double> fw;
    for (const MNode& m : t.level(i).nodes()) fw.push_back(m.log_forward);
    CHECK(rel(log_sum_exp(fw) + t.log_scale(i), log_sum_exp(e.log_mass)) <= 1e-9);
    // Each concrete context's forward is the mass of the prefixes it contains.
    for (std::size_t k = 0; k < t.level(i).size(); ++k) {
      const Context c = t.level(i).context(k);
      std::vector<double> inside;
      for (std::size_t a = 0; a < e.assignments.size(); ++a) {
        if (locate_owner(t.level(i), e.assignments[a]) == k) inside.push_back(e.log_mass[a]);
      }
      if (inside.empty()) {
        CHECK(t.level(i).node(k).log_forward == kNegInf);
      } else {
        CHECK(rel(t.level(i).node(k).log_forward + t.log_scale(i), log_sum_exp(inside)) <= 1e-9);
      }
    }
  }
}

TEST_CASE("B = 1 keeps one concrete context plus the root") {
  std::mt19937_64 rng(5);
  const TableModel model = TableModel::random({3, 3, 3, 3}, 2, rng);
  const Trellis t = run_inference(model, zeros(4), 1);
  for (std::size_t i = 1; i <= 4; ++i) {
    REQUIRE(t.level(i).size() == 2);
    CHECK_FALSE(t.level(i).node(0).is_root());
    CHECK(t.level(i).node(1).is_root());
  }
  const Trellis counted = run_inference(model, zeros(4), EngineOptions{1, true});
  for (std::size_t i = 1; i <= 4; ++i) CHECK(counted.level(i).size() == 1);
}

TEST_CASE("backward scores") {
  TableModel model({2, 2}, 2, 0.0);
  const Trellis t = run_inference(model, zeros(2), 2);
  for (const MNode& m : t.level(1).nodes()) {
    CHECK(m.log_backward + t.backward_scale(1) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  std::mt19937_64 rng(6);
  const TableModel random = TableModel::random({3, 2, 3}, 2, rng);
  const Trellis r = run_inference(random, zeros(3), 2);
  for (const MNode& m : r.level(3).nodes()) CHECK(m.log_backward + r.backward_scale(3) == 0.0);
}

TEST_CASE("full width reproduces enumeration; B = 1 generally does not") {
  std::mt19937_64 rng(7);
  const TableModel model = TableModel::random({3, 3, 3, 3}, 2, rng);
  const auto x = zeros(4);
  const Enumerated e = enumerate(model, x, 4);
  const double exact = log_sum_exp(e.log_mass);
  const Trellis full = run_inference(model, x, 81);
  CHECK(rel(log_partition(full), exact) <= 1e-9);

  const auto marginals = label_marginals(full);
  for (std::size_t i = 0; i < 4; ++i) {
    for (Label y = 0; y < 3; ++y) {
      std::vector<double> sel;
      for (std::size_t a = 0; a < e.assignments.size(); ++a) {
        if (e.assignments[a][i] == y) sel.push_back(e.log_mass[a]);
      }
      CHECK(rel(marginals[i](y), std::exp(log_sum_exp(sel) - exact)) <= 1e-9);
    }
  }
  const Trellis narrow = run_inference(model, x, 1);
  CHECK(log_partition(narrow) != log_partition(full));
}

TEST_CASE("self-consistency and posterior normalization at every width") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const TableModel model = TableModel::random({3, 2, 3, 2, 3}, 2, rng);
    for (std::size_t beam : {1u, 2u, 4u, 8u, 108u}) {
      const Trellis t = run_inference(model, zeros(5), beam);
      for (std::size_t i = 1; i <= 5; ++i) {
        CHECK(std::abs(std::expm1(t.level_log_mass(i) - t.level_log_mass(0))) <= 1e-9);
      }
      std::vector<double> sums(5, 0.0);
      edge_posteriors(t, [&](const Edge& e) { sums[e.position - 1] += e.posterior; });
      for (double s : sums) CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("uniform marginals and first-label decoding") {
  TableModel model({3, 3, 3}, 2, 0.0);
  const Trellis t = run_inference(model, zeros(3), 4);
  for (const auto& m : label_marginals(t)) {
    for (Eigen::Index y = 0; y < 3; ++y) CHECK(m(y) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  }
  CHECK(decode(t) == std::vector<Label>{0, 0, 0});
}

TEST_CASE("a model with one dominant assignment") {
  const std::vector<Label> path{1, 0, 2, 1};
  TableModel model({3, 3, 3, 3}, 2, -1000.0);
  for (std::size_t i = 1; i <= 4; ++i) {
    for (Label p = 0; p < 3; ++p) {
      if (i == 1 || p == path[i - 2]) model.set(i, i == 1 ? std::vector<Label>{} : std::vector<Label>{p}, path[i - 1], 0.0);
    }
  }
  for (std::size_t beam : {1u, 3u, 81u}) {
    const Trellis t = run_inference(model, zeros(4), beam);
    CHECK(decode(t) == path);
    edge_posteriors(t, [&](const Edge& e) {
      if (e.label == path[e.position - 1]) {
        CHECK(e.posterior >= 0.0);
      } else {
        CHECK(e.posterior <= 1e-300);
      }
    });
    const auto m = label_marginals(t);
    for (std::size_t i = 0; i < 4; ++i) CHECK(m[i](path[i]) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("full-width decoding matches the enumerated per-position argmax") {
  std::mt19937_64 rng(9);
  const TableModel model = TableModel::random({3, 3, 3}, 2, rng);
  const auto x = zeros(3);
  const Enumerated e = enumerate(model, x, 3);
  std::vector<Label> expected(3);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> score(3, kNegInf);
    for (std::size_t a = 0; a < e.assignments.size(); ++a) {
      score[e.assignments[a][i]] = log_add(score[e.assignments[a][i]], e.log_mass[a]);
    }
    expected[i] = static_cast<Label>(std::max_element(score.begin(), score.end()) - score.begin());
  }
  CHECK(decode(run_inference(model, x, 27)) == expected);
}

TEST_CASE("identical inputs give identical trellis dumps") {
  std::mt19937_64 rng(10);
  const TableModel model = TableModel::random({4, 4, 4, 4, 4, 4}, 2, rng);
  const std::vector<Observation> x{0, 1, 2, 3, 0, 1};
  std::ostringstream a;
  std::ostringstream b;
  dump_trellis(run_inference(model, x, 3), a);
  dump_trellis(run_inference(model, x, 3), b);
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("{\"beam\":3,\"format\":\"rcm-trellis\"", 0) == 0);
}

TEST_CASE("the induced model covers every assignment and sums to Z") {
  std::mt19937_64 rng(11);
  const TableModel model = TableModel::random({2, 3, 2, 3}, 2, rng);
  const auto x = zeros(4);
  const Enumerated e = enumerate(model, x, 4);
  for (std::size_t beam : {1u, 2u, 5u, 36u}) {
    const Trellis t = run_inference(model, x, beam);
    std::vector<double> masses;
    for (const auto& a : e.assignments) {
      const double m = induced_log_mass(t, a);
      CHECK(std::isfinite(m));
      masses.push_back(m);
    }
    CHECK(rel(log_sum_exp(masses), log_partition(t)) <= 1e-9);
  }
}

TEST_CASE("merge targets agree with locate_owner along every assignment") {
  std::mt19937_64 rng(12);
  const TableModel model = TableModel::random({3, 3, 3, 3}, 2, rng);
  const auto x = zeros(4);
  const Enumerated e = enumerate(model, x, 4);
  for (std::size_t beam : {1u, 2u, 4u}) {
    const Trellis t = run_inference(model, x, beam);
    for (const auto& a : e.assignments) {
      std::size_t parent = 0;
      for (std::size_t i = 1; i <= 4; ++i) {
        const std::size_t idx = a[i - 1] * t.level(i - 1).size() + parent;
        const std::size_t owner = locate_owner(t.level(i), std::span<const Label>(a).first(i));
        CHECK(t.targets(i)[idx] == owner);
        parent = owner;
      }
    }
  }
}

TEST_CASE("usage errors") {
  TableModel model({2, 2}, 2, 0.0);
  CHECK_THROWS_AS(forward_pass(model, std::vector<Observation>{}, 1), UsageError);
  CHECK_THROWS_AS(forward_pass(model, zeros(2), 0), UsageError);
  const Trellis t = forward_pass(model, zeros(2), 1);
  CHECK_THROWS_AS(log_partition(t), UsageError);
  TableModel bad({2}, 2, 0.0);
  bad.set(1, {}, 1, std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(forward_pass(bad, zeros(1), 1), InferenceError);
}
