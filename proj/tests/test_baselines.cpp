#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "rcm/baselines.hpp"
#include "rcm/errors.hpp"

using namespace rcm;

namespace {

std::vector<Observation> zeros(std::size_t n) { return std::vector<Observation>(n, 0); }

double rel(double a, double b) { return relative_difference(a, b); }

std::set<std::vector<Label>> beam_set(const BeamResult& r, std::size_t position) {
  std::set<std::vector<Label>> out;
  for (std::size_t k = 0; k < r.beams[position - 1].size(); ++k) out.insert(r.assignment(position, k));
  return out;
}

}  // namespace

TEST_CASE("brute force on the hand-set three-position example") {
  // All weights 1 except weight(y2 = b | y1 = a) = 2.
  TableModel model({2, 2, 2}, 2, 0.0);
  model.set(2, std::vector<Label>{0}, 1, std::log(2.0));
  const BruteForceResult r = brute_force_oracle(model, zeros(3));
  CHECK(r.count() == 8);
  CHECK(std::exp(r.log_partition) == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(r.marginals[1](1) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(r.marginals[0](0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(r.marginals[2](0) == doctest::Approx(0.5).epsilon(1e-14));
  const std::vector<Label> abb{0, 1, 1};
  CHECK(r.assignment(r.index(abb)) == abb);
  CHECK(std::exp(r.log_posterior(r.index(abb))) == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("brute force on uniform and single-position models") {
  TableModel uniform({2, 3, 4}, 2, 0.0);
  CHECK(brute_force_oracle(uniform, zeros(3)).log_partition == doctest::Approx(std::log(24.0)).epsilon(1e-14));

  TableModel single({3}, 1, 0.0);
  single.set(1, {}, 0, std::log(1.0));
  single.set(1, {}, 1, std::log(2.0));
  single.set(1, {}, 2, std::log(5.0));
  const auto m = brute_force_oracle(single, zeros(1)).marginals[0];
  CHECK(m(0) == doctest::Approx(0.125).epsilon(1e-14));
  CHECK(m(1) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(m(2) == doctest::Approx(0.625).epsilon(1e-14));

  TableModel big(std::vector<std::size_t>(21, 2), 2, 0.0);
  CHECK_THROWS_AS(brute_force_oracle(big, zeros(21)), UsageError);
  CHECK_THROWS_AS(brute_force_oracle(uniform, zeros(3), 10), UsageError);
}

TEST_CASE("exact forward-backward matches brute force") {
  std::mt19937_64 rng(21);
  for (std::size_t order : {1u, 2u, 3u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const TableModel model = TableModel::random({3, 3, 3, 3}, order, rng);
      const BruteForceResult b = brute_force_oracle(model, zeros(4));
      const ExactResult e = exact_forward_backward(model, zeros(4));
      CHECK(rel(e.log_partition, b.log_partition) <= 1e-9);
      for (std::size_t i = 0; i < 4; ++i) {
        for (Eigen::Index y = 0; y < 3; ++y) CHECK(rel(e.marginals[i](y), b.marginals[i](y)) <= 1e-9);
      }
    }
  }
  TableModel uniform({4, 4, 4, 4, 4, 4}, 2, 0.0);
  CHECK(exact_forward_backward(uniform, zeros(6)).log_partition == doctest::Approx(6 * std::log(4.0)).epsilon(1e-14));

  // First-order models have independent positions.
  std::mt19937_64 rng1(22);
  const TableModel indep = TableModel::random({3, 3}, 1, rng1);
  const ExactResult e = exact_forward_backward(indep, zeros(2));
  double z = 0.0;
  for (Label y = 0; y < 3; ++y) z += std::exp(indep.get(2, {}, y));
  for (Label y = 0; y < 3; ++y) CHECK(e.marginals[1](y) == doctest::Approx(std::exp(indep.get(2, {}, y)) / z));
}

TEST_CASE("beam search never exceeds the exact partition") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const TableModel model = TableModel::random({3, 2, 3, 2, 3}, 2, rng);
    const BruteForceResult b = brute_force_oracle(model, zeros(5));
    for (std::size_t beam : {1u, 2u, 4u, 8u}) {
      const BeamResult r = beam_search(model, zeros(5), beam);
      CHECK(r.log_partition <= b.log_partition);
    }
    const BeamResult full = beam_search(model, zeros(5), 108);
    CHECK(rel(full.log_partition, b.log_partition) <= 1e-12);
    const auto m = full.marginals(model);
    for (std::size_t i = 0; i < 5; ++i) {
      for (Eigen::Index y = 0; y < m[i].size(); ++y) CHECK(rel(m[i](y), b.marginals[i](y)) <= 1e-9);
    }
  }
}

TEST_CASE("B = 1 beam search on a deterministic model recovers its assignment") {
  const std::vector<Label> path{2, 0, 1};
  TableModel model({3, 3, 3}, 2, -50.0);
  model.set(1, {}, path[0], 0.0);
  model.set(2, std::vector<Label>{path[0]}, path[1], 0.0);
  model.set(3, std::vector<Label>{path[1]}, path[2], 0.0);
  const BeamResult r = beam_search(model, zeros(3), 1);
  CHECK(r.best == path);
  CHECK(r.find(path) == 0);
  const std::vector<Label> other{0, 0, 0};
  CHECK(r.find(other) == kNone);
  CHECK(r.log_mass(other) == kNegInf);
}

TEST_CASE("hybrid with identical criteria is plain beam search") {
  std::mt19937_64 rng(24);
  const TableModel model = TableModel::random({3, 3, 3, 3}, 2, rng);
  for (std::size_t beam : {1u, 2u, 5u}) {
    const BeamResult h = hybrid_union(model, zeros(4), beam, model);
    const BeamResult b = beam_search(model, zeros(4), beam);
    for (std::size_t i = 1; i <= 4; ++i) CHECK(beam_set(h, i) == beam_set(b, i));
    CHECK(h.log_partition == doctest::Approx(b.log_partition).epsilon(1e-14));
  }
}

TEST_CASE("hybrid union of disjoint top sets has size 2B") {
  TableModel model({4}, 1, 0.0);
  TableModel alternate({4}, 1, 0.0);
  for (Label y : {0u, 1u}) model.set(1, {}, y, 1.0);
  for (Label y : {2u, 3u}) alternate.set(1, {}, y, 1.0);
  const BeamResult h = hybrid_union(model, zeros(1), 2, alternate);
  CHECK(h.beams[0].size() == 4);
  CHECK_THROWS_AS(hybrid_union(model, zeros(1), 2, TableModel({3}, 1, 0.0)), UsageError);
}

TEST_CASE("every hybrid beam contains both criteria's best expansion") {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 10; ++trial) {
    const TableModel model = TableModel::random({4, 4, 4, 4, 4}, 2, rng);
    const TableModel alternate = TableModel::random({4, 4, 4, 4, 4}, 2, rng);
    const auto x = zeros(5);
    const std::size_t beam = 2;
    const BeamResult h = hybrid_union(model, x, beam, alternate);

    // Position 1: union of the two independent runs.
    auto first = beam_set(beam_search(model, x, beam), 1);
    for (const auto& a : beam_set(beam_search(alternate, x, beam), 1)) first.insert(a);
    CHECK(beam_set(h, 1) == first);

    for (std::size_t i = 2; i <= 5; ++i) {
      std::vector<Label> best_main;
      std::vector<Label> best_alt;
      double top_main = kNegInf;
      double top_alt = kNegInf;
      for (std::size_t k = 0; k < h.beams[i - 2].size(); ++k) {
        const Hypothesis& p = h.beams[i - 2][k];
        auto prefix = h.assignment(i - 1, k);
        for (Label y = 0; y < 4; ++y) {
          const double fm = p.log_forward + model.log_weight(i, prefix, y, 0);
          const double fa = p.alt_log_forward + alternate.log_weight(i, prefix, y, 0);
          auto a = prefix;
          a.push_back(y);
          if (fm > top_main) top_main = fm, best_main = a;
          if (fa > top_alt) top_alt = fa, best_alt = a;
        }
      }
      const auto kept = beam_set(h, i);
      CHECK(kept.count(best_main) == 1);
      CHECK(kept.count(best_alt) == 1);
      CHECK(kept.size() <= 2 * beam);
    }
  }
}
