#include "rcm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rcm/errors.hpp"
#include "rcm/log_math.hpp"

namespace rcm {

namespace {

// Last min(count, i) labels of hypothesis `index` at position i, oldest first.
void beam_history(const std::vector<std::vector<Hypothesis>>& beams, std::size_t position, std::size_t index,
                  std::size_t count, std::vector<Label>& out) {
  out.clear();
  std::size_t i = position;
  std::size_t h = index;
  while (i > 0 && out.size() < count) {
    const Hypothesis& hyp = beams[i - 1][h];
    out.push_back(hyp.label);
    h = hyp.parent;
    --i;
  }
  std::reverse(out.begin(), out.end());
}

// Indices of the `beam` best candidates under `score`, earlier index on ties.
std::vector<std::uint32_t> top_indices(const std::vector<Hypothesis>& candidates, std::size_t beam,
                                       double Hypothesis::*score) {
  std::vector<std::uint32_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0u);
  if (beam < order.size()) {
    auto better = [&](std::uint32_t a, std::uint32_t b) {
      const double fa = candidates[a].*score;
      const double fb = candidates[b].*score;
      return fa > fb || (fa == fb && a < b);
    };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(beam - 1), order.end(), better);
    order.resize(beam);
  }
  std::sort(order.begin(), order.end());
  return order;
}

void check_row(std::span<const double> row, std::size_t position) {
  for (double w : row) {
    if (!std::isfinite(w)) throw InferenceError("non-finite log-weight at position " + std::to_string(position));
  }
}

BeamResult run_beam(const ChainModel& model, std::span<const Observation> x, std::size_t beam,
                    const ChainModel* alternate) {
  if (beam == 0) throw UsageError("beam width must be at least 1");
  if (x.empty()) throw UsageError("beam search needs at least one position");
  BeamResult result;
  result.beams.reserve(x.size());
  std::vector<Label> history;
  std::vector<double> row;
  std::vector<double> alt_row;
  std::vector<Hypothesis> candidates;
  const std::size_t keep = std::max(model.order(), alternate ? alternate->order() : 1) - 1;

  for (std::size_t i = 1; i <= x.size(); ++i) {
    const std::size_t labels = model.label_count(i);
    row.resize(labels);
    alt_row.resize(labels);
    const std::size_t parents = i == 1 ? 1 : result.beams[i - 2].size();
    candidates.clear();
    candidates.reserve(parents * labels);
    for (std::size_t p = 0; p < parents; ++p) {
      beam_history(result.beams, i - 1, p, keep, history);
      const double f = i == 1 ? 0.0 : result.beams[i - 2][p].log_forward;
      const double g = i == 1 ? 0.0 : result.beams[i - 2][p].alt_log_forward;
      model.log_weights(i, history, x[i - 1], row);
      check_row(row, i);
      if (alternate) {
        alternate->log_weights(i, history, x[i - 1], alt_row);
        check_row(alt_row, i);
      }
      for (std::size_t y = 0; y < labels; ++y) {
        Hypothesis h;
        h.parent = i == 1 ? kNone : static_cast<std::uint32_t>(p);
        h.label = static_cast<Label>(y);
        h.log_forward = f + row[y];
        h.alt_log_forward = alternate ? g + alt_row[y] : h.log_forward;
        candidates.push_back(h);
      }
    }
    std::vector<std::uint32_t> keep_idx = top_indices(candidates, beam, &Hypothesis::log_forward);
    if (alternate) {
      const auto alt_idx = top_indices(candidates, beam, &Hypothesis::alt_log_forward);
      std::vector<std::uint32_t> merged;
      std::set_union(keep_idx.begin(), keep_idx.end(), alt_idx.begin(), alt_idx.end(), std::back_inserter(merged));
      keep_idx = std::move(merged);
    }
    std::vector<Hypothesis> next;
    next.reserve(keep_idx.size());
    for (std::uint32_t c : keep_idx) next.push_back(candidates[c]);
    result.beams.push_back(std::move(next));
  }

  const auto& final_beam = result.beams.back();
  std::vector<double> f;
  std::vector<double> g;
  std::size_t best = 0;
  for (std::size_t h = 0; h < final_beam.size(); ++h) {
    f.push_back(final_beam[h].log_forward);
    g.push_back(final_beam[h].alt_log_forward);
    if (final_beam[h].log_forward > final_beam[best].log_forward) best = h;
  }
  result.log_partition = log_sum_exp(f);
  result.alt_log_partition = log_sum_exp(g);
  result.best = result.assignment(x.size(), best);
  return result;
}

}  // namespace

std::vector<Label> BeamResult::assignment(std::size_t position, std::size_t index) const {
  std::vector<Label> out;
  beam_history(beams, position, index, position, out);
  return out;
}

std::size_t BeamResult::find(std::span<const Label> assignment) const {
  if (assignment.size() != beams.size()) throw UsageError("assignment length differs from beam length");
  const auto& final_beam = beams.back();
  for (std::size_t h = 0; h < final_beam.size(); ++h) {
    std::size_t i = beams.size();
    std::size_t idx = h;
    bool match = true;
    while (i > 0) {
      const Hypothesis& hyp = beams[i - 1][idx];
      if (hyp.label != assignment[i - 1]) {
        match = false;
        break;
      }
      idx = hyp.parent;
      --i;
    }
    if (match) return h;
  }
  return kNone;
}

double BeamResult::log_mass(std::span<const Label> assignment) const {
  const std::size_t h = find(assignment);
  return h == kNone ? kNegInf : beams.back()[h].log_forward;
}

std::vector<Eigen::VectorXd> BeamResult::marginals(const ChainModel& model) const {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 1; i <= beams.size(); ++i) {
    out.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.label_count(i))));
  }
  if (beams.empty()) return out;
  std::vector<double> post;
  for (const Hypothesis& h : beams.back()) post.push_back(std::exp(h.log_forward - log_partition));
  for (std::size_t i = beams.size(); i > 0; --i) {
    std::vector<double> parent_post(i > 1 ? beams[i - 2].size() : 0, 0.0);
    for (std::size_t h = 0; h < beams[i - 1].size(); ++h) {
      const Hypothesis& hyp = beams[i - 1][h];
      out[i - 1](hyp.label) += post[h];
      if (i > 1) parent_post[hyp.parent] += post[h];
    }
    post = std::move(parent_post);
  }
  return out;
}

BeamResult beam_search(const ChainModel& model, std::span<const Observation> x, std::size_t beam) {
  return run_beam(model, x, beam, nullptr);
}

BeamResult hybrid_union(const ChainModel& model, std::span<const Observation> x, std::size_t beam,
                        const ChainModel& alternate) {
  for (std::size_t i = 1; i <= x.size(); ++i) {
    if (model.label_count(i) != alternate.label_count(i)) {
      throw UsageError("hybrid models disagree on the label set size at position " + std::to_string(i));
    }
  }
  return run_beam(model, x, beam, &alternate);
}

// ---------------------------------------------------------------------------

std::vector<Label> BruteForceResult::assignment(std::size_t index) const {
  std::vector<Label> out(sizes.size());
  for (std::size_t i = sizes.size(); i-- > 0;) {
    out[i] = static_cast<Label>(index % sizes[i]);
    index /= sizes[i];
  }
  return out;
}

std::size_t BruteForceResult::index(std::span<const Label> assignment) const {
  if (assignment.size() != sizes.size()) throw UsageError("assignment length differs from oracle length");
  std::size_t idx = 0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (assignment[i] >= sizes[i]) throw UsageError("assignment label out of range");
    idx = idx * sizes[i] + assignment[i];
  }
  return idx;
}

namespace {

void enumerate(const ChainModel& model, std::span<const Observation> x, std::vector<Label>& prefix, double mass,
               std::vector<double>& out) {
  const std::size_t i = prefix.size() + 1;
  if (i > x.size()) {
    out.push_back(mass);
    return;
  }
  std::vector<double> row(model.label_count(i));
  model.log_weights(i, prefix, x[i - 1], row);
  check_row(row, i);
  for (std::size_t y = 0; y < row.size(); ++y) {
    prefix.push_back(static_cast<Label>(y));
    enumerate(model, x, prefix, mass + row[y], out);
    prefix.pop_back();
  }
}

}  // namespace

BruteForceResult brute_force_oracle(const ChainModel& model, std::span<const Observation> x, std::size_t cap) {
  if (x.empty()) throw UsageError("oracle needs at least one position");
  BruteForceResult r;
  std::size_t total = 1;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    const std::size_t size = model.label_count(i);
    r.sizes.push_back(size);
    if (total > cap / size) {
      throw UsageError("brute-force oracle: assignment space exceeds the cap of " + std::to_string(cap));
    }
    total *= size;
  }
  r.log_mass.reserve(total);
  std::vector<Label> prefix;
  enumerate(model, x, prefix, 0.0, r.log_mass);
  r.log_partition = log_sum_exp(r.log_mass);
  for (std::size_t size : r.sizes) r.marginals.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size)));
  for (std::size_t a = 0; a < r.log_mass.size(); ++a) {
    const double p = std::exp(r.log_posterior(a));
    const auto labels = r.assignment(a);
    for (std::size_t i = 0; i < labels.size(); ++i) r.marginals[i](labels[i]) += p;
  }
  return r;
}

ExactResult exact_forward_backward(const ChainModel& model, std::span<const Observation> x, std::size_t state_cap) {
  const std::size_t n = x.size();
  if (n == 0) throw UsageError("exact forward-backward needs at least one position");
  const std::size_t window = model.order() - 1;
  std::vector<std::size_t> sizes(n + 1, 1);
  for (std::size_t i = 1; i <= n; ++i) sizes[i] = model.label_count(i);

  // State after position i: the last min(i, window) labels, mixed radix,
  // oldest most significant.
  auto state_len = [&](std::size_t i) { return std::min(i, window); };
  std::vector<std::size_t> states(n + 1, 1);
  for (std::size_t i = 1; i <= n; ++i) {
    std::size_t s = 1;
    for (std::size_t p = i - state_len(i) + 1; p <= i; ++p) {
      if (s > state_cap / sizes[p]) {
        throw UsageError("exact forward-backward: state space exceeds the cap of " + std::to_string(state_cap));
      }
      s *= sizes[p];
    }
    states[i] = s;
  }

  auto decode_state = [&](std::size_t i, std::size_t s, std::vector<Label>& out) {
    const std::size_t len = state_len(i);
    out.assign(len, 0);
    for (std::size_t j = len; j-- > 0;) {
      const std::size_t p = i - len + 1 + j;
      out[j] = static_cast<Label>(s % sizes[p]);
      s /= sizes[p];
    }
  };
  // Successor of state s (after position i-1) on label y at position i.
  auto successor = [&](std::size_t i, std::size_t s, Label y) -> std::size_t {
    const std::size_t len_new = state_len(i);
    if (len_new == 0) return 0;
    if (len_new == state_len(i - 1) + 1) return s * sizes[i] + y;
    return (s % (states[i] / sizes[i])) * sizes[i] + y;
  };

  std::vector<std::vector<double>> alpha(n + 1);
  alpha[0].assign(1, 0.0);
  std::vector<Label> history;
  std::vector<double> row;
  for (std::size_t i = 1; i <= n; ++i) {
    alpha[i].assign(states[i], kNegInf);
    row.resize(sizes[i]);
    for (std::size_t s = 0; s < states[i - 1]; ++s) {
      decode_state(i - 1, s, history);
      model.log_weights(i, history, x[i - 1], row);
      check_row(row, i);
      for (std::size_t y = 0; y < sizes[i]; ++y) {
        double& slot = alpha[i][successor(i, s, static_cast<Label>(y))];
        slot = log_add(slot, alpha[i - 1][s] + row[y]);
      }
    }
  }

  ExactResult r;
  r.log_partition = log_sum_exp(alpha[n]);
  std::vector<double> beta(states[n], 0.0);
  r.marginals.resize(n);
  for (std::size_t i = n; i >= 1; --i) {
    std::vector<double> prev_beta(states[i - 1], kNegInf);
    Eigen::VectorXd marginal = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sizes[i]));
    row.resize(sizes[i]);
    for (std::size_t s = 0; s < states[i - 1]; ++s) {
      decode_state(i - 1, s, history);
      model.log_weights(i, history, x[i - 1], row);
      for (std::size_t y = 0; y < sizes[i]; ++y) {
        const double b = beta[successor(i, s, static_cast<Label>(y))];
        prev_beta[s] = log_add(prev_beta[s], row[y] + b);
        marginal(static_cast<Eigen::Index>(y)) += std::exp(alpha[i - 1][s] + row[y] + b - r.log_partition);
      }
    }
    r.marginals[i - 1] = std::move(marginal);
    beta = std::move(prev_beta);
  }
  return r;
}

}  // namespace rcm
