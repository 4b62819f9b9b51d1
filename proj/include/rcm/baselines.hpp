#ifndef RCM_BASELINES_HPP
#define RCM_BASELINES_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rcm/chain_model.hpp"

namespace rcm {

// A fully specified prefix y_{1:i}, stored as a back-pointer into the beam
// at i-1 (kNone at position 1).
struct Hypothesis {
  std::uint32_t parent = kNone;
  Label label = 0;
  double log_forward = kNegInf;
  double alt_log_forward = kNegInf;  // second criterion, hybrid search only
};

struct BeamResult {
  // beams[i-1] holds the surviving prefixes at position i.
  std::vector<std::vector<Hypothesis>> beams;
  // log-sum of final forwards; pruned assignments carry no mass.
  double log_partition = kNegInf;
  double alt_log_partition = kNegInf;
  std::vector<Label> best;  // highest-forward final hypothesis

  std::size_t length() const { return beams.size(); }
  std::vector<Label> assignment(std::size_t position, std::size_t index) const;
  // Final-beam index of a full assignment, or kNone when it was pruned.
  std::size_t find(std::span<const Label> assignment) const;
  // Log mass the beam assigns to a full assignment (-inf when pruned).
  double log_mass(std::span<const Label> assignment) const;
  // Per-position label marginals of the distribution over final hypotheses.
  std::vector<Eigen::VectorXd> marginals(const ChainModel& model) const;
};

// Expand-and-prune keeping the top `beam` prefixes by forward score; ties
// go to the earlier candidate (parents in beam order, then labels).
BeamResult beam_search(const ChainModel& model, std::span<const Observation> x, std::size_t beam);

// Beam search over the union of two criteria: at every step the shared
// union is expanded, each criterion keeps its own top `beam`, and the next
// beam is their union (size <= 2 * beam). Forwards are kept under both models.
BeamResult hybrid_union(const ChainModel& model, std::span<const Observation> x, std::size_t beam,
                        const ChainModel& alternate);

inline constexpr std::size_t kDefaultOracleCap = 1'000'000;

struct BruteForceResult {
  double log_partition = kNegInf;
  std::vector<std::size_t> sizes;        // |Y_i|
  std::vector<double> log_mass;          // per assignment, position 1 most significant
  std::vector<Eigen::VectorXd> marginals;

  std::size_t count() const { return log_mass.size(); }
  std::vector<Label> assignment(std::size_t index) const;
  std::size_t index(std::span<const Label> assignment) const;
  double log_posterior(std::size_t index) const { return log_mass[index] - log_partition; }
};

// Enumerates every assignment, scoring each with its full history.
BruteForceResult brute_force_oracle(const ChainModel& model, std::span<const Observation> x,
                                    std::size_t cap = kDefaultOracleCap);

struct ExactResult {
  double log_partition = kNegInf;
  std::vector<Eigen::VectorXd> marginals;
};

// Lattice forward-backward over full (order-1)-label histories.
ExactResult exact_forward_backward(const ChainModel& model, std::span<const Observation> x,
                                   std::size_t state_cap = kDefaultOracleCap);

}  // namespace rcm

#endif  // RCM_BASELINES_HPP
