#ifndef RCM_ENGINE_HPP
#define RCM_ENGINE_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rcm/chain_model.hpp"
#include "rcm/context.hpp"

namespace rcm {

// One element of the expanded collection: parent context (an entry of the
// previous level) extended by `label`.
struct ENode {
  std::uint32_t parent = 0;
  Label label = 0;
  double log_forward = kNegInf;
  bool active = false;
  std::uint32_t target = kNone;  // MNode index after merging
};

// Expanded candidates in sorted order with the adjacent lcs array
// (lcs[j] = common suffix of candidates j and j+1; 0 for the last entry).
struct Expansion {
  std::size_t position = 0;
  std::vector<ENode> nodes;
  std::vector<std::uint32_t> lcs;
};

struct EngineOptions {
  std::size_t beam = 1;
  // When set, the root occupies one of the `beam` slots.
  bool root_counts_toward_beam = false;
};

// Builds the |prev| x |Y_i| candidates: outer loop over labels, inner over
// previous entries, which is already reverse-lexicographic. Candidate
// forwards are parent forward plus the model log-weight.
void expand_level(const Level& prev, const ChainModel& model, Observation x, Expansion& out);
Expansion expand_level(const Level& prev, const ChainModel& model, Observation x);

// Marks the `beam` candidates with the highest forward as active. Ties go to
// the earlier sorted index.
void select_active(std::span<ENode> candidates, std::size_t beam);

// Merges every candidate into its least ancestor among the active ones plus
// a fresh root, via a backwards DFS over the sorted candidates. Promoted
// contexts get suffix cells appended to `arena`; `prev` must share it.
// Fills ENode::target and returns the new level.
Level merge_level(std::span<ENode> candidates, std::span<const std::uint32_t> lcs, const Level& prev,
                  const std::shared_ptr<SuffixArena>& arena);

// Full sequence of levels for one input. Level 0 is the virtual start (a
// lone root with forward 1). Scores on the nodes are rescaled: for an MNode
// at position i,
//   true log-forward  = node.log_forward  + log_scale(i)
//   true log-backward = node.log_backward + backward_scale(i)
// The model passed to forward_pass must outlive the trellis.
class Trellis {
 public:
  std::size_t length() const { return observations_.size(); }
  std::size_t beam() const { return options_.beam; }
  const EngineOptions& options() const { return options_; }
  std::span<const Observation> observations() const { return observations_; }
  const ChainModel& model() const { return *model_; }

  const Level& level(std::size_t position) const { return levels_.at(position); }
  // Merge target of every expansion that produced level `position` (>= 1),
  // in expansion order: index = label * |level(position-1)| + parent.
  std::span<const std::uint32_t> targets(std::size_t position) const { return targets_.at(position); }
  double log_scale(std::size_t position) const { return log_scale_.at(position); }
  double backward_scale(std::size_t position) const { return backward_scale_.at(position); }

  bool has_backward() const { return has_backward_; }
  // log sum over the level of forward x backward; equal across levels.
  double level_log_mass(std::size_t position) const;

  // History passed to the model when extending entry k of `level`.
  void history(std::size_t position, std::size_t k, std::vector<Label>& out) const;

 private:
  friend Trellis forward_pass(const ChainModel&, std::span<const Observation>, const EngineOptions&);
  friend void backward_pass(Trellis&);

  const ChainModel* model_ = nullptr;
  EngineOptions options_;
  std::vector<Observation> observations_;
  std::shared_ptr<SuffixArena> arena_;
  std::vector<Level> levels_;
  std::vector<std::vector<std::uint32_t>> targets_;
  std::vector<double> log_scale_;
  std::vector<double> backward_scale_;
  bool has_backward_ = false;
  double log_partition_ = kNegInf;

  friend double log_partition(const Trellis&);
};

Trellis forward_pass(const ChainModel& model, std::span<const Observation> x, const EngineOptions& options);
Trellis forward_pass(const ChainModel& model, std::span<const Observation> x, std::size_t beam);
void backward_pass(Trellis& trellis);

// Forward then backward.
Trellis run_inference(const ChainModel& model, std::span<const Observation> x, const EngineOptions& options);
Trellis run_inference(const ChainModel& model, std::span<const Observation> x, std::size_t beam);

// Log total mass of the induced model.
double log_partition(const Trellis& trellis);

struct Edge {
  std::size_t position = 0;  // 1-based
  std::uint32_t parent = 0;  // entry of level(position - 1)
  Label label = 0;
  double posterior = 0.0;
};

// Visits every expansion with its posterior mass; per position the masses sum to 1.
void edge_posteriors(const Trellis& trellis, const std::function<void(const Edge&)>& visitor);

// Per-position label marginals, marginals[i-1](y).
std::vector<Eigen::VectorXd> label_marginals(const Trellis& trellis);

// Position-wise posterior argmax; lowest label on ties.
std::vector<Label> decode(const Trellis& trellis);

// Unnormalized log mass the induced model gives a full assignment, found by
// following merge targets from the start. Always finite when all model
// weights are finite.
double induced_log_mass(const Trellis& trellis, std::span<const Label> assignment);

// Line-delimited JSON dump, one record per MNode and per ENode. See README.
void dump_trellis(const Trellis& trellis, std::ostream& out, const LabelAlphabet* names = nullptr);

}  // namespace rcm

#endif  // RCM_ENGINE_HPP
