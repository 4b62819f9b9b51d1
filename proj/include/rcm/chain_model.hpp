#ifndef RCM_CHAIN_MODEL_HPP
#define RCM_CHAIN_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include "json.hpp"

#include "rcm/context.hpp"

namespace rcm {

using Observation = std::uint32_t;

// Position-wise log-weight function log w_i(history, y_i, x_i) over a chain.
// Positions are 1-based. The history is the specified suffix of the context
// being extended, most recent label last; implementations honor at most the
// last order()-1 labels of it, so shorter histories (wildcard contexts) are
// scored by backing off.
class ChainModel {
 public:
  virtual ~ChainModel() = default;

  virtual std::size_t order() const = 0;
  virtual std::size_t label_count(std::size_t position) const = 0;

  // out[y] = log w_i(history, y, x) for every y in Y_i; out.size() == label_count(i).
  virtual void log_weights(std::size_t position, std::span<const Label> history, Observation x,
                           std::span<double> out) const = 0;

  double log_weight(std::size_t position, std::span<const Label> history, Label y, Observation x) const;
};

// Explicit table of log-weights for every position and every history of
// length 0..min(i-1, order-1). Observations are ignored. Used for synthetic
// instances and hand-built models.
class TableModel final : public ChainModel {
 public:
  TableModel(std::vector<std::size_t> label_counts, std::size_t order, double fill = 0.0);

  // Log-weights drawn uniformly from [-spread, spread].
  static TableModel random(std::vector<std::size_t> label_counts, std::size_t order, std::mt19937_64& rng,
                           double spread = 1.0);

  std::size_t length() const { return sizes_.size(); }
  std::size_t order() const override { return order_; }
  std::size_t label_count(std::size_t position) const override { return sizes_.at(position - 1); }
  void log_weights(std::size_t position, std::span<const Label> history, Observation x,
                   std::span<double> out) const override;

  void set(std::size_t position, std::span<const Label> history, Label y, double log_w);
  double get(std::size_t position, std::span<const Label> history, Label y) const;

 private:
  std::size_t row_offset(std::size_t position, std::span<const Label> history) const;

  std::vector<std::size_t> sizes_;
  std::size_t order_;
  // offsets_[i-1][L]: first table slot of length-L histories at position i.
  std::vector<std::vector<std::size_t>> offsets_;
  std::vector<double> table_;
};

enum class Smoothing { kAbsoluteDiscounting, kLaplace };

std::string to_string(Smoothing mode);
Smoothing parse_smoothing(std::string_view text);

struct NgramOptions {
  std::size_t order = 2;
  Smoothing mode = Smoothing::kAbsoluteDiscounting;
  double discount = 0.25;
  double epsilon = 0.01;
};

// Character n-gram model. Absolute discounting interpolates down to a
// Laplace unigram:
//   p(y|h) = max(c(h,y) - d, 0) / c(h) + (sum_y' min(c(h,y'), d) / c(h)) p(y|h')
// where h' drops the oldest symbol of h. Laplace mode uses
//   p(y|h) = (c(h,y) + eps) / (c(h) + eps |Y|).
// In both modes a history never seen in training falls through to h'.
class NgramLM {
 public:
  NgramLM() = default;

  static NgramLM fit(std::span<const Label> corpus, SymbolSet alphabet, NgramOptions options);
  // Maps each character of `text` through `alphabet`; throws IngestionError
  // naming every character outside it.
  static NgramLM fit_text(std::string_view text, SymbolSet alphabet, NgramOptions options);

  const SymbolSet& alphabet() const { return alphabet_; }
  const NgramOptions& options() const { return options_; }
  std::size_t order() const { return options_.order; }

  // Direct evaluation of the smoothing recursion.
  double prob(std::span<const Label> history, Label y) const;
  // Cached log p(.|history) rows; agrees with prob() to round-off.
  void log_probs(std::span<const Label> history, std::span<double> out) const;

  double count(std::span<const Label> history, Label y) const;
  double history_total(std::span<const Label> history) const;

  nlohmann::json to_json() const;
  static NgramLM from_json(const nlohmann::json& j);

 private:
  struct History {
    std::vector<Label> labels;
    std::vector<double> counts;  // dense over the alphabet
    double total = 0.0;
  };

  std::uint64_t key(std::span<const Label> history) const;
  const History* find(std::span<const Label> history) const;
  double prob_at(std::span<const Label> history, Label y) const;
  void add_count(std::span<const Label> history, Label y, double c);
  void build_rows();

  SymbolSet alphabet_;
  NgramOptions options_;
  std::vector<double> unigram_;
  double corpus_size_ = 0.0;
  std::vector<History> histories_;
  // Per history length >= 1: key -> index into histories_ / rows.
  std::vector<std::unordered_map<std::uint64_t, std::uint32_t>> index_;
  Eigen::ArrayXXd log_rows_;  // column h holds log p(.|histories_[h])
  Eigen::ArrayXd log_unigram_;
};

// Substitution channel p(x | y), rows indexed by plain labels.
class ChannelModel {
 public:
  ChannelModel() = default;

  static ChannelModel uniform(std::size_t plain_size, std::size_t cipher_size);
  // Laplace-smoothed re-estimate from expected counts: (c(y,x)+eps)/(c(y)+eps|X|).
  static ChannelModel from_counts(const Eigen::MatrixXd& counts, double epsilon = 0.01);
  static ChannelModel from_probs(Eigen::MatrixXd probs);

  std::size_t plain_size() const { return static_cast<std::size_t>(prob_.rows()); }
  std::size_t cipher_size() const { return static_cast<std::size_t>(prob_.cols()); }
  double prob(Label y, Observation x) const { return prob_(y, x); }
  double log_prob(Label y, Observation x) const { return log_prob_(y, x); }
  const Eigen::MatrixXd& probs() const { return prob_; }
  const Eigen::MatrixXd& log_probs() const { return log_prob_; }

  // argmax_x p(x|y), lowest x on ties.
  Observation best_cipher(Label y) const;

 private:
  Eigen::MatrixXd prob_;
  Eigen::MatrixXd log_prob_;
};

// Noisy-channel decipherment model: log p_lm(y | suffix) + log p(x | y).
class CipherModel final : public ChainModel {
 public:
  CipherModel(const NgramLM& lm, const ChannelModel& channel);

  std::size_t order() const override { return lm_->order(); }
  std::size_t label_count(std::size_t) const override { return lm_->alphabet().size(); }
  void log_weights(std::size_t position, std::span<const Label> history, Observation x,
                   std::span<double> out) const override;

 private:
  const NgramLM* lm_;
  const ChannelModel* channel_;
};

double cipher_log_weight(const NgramLM& lm, const ChannelModel& channel, std::size_t position,
                         std::span<const Label> suffix, Label y, Observation x);

}  // namespace rcm

#endif  // RCM_CHAIN_MODEL_HPP
