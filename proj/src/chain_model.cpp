#include "rcm/chain_model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "rcm/errors.hpp"

namespace rcm {

double ChainModel::log_weight(std::size_t position, std::span<const Label> history, Label y, Observation x) const {
  std::vector<double> row(label_count(position));
  log_weights(position, history, x, row);
  return row.at(y);
}

// ---------------------------------------------------------------------------
// TableModel

TableModel::TableModel(std::vector<std::size_t> label_counts, std::size_t order, double fill)
    : sizes_(std::move(label_counts)), order_(order) {
  if (order_ == 0) throw UsageError("model order must be at least 1");
  if (sizes_.empty()) throw UsageError("table model needs at least one position");
  std::size_t slots = 0;
  offsets_.resize(sizes_.size());
  for (std::size_t i = 1; i <= sizes_.size(); ++i) {
    if (sizes_[i - 1] == 0) throw UsageError("empty label set at position " + std::to_string(i));
    const std::size_t max_len = std::min(i - 1, order_ - 1);
    std::size_t histories = 1;
    for (std::size_t len = 0; len <= max_len; ++len) {
      if (len > 0) histories *= sizes_[i - 1 - len];
      offsets_[i - 1].push_back(slots);
      slots += histories * sizes_[i - 1];
    }
  }
  table_.assign(slots, fill);
}

TableModel TableModel::random(std::vector<std::size_t> label_counts, std::size_t order, std::mt19937_64& rng,
                              double spread) {
  TableModel model(std::move(label_counts), order);
  std::uniform_real_distribution<double> dist(-spread, spread);
  for (double& w : model.table_) w = dist(rng);
  return model;
}

std::size_t TableModel::row_offset(std::size_t position, std::span<const Label> history) const {
  if (position == 0 || position > sizes_.size()) throw UsageError("position outside the table model");
  const std::size_t len = std::min({history.size(), order_ - 1, position - 1});
  std::size_t index = 0;
  for (std::size_t j = 0; j < len; ++j) {
    // Oldest honored label first; it sits at position (position - len + j).
    const std::size_t at = position - len + j;
    const Label y = history[history.size() - len + j];
    if (y >= sizes_[at - 1]) throw UsageError("history label out of range");
    index = index * sizes_[at - 1] + y;
  }
  return offsets_[position - 1][len] + index * sizes_[position - 1];
}

void TableModel::log_weights(std::size_t position, std::span<const Label> history, Observation,
                             std::span<double> out) const {
  const std::size_t off = row_offset(position, history);
  std::copy_n(table_.begin() + static_cast<std::ptrdiff_t>(off), sizes_[position - 1], out.begin());
}

void TableModel::set(std::size_t position, std::span<const Label> history, Label y, double log_w) {
  if (y >= label_count(position)) throw UsageError("label out of range");
  table_[row_offset(position, history) + y] = log_w;
}

double TableModel::get(std::size_t position, std::span<const Label> history, Label y) const {
  if (y >= label_count(position)) throw UsageError("label out of range");
  return table_[row_offset(position, history) + y];
}

// ---------------------------------------------------------------------------
// NgramLM

std::string to_string(Smoothing mode) {
  return mode == Smoothing::kLaplace ? "laplace" : "absolute-discounting";
}

Smoothing parse_smoothing(std::string_view text) {
  if (text == "laplace") return Smoothing::kLaplace;
  if (text == "absolute-discounting" || text == "abs" || text == "absolute") return Smoothing::kAbsoluteDiscounting;
  throw UsageError("unknown smoothing mode '" + std::string(text) + "' (expected laplace or absolute-discounting)");
}

std::uint64_t NgramLM::key(std::span<const Label> history) const {
  std::uint64_t k = 0;
  for (Label y : history) k = k * alphabet_.size() + y;
  return k;
}

const NgramLM::History* NgramLM::find(std::span<const Label> history) const {
  if (history.empty() || history.size() >= index_.size()) return nullptr;
  const auto& table = index_[history.size()];
  auto it = table.find(key(history));
  return it == table.end() ? nullptr : &histories_[it->second];
}

void NgramLM::add_count(std::span<const Label> history, Label y, double c) {
  if (history.empty()) {
    unigram_[y] += c;
    corpus_size_ += c;
    return;
  }
  auto& table = index_[history.size()];
  auto [it, inserted] = table.emplace(key(history), static_cast<std::uint32_t>(histories_.size()));
  if (inserted) {
    History h;
    h.labels.assign(history.begin(), history.end());
    h.counts.assign(alphabet_.size(), 0.0);
    histories_.push_back(std::move(h));
  }
  History& h = histories_[it->second];
  h.counts[y] += c;
  h.total += c;
}

NgramLM NgramLM::fit(std::span<const Label> corpus, SymbolSet alphabet, NgramOptions options) {
  if (options.order == 0) throw UsageError("n-gram order must be at least 1");
  if (corpus.empty()) throw UsageError("cannot fit an n-gram model on an empty corpus");
  if (options.discount < 0.0 || options.epsilon <= 0.0) {
    throw UsageError("discount must be >= 0 and epsilon > 0");
  }
  NgramLM lm;
  lm.alphabet_ = std::move(alphabet);
  lm.options_ = options;
  const double bits = static_cast<double>(options.order - 1) * std::log2(static_cast<double>(lm.alphabet_.size()));
  if (bits > 63.0) throw UsageError("order too large for the alphabet size");
  lm.unigram_.assign(lm.alphabet_.size(), 0.0);
  lm.index_.resize(options.order);
  for (std::size_t t = 0; t < corpus.size(); ++t) {
    if (corpus[t] >= lm.alphabet_.size()) throw IngestionError("corpus label out of range");
    for (std::size_t len = 0; len < options.order && len <= t; ++len) {
      lm.add_count(corpus.subspan(t - len, len), corpus[t], 1.0);
    }
  }
  lm.build_rows();
  return lm;
}

NgramLM NgramLM::fit_text(std::string_view text, SymbolSet alphabet, NgramOptions options) {
  std::vector<Label> corpus;
  corpus.reserve(text.size());
  std::set<char> offenders;
  for (char c : text) {
    auto y = alphabet.find(std::string_view(&c, 1));
    if (!y) {
      offenders.insert(c);
      continue;
    }
    corpus.push_back(*y);
  }
  if (!offenders.empty()) {
    std::string list;
    for (char c : offenders) {
      if (!list.empty()) list += ", ";
      list += '\'' + std::string(1, c) + '\'';
    }
    throw IngestionError("corpus contains symbols outside the alphabet: " + list);
  }
  return fit(corpus, std::move(alphabet), options);
}

double NgramLM::prob_at(std::span<const Label> history, Label y) const {
  const double vocab = static_cast<double>(alphabet_.size());
  if (history.empty()) return (unigram_[y] + options_.epsilon) / (corpus_size_ + options_.epsilon * vocab);
  const History* h = find(history);
  if (h == nullptr || h->total == 0.0) return prob_at(history.subspan(1), y);
  if (options_.mode == Smoothing::kLaplace) {
    return (h->counts[y] + options_.epsilon) / (h->total + options_.epsilon * vocab);
  }
  const double d = options_.discount;
  double reserved = 0.0;
  for (double c : h->counts) reserved += std::min(c, d);
  return (std::max(h->counts[y] - d, 0.0) + reserved * prob_at(history.subspan(1), y)) / h->total;
}

double NgramLM::prob(std::span<const Label> history, Label y) const {
  if (y >= alphabet_.size()) throw UsageError("label out of range");
  const std::size_t len = std::min(history.size(), options_.order - 1);
  return prob_at(history.last(len), y);
}

void NgramLM::build_rows() {
  const auto vocab = static_cast<Eigen::Index>(alphabet_.size());
  log_unigram_.resize(vocab);
  for (Eigen::Index y = 0; y < vocab; ++y) log_unigram_(y) = std::log(prob_at({}, static_cast<Label>(y)));
  log_rows_.resize(vocab, static_cast<Eigen::Index>(histories_.size()));
  for (std::size_t h = 0; h < histories_.size(); ++h) {
    for (Eigen::Index y = 0; y < vocab; ++y) {
      log_rows_(y, static_cast<Eigen::Index>(h)) = std::log(prob_at(histories_[h].labels, static_cast<Label>(y)));
    }
  }
}

void NgramLM::log_probs(std::span<const Label> history, std::span<double> out) const {
  const auto vocab = static_cast<Eigen::Index>(alphabet_.size());
  std::size_t len = std::min(history.size(), options_.order - 1);
  for (; len > 0; --len) {
    auto h = history.last(len);
    auto it = index_[len].find(key(h));
    if (it != index_[len].end() && histories_[it->second].total > 0.0) {
      Eigen::Map<Eigen::ArrayXd>(out.data(), vocab) = log_rows_.col(it->second);
      return;
    }
  }
  Eigen::Map<Eigen::ArrayXd>(out.data(), vocab) = log_unigram_;
}

double NgramLM::count(std::span<const Label> history, Label y) const {
  if (history.empty()) return unigram_.at(y);
  const History* h = find(history);
  return h == nullptr ? 0.0 : h->counts.at(y);
}

double NgramLM::history_total(std::span<const Label> history) const {
  if (history.empty()) return corpus_size_;
  const History* h = find(history);
  return h == nullptr ? 0.0 : h->total;
}

nlohmann::json NgramLM::to_json() const {
  nlohmann::json j;
  j["format"] = "rcm-ngram";
  j["version"] = 1;
  j["order"] = options_.order;
  j["mode"] = to_string(options_.mode);
  j["discount"] = options_.discount;
  j["epsilon"] = options_.epsilon;
  j["alphabet"] = alphabet_.symbols();
  auto entry = [&](std::span<const Label> labels, const std::vector<double>& counts) {
    nlohmann::json e;
    std::vector<std::string> hist;
    for (Label y : labels) hist.push_back(alphabet_.symbol(y));
    e["history"] = hist;
    nlohmann::json c = nlohmann::json::object();
    for (std::size_t y = 0; y < counts.size(); ++y) {
      if (counts[y] != 0.0) c[alphabet_.symbol(static_cast<Label>(y))] = counts[y];
    }
    e["counts"] = c;
    return e;
  };
  nlohmann::json counts = nlohmann::json::array();
  counts.push_back(entry({}, unigram_));
  // Sorted by (length, labels) so the serialization is canonical.
  std::vector<const History*> sorted;
  for (const History& h : histories_) sorted.push_back(&h);
  std::sort(sorted.begin(), sorted.end(), [](const History* a, const History* b) {
    if (a->labels.size() != b->labels.size()) return a->labels.size() < b->labels.size();
    return a->labels < b->labels;
  });
  for (const History* h : sorted) counts.push_back(entry(h->labels, h->counts));
  j["counts"] = counts;
  return j;
}

NgramLM NgramLM::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "rcm-ngram") throw IngestionError("not an rcm-ngram file");
    if (j.at("version").get<int>() != 1) throw IngestionError("unsupported rcm-ngram version");
    NgramLM lm;
    lm.alphabet_ = SymbolSet(j.at("alphabet").get<std::vector<std::string>>());
    lm.options_.order = j.at("order").get<std::size_t>();
    lm.options_.mode = parse_smoothing(j.at("mode").get<std::string>());
    lm.options_.discount = j.at("discount").get<double>();
    lm.options_.epsilon = j.at("epsilon").get<double>();
    if (lm.options_.order == 0) throw IngestionError("order must be at least 1");
    lm.unigram_.assign(lm.alphabet_.size(), 0.0);
    lm.index_.resize(lm.options_.order);
    for (const auto& e : j.at("counts")) {
      std::vector<Label> hist;
      for (const auto& s : e.at("history")) hist.push_back(lm.alphabet_.index(s.get<std::string>()));
      if (hist.size() >= lm.options_.order) throw IngestionError("history longer than order - 1");
      for (const auto& [sym, c] : e.at("counts").items()) lm.add_count(hist, lm.alphabet_.index(sym), c.get<double>());
    }
    lm.build_rows();
    return lm;
  } catch (const nlohmann::json::exception& ex) {
    throw IngestionError(std::string("malformed rcm-ngram file: ") + ex.what());
  } catch (const UsageError& ex) {
    throw IngestionError(std::string("malformed rcm-ngram file: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------
// ChannelModel

ChannelModel ChannelModel::uniform(std::size_t plain_size, std::size_t cipher_size) {
  if (plain_size == 0 || cipher_size == 0) throw UsageError("channel alphabets must be nonempty");
  return from_probs(Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(plain_size),
                                              static_cast<Eigen::Index>(cipher_size),
                                              1.0 / static_cast<double>(cipher_size)));
}

ChannelModel ChannelModel::from_counts(const Eigen::MatrixXd& counts, double epsilon) {
  if (counts.size() == 0) throw UsageError("channel alphabets must be nonempty");
  if (epsilon <= 0.0) throw UsageError("channel smoothing must be positive");
  const double width = static_cast<double>(counts.cols());
  Eigen::MatrixXd probs = (counts.array() + epsilon).matrix();
  const Eigen::VectorXd denom = (counts.rowwise().sum().array() + epsilon * width).matrix();
  for (Eigen::Index y = 0; y < probs.rows(); ++y) probs.row(y) /= denom(y);
  return from_probs(std::move(probs));
}

ChannelModel ChannelModel::from_probs(Eigen::MatrixXd probs) {
  ChannelModel ch;
  ch.log_prob_ = probs.array().log().matrix();
  ch.prob_ = std::move(probs);
  return ch;
}

Observation ChannelModel::best_cipher(Label y) const {
  Eigen::Index best = 0;
  prob_.row(y).maxCoeff(&best);  // first maximal coefficient
  return static_cast<Observation>(best);
}

// ---------------------------------------------------------------------------
// CipherModel

CipherModel::CipherModel(const NgramLM& lm, const ChannelModel& channel) : lm_(&lm), channel_(&channel) {
  if (lm.alphabet().size() != channel.plain_size()) {
    throw UsageError("channel plain alphabet size differs from the language model alphabet");
  }
}

void CipherModel::log_weights(std::size_t, std::span<const Label> history, Observation x,
                              std::span<double> out) const {
  if (x >= channel_->cipher_size()) throw UsageError("cipher symbol out of range");
  lm_->log_probs(history, out);
  const auto vocab = static_cast<Eigen::Index>(out.size());
  Eigen::Map<Eigen::ArrayXd>(out.data(), vocab) += channel_->log_probs().col(x).array();
}

double cipher_log_weight(const NgramLM& lm, const ChannelModel& channel, std::size_t position,
                         std::span<const Label> suffix, Label y, Observation x) {
  return CipherModel(lm, channel).log_weight(position, suffix, y, x);
}

}  // namespace rcm
