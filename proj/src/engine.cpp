#include "rcm/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "rcm/errors.hpp"
#include "rcm/log_math.hpp"

namespace rcm {

namespace {

constexpr std::uint32_t kUnbounded = std::numeric_limits<std::uint32_t>::max();

void check_finite(std::span<const double> row, std::size_t position, std::size_t entry) {
  for (std::size_t y = 0; y < row.size(); ++y) {
    if (!std::isfinite(row[y])) {
      std::ostringstream msg;
      msg << "model returned non-finite log-weight " << row[y] << " at position " << position << " (context entry "
          << entry << ", label " << y << ")";
      throw InferenceError(msg.str());
    }
  }
}

void context_history(const Level& level, std::size_t k, std::size_t order, std::vector<Label>& out) {
  out.clear();
  const MNode& m = level.node(k);
  level.arena().tail(m.suffix, m.len, order - 1, out);
}

}  // namespace

void expand_level(const Level& prev, const ChainModel& model, Observation x, Expansion& out) {
  const std::size_t position = prev.position() + 1;
  const std::size_t labels = model.label_count(position);
  const std::size_t parents = prev.size();
  if (labels == 0) throw UsageError("empty label set at position " + std::to_string(position));
  if (parents == 0) throw UsageError("cannot expand an empty level");

  std::vector<double> rows(parents * labels);
  std::vector<Label> history;
  for (std::size_t k = 0; k < parents; ++k) {
    context_history(prev, k, model.order(), history);
    std::span<double> row(rows.data() + k * labels, labels);
    model.log_weights(position, history, x, row);
    check_finite(row, position, k);
  }

  out.position = position;
  out.nodes.resize(parents * labels);
  out.lcs.resize(parents * labels);
  auto prev_lcs = prev.lcs();
  for (std::size_t y = 0; y < labels; ++y) {
    for (std::size_t k = 0; k < parents; ++k) {
      const std::size_t j = y * parents + k;
      ENode& e = out.nodes[j];
      e.parent = static_cast<std::uint32_t>(k);
      e.label = static_cast<Label>(y);
      e.log_forward = prev.node(k).log_forward + rows[k * labels + y];
      e.active = false;
      e.target = kNone;
      out.lcs[j] = k + 1 < parents ? prev_lcs[k] + 1 : 0;
    }
  }
}

Expansion expand_level(const Level& prev, const ChainModel& model, Observation x) {
  Expansion out;
  expand_level(prev, model, x, out);
  return out;
}

void select_active(std::span<ENode> candidates, std::size_t beam) {
  for (ENode& e : candidates) e.active = false;
  if (beam >= candidates.size()) {
    for (ENode& e : candidates) e.active = true;
    return;
  }
  if (beam == 0) return;
  std::vector<std::uint32_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0u);
  auto better = [&](std::uint32_t a, std::uint32_t b) {
    const double fa = candidates[a].log_forward;
    const double fb = candidates[b].log_forward;
    return fa > fb || (fa == fb && a < b);
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(beam - 1), order.end(), better);
  for (std::size_t r = 0; r < beam; ++r) candidates[order[r]].active = true;
}

Level merge_level(std::span<ENode> candidates, std::span<const std::uint32_t> lcs, const Level& prev,
                  const std::shared_ptr<SuffixArena>& arena) {
  if (lcs.size() != candidates.size()) throw UsageError("lcs array length differs from candidate count");
  if (arena.get() != &prev.arena()) throw UsageError("previous level does not share the target suffix arena");

  double top = kNegInf;
  for (const ENode& e : candidates) top = std::max(top, e.log_forward);

  // Built back to front; slot 0 is the root sentinel.
  std::vector<MNode> reversed(1);
  std::vector<double> mass(1, 0.0);
  std::vector<std::uint32_t> reversed_lcs;
  std::vector<std::uint32_t> stack{0};

  std::uint32_t run = kUnbounded;
  for (std::size_t j = candidates.size(); j-- > 0;) {
    run = std::min(run, lcs[j]);
    // Pop entries that are not ancestors of candidate j.
    while (run < reversed[stack.back()].len) {
      stack.pop_back();
      if (stack.empty()) throw EngineBug("merge stack emptied below the root sentinel");
    }
    ENode& e = candidates[j];
    const double weight = top == kNegInf ? 0.0 : std::exp(e.log_forward - top);
    if (e.active) {
      const MNode& parent = prev.node(e.parent);
      MNode m;
      m.len = parent.len + 1;
      m.suffix = arena->extend(parent.suffix, e.label);
      m.source = static_cast<std::uint32_t>(j);
      m.absorbed = 1;
      const auto slot = static_cast<std::uint32_t>(reversed.size());
      reversed.push_back(m);
      mass.push_back(weight);
      reversed_lcs.push_back(run);
      stack.push_back(slot);
      e.target = slot;
      run = kUnbounded;
    } else {
      const std::uint32_t slot = stack.back();
      reversed[slot].absorbed += 1;
      mass[slot] += weight;
      e.target = slot;
    }
  }

  // Slot r >= 1 lands at index (actives - r); the root goes last.
  const auto actives = static_cast<std::uint32_t>(reversed.size() - 1);
  auto final_index = [actives](std::uint32_t slot) { return slot == 0 ? actives : actives - slot; };
  std::vector<MNode> nodes(reversed.size());
  for (std::uint32_t r = 0; r < reversed.size(); ++r) {
    MNode& m = nodes[final_index(r)];
    m = reversed[r];
    m.log_forward = mass[r] > 0.0 ? top + std::log(mass[r]) : kNegInf;
  }
  for (ENode& e : candidates) e.target = final_index(e.target);
  std::reverse(reversed_lcs.begin(), reversed_lcs.end());
  return Level(prev.position() + 1, arena, std::move(nodes), std::move(reversed_lcs));
}

// ---------------------------------------------------------------------------

void Trellis::history(std::size_t position, std::size_t k, std::vector<Label>& out) const {
  context_history(levels_.at(position), k, model_->order(), out);
}

double Trellis::level_log_mass(std::size_t position) const {
  if (!has_backward_) throw UsageError("level_log_mass requires the backward pass");
  const Level& level = levels_.at(position);
  std::vector<double> terms;
  terms.reserve(level.size());
  for (const MNode& m : level.nodes()) terms.push_back(m.log_forward + m.log_backward);
  return log_sum_exp(terms) + log_scale_[position] + backward_scale_[position];
}

Trellis forward_pass(const ChainModel& model, std::span<const Observation> x, const EngineOptions& options) {
  if (x.empty()) throw UsageError("forward_pass needs at least one position");
  if (options.beam == 0) throw UsageError("beam width must be at least 1");
  if (model.order() == 0) throw UsageError("model order must be at least 1");

  Trellis t;
  t.model_ = &model;
  t.options_ = options;
  t.observations_.assign(x.begin(), x.end());
  t.arena_ = std::make_shared<SuffixArena>();
  t.levels_.reserve(x.size() + 1);
  t.targets_.reserve(x.size() + 1);
  t.log_scale_.reserve(x.size() + 1);

  MNode start;
  start.log_forward = 0.0;
  t.levels_.emplace_back(0, t.arena_, std::vector<MNode>{start}, std::vector<std::uint32_t>{});
  t.targets_.emplace_back();
  t.log_scale_.push_back(0.0);

  const std::size_t concrete =
      options.root_counts_toward_beam ? options.beam - 1 : options.beam;
  Expansion buffer;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    expand_level(t.levels_.back(), model, x[i - 1], buffer);
    double shift = kNegInf;
    for (const ENode& e : buffer.nodes) shift = std::max(shift, e.log_forward);
    if (shift == kNegInf) throw EngineBug("all candidates have zero forward mass at position " + std::to_string(i));
    for (ENode& e : buffer.nodes) e.log_forward -= shift;

    select_active(buffer.nodes, concrete);
    Level level = merge_level(buffer.nodes, buffer.lcs, t.levels_.back(), t.arena_);

    std::vector<std::uint32_t> targets(buffer.nodes.size());
    for (std::size_t j = 0; j < targets.size(); ++j) targets[j] = buffer.nodes[j].target;
    t.targets_.push_back(std::move(targets));
    t.levels_.push_back(std::move(level));
    t.log_scale_.push_back(t.log_scale_.back() + shift);
  }
  return t;
}

Trellis forward_pass(const ChainModel& model, std::span<const Observation> x, std::size_t beam) {
  return forward_pass(model, x, EngineOptions{beam, false});
}

void backward_pass(Trellis& t) {
  if (t.model_ == nullptr || t.levels_.empty()) throw UsageError("backward_pass called before forward_pass");
  const ChainModel& model = *t.model_;
  const std::size_t n = t.length();
  t.backward_scale_.assign(n + 1, 0.0);
  for (MNode& m : t.levels_[n].mutable_nodes()) m.log_backward = 0.0;

  std::vector<Label> history;
  std::vector<double> row;
  std::vector<double> terms;
  std::vector<double> raw;
  for (std::size_t i = n; i-- > 0;) {
    Level& level = t.levels_[i];
    const Level& next = t.levels_[i + 1];
    const auto targets = t.targets_[i + 1];
    const std::size_t parents = level.size();
    const std::size_t labels = model.label_count(i + 1);
    row.resize(labels);
    terms.resize(labels);
    raw.resize(parents);
    for (std::size_t k = 0; k < parents; ++k) {
      t.history(i, k, history);
      model.log_weights(i + 1, history, t.observations_[i], row);
      for (std::size_t y = 0; y < labels; ++y) {
        terms[y] = next.node(targets[y * parents + k]).log_backward + row[y];
      }
      raw[k] = log_sum_exp(terms);
    }
    const double shift = *std::max_element(raw.begin(), raw.end());
    auto nodes = level.mutable_nodes();
    for (std::size_t k = 0; k < parents; ++k) nodes[k].log_backward = raw[k] - shift;
    t.backward_scale_[i] = t.backward_scale_[i + 1] + shift;
  }

  std::vector<double> finals;
  for (const MNode& m : t.levels_[n].nodes()) finals.push_back(m.log_forward);
  t.log_partition_ = t.log_scale_[n] + log_sum_exp(finals);
  t.has_backward_ = true;
}

Trellis run_inference(const ChainModel& model, std::span<const Observation> x, const EngineOptions& options) {
  Trellis t = forward_pass(model, x, options);
  backward_pass(t);
  return t;
}

Trellis run_inference(const ChainModel& model, std::span<const Observation> x, std::size_t beam) {
  return run_inference(model, x, EngineOptions{beam, false});
}

double log_partition(const Trellis& t) {
  if (!t.has_backward_) throw UsageError("log_partition requires both passes");
  return t.log_partition_;
}

void edge_posteriors(const Trellis& t, const std::function<void(const Edge&)>& visitor) {
  if (!t.has_backward()) throw UsageError("edge_posteriors requires both passes");
  const ChainModel& model = t.model();
  std::vector<Label> history;
  std::vector<double> row;
  std::vector<double> terms;
  for (std::size_t i = 1; i <= t.length(); ++i) {
    const Level& prev = t.level(i - 1);
    const Level& level = t.level(i);
    const auto targets = t.targets(i);
    const std::size_t parents = prev.size();
    // Normalize against this level's own total, which keeps the offsets small.
    terms.clear();
    for (const MNode& m : level.nodes()) terms.push_back(m.log_forward + m.log_backward);
    const double shift = t.log_scale(i) - t.log_scale(i - 1);
    const double offset = -(shift + log_sum_exp(terms));
    const std::size_t labels = model.label_count(i);
    row.resize(labels);
    for (std::size_t k = 0; k < parents; ++k) {
      const double f = prev.node(k).log_forward;
      if (f == kNegInf) {
        for (std::size_t y = 0; y < labels; ++y) {
          visitor(Edge{i, static_cast<std::uint32_t>(k), static_cast<Label>(y), 0.0});
        }
        continue;
      }
      t.history(i - 1, k, history);
      model.log_weights(i, history, t.observations()[i - 1], row);
      for (std::size_t y = 0; y < labels; ++y) {
        const double b = level.node(targets[y * parents + k]).log_backward;
        visitor(Edge{i, static_cast<std::uint32_t>(k), static_cast<Label>(y), std::exp(f + row[y] + b + offset)});
      }
    }
  }
}

std::vector<Eigen::VectorXd> label_marginals(const Trellis& t) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(t.length());
  for (std::size_t i = 1; i <= t.length(); ++i) {
    out.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(t.model().label_count(i))));
  }
  edge_posteriors(t, [&](const Edge& e) { out[e.position - 1](e.label) += e.posterior; });
  return out;
}

std::vector<Label> decode(const Trellis& t) {
  std::vector<Label> out;
  for (const Eigen::VectorXd& m : label_marginals(t)) {
    Eigen::Index best = 0;
    m.maxCoeff(&best);
    out.push_back(static_cast<Label>(best));
  }
  return out;
}

double induced_log_mass(const Trellis& t, std::span<const Label> assignment) {
  if (assignment.size() != t.length()) throw UsageError("assignment length differs from the trellis length");
  std::vector<Label> history;
  std::size_t entry = 0;
  double total = 0.0;
  for (std::size_t i = 1; i <= t.length(); ++i) {
    const std::size_t parents = t.level(i - 1).size();
    if (assignment[i - 1] >= t.model().label_count(i)) throw UsageError("assignment label out of range");
    t.history(i - 1, entry, history);
    total += t.model().log_weight(i, history, assignment[i - 1], t.observations()[i - 1]);
    entry = t.targets(i)[assignment[i - 1] * parents + entry];
  }
  return total;
}

void dump_trellis(const Trellis& t, std::ostream& out, const LabelAlphabet* names) {
  auto json_score = [](double v) -> nlohmann::json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  auto symbol = [&](std::size_t position, Label y) -> nlohmann::json {
    if (names != nullptr) return names->at(position).symbol(y);
    return y;
  };
  nlohmann::json header = {{"format", "rcm-trellis"},
                           {"version", 1},
                           {"length", t.length()},
                           {"beam", t.beam()},
                           {"root_counts_toward_beam", t.options().root_counts_toward_beam},
                           {"log_partition", t.has_backward() ? json_score(log_partition(t)) : nullptr}};
  out << header.dump() << '\n';
  std::vector<Label> history;
  std::vector<double> row;
  for (std::size_t i = 0; i <= t.length(); ++i) {
    const Level& level = t.level(i);
    for (std::size_t k = 0; k < level.size(); ++k) {
      const MNode& m = level.node(k);
      nlohmann::json suffix = nlohmann::json::array();
      const auto labels = level.arena().materialize(m.suffix, m.len);
      for (std::size_t j = 0; j < labels.size(); ++j) suffix.push_back(symbol(i - labels.size() + j + 1, labels[j]));
      nlohmann::json rec = {{"record", "mnode"},
                            {"position", i},
                            {"index", k},
                            {"len", m.len},
                            {"suffix", suffix},
                            {"root", m.is_root()},
                            {"source", m.source == kNone ? nlohmann::json(nullptr) : nlohmann::json(m.source)},
                            {"absorbed", m.absorbed},
                            {"log_forward", json_score(m.log_forward + t.log_scale(i))},
                            {"log_backward", t.has_backward() ? json_score(m.log_backward + t.backward_scale(i))
                                                              : nlohmann::json(nullptr)}};
      out << rec.dump() << '\n';
    }
    if (i == 0) continue;
    const Level& prev = t.level(i - 1);
    const std::size_t parents = prev.size();
    const std::size_t labels = t.model().label_count(i);
    row.resize(labels);
    const auto targets = t.targets(i);
    for (std::size_t y = 0; y < labels; ++y) {
      for (std::size_t k = 0; k < parents; ++k) {
        const std::size_t j = y * parents + k;
        t.history(i - 1, k, history);
        t.model().log_weights(i, history, t.observations()[i - 1], row);
        const std::uint32_t target = targets[j];
        nlohmann::json rec = {{"record", "enode"},
                              {"position", i},
                              {"index", j},
                              {"parent", k},
                              {"label", symbol(i, static_cast<Label>(y))},
                              {"active", level.node(target).source == j},
                              {"target", target},
                              {"log_forward", json_score(prev.node(k).log_forward + t.log_scale(i - 1) + row[y])}};
        out << rec.dump() << '\n';
      }
    }
  }
}

}  // namespace rcm
