#include "rcm/context.hpp"

#include <algorithm>
#include <sstream>

#include "rcm/errors.hpp"

namespace rcm {

SymbolSet::SymbolSet(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.empty()) throw UsageError("symbol set must be nonempty");
  for (std::size_t y = 0; y < symbols_.size(); ++y) {
    if (symbols_[y] == kWildcardSymbol) throw UsageError("the wildcard '*' cannot be a label");
    if (!index_.emplace(symbols_[y], static_cast<Label>(y)).second) {
      throw UsageError("duplicate symbol '" + symbols_[y] + "'");
    }
  }
}

SymbolSet SymbolSet::from_chars(std::string_view chars) {
  std::vector<std::string> symbols;
  symbols.reserve(chars.size());
  for (char c : chars) symbols.emplace_back(1, c);
  return SymbolSet(std::move(symbols));
}

std::optional<Label> SymbolSet::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Label SymbolSet::index(std::string_view symbol) const {
  auto y = find(symbol);
  if (!y) throw UsageError("unknown symbol '" + std::string(symbol) + "'");
  return *y;
}

LabelAlphabet::LabelAlphabet(std::vector<SymbolSet> per_position) : sets_(std::move(per_position)) {
  slot_.resize(sets_.size());
  for (std::size_t i = 0; i < sets_.size(); ++i) {
    if (sets_[i].size() == 0) throw UsageError("empty label set at position " + std::to_string(i + 1));
    slot_[i] = static_cast<std::uint32_t>(i);
  }
}

LabelAlphabet LabelAlphabet::uniform(const SymbolSet& set, std::size_t length) {
  if (set.size() == 0) throw UsageError("empty label set");
  LabelAlphabet out;
  out.sets_.push_back(set);
  out.slot_.assign(length, 0);
  return out;
}

const SymbolSet& LabelAlphabet::at(std::size_t position) const {
  if (position == 0 || position > slot_.size()) {
    throw UsageError("position " + std::to_string(position) + " outside 1.." + std::to_string(slot_.size()));
  }
  return sets_[slot_[position - 1]];
}

void LabelAlphabet::check_assignment(std::span<const Label> assignment) const {
  if (assignment.size() > length()) throw UsageError("assignment longer than the alphabet");
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (assignment[j] >= size_at(j + 1)) {
      throw UsageError("label " + std::to_string(assignment[j]) + " invalid at position " + std::to_string(j + 1));
    }
  }
}

bool Context::contains(std::span<const Label> assignment) const {
  if (assignment.size() != position) throw UsageError("assignment length differs from context position");
  const std::size_t offset = position - suffix.size();
  return std::equal(suffix.begin(), suffix.end(), assignment.begin() + static_cast<std::ptrdiff_t>(offset));
}

Context Context::parse(const LabelAlphabet& alphabet, std::string_view text) {
  Context c;
  c.position = text.size();
  bool in_suffix = false;
  for (std::size_t j = 0; j < text.size(); ++j) {
    if (text[j] == '*') {
      if (in_suffix) throw UsageError("wildcards may only form a prefix: '" + std::string(text) + "'");
      continue;
    }
    in_suffix = true;
    c.suffix.push_back(alphabet.at(j + 1).index(text.substr(j, 1)));
  }
  return c;
}

std::string Context::to_string(const LabelAlphabet& alphabet) const {
  std::string out(position - suffix.size(), '*');
  const std::size_t offset = position - suffix.size();
  for (std::size_t j = 0; j < suffix.size(); ++j) out += alphabet.at(offset + j + 1).symbol(suffix[j]);
  return out;
}

std::strong_ordering compare_contexts(const Context& a, const Context& b) {
  if (a.position != b.position) {
    throw UsageError("cannot compare contexts at positions " + std::to_string(a.position) + " and " +
                     std::to_string(b.position));
  }
  const std::size_t depth = std::max(a.len(), b.len());
  for (std::size_t d = 0; d < depth; ++d) {
    if (auto c = a.at_depth(d) <=> b.at_depth(d); c != 0) return c;
  }
  return std::strong_ordering::equal;
}

std::size_t lcs_pair(const Context& a, const Context& b) {
  const std::size_t cap = std::min(a.len(), b.len());
  std::size_t d = 0;
  while (d < cap && a.at_depth(d) == b.at_depth(d)) ++d;
  return d;
}

SuffixId SuffixArena::extend(SuffixId prefix, Label y) {
  cells_.push_back({y, prefix});
  return static_cast<SuffixId>(cells_.size() - 1);
}

void SuffixArena::tail(SuffixId id, std::size_t len, std::size_t max_count, std::vector<Label>& out) const {
  const std::size_t count = std::min(len, max_count);
  const std::size_t start = out.size();
  out.resize(start + count);
  for (std::size_t j = count; j > 0; --j) {
    out[start + j - 1] = cells_[id].label;
    id = cells_[id].prefix;
  }
}

std::vector<Label> SuffixArena::materialize(SuffixId id, std::size_t len) const {
  std::vector<Label> out;
  tail(id, len, len, out);
  return out;
}

Level::Level(std::size_t position, std::shared_ptr<const SuffixArena> arena, std::vector<MNode> nodes,
             std::vector<std::uint32_t> lcs)
    : position_(position), arena_(std::move(arena)), nodes_(std::move(nodes)), lcs_(std::move(lcs)) {}

Level Level::from_contexts(std::size_t position, std::span<const Context> contexts) {
  auto arena = std::make_shared<SuffixArena>();
  std::vector<MNode> nodes;
  nodes.reserve(contexts.size());
  for (const Context& c : contexts) {
    if (c.position != position) throw UsageError("context position differs from level position");
    MNode m;
    m.len = static_cast<std::uint32_t>(c.len());
    for (Label y : c.suffix) m.suffix = arena->extend(m.suffix, y);
    nodes.push_back(m);
  }
  std::vector<std::uint32_t> lcs;
  for (std::size_t k = 0; k + 1 < contexts.size(); ++k) {
    lcs.push_back(static_cast<std::uint32_t>(lcs_pair(contexts[k], contexts[k + 1])));
  }
  return Level(position, std::move(arena), std::move(nodes), std::move(lcs));
}

Context Level::context(std::size_t k) const {
  const MNode& m = node(k);
  return Context{position_, arena_->materialize(m.suffix, m.len)};
}

Label Level::label_at_depth(std::size_t k, std::size_t depth) const {
  const MNode& m = nodes_[k];
  if (depth >= m.len) return kWildcard;
  SuffixId id = m.suffix;
  for (std::size_t d = 0; d < depth; ++d) id = arena_->prefix(id);
  return arena_->last(id);
}

std::size_t range_lcs(const Level& level, std::size_t a, std::size_t b) {
  if (!(a < b && b < level.size())) {
    throw UsageError("range_lcs needs 0 <= a < b < " + std::to_string(level.size()) + ", got (" +
                     std::to_string(a) + ", " + std::to_string(b) + ")");
  }
  auto lcs = level.lcs();
  if (lcs.size() + 1 != level.size()) throw UsageError("level lcs array has the wrong length");
  return *std::min_element(lcs.begin() + static_cast<std::ptrdiff_t>(a), lcs.begin() + static_cast<std::ptrdiff_t>(b));
}

namespace {

// Walks both chains in lockstep from the end. Returns the common depth and
// the first differing pair (wildcard past either suffix).
struct ChainWalk {
  std::size_t common = 0;
  Label left = kWildcard;
  Label right = kWildcard;
};

ChainWalk walk_pair(const Level& level, std::size_t a, std::size_t b) {
  const SuffixArena& arena = level.arena();
  const MNode& ma = level.node(a);
  const MNode& mb = level.node(b);
  SuffixId ia = ma.suffix;
  SuffixId ib = mb.suffix;
  ChainWalk w;
  const std::size_t depth = std::max(ma.len, mb.len);
  for (std::size_t d = 0; d < depth; ++d) {
    const Label la = d < ma.len ? arena.last(ia) : kWildcard;
    const Label lb = d < mb.len ? arena.last(ib) : kWildcard;
    if (la != lb || la == kWildcard) {
      w.left = la;
      w.right = lb;
      return w;
    }
    ++w.common;
    ia = arena.prefix(ia);
    ib = arena.prefix(ib);
  }
  return w;
}

}  // namespace

std::strong_ordering compare_entries(const Level& level, std::size_t a, std::size_t b) {
  const ChainWalk w = walk_pair(level, a, b);
  return w.left <=> w.right;
}

std::size_t entry_lcs(const Level& level, std::size_t a, std::size_t b) { return walk_pair(level, a, b).common; }

std::size_t locate_owner(const Level& level, std::span<const Label> assignment) {
  if (assignment.size() != level.position()) {
    throw UsageError("assignment of length " + std::to_string(assignment.size()) + " at level position " +
                     std::to_string(level.position()));
  }
  const SuffixArena& arena = level.arena();
  std::size_t best = kNone;
  std::size_t best_len = 0;
  for (std::size_t k = 0; k < level.size(); ++k) {
    const MNode& m = level.node(k);
    if (best != kNone && m.len <= best_len) continue;
    SuffixId id = m.suffix;
    bool match = true;
    for (std::size_t d = 0; d < m.len; ++d) {
      if (arena.last(id) != assignment[assignment.size() - 1 - d]) {
        match = false;
        break;
      }
      id = arena.prefix(id);
    }
    if (match) {
      best = k;
      best_len = m.len;
    }
  }
  if (best == kNone) throw UsageError("level has no context containing the assignment (missing root?)");
  return best;
}

std::optional<LevelViolation> validate_level(const Level& level) {
  const std::size_t count = level.size();
  if (count == 0) return LevelViolation{"missing root", 0};
  if (level.lcs().size() + 1 != count) {
    return LevelViolation{"lcs array has length " + std::to_string(level.lcs().size()) + ", expected " +
                              std::to_string(count - 1),
                          0};
  }
  for (std::size_t k = 0; k < count; ++k) {
    const MNode& m = level.node(k);
    if (m.len > level.position()) return LevelViolation{"suffix longer than position", k};
    if (m.is_root() && k + 1 != count) return LevelViolation{"root is not the last entry", k};
  }
  if (!level.node(count - 1).is_root()) return LevelViolation{"missing root", count - 1};
  for (std::size_t k = 0; k + 1 < count; ++k) {
    if (compare_entries(level, k, k + 1) != std::strong_ordering::less) {
      return LevelViolation{"entries not strictly increasing", k};
    }
    if (entry_lcs(level, k, k + 1) != level.lcs()[k]) {
      std::ostringstream msg;
      msg << "lcs[" << k << "] = " << level.lcs()[k] << " but entries share " << entry_lcs(level, k, k + 1);
      return LevelViolation{msg.str(), k};
    }
  }
  return std::nullopt;
}

}  // namespace rcm
