#ifndef RCM_CONTEXT_HPP
#define RCM_CONTEXT_HPP

#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rcm/log_math.hpp"

namespace rcm {

// Labels are interned per position to 0..|Y_i|-1. The wildcard is the
// largest representable value, so integer comparison already places it last.
using Label = std::uint32_t;
inline constexpr Label kWildcard = std::numeric_limits<Label>::max();
inline constexpr std::string_view kWildcardSymbol = "*";

inline constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

// Ordered, duplicate-free set of symbol names for one position.
class SymbolSet {
 public:
  SymbolSet() = default;
  explicit SymbolSet(std::vector<std::string> symbols);

  // One symbol per character of `chars`.
  static SymbolSet from_chars(std::string_view chars);

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(Label y) const { return symbols_.at(y); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  std::optional<Label> find(std::string_view symbol) const;
  Label index(std::string_view symbol) const;  // throws UsageError if absent

  bool operator==(const SymbolSet& other) const { return symbols_ == other.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, Label> index_;
};

// Per-position label sets Y_1..Y_n. Positions are 1-based.
class LabelAlphabet {
 public:
  LabelAlphabet() = default;
  explicit LabelAlphabet(std::vector<SymbolSet> per_position);
  static LabelAlphabet uniform(const SymbolSet& set, std::size_t length);

  std::size_t length() const { return slot_.size(); }
  const SymbolSet& at(std::size_t position) const;
  std::size_t size_at(std::size_t position) const { return at(position).size(); }

  // Throws UsageError unless assignment[j] is a valid label for position j+1.
  void check_assignment(std::span<const Label> assignment) const;

 private:
  std::vector<SymbolSet> sets_;
  std::vector<std::uint32_t> slot_;
};

// The set {y_{1:i} : y_{i-len+1:i} = suffix}; everything before the suffix
// is wildcard. `position` is i, the prefix length the context covers.
struct Context {
  std::size_t position = 0;
  std::vector<Label> suffix;  // oldest first

  std::size_t len() const { return suffix.size(); }
  bool is_root() const { return suffix.empty(); }

  // Symbol at distance `depth` from the end (0 = s_i); kWildcard past the suffix.
  Label at_depth(std::size_t depth) const {
    return depth < suffix.size() ? suffix[suffix.size() - 1 - depth] : kWildcard;
  }

  // True when the full assignment y_{1:i} belongs to this context.
  bool contains(std::span<const Label> assignment) const;

  // Parses one character per position; '*' marks wildcard prefix entries.
  // Every character must be a single-character symbol of the alphabet.
  static Context parse(const LabelAlphabet& alphabet, std::string_view text);
  std::string to_string(const LabelAlphabet& alphabet) const;

  bool operator==(const Context&) const = default;
};

// Reverse-lexicographic order: s_i first, then s_{i-1}, ...; wildcard is maximal.
std::strong_ordering compare_contexts(const Context& a, const Context& b);

// Length of the longest common concrete suffix.
std::size_t lcs_pair(const Context& a, const Context& b);

// Append-only store of suffix chains. Cell k holds the last label of a
// context and a link to the cell of the same context with that label
// dropped, so extending a context by one label costs one cell.
using SuffixId = std::uint32_t;
inline constexpr SuffixId kNoSuffix = std::numeric_limits<SuffixId>::max();

class SuffixArena {
 public:
  SuffixId extend(SuffixId prefix, Label y);
  Label last(SuffixId id) const { return cells_[id].label; }
  SuffixId prefix(SuffixId id) const { return cells_[id].prefix; }
  std::size_t size() const { return cells_.size(); }

  // Appends the most recent min(len, max_count) labels to `out`, oldest first.
  void tail(SuffixId id, std::size_t len, std::size_t max_count, std::vector<Label>& out) const;
  std::vector<Label> materialize(SuffixId id, std::size_t len) const;

 private:
  struct Cell {
    Label label;
    SuffixId prefix;
  };
  std::vector<Cell> cells_;
};

// A retained context at one position together with its message scores.
// Scores are stored relative to per-level scaling constants held by the
// trellis; see Trellis for the bookkeeping.
struct MNode {
  SuffixId suffix = kNoSuffix;
  std::uint32_t len = 0;
  std::uint32_t source = kNone;  // index of the expansion it was promoted from; kNone for the root
  std::uint32_t absorbed = 0;    // number of expansions merged in (including the source)
  double log_forward = kNegInf;
  double log_backward = kNegInf;

  bool is_root() const { return len == 0; }
};

// Sorted contexts at one position plus the adjacent longest-common-suffix
// array: lcs[k] = lcs(entry k, entry k+1). The root sorts last.
class Level {
 public:
  Level() = default;
  Level(std::size_t position, std::shared_ptr<const SuffixArena> arena, std::vector<MNode> nodes,
        std::vector<std::uint32_t> lcs);

  // Builds a level from explicit contexts in the given order, computing the
  // lcs array directly. No sorting or validation is performed.
  static Level from_contexts(std::size_t position, std::span<const Context> contexts);

  std::size_t position() const { return position_; }
  std::size_t size() const { return nodes_.size(); }
  const MNode& node(std::size_t k) const { return nodes_.at(k); }
  std::span<const MNode> nodes() const { return nodes_; }
  std::span<MNode> mutable_nodes() { return nodes_; }
  std::span<const std::uint32_t> lcs() const { return lcs_; }
  const SuffixArena& arena() const { return *arena_; }
  const std::shared_ptr<const SuffixArena>& shared_arena() const { return arena_; }

  Context context(std::size_t k) const;
  // Label of entry k at `depth` from the end; kWildcard past its suffix.
  Label label_at_depth(std::size_t k, std::size_t depth) const;

 private:
  std::size_t position_ = 0;
  std::shared_ptr<const SuffixArena> arena_;
  std::vector<MNode> nodes_;
  std::vector<std::uint32_t> lcs_;
};

// Common-suffix length of entries a < b, as the minimum of lcs[a..b).
std::size_t range_lcs(const Level& level, std::size_t a, std::size_t b);

// Reverse-lexicographic comparison and common suffix of two level entries,
// walking the suffix chains directly.
std::strong_ordering compare_entries(const Level& level, std::size_t a, std::size_t b);
std::size_t entry_lcs(const Level& level, std::size_t a, std::size_t b);

// Index of the entry owning y_{1:i}: the longest suffix match. The root
// matches everything, so an owner always exists in a valid level.
std::size_t locate_owner(const Level& level, std::span<const Label> assignment);

struct LevelViolation {
  std::string what;
  std::size_t index = 0;
};

// Checks sortedness, root presence/uniqueness/placement and the lcs array.
// Returns the first violation found, or nullopt when the level is well formed.
std::optional<LevelViolation> validate_level(const Level& level);

}  // namespace rcm

#endif  // RCM_CONTEXT_HPP
