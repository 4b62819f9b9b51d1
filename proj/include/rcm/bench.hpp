#ifndef RCM_BENCH_HPP
#define RCM_BENCH_HPP

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rcm/chain_model.hpp"
#include "rcm/decipher.hpp"

namespace rcm {

inline constexpr int kBenchCsvVersion = 1;
inline constexpr const char* kWorkersEnvVar = "RCM_WORKERS";

// Worker count from RCM_WORKERS, or 1 when unset or unparsable.
std::size_t default_workers();

struct ExperimentConfig {
  std::string corpus_path;
  TextNormalization normalization;
  std::size_t plain_length = 5000;
  // The language model is fit on the leading (1 - holdout) share of the
  // corpus; ciphertexts are sampled from the rest.
  double holdout_fraction = 0.2;
  NgramOptions lm;
  std::vector<std::size_t> beams{100};
  std::vector<std::uint64_t> seeds{1};
  std::vector<EStepMethod> methods{EStepMethod::kRcms, EStepMethod::kBeam};
  std::size_t iterations = 20;
  double tolerance = 0.0;
  std::size_t oracle_cap = kDefaultOracleCap;
  std::size_t workers = 1;
  bool timing = true;
  std::string output;

  // Throws UsageError on B < 1, repeated seeds, empty sweeps or an
  // unreadable corpus path (when one is set).
  void check() const;
};

struct BenchCorpus {
  NgramLM lm;
  NgramLM alternate;  // same order, the other smoothing mode
  std::string heldout;
  SymbolSet alphabet;
};

BenchCorpus prepare_corpus(const ExperimentConfig& config, std::string_view raw_text);

struct BenchRow {
  EStepMethod method = EStepMethod::kRcms;
  std::size_t beam = 0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  double loglik_first = 0.0;
  double loglik_last = 0.0;
  double loglik_best = 0.0;
  double log_partition = 0.0;  // E-step under the final channel
  double symbol_accuracy = 0.0;
  double token_accuracy = 0.0;
  double wall_ms = 0.0;
};

// One EM run per (method, B, seed) cell, rows sorted by method order in the
// config, then B, then seed. Cells may run on `config.workers` threads.
// Timing excludes corpus ingestion and LM fitting.
std::vector<BenchRow> run_bench(const ExperimentConfig& config, const BenchCorpus& corpus);

const std::vector<std::string>& bench_csv_columns();
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows, const ExperimentConfig& config);

// Random order-`order` table model with per-position label counts drawn
// from [min_labels, max_labels] and a random observation sequence.
struct SyntheticInstance {
  TableModel model;
  std::vector<Observation> x;
};

SyntheticInstance make_synthetic(std::mt19937_64& rng, std::size_t length, std::size_t min_labels,
                                 std::size_t max_labels, std::size_t order = 2);

struct CheckResult {
  std::string name;
  bool passed = true;
  double worst = 0.0;  // largest deviation seen, in the check's own units
  std::string detail;
};

struct ValidationOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 1;
  std::size_t max_length = 5;
  std::size_t max_labels = 3;
};

// Level validation, oracle equivalence, self-consistency, posterior
// normalization, beam bound and exact-DP agreement on synthetic instances.
std::vector<CheckResult> run_validation_suite(const ValidationOptions& options);

struct CompareRow {
  EStepMethod method = EStepMethod::kRcms;
  std::size_t beam = 0;
  std::size_t iterations = 0;
  double log_likelihood = 0.0;
  std::optional<Accuracy> accuracy;
  double wall_ms = 0.0;
};

std::vector<CompareRow> run_compare(const CipherInstance& instance, const NgramLM& lm, const NgramLM* alternate,
                                    std::span<const EStepMethod> methods, const EmOptions& base);
void print_compare_table(std::ostream& out, std::span<const CompareRow> rows);

}  // namespace rcm

#endif  // RCM_BENCH_HPP
