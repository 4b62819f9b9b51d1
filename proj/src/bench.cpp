#include "rcm/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "rcm/baselines.hpp"
#include "rcm/engine.hpp"
#include "rcm/errors.hpp"

namespace rcm {

std::size_t default_workers() {
  const char* env = std::getenv(kWorkersEnvVar);
  if (env == nullptr) return 1;
  try {
    const long v = std::stol(env);
    return v >= 1 ? static_cast<std::size_t>(v) : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

void ExperimentConfig::check() const {
  if (beams.empty()) throw UsageError("the B sweep is empty");
  for (std::size_t b : beams) {
    if (b < 1) throw UsageError("B values must be >= 1");
  }
  if (seeds.empty()) throw UsageError("the seed list is empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw UsageError("seeds must be distinct");
  }
  if (methods.empty()) throw UsageError("the method list is empty");
  if (iterations < 1) throw UsageError("EM needs at least one iteration");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw UsageError("holdout fraction must be in (0, 1)");
  if (workers < 1) throw UsageError("worker count must be >= 1");
  if (!corpus_path.empty()) {
    std::ifstream probe(corpus_path);
    if (!probe) throw UsageError("cannot read corpus '" + corpus_path + "'");
  }
}

BenchCorpus prepare_corpus(const ExperimentConfig& config, std::string_view raw_text) {
  const std::string text = normalize_text(raw_text, config.normalization);
  const auto cut = static_cast<std::size_t>(static_cast<double>(text.size()) * (1.0 - config.holdout_fraction));
  if (cut == 0 || cut >= text.size()) throw UsageError("corpus too short to split into training and held-out parts");
  BenchCorpus c;
  c.alphabet = whitelist_alphabet(config.normalization);
  c.lm = NgramLM::fit_text(std::string_view(text).substr(0, cut), c.alphabet, config.lm);
  NgramOptions alt = config.lm;
  alt.mode = config.lm.mode == Smoothing::kLaplace ? Smoothing::kAbsoluteDiscounting : Smoothing::kLaplace;
  c.alternate = NgramLM::fit_text(std::string_view(text).substr(0, cut), c.alphabet, alt);
  c.heldout = text.substr(cut);
  if (!c.heldout.empty() && c.heldout.front() == ' ') c.heldout.erase(0, 1);
  return c;
}

std::vector<BenchRow> run_bench(const ExperimentConfig& config, const BenchCorpus& corpus) {
  config.check();
  struct Cell {
    EStepMethod method;
    std::size_t beam;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (EStepMethod m : config.methods) {
    std::vector<std::size_t> beams = config.beams;
    std::sort(beams.begin(), beams.end());
    std::vector<std::uint64_t> seeds = config.seeds;
    std::sort(seeds.begin(), seeds.end());
    for (std::size_t b : beams) {
      for (std::uint64_t s : seeds) cells.push_back({m, b, s});
    }
  }

  std::vector<BenchRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      try {
        const Cell& cell = cells[c];
        const CipherInstance instance =
            generate_cipher(corpus.heldout, corpus.alphabet, config.plain_length, cell.seed);
        EmOptions options;
        options.method = cell.method;
        options.beam = cell.beam;
        options.iterations = config.iterations;
        options.tolerance = config.tolerance;
        options.oracle_cap = config.oracle_cap;
        options.alternate_lm = &corpus.alternate;
        const auto start = std::chrono::steady_clock::now();
        const EmRun run = run_em(instance, corpus.lm, options);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        BenchRow& row = rows[c];
        row.method = cell.method;
        row.beam = cell.beam;
        row.seed = cell.seed;
        row.iterations = run.iterations;
        row.loglik_first = run.log_likelihood.front();
        row.loglik_last = run.log_likelihood.back();
        row.loglik_best = *std::max_element(run.log_likelihood.begin(), run.log_likelihood.end());
        row.log_partition = run.final_log_likelihood;
        row.symbol_accuracy = run.accuracy->symbol;
        row.token_accuracy = run.accuracy->token;
        row.wall_ms = config.timing ? ms : 0.0;
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(config.workers, cells.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  return rows;
}

const std::vector<std::string>& bench_csv_columns() {
  static const std::vector<std::string> columns{
      "format_version", "method",       "beam",         "seed",         "lm_order",      "lm_mode",
      "lm_discount",    "lm_epsilon",   "plain_length", "iterations",   "loglik_first",  "loglik_last",
      "loglik_best",    "log_partition", "symbol_accuracy", "token_accuracy", "wall_ms"};
  return columns;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows, const ExperimentConfig& config) {
  const auto& columns = bench_csv_columns();
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c];
  out << '\n';
  std::ostringstream line;
  line << std::setprecision(12);
  for (const BenchRow& r : rows) {
    line.str("");
    line << kBenchCsvVersion << ',' << to_string(r.method) << ',' << r.beam << ',' << r.seed << ',' << config.lm.order
         << ',' << to_string(config.lm.mode) << ',' << config.lm.discount << ',' << config.lm.epsilon << ','
         << config.plain_length << ',' << r.iterations << ',' << r.loglik_first << ',' << r.loglik_last << ','
         << r.loglik_best << ',' << r.log_partition << ',' << r.symbol_accuracy << ',' << r.token_accuracy << ','
         << std::fixed << std::setprecision(3) << r.wall_ms << std::defaultfloat << std::setprecision(12);
    out << line.str() << '\n';
  }
}

// ---------------------------------------------------------------------------

SyntheticInstance make_synthetic(std::mt19937_64& rng, std::size_t length, std::size_t min_labels,
                                 std::size_t max_labels, std::size_t order) {
  if (min_labels < 1 || max_labels < min_labels) throw UsageError("bad label-count range");
  std::vector<std::size_t> sizes(length);
  for (auto& s : sizes) s = min_labels + static_cast<std::size_t>(rng() % (max_labels - min_labels + 1));
  SyntheticInstance inst{TableModel::random(sizes, order, rng), {}};
  for (std::size_t i = 0; i < length; ++i) inst.x.push_back(static_cast<Observation>(rng() % 4));
  return inst;
}

namespace {

// |mass ratio - 1| for two log masses.
double log_mass_gap(double a, double b) {
  if (a == b) return 0.0;
  return std::abs(std::expm1(a - b));
}

struct Tally {
  explicit Tally(std::string name) { result.name = std::move(name); }
  CheckResult result;
  void observe(double deviation, double tolerance, const std::string& where) {
    if (!(deviation <= tolerance)) {
      if (result.passed) result.detail = where;
      result.passed = false;
    }
    if (deviation > result.worst || std::isnan(deviation)) result.worst = deviation;
  }
};

}  // namespace

std::vector<CheckResult> run_validation_suite(const ValidationOptions& options) {
  Tally levels("level-structure");
  Tally exactness("oracle-exactness");
  Tally consistency("self-consistency");
  Tally normalization("posterior-normalization");
  Tally conservation("merge-conservation");
  Tally beam_bound("beam-bound");
  Tally dp("exact-dp-agreement");

  std::mt19937_64 rng(options.seed);
  for (std::size_t inst = 0; inst < options.instances; ++inst) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng() % options.max_length);
    const SyntheticInstance s = make_synthetic(rng, n, 1, options.max_labels);
    const BruteForceResult oracle = brute_force_oracle(s.model, s.x);
    const std::string where = "instance " + std::to_string(inst);

    const ExactResult exact = exact_forward_backward(s.model, s.x);
    double dp_gap = relative_difference(exact.log_partition, oracle.log_partition);
    for (std::size_t i = 0; i < n; ++i) {
      for (Eigen::Index y = 0; y < exact.marginals[i].size(); ++y) {
        dp_gap = std::max(dp_gap, relative_difference(exact.marginals[i](y), oracle.marginals[i](y)));
      }
    }
    dp.observe(dp_gap, 1e-9, where);

    const std::size_t full = oracle.count();
    for (std::size_t beam : {std::size_t{1}, std::size_t{2}, std::size_t{4}, std::size_t{8}, full}) {
      const std::string at = where + ", B=" + std::to_string(beam);
      const Trellis t = run_inference(s.model, s.x, EngineOptions{beam, false});
      for (std::size_t i = 0; i <= n; ++i) {
        const auto v = validate_level(t.level(i));
        levels.observe(v ? 1.0 : 0.0, 0.0, at + (v ? ", position " + std::to_string(i) + ": " + v->what : ""));
      }
      double spread = 0.0;
      for (std::size_t i = 1; i <= n; ++i) spread = std::max(spread, log_mass_gap(t.level_log_mass(i), t.level_log_mass(0)));
      consistency.observe(spread, 1e-9, at);

      std::vector<double> sums(n, 0.0);
      edge_posteriors(t, [&](const Edge& e) { sums[e.position - 1] += e.posterior; });
      double worst_sum = 0.0;
      for (double v : sums) worst_sum = std::max(worst_sum, std::abs(v - 1.0));
      normalization.observe(worst_sum, 1e-12, at);

      if (beam == full) {
        double gap = relative_difference(log_partition(t), oracle.log_partition);
        const auto marginals = label_marginals(t);
        for (std::size_t i = 0; i < n; ++i) {
          for (Eigen::Index y = 0; y < marginals[i].size(); ++y) {
            gap = std::max(gap, relative_difference(marginals[i](y), oracle.marginals[i](y)));
          }
        }
        exactness.observe(gap, 1e-9, at);
      }

      const BeamResult b = beam_search(s.model, s.x, beam);
      beam_bound.observe(b.log_partition - oracle.log_partition, 1e-12 * std::abs(oracle.log_partition), at);

      // Step-by-step forward with the public operations, checking mass at each merge.
      auto arena = std::make_shared<SuffixArena>();
      MNode start;
      start.log_forward = 0.0;
      Level prev(0, arena, {start}, {});
      for (std::size_t i = 1; i <= n; ++i) {
        Expansion e = expand_level(prev, s.model, s.x[i - 1]);
        select_active(e.nodes, beam);
        Level next = merge_level(e.nodes, e.lcs, prev, arena);
        std::vector<double> before;
        std::vector<double> after;
        for (const ENode& c : e.nodes) before.push_back(c.log_forward);
        for (const MNode& m : next.nodes()) after.push_back(m.log_forward);
        conservation.observe(log_mass_gap(log_sum_exp(before), log_sum_exp(after)), 1e-12, at);
        prev = std::move(next);
      }
    }
  }
  std::vector<CheckResult> out;
  for (Tally* t : {&levels, &exactness, &consistency, &normalization, &conservation, &beam_bound, &dp}) {
    out.push_back(t->result);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<CompareRow> run_compare(const CipherInstance& instance, const NgramLM& lm, const NgramLM* alternate,
                                    std::span<const EStepMethod> methods, const EmOptions& base) {
  std::vector<CompareRow> rows;
  for (EStepMethod m : methods) {
    EmOptions options = base;
    options.method = m;
    options.alternate_lm = alternate;
    const auto start = std::chrono::steady_clock::now();
    const EmRun run = run_em(instance, lm, options);
    CompareRow row;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    row.method = m;
    row.beam = options.beam;
    row.iterations = run.iterations;
    row.log_likelihood = run.final_log_likelihood;
    row.accuracy = run.accuracy;
    rows.push_back(row);
  }
  return rows;
}

void print_compare_table(std::ostream& out, std::span<const CompareRow> rows) {
  out << std::left << std::setw(8) << "method" << std::right << std::setw(8) << "B" << std::setw(7) << "iters"
      << std::setw(18) << "log-likelihood" << std::setw(10) << "symbol" << std::setw(10) << "token" << std::setw(12)
      << "ms" << '\n';
  for (const CompareRow& r : rows) {
    out << std::left << std::setw(8) << to_string(r.method) << std::right << std::setw(8) << r.beam << std::setw(7)
        << r.iterations << std::setw(18) << std::fixed << std::setprecision(4) << r.log_likelihood;
    if (r.accuracy) {
      out << std::setw(10) << std::setprecision(4) << r.accuracy->symbol << std::setw(10) << r.accuracy->token;
    } else {
      out << std::setw(10) << "-" << std::setw(10) << "-";
    }
    out << std::setw(12) << std::setprecision(1) << r.wall_ms << std::defaultfloat << '\n';
  }
}

}  // namespace rcm
