#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "rcm/bench.hpp"
#include "rcm/chain_model.hpp"
#include "rcm/decipher.hpp"
#include "rcm/engine.hpp"
#include "rcm/errors.hpp"

using namespace rcm;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitViolation = 2;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError("'" + path + "' is not valid JSON: " + e.what());
  }
}

// Writes to `path`, or stdout when it is empty or "-".
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write '" + path + "'");
  out << text;
}

std::vector<EStepMethod> parse_methods(const std::vector<std::string>& names) {
  std::vector<EStepMethod> out;
  for (const auto& n : names) out.push_back(parse_method(n));
  return out;
}

struct LmFlags {
  std::size_t order = 2;
  std::string smoothing = "absolute-discounting";
  double discount = 0.25;
  double epsilon = 0.01;

  void add(CLI::App& app) {
    app.add_option("--order", order, "n-gram order")->check(CLI::PositiveNumber);
    app.add_option("--smoothing", smoothing, "laplace | absolute-discounting");
    app.add_option("--discount", discount, "absolute discount d");
    app.add_option("--epsilon", epsilon, "Laplace epsilon");
  }
  NgramOptions options() const { return {order, parse_smoothing(smoothing), discount, epsilon}; }
};

struct EmFlags {
  std::string method = "rcms";
  std::size_t beam = 100;
  std::size_t iterations = 20;
  double tolerance = 0.0;
  std::string init = "uniform";
  std::uint64_t init_seed = 0;
  std::size_t oracle_cap = kDefaultOracleCap;

  void add(CLI::App& app, bool with_method) {
    if (with_method) app.add_option("--method", method, "rcms | beam | hybrid | exact");
    app.add_option("--B", beam, "beam width")->check(CLI::PositiveNumber);
    app.add_option("--iterations", iterations, "EM iterations")->check(CLI::PositiveNumber);
    app.add_option("--tolerance", tolerance, "relative log-likelihood change that stops EM (0 disables)");
    app.add_option("--init", init, "uniform | jitter");
    app.add_option("--init-seed", init_seed, "seed for jittered initialization");
    app.add_option("--oracle-cap", oracle_cap, "state cap for the exact E-step");
  }
  EmOptions options() const {
    EmOptions o;
    o.method = parse_method(method);
    o.beam = beam;
    o.iterations = iterations;
    o.tolerance = tolerance;
    o.init = parse_channel_init(init);
    o.init_seed = init_seed;
    o.oracle_cap = oracle_cap;
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inference with reified context models: language models, ciphers, EM decipherment and benchmarks"};
  app.set_config("--config", "", "TOML/INI config file; command-line flags take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  // train-lm
  auto* train = app.add_subcommand("train-lm", "Fit an n-gram language model on normalized text");
  std::string train_corpus;
  std::string train_out;
  double train_holdout = 0.0;
  LmFlags train_lm;
  TextNormalization train_norm;
  train->add_option("--corpus", train_corpus, "UTF-8 text file")->required();
  train->add_option("--alphabet", train_norm.whitelist, "characters kept by normalization");
  train->add_option("--out", train_out, "output JSON (default stdout)");
  train->add_option("--holdout", train_holdout, "trailing fraction of the corpus left out of training");
  train_lm.add(*train);

  // gen-cipher
  auto* gen = app.add_subcommand("gen-cipher", "Sample a substitution-cipher instance from a corpus");
  std::string gen_corpus;
  std::string gen_out;
  std::size_t gen_length = 5000;
  std::uint64_t gen_seed = 1;
  double gen_holdout = 0.0;
  bool gen_identity = false;
  TextNormalization gen_norm;
  gen->add_option("--corpus", gen_corpus, "UTF-8 text file")->required();
  gen->add_option("--alphabet", gen_norm.whitelist, "characters kept by normalization");
  gen->add_option("--length", gen_length, "plaintext length")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "sampling seed");
  gen->add_option("--holdout", gen_holdout, "sample only from this trailing fraction of the corpus (0 = whole corpus)");
  gen->add_flag("--identity", gen_identity, "use the identity key");
  gen->add_option("--out", gen_out, "output JSON (default stdout)");

  // decipher
  auto* dec = app.add_subcommand("decipher", "Run EM on a cipher instance");
  std::string dec_instance;
  std::string dec_lm;
  std::string dec_alt_lm;
  std::string dec_out;
  std::string dec_dump;
  EmFlags dec_em;
  dec->add_option("--instance", dec_instance, "instance JSON")->required();
  dec->add_option("--lm", dec_lm, "language model JSON")->required();
  dec->add_option("--alt-lm", dec_alt_lm, "second language model for the hybrid criterion");
  dec->add_option("--out", dec_out, "output JSON (default stdout)");
  dec->add_option("--dump-trellis", dec_dump, "write the final RCMS trellis as JSON lines");
  dec_em.add(*dec, true);

  // bench
  auto* bench = app.add_subcommand("bench", "Sweep B x method x seed and write one CSV row per cell");
  ExperimentConfig cfg;
  std::vector<std::string> bench_methods{"rcms", "beam"};
  LmFlags bench_lm;
  bool no_timing = false;
  cfg.workers = default_workers();
  bench->add_option("--corpus", cfg.corpus_path, "UTF-8 text file")->required();
  bench->add_option("--alphabet", cfg.normalization.whitelist, "characters kept by normalization");
  bench->add_option("--B", cfg.beams, "beam widths")->delimiter(',');
  bench->add_option("--methods", bench_methods, "E-step methods")->delimiter(',');
  bench->add_option("--seeds", cfg.seeds, "cipher seeds")->delimiter(',');
  bench->add_option("--length", cfg.plain_length, "plaintext length")->check(CLI::PositiveNumber);
  bench->add_option("--iterations", cfg.iterations, "EM iterations")->check(CLI::PositiveNumber);
  bench->add_option("--tolerance", cfg.tolerance, "EM early-stop threshold (0 disables)");
  bench->add_option("--holdout", cfg.holdout_fraction, "held-out share of the corpus");
  bench->add_option("--oracle-cap", cfg.oracle_cap, "state cap for the exact E-step");
  bench->add_option("--workers", cfg.workers, std::string("parallel cells (default from ") + kWorkersEnvVar + ")");
  bench->add_flag("--no-timing", no_timing, "write 0 in wall_ms so output is byte-reproducible");
  bench->add_option("--out", cfg.output, "output CSV (default stdout)");
  bench_lm.add(*bench);

  // validate
  auto* val = app.add_subcommand("validate", "Run the invariant suite on synthetic instances");
  ValidationOptions vopt;
  val->add_option("--instances", vopt.instances, "number of random instances");
  val->add_option("--seed", vopt.seed, "generator seed");
  val->add_option("--max-length", vopt.max_length, "maximum sequence length")->check(CLI::PositiveNumber);
  val->add_option("--max-labels", vopt.max_labels, "maximum labels per position")->check(CLI::PositiveNumber);

  // compare
  auto* cmp = app.add_subcommand("compare", "Summary table of E-step methods on one instance");
  std::string cmp_instance;
  std::string cmp_lm;
  std::string cmp_alt_lm;
  std::vector<std::string> cmp_methods{"rcms", "beam", "hybrid"};
  EmFlags cmp_em;
  cmp->add_option("--instance", cmp_instance, "instance JSON")->required();
  cmp->add_option("--lm", cmp_lm, "language model JSON")->required();
  cmp->add_option("--alt-lm", cmp_alt_lm, "second language model for the hybrid criterion");
  cmp->add_option("--methods", cmp_methods, "E-step methods")->delimiter(',');
  cmp_em.add(*cmp, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() != 0) std::cerr << app.help();
    return e.get_exit_code() == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) {
      std::string text = normalize_text(read_file(train_corpus), train_norm);
      if (train_holdout > 0.0) text.resize(static_cast<std::size_t>(static_cast<double>(text.size()) * (1.0 - train_holdout)));
      const NgramLM lm = NgramLM::fit_text(text, whitelist_alphabet(train_norm), train_lm.options());
      emit(train_out, lm.to_json().dump(1) + "\n");
    } else if (*gen) {
      std::string text = normalize_text(read_file(gen_corpus), gen_norm);
      if (gen_holdout > 0.0) {
        text.erase(0, static_cast<std::size_t>(static_cast<double>(text.size()) * (1.0 - gen_holdout)));
      }
      const CipherInstance inst = generate_cipher(text, whitelist_alphabet(gen_norm), gen_length, gen_seed, gen_identity);
      emit(gen_out, inst.to_json().dump() + "\n");
    } else if (*dec) {
      const CipherInstance inst = CipherInstance::from_json(read_json(dec_instance));
      const NgramLM lm = NgramLM::from_json(read_json(dec_lm));
      EmOptions options = dec_em.options();
      NgramLM alt;
      if (!dec_alt_lm.empty()) {
        alt = NgramLM::from_json(read_json(dec_alt_lm));
        options.alternate_lm = &alt;
      } else if (options.method == EStepMethod::kHybrid) {
        throw UsageError("--method hybrid needs --alt-lm");
      }
      const EmRun run = run_em(inst, lm, options);
      emit(dec_out, run.to_json(inst).dump(1) + "\n");
      if (!dec_dump.empty()) {
        const CipherModel model(lm, run.channel);
        const Trellis t = run_inference(model, inst.ciphertext, EngineOptions{options.beam, false});
        std::ostringstream out;
        const LabelAlphabet names = LabelAlphabet::uniform(inst.plain, inst.length());
        dump_trellis(t, out, &names);
        emit(dec_dump, out.str());
      }
    } else if (*bench) {
      cfg.methods = parse_methods(bench_methods);
      cfg.lm = bench_lm.options();
      cfg.timing = !no_timing;
      cfg.check();
      const BenchCorpus corpus = prepare_corpus(cfg, read_file(cfg.corpus_path));
      const auto rows = run_bench(cfg, corpus);
      std::ostringstream out;
      write_bench_csv(out, rows, cfg);
      emit(cfg.output, out.str());
    } else if (*val) {
      bool ok = true;
      for (const CheckResult& r : run_validation_suite(vopt)) {
        std::cout << (r.passed ? "ok    " : "FAIL  ") << r.name << "  worst=" << r.worst;
        if (!r.passed) std::cout << "  first failure: " << r.detail;
        std::cout << '\n';
        ok = ok && r.passed;
      }
      return ok ? 0 : kExitViolation;
    } else if (*cmp) {
      const CipherInstance inst = CipherInstance::from_json(read_json(cmp_instance));
      const NgramLM lm = NgramLM::from_json(read_json(cmp_lm));
      NgramLM alt;
      const auto methods = parse_methods(cmp_methods);
      const bool needs_alt = std::find(methods.begin(), methods.end(), EStepMethod::kHybrid) != methods.end();
      if (!cmp_alt_lm.empty()) {
        alt = NgramLM::from_json(read_json(cmp_alt_lm));
      } else if (needs_alt) {
        throw UsageError("--methods includes hybrid; pass --alt-lm");
      }
      const auto rows = run_compare(inst, lm, needs_alt || !cmp_alt_lm.empty() ? &alt : nullptr, methods,
                                    cmp_em.options());
      print_compare_table(std::cout, rows);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IngestionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
