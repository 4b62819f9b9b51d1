#include "rcm/decipher.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "rcm/engine.hpp"
#include "rcm/errors.hpp"

namespace rcm {

std::string normalize_text(std::string_view raw, const TextNormalization& options) {
  const bool keep_space = options.whitelist.find(' ') != std::string::npos;
  std::string out;
  out.reserve(raw.size());
  auto push_space = [&] {
    if (keep_space && !out.empty() && out.back() != ' ') out.push_back(' ');
  };
  for (char raw_c : raw) {
    const auto u = static_cast<unsigned char>(raw_c);
    if (std::isspace(u)) {
      push_space();
      continue;
    }
    const char c = options.lowercase ? static_cast<char>(std::tolower(u)) : raw_c;
    if (c == ' ') {
      push_space();
    } else if (options.whitelist.find(c) != std::string::npos) {
      out.push_back(c);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

SymbolSet whitelist_alphabet(const TextNormalization& options) { return SymbolSet::from_chars(options.whitelist); }

std::vector<Label> encode_text(std::string_view text, const SymbolSet& alphabet) {
  std::vector<Label> out;
  out.reserve(text.size());
  std::set<char> offenders;
  for (char c : text) {
    if (auto y = alphabet.find(std::string_view(&c, 1))) {
      out.push_back(*y);
    } else {
      offenders.insert(c);
    }
  }
  if (!offenders.empty()) {
    std::string list;
    for (char c : offenders) list += std::string(list.empty() ? "" : ", ") + "'" + std::string(1, c) + "'";
    throw IngestionError("text contains symbols outside the alphabet: " + list);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CipherInstance

void CipherInstance::check() const {
  if (plain.size() == 0 || cipher.size() == 0) throw UsageError("instance alphabets must be nonempty");
  for (Observation x : ciphertext) {
    if (x >= cipher.size()) throw UsageError("ciphertext symbol outside the cipher alphabet");
  }
  if (gold_key) {
    if (gold_key->size() != plain.size()) throw UsageError("gold key must map every plain symbol");
    std::set<Observation> seen;
    for (Observation x : *gold_key) {
      if (x >= cipher.size()) throw UsageError("gold key maps outside the cipher alphabet");
      if (!seen.insert(x).second) throw UsageError("gold key is not injective");
    }
  }
  if (gold_plaintext) {
    if (gold_plaintext->size() != ciphertext.size()) throw UsageError("gold plaintext length differs from ciphertext");
    for (Label y : *gold_plaintext) {
      if (y >= plain.size()) throw UsageError("gold plaintext symbol outside the plain alphabet");
    }
  }
}

namespace {

bool single_chars(const SymbolSet& set) {
  for (const auto& s : set.symbols()) {
    if (s.size() != 1) return false;
  }
  return true;
}

nlohmann::json encode_sequence(std::span<const std::uint32_t> seq, const SymbolSet& set) {
  if (single_chars(set)) {
    std::string s;
    for (auto v : seq) s += set.symbol(v);
    return s;
  }
  nlohmann::json arr = nlohmann::json::array();
  for (auto v : seq) arr.push_back(set.symbol(v));
  return arr;
}

std::vector<std::uint32_t> decode_sequence(const nlohmann::json& j, const SymbolSet& set) {
  std::vector<std::uint32_t> out;
  if (j.is_string()) {
    for (char c : j.get<std::string>()) out.push_back(set.index(std::string_view(&c, 1)));
  } else {
    for (const auto& s : j) out.push_back(set.index(s.get<std::string>()));
  }
  return out;
}

}  // namespace

nlohmann::json CipherInstance::to_json() const {
  nlohmann::json j;
  j["format"] = "rcm-cipher-instance";
  j["version"] = 1;
  j["plain_alphabet"] = plain.symbols();
  j["cipher_alphabet"] = cipher.symbols();
  j["ciphertext"] = encode_sequence(ciphertext, cipher);
  if (gold_key) {
    nlohmann::json key = nlohmann::json::object();
    for (std::size_t y = 0; y < gold_key->size(); ++y) {
      key[plain.symbol(static_cast<Label>(y))] = cipher.symbol((*gold_key)[y]);
    }
    j["gold_key"] = key;
  }
  if (gold_plaintext) j["gold_plaintext"] = encode_sequence(*gold_plaintext, plain);
  return j;
}

CipherInstance CipherInstance::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "rcm-cipher-instance") throw IngestionError("not an rcm-cipher-instance");
    if (j.at("version").get<int>() != 1) throw IngestionError("unsupported rcm-cipher-instance version");
    CipherInstance inst;
    inst.plain = SymbolSet(j.at("plain_alphabet").get<std::vector<std::string>>());
    inst.cipher = SymbolSet(j.at("cipher_alphabet").get<std::vector<std::string>>());
    inst.ciphertext = decode_sequence(j.at("ciphertext"), inst.cipher);
    if (j.contains("gold_key")) {
      std::vector<Observation> key(inst.plain.size(), kNone);
      for (const auto& [y, x] : j.at("gold_key").items()) {
        key[inst.plain.index(y)] = inst.cipher.index(x.get<std::string>());
      }
      if (std::find(key.begin(), key.end(), kNone) != key.end()) {
        throw IngestionError("gold key does not cover the plain alphabet");
      }
      inst.gold_key = std::move(key);
    }
    if (j.contains("gold_plaintext")) inst.gold_plaintext = decode_sequence(j.at("gold_plaintext"), inst.plain);
    inst.check();
    return inst;
  } catch (const nlohmann::json::exception& ex) {
    throw IngestionError(std::string("malformed cipher instance: ") + ex.what());
  } catch (const UsageError& ex) {
    throw IngestionError(std::string("malformed cipher instance: ") + ex.what());
  }
}

CipherInstance generate_cipher(std::string_view normalized_text, const SymbolSet& alphabet, std::size_t length,
                               std::uint64_t seed, bool identity) {
  if (length == 0) throw UsageError("plaintext length must be positive");
  const std::vector<Label> text = encode_text(normalized_text, alphabet);
  if (text.size() < length) {
    throw UsageError("corpus has " + std::to_string(text.size()) + " symbols after normalization, need " +
                     std::to_string(length));
  }
  // Raw engine draws reduced by modulo: the instance depends on the seed only,
  // never on the standard library's distributions.
  std::mt19937_64 rng(seed);
  const std::size_t start = static_cast<std::size_t>(rng() % (text.size() - length + 1));
  std::vector<Observation> key(alphabet.size());
  std::iota(key.begin(), key.end(), 0u);
  if (!identity) {
    for (std::size_t i = key.size(); i > 1; --i) {
      std::swap(key[i - 1], key[static_cast<std::size_t>(rng() % i)]);
    }
  }
  CipherInstance inst;
  inst.plain = alphabet;
  inst.cipher = alphabet;
  inst.gold_plaintext = std::vector<Label>(text.begin() + static_cast<std::ptrdiff_t>(start),
                                           text.begin() + static_cast<std::ptrdiff_t>(start + length));
  inst.ciphertext.reserve(length);
  for (Label y : *inst.gold_plaintext) inst.ciphertext.push_back(key[y]);
  inst.gold_key = std::move(key);
  return inst;
}

// ---------------------------------------------------------------------------
// EM

std::string to_string(EStepMethod method) {
  switch (method) {
    case EStepMethod::kRcms: return "rcms";
    case EStepMethod::kBeam: return "beam";
    case EStepMethod::kHybrid: return "hybrid";
    case EStepMethod::kExact: return "exact";
  }
  return "unknown";
}

EStepMethod parse_method(std::string_view text) {
  if (text == "rcms") return EStepMethod::kRcms;
  if (text == "beam") return EStepMethod::kBeam;
  if (text == "hybrid") return EStepMethod::kHybrid;
  if (text == "exact") return EStepMethod::kExact;
  throw UsageError("unknown method '" + std::string(text) + "' (expected rcms, beam, hybrid or exact)");
}

std::string to_string(ChannelInit init) { return init == ChannelInit::kUniform ? "uniform" : "jitter"; }

ChannelInit parse_channel_init(std::string_view text) {
  if (text == "uniform") return ChannelInit::kUniform;
  if (text == "jitter") return ChannelInit::kJitter;
  throw UsageError("unknown channel init '" + std::string(text) + "' (expected uniform or jitter)");
}

ChannelModel initial_channel(std::size_t plain_size, std::size_t cipher_size, const EmOptions& options) {
  if (options.init == ChannelInit::kUniform) return ChannelModel::uniform(plain_size, cipher_size);
  std::mt19937_64 rng(options.init_seed);
  Eigen::MatrixXd probs(static_cast<Eigen::Index>(plain_size), static_cast<Eigen::Index>(cipher_size));
  for (Eigen::Index y = 0; y < probs.rows(); ++y) {
    for (Eigen::Index x = 0; x < probs.cols(); ++x) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      probs(y, x) = 1.0 + options.init_jitter * u;
    }
    probs.row(y) /= probs.row(y).sum();
  }
  return ChannelModel::from_probs(std::move(probs));
}

EStepResult run_estep(const CipherInstance& instance, const NgramLM& lm, const ChannelModel& channel,
                      const EmOptions& options) {
  const CipherModel model(lm, channel);
  const auto& x = instance.ciphertext;
  EStepResult r;
  switch (options.method) {
    case EStepMethod::kRcms: {
      const Trellis t = run_inference(model, x, EngineOptions{options.beam, false});
      r.log_likelihood = log_partition(t);
      r.marginals = label_marginals(t);
      break;
    }
    case EStepMethod::kBeam: {
      const BeamResult b = beam_search(model, x, options.beam);
      r.log_likelihood = b.log_partition;
      r.marginals = b.marginals(model);
      break;
    }
    case EStepMethod::kHybrid: {
      if (options.alternate_lm == nullptr) throw UsageError("hybrid E-step needs an alternate language model");
      const CipherModel alternate(*options.alternate_lm, channel);
      const BeamResult b = hybrid_union(model, x, options.beam, alternate);
      r.log_likelihood = b.log_partition;
      r.marginals = b.marginals(model);
      break;
    }
    case EStepMethod::kExact: {
      const ExactResult e = exact_forward_backward(model, x, options.oracle_cap);
      r.log_likelihood = e.log_partition;
      r.marginals = e.marginals;
      break;
    }
  }
  r.counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(channel.plain_size()),
                                   static_cast<Eigen::Index>(channel.cipher_size()));
  for (std::size_t i = 0; i < x.size(); ++i) r.counts.col(x[i]) += r.marginals[i];
  return r;
}

EmRun run_em(const CipherInstance& instance, const NgramLM& lm, const EmOptions& options) {
  instance.check();
  if (options.iterations == 0) throw UsageError("EM needs at least one iteration");
  if (instance.ciphertext.empty()) throw UsageError("empty ciphertext");
  if (!(instance.plain == lm.alphabet())) {
    throw UsageError("language model alphabet differs from the instance plain alphabet");
  }
  if (options.method == EStepMethod::kHybrid && options.alternate_lm != nullptr &&
      !(options.alternate_lm->alphabet() == lm.alphabet())) {
    throw UsageError("alternate language model alphabet differs from the primary one");
  }

  EmRun run;
  run.method = options.method;
  run.beam = options.beam;
  ChannelModel channel = initial_channel(instance.plain.size(), instance.cipher.size(), options);
  for (std::size_t it = 1; it <= options.iterations; ++it) {
    const EStepResult e = run_estep(instance, lm, channel, options);
    if (!std::isfinite(e.log_likelihood)) {
      throw InferenceError("non-finite log-likelihood at EM iteration " + std::to_string(it));
    }
    run.log_likelihood.push_back(e.log_likelihood);
    channel = ChannelModel::from_counts(e.counts, options.channel_epsilon);
    run.iterations = it;
    if (options.tolerance > 0.0 && it > 1) {
      const double prev = run.log_likelihood[it - 2];
      if (std::abs(e.log_likelihood - prev) < options.tolerance * std::abs(prev)) break;
    }
  }
  run.channel = channel;

  const EStepResult final_pass = run_estep(instance, lm, run.channel, options);
  run.final_log_likelihood = final_pass.log_likelihood;
  for (const Eigen::VectorXd& m : final_pass.marginals) {
    Eigen::Index best = 0;
    m.maxCoeff(&best);
    run.decoded.push_back(static_cast<Label>(best));
  }
  if (instance.gold_key && instance.gold_plaintext) run.accuracy = mapping_accuracy(run, instance);
  return run;
}

Accuracy mapping_accuracy(const EmRun& run, const CipherInstance& instance) {
  if (!instance.gold_key || !instance.gold_plaintext) throw UsageError("mapping accuracy needs gold key and plaintext");
  if (run.channel.plain_size() != instance.plain.size()) throw UsageError("channel does not match the instance");
  Accuracy acc;
  std::size_t hits = 0;
  for (std::size_t y = 0; y < instance.plain.size(); ++y) {
    if (run.channel.best_cipher(static_cast<Label>(y)) == (*instance.gold_key)[y]) ++hits;
  }
  acc.symbol = static_cast<double>(hits) / static_cast<double>(instance.plain.size());
  const auto& gold = *instance.gold_plaintext;
  if (run.decoded.size() != gold.size()) throw UsageError("decoded plaintext length differs from gold");
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) tokens += run.decoded[i] == gold[i] ? 1 : 0;
  acc.token = gold.empty() ? 0.0 : static_cast<double>(tokens) / static_cast<double>(gold.size());
  return acc;
}

nlohmann::json EmRun::to_json(const CipherInstance& instance) const {
  nlohmann::json j;
  j["format"] = "rcm-em-run";
  j["version"] = 1;
  j["method"] = to_string(method);
  j["beam"] = beam;
  j["iterations"] = iterations;
  j["log_likelihood"] = log_likelihood;
  j["final_log_likelihood"] = final_log_likelihood;
  nlohmann::json probs = nlohmann::json::array();
  for (Eigen::Index y = 0; y < channel.probs().rows(); ++y) {
    nlohmann::json r = nlohmann::json::array();
    for (Eigen::Index x = 0; x < channel.probs().cols(); ++x) r.push_back(channel.probs()(y, x));
    probs.push_back(r);
  }
  j["channel"] = {{"plain", instance.plain.symbols()}, {"cipher", instance.cipher.symbols()}, {"probs", probs}};
  nlohmann::json key = nlohmann::json::object();
  for (std::size_t y = 0; y < instance.plain.size(); ++y) {
    key[instance.plain.symbol(static_cast<Label>(y))] = instance.cipher.symbol(channel.best_cipher(static_cast<Label>(y)));
  }
  j["learned_key"] = key;
  j["decoded"] = encode_sequence(decoded, instance.plain);
  if (accuracy) {
    j["accuracy"] = {{"symbol", accuracy->symbol}, {"token", accuracy->token}};
  }
  return j;
}

}  // namespace rcm
