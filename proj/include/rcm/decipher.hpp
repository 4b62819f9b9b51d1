#ifndef RCM_DECIPHER_HPP
#define RCM_DECIPHER_HPP

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "rcm/baselines.hpp"
#include "rcm/chain_model.hpp"

namespace rcm {

// Lowercases, maps every whitespace run to one space, drops characters
// outside the whitelist, then collapses repeated spaces and trims.
struct TextNormalization {
  bool lowercase = true;
  std::string whitelist = "abcdefghijklmnopqrstuvwxyz ";
};

std::string normalize_text(std::string_view raw, const TextNormalization& options = {});
// Symbol set with one single-character symbol per whitelist entry, in whitelist order.
SymbolSet whitelist_alphabet(const TextNormalization& options = {});
std::vector<Label> encode_text(std::string_view text, const SymbolSet& alphabet);

struct CipherInstance {
  SymbolSet plain;
  SymbolSet cipher;
  std::vector<Observation> ciphertext;
  std::optional<std::vector<Observation>> gold_key;  // g(y) for every plain label
  std::optional<std::vector<Label>> gold_plaintext;

  std::size_t length() const { return ciphertext.size(); }
  void check() const;  // throws UsageError on a malformed instance

  nlohmann::json to_json() const;
  static CipherInstance from_json(const nlohmann::json& j);
};

// Samples a contiguous plaintext slice and a uniform random substitution of
// the alphabet onto itself. Fully determined by `seed`; `identity` forces
// the identity key.
CipherInstance generate_cipher(std::string_view normalized_text, const SymbolSet& alphabet, std::size_t length,
                               std::uint64_t seed, bool identity = false);

enum class EStepMethod { kRcms, kBeam, kHybrid, kExact };

std::string to_string(EStepMethod method);
EStepMethod parse_method(std::string_view text);

enum class ChannelInit { kUniform, kJitter };

std::string to_string(ChannelInit init);
ChannelInit parse_channel_init(std::string_view text);

struct EmOptions {
  std::size_t iterations = 20;
  std::size_t beam = 100;
  EStepMethod method = EStepMethod::kRcms;
  double channel_epsilon = 0.01;
  // Stop once |ll_t - ll_{t-1}| / |ll_{t-1}| falls below this; 0 disables.
  double tolerance = 0.0;
  ChannelInit init = ChannelInit::kUniform;
  std::uint64_t init_seed = 0;
  double init_jitter = 0.1;
  const NgramLM* alternate_lm = nullptr;  // second criterion for kHybrid
  std::size_t oracle_cap = kDefaultOracleCap;
};

struct EStepResult {
  double log_likelihood = kNegInf;
  Eigen::MatrixXd counts;  // expected (plain, cipher) pair counts
  std::vector<Eigen::VectorXd> marginals;
};

EStepResult run_estep(const CipherInstance& instance, const NgramLM& lm, const ChannelModel& channel,
                      const EmOptions& options);

ChannelModel initial_channel(std::size_t plain_size, std::size_t cipher_size, const EmOptions& options);

struct Accuracy {
  double symbol = 0.0;  // fraction of plain labels whose most likely cipher symbol is the gold one
  double token = 0.0;   // fraction of positions decoded to the gold plaintext
};

struct EmRun {
  EStepMethod method = EStepMethod::kRcms;
  std::size_t beam = 0;
  std::size_t iterations = 0;
  std::vector<double> log_likelihood;  // one entry per E-step
  double final_log_likelihood = 0.0;   // E-step under the final channel
  ChannelModel channel;                // after the final M-step
  std::vector<Label> decoded;          // posterior decoding under the final channel
  std::optional<Accuracy> accuracy;

  nlohmann::json to_json(const CipherInstance& instance) const;
};

EmRun run_em(const CipherInstance& instance, const NgramLM& lm, const EmOptions& options);

// Both metrics; throws UsageError when the instance carries no gold.
Accuracy mapping_accuracy(const EmRun& run, const CipherInstance& instance);

}  // namespace rcm

#endif  // RCM_DECIPHER_HPP
