#ifndef RCM_ERRORS_HPP
#define RCM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace rcm {

// Caller violated a precondition (bad index, wrong call order, oversized
// oracle request, malformed input).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Numerical failure during inference, e.g. a model produced a non-finite
// log-weight.
class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corpus or file contents could not be ingested.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Internal invariant breach; indicates a bug in this library.
class EngineBug : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace rcm

#endif  // RCM_ERRORS_HPP
