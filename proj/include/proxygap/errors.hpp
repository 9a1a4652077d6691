#pragma once

#include <stdexcept>
#include <string>

namespace proxygap {

// shape-incompatible tensor op; message names the op and the shapes
struct TensorShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// a probe protocol cannot run on the given splits (e.g. empty or
// single-class informative subset); recorded by the runner, not fatal
struct ProtocolInapplicable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// training aborted on a non-finite loss
struct NonFiniteLossError : std::runtime_error {
  NonFiniteLossError(const std::string& what, int epoch_, int step_)
      : std::runtime_error(what), epoch(epoch_), step(step_) {}
  int epoch;
  int step;
};

}  // namespace proxygap
