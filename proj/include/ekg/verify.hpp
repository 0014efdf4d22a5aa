#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ekg/rng.hpp"
#include "ekg/tensor.hpp"

namespace ekg {

struct VerifyCase {
  std::string name;
  bool pass = false;
  double max_err = 0.0;  // per-case max abs diff / normalized error
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<VerifyCase> cases;
  bool passed() const {
    for (const auto& c : cases)
      if (!c.pass) return false;
    return !cases.empty();
  }
};

// Central-difference gradient check against an analytic gradient.
// Probes up to max_probes elements (all when the tensor is small); an
// element passes when |a - n| <= atol + rtol * max(|a|, |n|). max_err
// reports max |a - n| / (atol + max(|a|, |n|)), so pass <=> max_err <= rtol.
struct GradCheckReport {
  double max_err = 0.0;
  i64 probes = 0;
  bool pass = false;
};

GradCheckReport check_gradient(const std::function<double()>& loss_fn,
                               Tensor<double>& param,
                               const std::vector<double>& analytic, double h, double rtol,
                               double atol, i64 max_probes, SplitRng& rng);

// Verification suites, also reachable through the CLI `verify` command.
SuiteResult verify_conv_oracle(std::uint64_t seed);
SuiteResult verify_dynamic_oracle(std::uint64_t seed);
SuiteResult verify_grad_check(std::uint64_t seed);
SuiteResult verify_softmax_properties(std::uint64_t seed);
SuiteResult verify_metrics_oracle(std::uint64_t seed);
SuiteResult verify_split_properties(std::uint64_t seed);

// Names: conv-oracle, dynamic-oracle, grad-check, softmax-properties,
// metrics-oracle, split-properties. Empty selection runs everything.
std::vector<SuiteResult> run_verify(const std::vector<std::string>& suites,
                                    std::uint64_t seed);
std::string format_verify_table(const std::vector<SuiteResult>& results);
bool all_passed(const std::vector<SuiteResult>& results);

}  // namespace ekg
