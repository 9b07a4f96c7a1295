#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "table.hpp"

namespace tiered {

/// A linear-model feature map written as product terms over the variable
/// names of an ObservationTable plus "x" (stratum code) and "a" (exposure),
/// e.g. {"1", "w1", "x", "a", "a*w1", "a*w2*x"}. "1" is the intercept.
using BasisSpec = std::vector<std::string>;

inline BasisSpec default_propensity_basis() { return {"1", "w1", "x"}; }

/// The outcome mean of the simulation model is exactly linear in these terms.
inline BasisSpec saturated_outcome_basis() {
  return {"1", "w1", "x", "a", "a*w1", "a*x", "a*w2", "a*w2*w1", "a*w2*x"};
}

class CompiledBasis {
 public:
  CompiledBasis() = default;

  CompiledBasis(const BasisSpec& spec, const ObservationTable& layout) : spec_(spec) {
    if (spec.empty()) throw ConfigError("basis has no terms");
    for (const auto& term : spec) {
      std::vector<Factor> factors;
      std::size_t start = 0;
      while (start <= term.size()) {
        std::size_t stop = term.find('*', start);
        if (stop == std::string::npos) stop = term.size();
        const std::string name = term.substr(start, stop - start);
        if (name == "1") {
          // intercept factor, contributes nothing
        } else if (name == "x") {
          factors.push_back({Kind::stratum, 0});
        } else if (name == "a") {
          factors.push_back({Kind::exposure, 0});
          uses_exposure_ = true;
        } else if (auto j = layout.covariate_index(name)) {
          factors.push_back({Kind::covariate, *j});
        } else {
          throw ConfigError("basis term '" + term + "' references unknown variable '" + name + "'");
        }
        start = stop + 1;
      }
      terms_.push_back(std::move(factors));
    }
  }

  std::size_t size() const { return terms_.size(); }
  const BasisSpec& spec() const { return spec_; }
  bool uses_exposure() const { return uses_exposure_; }

  /// Fills `out` with the features of row i, evaluated at exposure `a`.
  void row(const ObservationTable& t, std::size_t i, int a, std::span<double> out) const {
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      double v = 1.0;
      for (const auto& f : terms_[k]) {
        switch (f.kind) {
          case Kind::covariate: v *= t.cov(i, f.index); break;
          case Kind::stratum: v *= static_cast<double>(t.x[i]); break;
          case Kind::exposure: v *= static_cast<double>(a); break;
        }
      }
      out[k] = v;
    }
  }

  /// Linear predictor beta' f(row i, a) without materialising the row.
  template <typename Coef>
  double dot(const ObservationTable& t, std::size_t i, int a, const Coef& beta) const {
    double s = 0.0;
    for (std::size_t k = 0; k < terms_.size(); ++k) {
      double v = beta[k];
      for (const auto& f : terms_[k]) {
        switch (f.kind) {
          case Kind::covariate: v *= t.cov(i, f.index); break;
          case Kind::stratum: v *= static_cast<double>(t.x[i]); break;
          case Kind::exposure: v *= static_cast<double>(a); break;
        }
      }
      s += v;
    }
    return s;
  }

 private:
  enum class Kind { covariate, stratum, exposure };
  struct Factor {
    Kind kind;
    std::size_t index;
  };
  BasisSpec spec_;
  std::vector<std::vector<Factor>> terms_;
  bool uses_exposure_ = false;
};

}  // namespace tiered
