#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace penning {

// Precondition violations use std::invalid_argument. The types below carry
// conditions callers are expected to handle explicitly.

/// Trap configuration with wc^2 < 2 wz^2: no bound radial motion.
class UnstableTrapError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A linear inversion whose design matrix has no unique solution.
class RankDeficientError : public std::runtime_error {
 public:
  RankDeficientError(const std::string& what, std::size_t rank, std::size_t unknowns)
      : std::runtime_error(what), rank_(rank), unknowns_(unknowns) {}
  std::size_t rank() const noexcept { return rank_; }
  std::size_t unknowns() const noexcept { return unknowns_; }

 private:
  std::size_t rank_;
  std::size_t unknowns_;
};

/// A fit whose data cannot determine the requested parameters (e.g. a flat scan).
class NotIdentifiableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport waveform that would ask a filtered electrode to slew faster than its budget.
class FilterBudgetError : public std::runtime_error {
 public:
  FilterBudgetError(const std::string& what, std::string electrode, std::size_t sample)
      : std::runtime_error(what), electrode_(std::move(electrode)), sample_(sample) {}
  const std::string& electrode() const noexcept { return electrode_; }
  std::size_t sample() const noexcept { return sample_; }

 private:
  std::string electrode_;
  std::size_t sample_;
};

/// Input file that does not follow its schema. Carries per-row diagnostics.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace penning
