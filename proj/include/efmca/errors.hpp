#ifndef EFMCA_ERRORS_HPP
#define EFMCA_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace efmca {

/// Observable outside the distribution's support (e.g. y <= 0 for Gamma).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Natural or mean-value parameters outside their valid set, or a
/// structurally invalid ModelParams.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// The all-zero latent state was passed where at least one active cause is
/// required.
class DegenerateStateError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Exact enumeration requested beyond the configured latent-size guard.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

}  // namespace efmca

#endif  // EFMCA_ERRORS_HPP
