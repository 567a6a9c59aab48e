#pragma once

#include <stdexcept>
#include <string>

namespace flowrecon {

/// Base of every error raised by the library. `kind()` is a stable short
/// identifier used in diagnostics and CLI exit-code mapping.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }
  /// Numerical failures map to exit code 3.
  virtual bool numerical() const noexcept { return false; }

 private:
  std::string kind_;
};

#define FLOWRECON_DEFINE_ERROR(Name, IsNumerical)                      \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name, what) {}     \
    bool numerical() const noexcept override { return IsNumerical; }   \
  };

FLOWRECON_DEFINE_ERROR(ConfigError, false)
FLOWRECON_DEFINE_ERROR(UsageError, false)
FLOWRECON_DEFINE_ERROR(IOError, false)
FLOWRECON_DEFINE_ERROR(DomainError, false)
FLOWRECON_DEFINE_ERROR(TagMismatch, false)
FLOWRECON_DEFINE_ERROR(OutOfRange, false)
FLOWRECON_DEFINE_ERROR(EmptyCell, false)
FLOWRECON_DEFINE_ERROR(StabilityError, true)
FLOWRECON_DEFINE_ERROR(LinSolveError, true)
FLOWRECON_DEFINE_ERROR(BasisNotOrthonormal, true)
FLOWRECON_DEFINE_ERROR(RankDeficient, true)
FLOWRECON_DEFINE_ERROR(IllConditioned, true)
FLOWRECON_DEFINE_ERROR(SolverFail, true)
FLOWRECON_DEFINE_ERROR(ZeroBeta, true)
FLOWRECON_DEFINE_ERROR(SingularM, true)
FLOWRECON_DEFINE_ERROR(SingularF, true)
FLOWRECON_DEFINE_ERROR(NullspaceError, true)

#undef FLOWRECON_DEFINE_ERROR

}  // namespace flowrecon
