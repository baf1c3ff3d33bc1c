#pragma once

#include <stdexcept>
#include <string>

namespace cal {

// Every error carries the process exit code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDivergence = 4;
inline constexpr int kExitDiagnosticFail = 5;

#define CAL_DEFINE_ERROR(Name, code)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name ": " + what, code) {} \
  };

CAL_DEFINE_ERROR(ConfigError, kExitConfig)
CAL_DEFINE_ERROR(NormalizationError, kExitData)
CAL_DEFINE_ERROR(DimensionError, kExitData)
CAL_DEFINE_ERROR(ShapeError, kExitData)
CAL_DEFINE_ERROR(NumericsError, kExitData)
CAL_DEFINE_ERROR(DataError, kExitData)
CAL_DEFINE_ERROR(ParseError, kExitData)
CAL_DEFINE_ERROR(SchemaError, kExitData)
CAL_DEFINE_ERROR(EmptyDataError, kExitData)
CAL_DEFINE_ERROR(MappingError, kExitData)
CAL_DEFINE_ERROR(FormatError, kExitData)
CAL_DEFINE_ERROR(SamplingError, kExitData)
CAL_DEFINE_ERROR(SplitError, kExitData)
CAL_DEFINE_ERROR(IoError, kExitData)

#undef CAL_DEFINE_ERROR

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string last_good_checkpoint)
      : Error("DivergenceError: " + what, kExitDivergence),
        last_good_checkpoint_(std::move(last_good_checkpoint)) {}
  const std::string& last_good_checkpoint() const noexcept { return last_good_checkpoint_; }

 private:
  std::string last_good_checkpoint_;
};

}  // namespace cal
