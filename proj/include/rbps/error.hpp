#pragma once

#include <stdexcept>
#include <string>

namespace rbps {

enum class Errc {
  DimensionMismatch,
  NotPSD,
  SingularCovariance,
  SingularInnovation,
  ModelInvalid,
  DegenerateWeights,
  AllWeightsZero,
  RNotPD,
  QNotPD,
  NonFiniteJacobian,
  SigmaSingular,
  RDegenerate,
  ConfigError,
  ParseError,
};

inline const char* errc_name(Errc code) {
  switch (code) {
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NotPSD: return "NotPSD";
    case Errc::SingularCovariance: return "SingularCovariance";
    case Errc::SingularInnovation: return "SingularInnovation";
    case Errc::ModelInvalid: return "ModelInvalid";
    case Errc::DegenerateWeights: return "DegenerateWeights";
    case Errc::AllWeightsZero: return "AllWeightsZero";
    case Errc::RNotPD: return "RNotPD";
    case Errc::QNotPD: return "QNotPD";
    case Errc::NonFiniteJacobian: return "NonFiniteJacobian";
    case Errc::SigmaSingular: return "SigmaSingular";
    case Errc::RDegenerate: return "RDegenerate";
    case Errc::ConfigError: return "ConfigError";
    case Errc::ParseError: return "ParseError";
  }
  return "Unknown";
}

// All library failures are reported through this type; code() identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

  // Numerical failures map to exit code 3 in the CLI, configuration/parse failures to 2.
  bool is_numerical() const noexcept {
    return code_ != Errc::ConfigError && code_ != Errc::ParseError && code_ != Errc::ModelInvalid &&
           code_ != Errc::DimensionMismatch;
  }

 private:
  Errc code_;
};

}  // namespace rbps
