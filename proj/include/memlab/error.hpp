#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace memlab {

/// Error categories raised across the library. The serialized name of each
/// code is what the CLI prints in its machine-readable error line.
enum class Errc {
  Parse,
  Validation,
  Order,
  Io,
  Infeasible,
  NotRepeated,
  Index,
  Incomplete,
  NoData,
  LengthMismatch,
  Degenerate,
  InsufficientData,
  Singular,
  InsufficientOverlap,
  Format,
  NonFinite,
  Silence,
  Ratio,
  TooShort,
  NoOnsets,
  Range,
  Empty,
  AllMissing,
  MissingSidecar,
  NoConvergence,
  Divergence,
  FoldTooSmall,
  InconsistentFeatures,
};

constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::Parse: return "ParseError";
    case Errc::Validation: return "ValidationError";
    case Errc::Order: return "OrderError";
    case Errc::Io: return "IoError";
    case Errc::Infeasible: return "InfeasibleError";
    case Errc::NotRepeated: return "NotRepeatedError";
    case Errc::Index: return "IndexError";
    case Errc::Incomplete: return "IncompleteError";
    case Errc::NoData: return "NoDataError";
    case Errc::LengthMismatch: return "LengthMismatchError";
    case Errc::Degenerate: return "DegenerateError";
    case Errc::InsufficientData: return "InsufficientDataError";
    case Errc::Singular: return "SingularError";
    case Errc::InsufficientOverlap: return "InsufficientOverlapError";
    case Errc::Format: return "FormatError";
    case Errc::NonFinite: return "NonFiniteError";
    case Errc::Silence: return "SilenceError";
    case Errc::Ratio: return "RatioError";
    case Errc::TooShort: return "TooShortError";
    case Errc::NoOnsets: return "NoOnsetsError";
    case Errc::Range: return "RangeError";
    case Errc::Empty: return "EmptyError";
    case Errc::AllMissing: return "AllMissingError";
    case Errc::MissingSidecar: return "MissingSidecarError";
    case Errc::NoConvergence: return "NoConvergenceError";
    case Errc::Divergence: return "DivergenceError";
    case Errc::FoldTooSmall: return "FoldTooSmallError";
    case Errc::InconsistentFeatures: return "InconsistentFeaturesError";
  }
  return "Error";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, Errc code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace memlab
