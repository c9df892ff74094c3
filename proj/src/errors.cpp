#include "tobitiv/errors.hpp"

namespace tobitiv {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::UnsupportedOrder: return "unsupported_order";
    case ErrorKind::Convergence: return "convergence";
    case ErrorKind::InsufficientAcceptance: return "insufficient_acceptance";
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::UnsupportedMode: return "unsupported_mode";
    case ErrorKind::EmptySystem: return "empty_system";
    case ErrorKind::Identification: return "identification";
    case ErrorKind::InsufficientObservations: return "insufficient_observations";
    case ErrorKind::Bracket: return "bracket";
    case ErrorKind::NotApplicable: return "not_applicable";
    case ErrorKind::Io: return "io";
    case ErrorKind::TooManyFailures: return "too_many_failures";
  }
  return "unknown";
}

}  // namespace tobitiv
