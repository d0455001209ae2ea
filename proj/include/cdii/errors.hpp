#pragma once

#include <stdexcept>
#include <string>

namespace cdii {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// field_core
class OverlapError : public Error { using Error::Error; };
class DisconnectedError : public Error { using Error::Error; };
class EmptyComponentError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };

// forward_solver
class SingularSystemError : public Error { using Error::Error; };
class NoConvergenceError : public Error { using Error::Error; };
class InvalidProblemError : public Error { using Error::Error; };

// data_synthesis
class ModeMismatchError : public Error { using Error::Error; };
class InconsistentGeometryError : public Error { using Error::Error; };

// geometry_verify
class EmptyLevelSetError : public Error { using Error::Error; };
class DegenerateFieldError : public Error { using Error::Error; };
class TraceMismatchError : public Error { using Error::Error; };
class NoSeedError : public Error { using Error::Error; };
class StallError : public Error { using Error::Error; };

// cli
class UsageError : public Error { using Error::Error; };

}  // namespace cdii
