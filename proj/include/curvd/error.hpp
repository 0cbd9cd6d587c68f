#ifndef CURVD_ERROR_HPP
#define CURVD_ERROR_HPP

#include <stdexcept>
#include <string>

namespace curvd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Caller-side mistakes: bad flags, bad files, bad shapes. The CLI maps these
// to exit status 1.
class ConfigError : public Error { using Error::Error; };
class ShapeError : public ConfigError { using ConfigError::ConfigError; };
class LabelError : public ConfigError { using ConfigError::ConfigError; };
class FormatError : public ConfigError { using ConfigError::ConfigError; };
class IoError : public ConfigError { using ConfigError::ConfigError; };
class ConsistencyError : public ConfigError { using ConfigError::ConfigError; };
class AlignmentError : public ConfigError { using ConfigError::ConfigError; };
class UnsupportedError : public ConfigError { using ConfigError::ConfigError; };

// Failures discovered while computing. Exit status 2.
class LedgerError : public Error { using Error::Error; };
class MetricError : public Error { using Error::Error; };
class DivergenceError : public Error { using Error::Error; };

} // namespace curvd

#endif // CURVD_ERROR_HPP
