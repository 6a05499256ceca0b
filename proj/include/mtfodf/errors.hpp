#ifndef MTFODF_ERRORS_HPP
#define MTFODF_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mtfodf {

// Error categories map 1:1 onto the CLI exit codes (2/3/4).
class Error : public std::runtime_error {
public:
  enum class Kind { config, format, numeric };

  Error(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

  const char* category() const {
    switch (kind_) {
      case Kind::config: return "config";
      case Kind::format: return "format";
      case Kind::numeric: return "numeric";
    }
    return "unknown";
  }

private:
  Kind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(Kind::config, msg) {}
};

// Malformed input data: bad file contents, inconsistent tables, shape mismatches.
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(Kind::format, msg) {}
};

// Singular systems, non-finite values, failed numerical contracts.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(Kind::numeric, msg) {}
};

} // namespace mtfodf

#endif
