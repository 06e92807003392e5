#pragma once

#include <stdexcept>
#include <string>

namespace heartbert {

// Error taxonomy shared by the library and the CLI. The CLI maps kinds to
// process exit codes: Config -> 2, MissingArtifact -> 3, everything
// data-shaped -> 4, Numeric -> 5.
enum class ErrorKind {
    Config,           // bad configuration file or option
    MissingArtifact,  // a required input artifact does not exist
    Format,           // malformed file contents
    Parameter,        // invalid argument to an operation
    Data,             // input data violates a contract (empty, NaN, out of range)
    Symbol,           // character/token/id outside the known alphabet or vocab
    Numeric,          // numerical failure (NaN/divergence)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

    int exit_code() const {
        switch (kind_) {
            case ErrorKind::Config: return 2;
            case ErrorKind::MissingArtifact: return 3;
            case ErrorKind::Numeric: return 5;
            default: return 4;
        }
    }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

}  // namespace heartbert
