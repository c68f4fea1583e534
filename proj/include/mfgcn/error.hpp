#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mfgcn {

enum class ErrorKind {
    invalid_argument,
    configuration,     // CFL, caps, unknown config keys
    structural,        // a structural assumption on the data failed
    numerical,         // blowup, negative density, radius too small
    domain_too_small,  // mass left the truncated domain
    non_convergence,
    unsupported_mode,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return "invalid-argument";
        case ErrorKind::configuration: return "configuration";
        case ErrorKind::structural: return "structural-assumption";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::domain_too_small: return "domain-too-small";
        case ErrorKind::non_convergence: return "non-convergence";
        case ErrorKind::unsupported_mode: return "unsupported-mode";
    }
    return "unknown";
}

/// Every failure raised by the library carries the module that detected it
/// and a coarse kind the CLI maps onto exit codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string module, const std::string& message)
        : std::runtime_error(std::string(module) + ": " + message),
          kind_(kind), module_(std::move(module)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& module() const noexcept { return module_; }

private:
    ErrorKind kind_;
    std::string module_;
};

[[noreturn]] inline void fail(ErrorKind kind, std::string module, const std::string& message) {
    throw Error(kind, std::move(module), message);
}

}  // namespace mfgcn
