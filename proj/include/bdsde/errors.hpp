#pragma once

#include <stdexcept>
#include <string>

namespace bdsde {

enum class ErrorKind {
    invalid_argument,
    unsupported_backend,
    step_size,
    convergence,
    regression,
    consistency,
    resolution,
    range,
    singular_flow,
    stability,
    invalid_barrier,
    unsupported_oracle,
    verification,
    config,
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::invalid_argument: return "invalid-argument";
        case ErrorKind::unsupported_backend: return "unsupported-backend";
        case ErrorKind::step_size: return "step-size";
        case ErrorKind::convergence: return "convergence";
        case ErrorKind::regression: return "regression";
        case ErrorKind::consistency: return "consistency";
        case ErrorKind::resolution: return "resolution";
        case ErrorKind::range: return "range";
        case ErrorKind::singular_flow: return "singular-flow";
        case ErrorKind::stability: return "stability";
        case ErrorKind::invalid_barrier: return "invalid-barrier";
        case ErrorKind::unsupported_oracle: return "unsupported-oracle";
        case ErrorKind::verification: return "verification";
        case ErrorKind::config: return "config";
    }
    return "unknown";
}

// `detail` carries a numeric payload where one is meaningful: the condition
// number for regression errors, a suggested dt for step-size/stability errors.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg, double detail = 0.0)
        : std::runtime_error(std::string(to_string(kind)) + ": " + msg), kind_(kind), detail_(detail) {}

    ErrorKind kind() const noexcept { return kind_; }
    double detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    double detail_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg, double detail = 0.0) {
    throw Error(kind, msg, detail);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(ErrorKind::invalid_argument, msg);
}

}  // namespace bdsde
