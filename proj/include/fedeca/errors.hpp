#pragma once
#include <stdexcept>
#include <string>

namespace fedeca {

// Exit-code contract shared by the CLI and the daemons:
// 0 ok, 1 usage, 2 data, 3 convergence, 4 protocol.
enum class ExitCode : int {
    ok = 0,
    usage = 1,
    data = 2,
    convergence = 3,
    protocol = 4,
};

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent inputs: bad CSV rows, non-finite values,
// dimension mismatches across centers.
struct data_error : error {
    using error::error;
};

// Solver failures: singular Hessians, separable covariates, divergence.
struct convergence_error : error {
    using error::error;
};

// Transport and codec failures: truncated frames, version or schema
// mismatches, center timeouts.
struct protocol_error : error {
    using error::error;
};

inline ExitCode exit_code_for(const std::exception& e) {
    if (dynamic_cast<const protocol_error*>(&e)) return ExitCode::protocol;
    if (dynamic_cast<const convergence_error*>(&e)) return ExitCode::convergence;
    if (dynamic_cast<const data_error*>(&e)) return ExitCode::data;
    return ExitCode::data;
}

} // namespace fedeca
