#pragma once

#include <stdexcept>
#include <string>

namespace clonelab {

// Invalid or infeasible configuration (bad ramps, impossible bounds, ...).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// HTTP / connection failure talking to a remote inference server.
// Episodes aborted by this are not scored.
struct TransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller violated a precondition (wrong rollout kind, unfinished trajectory, ...).
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

} // namespace clonelab
