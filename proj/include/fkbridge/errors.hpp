#pragma once

#include <stdexcept>

namespace fkbridge {

/// A potential is +inf somewhere the requested numerical route cannot handle
/// (interior grid nodes for PDE assembly, endpoints for Monte Carlo).
class SingularPotentialError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Marginal density vanishes in the interior of its grid. Nodal data must be
/// split into components before it reaches the bridge solver.
class NodalDataError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Kernel and densities are numerically inconsistent (zero denominator,
/// transition rows that do not sum to one, ...).
class IncompatibleDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fkbridge
