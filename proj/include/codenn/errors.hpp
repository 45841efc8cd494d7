#pragma once

#include <stdexcept>
#include <string>

namespace codenn {

/// Malformed input files or inconsistent network descriptions.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Tensor/layer dimension mismatches detected at run time.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A design that cannot fit the selected platform budget.
struct InfeasibleError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace codenn
