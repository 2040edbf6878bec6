#pragma once

#include <stdexcept>
#include <string>

namespace sadcoeff {

// Shape or argument contract violated by the caller.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A 73-dim (expression + pose + alignment) vector was offered where the
// 70-dim motion coefficients are expected. Alignment/crop terms are not part
// of the motion representation.
class AlignmentCoefficientsRejected : public InvalidArgument {
public:
    explicit AlignmentCoefficientsRejected(const std::string& where)
        : InvalidArgument(where + ": got 73 coefficients; alignment coefficients are not accepted, "
                                  "expected 70 (expression 64 + pose 6)") {}
};

// Geometry for which a ratio or direction is undefined (zero eye width etc).
class DegenerateGeometry : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Statistic undefined for the given data (zero variance etc).
class DegenerateInput : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Audio or data too short / empty to process.
class EmptyInput : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file content (WAV header, COEF magic, config syntax).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a NaN/Inf loss.
class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad command line (unknown subcommand or stage, missing flag).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace sadcoeff
