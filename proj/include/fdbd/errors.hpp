#pragma once

#include <stdexcept>
#include <string>

namespace fdbd {

/// Base class for all recoverable errors raised by the library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- array file I/O ---
struct IoError : Error {
    using Error::Error;
};
struct MagicMismatch : Error {
    using Error::Error;
};
struct UnsupportedDtype : Error {
    using Error::Error;
};
struct UnsupportedLayout : Error {
    using Error::Error;
};
struct TruncatedPayload : Error {
    using Error::Error;
};
struct ValidationError : Error {
    using Error::Error;
};

// --- manifest ---
struct MissingRole : Error {
    using Error::Error;
};
struct DimensionMismatch : Error {
    using Error::Error;
};

// --- geometry ---
struct NoConvergence : Error {
    using Error::Error;
};

// --- scoring ---
struct MissingClass : Error {
    using Error::Error;
};
struct DegenerateCovariance : Error {
    using Error::Error;
};
struct ZeroDeviation : Error {
    using Error::Error;
};
struct BadK : Error {
    using Error::Error;
};

// --- metrics ---
struct EmptyInput : Error {
    using Error::Error;
};

// --- synthetic ---
struct BadDims : Error {
    using Error::Error;
};
struct InsufficientRegionMass : Error {
    using Error::Error;
};

// --- cli ---
struct UsageError : Error {
    using Error::Error;
};
struct ColumnMismatch : Error {
    using Error::Error;
};

}  // namespace fdbd
