#pragma once

#include <stdexcept>
#include <string>

namespace nabla {

// Error taxonomy shared by the library and the CLI exit-code mapping.
// Everything thrown on purpose derives from Error; anything else escaping
// a library call is a bug.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file contents (bad magic, truncated payload, bad header fields).
struct FormatError : Error {
    using Error::Error;
};

// Data violates a value contract (non-finite elements, empty mask rows).
struct ValidationError : Error {
    using Error::Error;
};

// Filesystem failures (unreadable/unwritable paths).
struct IoError : Error {
    using Error::Error;
};

// Shape, axis or grid mismatches between otherwise valid values.
struct GeometryError : Error {
    using Error::Error;
};

// User-supplied parameter outside its legal range.
struct ParamError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; carries the offending step.
struct DivergenceError : Error {
    DivergenceError(const std::string& msg, long step_index)
        : Error(msg), step(step_index) {}
    long step;
};

}  // namespace nabla
