#pragma once

#include <stdexcept>
#include <string>

namespace cmrr {

// Bad arguments or a violated precondition. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Filesystem failures. The CLI maps this to exit code 2.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed file contents; treated as an I/O failure by the CLI.
class ParseError : public IoError {
public:
    using IoError::IoError;
};

}  // namespace cmrr
