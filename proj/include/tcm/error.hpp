#ifndef TCM_ERROR_HPP
#define TCM_ERROR_HPP

#include <stdexcept>
#include <string>

namespace tcm {

/// Bad input: wrong dimensions, invalid parameters, unreadable or malformed
/// files. The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure while running on valid input (I/O while writing, numerical
/// breakdown). The CLI maps this to exit code 2.
class RuntimeFailure : public std::runtime_error {
public:
    explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}

#endif
