#pragma once

#include <stdexcept>
#include <string>

namespace mocap {

// Malformed input file (bad JSON, missing keys, wrong array sizes).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid input that violates a domain invariant. Messages name
// the offending field and frame where applicable.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// GJK/EPA failed to converge within the iteration cap. Carries the best
// bound reached so callers can decide whether it is usable.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& msg, double best_bound)
        : std::runtime_error(msg), best_bound(best_bound) {}
    double best_bound;
};

}  // namespace mocap
