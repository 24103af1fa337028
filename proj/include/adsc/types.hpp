#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace adsc {

using Scalar = double;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error taxonomy. Everything derives from Error so callers can catch the
// whole family; the CLI maps InvalidArgument/ConfigError/InfeasibleBudget/
// ScheduleDegenerate to exit code 2 and the rest to 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidArgument : Error {
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// a prune stage would leave zero vision tokens
struct ScheduleDegenerate : Error {
    explicit ScheduleDegenerate(const std::string& msg) : Error(msg) {}
};

// requested token budget cannot be met by any valid ratio
struct InfeasibleBudget : Error {
    explicit InfeasibleBudget(const std::string& msg) : Error(msg) {}
};

// non-finite values or numeric divergence
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// operation called out of order (e.g. backward without a recorded forward)
struct StateError : Error {
    explicit StateError(const std::string& msg) : Error(msg) {}
};

// required captured data is absent (e.g. attention ranking without capture)
struct UnavailableError : Error {
    explicit UnavailableError(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace adsc
