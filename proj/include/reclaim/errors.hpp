#pragma once

#include <stdexcept>
#include <string>

namespace reclaim {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid argument, shape mismatch or violated precondition.
class ParameterError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double residual)
        : Error(what), residual_(residual) {}
    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

class RankError : public Error {
public:
    using Error::Error;
};

class SamplingError : public Error {
public:
    SamplingError(const std::string& what, int achieved_rank)
        : Error(what), achieved_rank_(achieved_rank) {}
    int achieved_rank() const noexcept { return achieved_rank_; }

private:
    int achieved_rank_;
};

// Some latent node is never intervened on, so channel noise cannot be separated.
class IdentifiabilityError : public Error {
public:
    using Error::Error;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class DegeneratePosteriorError : public Error {
public:
    using Error::Error;
};

class EStepError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace reclaim
