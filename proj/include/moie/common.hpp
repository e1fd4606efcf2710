#pragma once

#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

namespace moie {

// Contract violations: caller passed something that breaks a documented pre.
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Bad user-supplied input (files, configs, empty sets).
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Non-finite values, division guards, failed numeric checks.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing state (e.g. backward without a recorded forward).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

// A pipeline stage cannot proceed (no usable concepts, selector collapse...).
struct PipelineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed data files.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Silent = 3 };

Level& threshold();

void emit(Level lvl, const std::string& msg);

inline void info(const std::string& msg) { emit(Level::Info, msg); }
inline void warn(const std::string& msg) { emit(Level::Warn, msg); }

}  // namespace log

// splitmix64; used to derive independent stream seeds from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct Rng {
    std::mt19937_64 gen;

    explicit Rng(std::uint64_t seed) : gen(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(gen);
    }
    double normal(double mean = 0.0, double sd = 1.0) {
        std::normal_distribution<double> d(mean, sd);
        return d(gen);
    }
    bool bernoulli(double p) {
        std::bernoulli_distribution d(p);
        return d(gen);
    }
    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(gen);
    }
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            std::uniform_int_distribution<std::size_t> d(0, i - 1);
            std::swap(p[i - 1], p[d(gen)]);
        }
        return p;
    }
};

}  // namespace moie
