#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace bidrl {

/// Seed mixing used to derive independent streams (per episode, per worker).
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Random source with platform-stable samplers.
///
/// The standard library's distribution objects are implementation-defined, so
/// datasets produced on different toolchains would not match. Every sampler
/// here is written directly against the 64-bit Mersenne Twister output, whose
/// sequence is fixed by the standard.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }
    double lognormal(double mu, double sigma);
    bool bernoulli(double p) { return uniform() < p; }
    std::uint64_t poisson(double lambda);

    /// Text round trip of the full engine state (for checkpoints).
    std::string serialize() const;
    void deserialize(const std::string& text);

    bool operator==(const Rng& other) const {
        return engine_ == other.engine_ && has_spare_ == other.has_spare_ && spare_ == other.spare_;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace bidrl
