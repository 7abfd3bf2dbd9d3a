#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace msmil {

/// xoshiro256** generator keyed by (seed, stream id).
///
/// The state is filled from a splitmix64 sequence started at
/// `splitmix(seed) ^ splitmix(stream + 0x632be59bd9b4e019)`, so the integer
/// output is identical on every platform. Floating draws take the top 53 bits
/// of one 64-bit output. Derived draws (normal, gamma, beta) rely on libm and
/// can differ in the last ulp across platforms.
///
/// Single owner: not safe to share between threads.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    std::uint64_t next_u64();
    /// Uniform on [0, 1).
    double uniform();
    /// Uniform on the open interval (0, 1).
    double uniform_open();
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);
    /// Standard normal (Marsaglia polar method).
    double normal();
    /// Gamma(shape, 1) via Marsaglia-Tsang; shapes below 1 use the
    /// U^(1/shape) boost. Returned in log space to survive tiny shapes.
    double log_gamma_draw(double shape);
    double gamma(double shape);

    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(uniform_int(i));
            std::swap(items[i - 1], items[j]);
        }
    }
    template <typename T>
    void shuffle(std::vector<T>& items) { shuffle(std::span<T>(items)); }

    /// Child stream derived from this stream's key; does not advance `this`.
    RngStream fork(std::uint64_t child) const;

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::array<std::uint64_t, 4> state_{};
    std::optional<double> spare_normal_;
};

/// Beta(a, b) as X / (X + Y) with X ~ Gamma(a), Y ~ Gamma(b), clamped to (0, 1).
/// Throws ValueError for non-positive parameters.
double sample_beta(RngStream& rng, double a, double b);

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace msmil
