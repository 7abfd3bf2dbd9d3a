#include "msmil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msmil/error.hpp"

namespace msmil {

namespace {

constexpr std::uint64_t kStreamSalt = 0x632be59bd9b4e019ULL;

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    std::uint64_t key = splitmix64(seed) ^ splitmix64(stream + kStreamSalt);
    for (auto& word : state_) {
        key += 0x9e3779b97f4a7c15ULL;
        word = splitmix64(key);
    }
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_int(std::uint64_t n) {
    if (n == 0) throw ValueError("uniform_int: empty range");
    // Rejection on the low end removes modulo bias.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

double RngStream::normal() {
    if (spare_normal_) {
        const double v = *spare_normal_;
        spare_normal_.reset();
        return v;
    }
    for (;;) {
        const double u = 2.0 * uniform() - 1.0;
        const double v = 2.0 * uniform() - 1.0;
        const double s = u * u + v * v;
        if (s <= 0.0 || s >= 1.0) continue;
        const double factor = std::sqrt(-2.0 * std::log(s) / s);
        spare_normal_ = v * factor;
        return u * factor;
    }
}

double RngStream::log_gamma_draw(double shape) {
    if (!(shape > 0.0) || !std::isfinite(shape)) throw ValueError("gamma: shape must be positive");
    double boost = 0.0;
    if (shape < 1.0) {
        boost = std::log(uniform_open()) / shape;
        shape += 1.0;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform_open();
        if (u < 1.0 - 0.0331 * x * x * x * x ||
            std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
            return std::log(d * v) + boost;
        }
    }
}

double RngStream::gamma(double shape) { return std::exp(log_gamma_draw(shape)); }

RngStream RngStream::fork(std::uint64_t child) const {
    return RngStream(splitmix64(seed_ ^ splitmix64(stream_)), child);
}

double sample_beta(RngStream& rng, double a, double b) {
    if (!(a > 0.0) || !(b > 0.0)) throw ValueError("sample_beta: parameters must be positive");
    const double log_x = rng.log_gamma_draw(a);
    const double log_y = rng.log_gamma_draw(b);
    // x / (x + y) = sigmoid(log x - log y)
    const double diff = log_x - log_y;
    double value = diff >= 0.0 ? 1.0 / (1.0 + std::exp(-diff))
                               : std::exp(diff) / (1.0 + std::exp(diff));
    constexpr double kLow = std::numeric_limits<double>::min();
    const double kHigh = std::nextafter(1.0, 0.0);
    return std::clamp(value, kLow, kHigh);
}

}  // namespace msmil
