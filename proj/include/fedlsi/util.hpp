#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedlsi {

// splitmix64 finalizer; used to derive independent seed streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ tag);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t tag2) {
    return mix_seed(mix_seed(seed, tag), tag2);
}

// Seed-stream tags. Each logical consumer of randomness gets its own stream so
// that enabling or disabling one feature never perturbs the draws of another.
namespace seed_tag {
inline constexpr std::uint64_t model_init = 0x11;
inline constexpr std::uint64_t batch = 0x22;
inline constexpr std::uint64_t di_targets = 0x33;
inline constexpr std::uint64_t synth = 0x44;
inline constexpr std::uint64_t gan = 0x55;
inline constexpr std::uint64_t data = 0x66;
inline constexpr std::uint64_t split = 0x77;
inline constexpr std::uint64_t client = 0x88;
}  // namespace seed_tag

// mt19937_64 with hand-rolled distributions so draws are identical across
// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, spare value cached
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    // uniform integer in [0, n)
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) {
            throw std::invalid_argument("uniform_index: n must be > 0");
        }
        return static_cast<std::size_t>(
            (static_cast<unsigned __int128>(engine_()) * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Locale-independent fixed-point formatting (CSV output).
inline std::string format_fixed(double v, int precision) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, precision);
    if (res.ec != std::errc()) {
        throw std::runtime_error("format_fixed: value does not fit");
    }
    return std::string(buf, res.ptr);
}

// Shortest round-trip representation (data CSV output).
inline std::string format_shortest(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc()) {
        throw std::runtime_error("format_shortest: value does not fit");
    }
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("not a number: '" + s + "'");
    }
    return v;
}

inline long long parse_int(const std::string& s) {
    long long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw std::runtime_error("not an integer: '" + s + "'");
    }
    return v;
}

}  // namespace fedlsi
