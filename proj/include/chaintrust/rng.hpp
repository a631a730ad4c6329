#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string_view>

namespace chaintrust {

// Counter-based deterministic randomness. Every draw is a pure function of
// (seed, stream name, lane, counter), so adding a consumer never perturbs
// another stream and identical seeds reproduce bit-identical runs on any
// platform. Distributions are hand-rolled on top of splitmix64 because the
// standard library's are implementation-defined.

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t bits_of(double x) {
    std::uint64_t u = 0;
    std::memcpy(&u, &x, sizeof(u));
    return u;
}

class RngStream {
  public:
    RngStream(std::uint64_t seed, std::string_view stream, std::uint64_t lane = 0,
              std::uint64_t counter = 0)
        : state_(splitmix64(seed ^ splitmix64(fnv1a(stream)) ^
                            splitmix64(lane * 0x9e3779b97f4a7c15ULL + 1) ^
                            splitmix64(counter + 0x632be59bd9b4e019ULL))) {}

    std::uint64_t next() {
        state_ = splitmix64(state_);
        return state_;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    double exponential(double mean) {
        double u = uniform();
        return -mean * std::log1p(-u);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next() % n; }

  private:
    std::uint64_t state_;
};

}  // namespace chaintrust
