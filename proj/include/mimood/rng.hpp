#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <cstring>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mimood {

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic RNG with explicit substream derivation. Float conversions are
/// done by hand so results do not depend on the standard library's
/// distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(detail::splitmix64(seed)) {}

    /// Independent child stream; (seed, id) -> stream is a pure function.
    Rng stream(uint64_t id) const {
        return Rng(detail::splitmix64(seed_ ^ detail::splitmix64(id + 0x51ed2701ULL)));
    }

    uint64_t bits() { return gen_(); }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    float uniformf() { return static_cast<float>(gen_() >> 40) * 0x1.0p-24f; }

    /// Uniform integer in [0, n).
    int uniform_int(int n) { return static_cast<int>(uniform() * n); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_range(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

    float uniform_range(float lo, float hi) { return lo + static_cast<float>(uniform()) * (hi - lo); }

    /// Standard normal via Box-Muller.
    float normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = static_cast<float>(r * std::sin(a));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    uint64_t seed() const { return seed_; }

    /// Exact state round-trip, used by training checkpoints. The spare
    /// Box-Muller value travels as raw bits.
    std::string serialize() const {
        uint32_t spare_bits;
        std::memcpy(&spare_bits, &spare_, sizeof spare_bits);
        std::ostringstream os;
        os << seed_ << ' ' << gen_ << ' ' << have_spare_ << ' ' << spare_bits;
        return os.str();
    }

    static Rng deserialize(const std::string& s) {
        std::istringstream is(s);
        Rng r(0);
        uint32_t spare_bits = 0;
        is >> r.seed_ >> r.gen_ >> r.have_spare_ >> spare_bits;
        if (!is) throw std::runtime_error("Rng::deserialize: malformed state");
        std::memcpy(&r.spare_, &spare_bits, sizeof r.spare_);
        return r;
    }

  private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace mimood
