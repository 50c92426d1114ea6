#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dpiqa {

// Deterministic random source. Normal/uniform/bounded-int draws are
// implemented by hand (Box-Muller, rejection sampling) instead of the std
// distributions so that a given seed yields the same stream on every
// standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform();
    // uniform integer in [0, n), n >= 1
    uint64_t uniform_int(uint64_t n);
    // standard normal
    double normal();

    std::vector<double> normal_vec(size_t n, double stddev = 1.0);

    // Fisher-Yates
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// 64-bit FNV-1a; used for checkpoint/image identity keys, not security.
uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 14695981039346656037ull);
std::string hash_hex(uint64_t h);

}  // namespace dpiqa
