#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace lorax {

// Mixes a base seed with a stream tag so independent consumers (per task,
// per purpose) get decorrelated but reproducible streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t sub);

// Wraps std::mt19937_64. The distribution helpers are written out here rather
// than using <random>'s distributions, whose output is implementation-defined,
// so that runs reproduce bit-for-bit across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // Uniform integer on [0, n).
    std::size_t uniform_index(std::size_t n);
    double normal();
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace lorax
