#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace csdm {

// Counter-free splittable PRNG built on splitmix64 seeding an xoshiro256**
// core. Every stochastic operation takes an Rng& explicitly; independent
// streams are obtained with split(), which mixes a tag into the seed so the
// order of split() calls does not perturb sibling streams.
class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t next();

    // Derive an independent stream identified by tag.
    Rng split(uint64_t tag) const;
    Rng split(std::string_view tag) const;

    double uniform();                       // [0,1)
    double uniform(double lo, double hi);   // [lo,hi)
    double normal();                        // standard normal
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive range
    bool bernoulli(double p);

    void fill_normal(std::vector<double>& out);

  private:
    uint64_t state_[4];
    uint64_t seed_;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

}  // namespace csdm
