#pragma once

// Poisson-disc sampling by dart throwing: uniform candidates, rejected when
// closer than d_min to an accepted point. The attempt budget is proportional
// to the region measure, so the accepted count saturates near the random
// sequential adsorption density and is deterministic per seed.

#include "sdfmpc/core.hpp"

#include <random>
#include <vector>

namespace sdfmpc {

struct SampleRegion {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
  bool planar() const { return hi.z() - lo.z() <= 1e-12; }
};

inline std::vector<Vec3> poisson_disc_sample(const SampleRegion& region, double d_min,
                                             std::uint64_t seed) {
  std::mt19937_64 rng = rng_stream(seed, "poisson");
  std::uniform_real_distribution<double> ux(region.lo.x(), region.hi.x());
  std::uniform_real_distribution<double> uy(region.lo.y(), region.hi.y());
  std::uniform_real_distribution<double> uz(region.lo.z(), region.hi.z());
  const Vec3 extent = region.hi - region.lo;
  const double measure = region.planar() ? extent.x() * extent.y()
                                         : extent.x() * extent.y() * extent.z();
  const double cell = region.planar() ? d_min * d_min : d_min * d_min * d_min;
  const int attempts = static_cast<int>(30.0 * std::max(1.0, measure / cell));
  const double d2 = d_min * d_min;

  std::vector<Vec3> accepted;
  for (int i = 0; i < attempts; ++i) {
    Vec3 cand(ux(rng), uy(rng), region.planar() ? region.lo.z() : uz(rng));
    bool ok = true;
    for (const Vec3& p : accepted) {
      if ((cand - p).squaredNorm() < d2) {
        ok = false;
        break;
      }
    }
    if (ok) accepted.push_back(cand);
  }
  return accepted;
}

}  // namespace sdfmpc
