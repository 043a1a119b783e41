#include "streamseg/propagation.hpp"

#include <algorithm>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include "streamseg/geom.hpp"

namespace streamseg::propagation {

Eigen::VectorXd geometric_similarities(int seed_index,
                                       const descriptor::DescriptorField& desc) {
  const Eigen::Index n = desc.descriptors.rows();
  if (seed_index < 0 || seed_index >= n)
    throw ShapeMismatchError("geometric_similarities: seed index out of range");
  Eigen::VectorXd out(n - 1);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i == seed_index) continue;
    out(k++) = (desc.descriptors.row(i) - desc.descriptors.row(seed_index)).norm();
  }
  return out;
}

selection::PseudoLabelSet propagate(const selection::PseudoLabelSet& seeds,
                                    const descriptor::DescriptorField& desc,
                                    const PropagationConfig& cfg) {
  if (seeds.empty()) throw EmptySeedSetError("propagate: no seeds");
  if (cfg.k < 1) throw InvalidConfigError("propagate: k must be >= 1");
  const Eigen::Index n = desc.descriptors.rows();
  for (const auto& e : seeds.entries)
    if (e.point < 0 || e.point >= n)
      throw FrameDescriptorMismatchError("propagate: seed outside descriptor field");

  autodiff::Matrix space = desc.descriptors;
  if (cfg.normalize_descriptors) {
    for (Eigen::Index i = 0; i < space.rows(); ++i) {
      double norm = space.row(i).norm();
      if (norm > 1e-12) space.row(i) /= norm;
    }
  }

  std::unordered_set<int> seed_points;
  for (const auto& e : seeds.entries) seed_points.insert(e.point);

  long excluded = static_cast<long>(seed_points.size());
  for (Eigen::Index i = 0; i < n; ++i)
    if (desc.zero_flag[static_cast<std::size_t>(i)] &&
        !seed_points.count(static_cast<int>(i)))
      ++excluded;

  geom::KnnIndex index(space);
  // Query enough neighbors that k eligible ones survive the exclusions.
  const int query_k = static_cast<int>(
      std::min<long>(n, static_cast<long>(cfg.k) + excluded + 1));

  struct Claim {
    double distance;
    int seed_point;
    int label;
    int rank;
  };
  std::unordered_map<int, Claim> claims;

  for (const auto& seed : seeds.entries) {
    auto hits = index.query(space.row(seed.point).transpose(), query_k);
    int taken = 0;
    for (const auto& [idx, dist] : hits) {
      if (taken >= cfg.k) break;
      if (idx == seed.point) continue;
      if (desc.zero_flag[static_cast<std::size_t>(idx)]) continue;
      if (cfg.exclude_seeds_as_targets && seed_points.count(idx)) continue;
      ++taken;
      Claim c{dist, seed.point, seed.label, taken + 1};
      auto it = claims.find(idx);
      if (it == claims.end() || c.distance < it->second.distance ||
          (c.distance == it->second.distance &&
           c.seed_point < it->second.seed_point)) {
        claims[idx] = c;
      }
    }
  }

  selection::PseudoLabelSet out = seeds;
  for (const auto& [point, claim] : claims) {
    // a seed keeps its own label even when another seed claims it
    if (seed_points.count(point)) continue;
    selection::PseudoLabelEntry e;
    e.point = point;
    e.label = claim.label;
    e.provenance = selection::Provenance::kPropagated;
    e.seed_point = claim.seed_point;
    e.rank = claim.rank;
    out.entries.push_back(e);
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const selection::PseudoLabelEntry& a,
               const selection::PseudoLabelEntry& b) { return a.point < b.point; });
  return out;
}

}  // namespace streamseg::propagation
