#pragma once

#include "cbfsyn/sampler.hpp"
#include "cbfsyn/types.hpp"

#include <cstddef>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace cbfsyn {

/// Uniform-grid hash over points in the unit box; cell size equals the query radius, so a
/// radius query only visits the 3^n surrounding cells.
class SpatialGrid {
public:
    SpatialGrid(const std::vector<Vec>& unit_points, double cell);

    /// Calls visit(index) for every stored point within `radius` (<= cell) of q, q's own
    /// index included. Stops early when visit returns false.
    template <class Visit>
    void for_each_near(const Vec& q, double radius, Visit&& visit) const;

private:
    std::int64_t key_of(const std::vector<std::int64_t>& cell) const;
    std::vector<std::int64_t> cell_of(const Vec& p) const;

    const std::vector<Vec>& points_;
    double cell_;
    std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets_;
};

struct BoundaryOptions {
    double epsilon = 0.0;  // normalized units; <= 0 selects auto_epsilon
    bool box_face_is_boundary = false;
    int threads = 1;
};

struct BoundarySet {
    std::vector<Vec> points;
    std::vector<std::size_t> source_index;  // positions in the sample set's records
    double epsilon = 0.0;
    bool box_face_is_boundary = false;
    bool empty_warning = false;
    std::string source_checksum;
};

/// 2 (1/N)^(1/n') with n' the number of non-degenerate axes of the sampling box.
double auto_epsilon(const SampleSet& s);

/// Feasible records that see both another feasible record and a non-feasible record (or,
/// optionally, a box face) within epsilon after per-axis normalization.
BoundarySet extract_boundary(const SampleSet& s, const BoundaryOptions& options);

template <class Visit>
void SpatialGrid::for_each_near(const Vec& q, double radius, Visit&& visit) const {
    const std::vector<std::int64_t> centre = cell_of(q);
    const std::size_t n = centre.size();
    std::vector<std::int64_t> offset(n, -1);
    std::vector<std::int64_t> probe(n);
    const double r2 = radius * radius;
    while (true) {
        for (std::size_t a = 0; a < n; ++a) probe[a] = centre[a] + offset[a];
        auto it = buckets_.find(key_of(probe));
        if (it != buckets_.end()) {
            for (std::uint32_t idx : it->second) {
                if ((points_[idx] - q).squaredNorm() <= r2) {
                    if (!visit(static_cast<std::size_t>(idx))) return;
                }
            }
        }
        std::size_t a = 0;
        while (a < n && offset[a] == 1) offset[a++] = -1;
        if (a == n) break;
        ++offset[a];
    }
}

}  // namespace cbfsyn
