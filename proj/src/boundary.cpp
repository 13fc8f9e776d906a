#include "cbfsyn/boundary.hpp"

#include "cbfsyn/parallel.hpp"
#include "cbfsyn/serialization.hpp"

#include <cmath>
#include <stdexcept>

namespace cbfsyn {

SpatialGrid::SpatialGrid(const std::vector<Vec>& unit_points, double cell)
    : points_(unit_points), cell_(cell) {
    if (!(cell > 0.0)) throw std::invalid_argument("SpatialGrid: cell size must be positive");
    buckets_.reserve(unit_points.size());
    for (std::size_t i = 0; i < unit_points.size(); ++i) {
        buckets_[key_of(cell_of(unit_points[i]))].push_back(static_cast<std::uint32_t>(i));
    }
}

std::vector<std::int64_t> SpatialGrid::cell_of(const Vec& p) const {
    std::vector<std::int64_t> c(static_cast<std::size_t>(p.size()));
    for (Eigen::Index a = 0; a < p.size(); ++a) {
        c[static_cast<std::size_t>(a)] = static_cast<std::int64_t>(std::floor(p[a] / cell_));
    }
    return c;
}

std::int64_t SpatialGrid::key_of(const std::vector<std::int64_t>& cell) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int64_t c : cell) {
        h ^= static_cast<std::uint64_t>(c) + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
        h *= 1099511628211ULL;
    }
    return static_cast<std::int64_t>(h);
}

double auto_epsilon(const SampleSet& s) {
    if (s.records.size() < 2) throw std::invalid_argument("auto_epsilon: need at least 2 samples");
    const int axes = s.bounds.nondegenerate_axes();
    if (axes == 0) throw std::invalid_argument("auto_epsilon: sampling box has no extent");
    return 2.0 * std::pow(1.0 / static_cast<double>(s.records.size()), 1.0 / axes);
}

BoundarySet extract_boundary(const SampleSet& s, const BoundaryOptions& options) {
    BoundarySet out;
    out.epsilon = options.epsilon > 0.0 ? options.epsilon : auto_epsilon(s);
    out.box_face_is_boundary = options.box_face_is_boundary;
    out.source_checksum = sample_records_checksum(s);

    std::vector<Vec> unit(s.records.size());
    for (std::size_t i = 0; i < s.records.size(); ++i) unit[i] = s.bounds.normalize(s.records[i].state);
    const SpatialGrid grid(unit, out.epsilon);
    const double eps = out.epsilon;

    auto near_face = [&](const Vec& u) {
        for (Eigen::Index a = 0; a < u.size(); ++a) {
            if (s.bounds.width()[a] <= 0.0) continue;
            if (u[a] <= eps || u[a] >= 1.0 - eps) return true;
        }
        return false;
    };

    std::vector<char> flag(s.records.size(), 0);
    parallel_for(s.records.size(), options.threads, [&](std::size_t i) {
        if (s.records[i].cls != SampleClass::FeasibleZ0) return;
        bool feasible_witness = false;
        bool other_witness = options.box_face_is_boundary && near_face(unit[i]);
        grid.for_each_near(unit[i], eps, [&](std::size_t j) {
            if (j == i) return true;
            if (s.records[j].cls == SampleClass::FeasibleZ0) {
                feasible_witness = true;
            } else {
                other_witness = true;
            }
            return !(feasible_witness && other_witness);
        });
        flag[i] = feasible_witness && other_witness;
    });

    for (std::size_t i = 0; i < s.records.size(); ++i) {
        if (!flag[i]) continue;
        out.points.push_back(s.records[i].state);
        out.source_index.push_back(i);
    }
    out.empty_warning = out.points.empty();
    return out;
}

}  // namespace cbfsyn
