#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace cbfsyn {

using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Mat = Eigen::MatrixXd;

/// Axis-aligned box, used both for input sets U and for state sampling regions.
class BoxSet {
public:
    BoxSet() = default;
    BoxSet(Vec lower, Vec upper);

    static BoxSet symmetric(Eigen::Index dim, double half_width);

    Eigen::Index dim() const { return lower_.size(); }
    const Vec& lower() const { return lower_; }
    const Vec& upper() const { return upper_; }
    Vec width() const { return upper_ - lower_; }

    bool contains(const Vec& x, double tol = 0.0) const;
    Vec clamp(const Vec& x) const;

    /// Product of the non-degenerate axis widths when `skip_degenerate`, else the plain product.
    double volume(bool skip_degenerate = false) const;
    int nondegenerate_axes() const;

    /// Maps x into [0,1]^n; degenerate axes map to 0.
    Vec normalize(const Vec& x) const;
    Vec denormalize(const Vec& unit) const;

    bool operator==(const BoxSet& other) const;

private:
    Vec lower_;
    Vec upper_;
};

}  // namespace cbfsyn
