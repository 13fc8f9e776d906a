#include "cbfsyn/types.hpp"

#include <stdexcept>

namespace cbfsyn {

BoxSet::BoxSet(Vec lower, Vec upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size()) {
        throw std::invalid_argument("BoxSet: lower and upper dimensions differ");
    }
    for (Eigen::Index i = 0; i < lower_.size(); ++i) {
        if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i])) {
            throw std::invalid_argument("BoxSet: bounds must be finite");
        }
        if (lower_[i] > upper_[i]) {
            throw std::invalid_argument("BoxSet: lower bound exceeds upper bound on axis " +
                                        std::to_string(i));
        }
    }
}

BoxSet BoxSet::symmetric(Eigen::Index dim, double half_width) {
    return BoxSet(Vec::Constant(dim, -half_width), Vec::Constant(dim, half_width));
}

bool BoxSet::contains(const Vec& x, double tol) const {
    if (x.size() != dim()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x[i] < lower_[i] - tol || x[i] > upper_[i] + tol) return false;
    }
    return true;
}

Vec BoxSet::clamp(const Vec& x) const {
    return x.cwiseMax(lower_).cwiseMin(upper_);
}

double BoxSet::volume(bool skip_degenerate) const {
    double v = 1.0;
    for (Eigen::Index i = 0; i < dim(); ++i) {
        const double w = upper_[i] - lower_[i];
        if (skip_degenerate && w <= 0.0) continue;
        v *= w;
    }
    return v;
}

int BoxSet::nondegenerate_axes() const {
    int count = 0;
    for (Eigen::Index i = 0; i < dim(); ++i) {
        if (upper_[i] > lower_[i]) ++count;
    }
    return count;
}

Vec BoxSet::normalize(const Vec& x) const {
    Vec out(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double w = upper_[i] - lower_[i];
        out[i] = w > 0.0 ? (x[i] - lower_[i]) / w : 0.0;
    }
    return out;
}

Vec BoxSet::denormalize(const Vec& unit) const {
    return lower_ + (upper_ - lower_).cwiseProduct(unit);
}

bool BoxSet::operator==(const BoxSet& other) const {
    return lower_.size() == other.lower_.size() && lower_ == other.lower_ && upper_ == other.upper_;
}

}  // namespace cbfsyn
