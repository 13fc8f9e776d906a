#pragma once

#include "cbfsyn/types.hpp"

#include <functional>

namespace cbfsyn {

using Objective = std::function<double(const Vec&)>;

struct NelderMeadOptions {
    int max_evaluations = 400;
    double f_tol = 1e-10;
    double x_tol = 1e-8;
};

struct SearchResult {
    Vec x;
    double value = 0.0;
    int evaluations = 0;
};

/// Bounded Nelder-Mead: every trial point is clamped into [lower, upper] before evaluation.
SearchResult nelder_mead(const Objective& f, const Vec& start, const Vec& step, const Vec& lower,
                         const Vec& upper, const NelderMeadOptions& options = {});

/// Coordinate sweeps of golden-section search on [x_i - radius_i, x_i + radius_i] clipped to
/// the bounds; a coordinate move is kept only when it lowers f.
SearchResult golden_polish(const Objective& f, const SearchResult& from, const Vec& radius,
                           const Vec& lower, const Vec& upper, int sweeps = 2,
                           int iterations = 24);

}  // namespace cbfsyn
