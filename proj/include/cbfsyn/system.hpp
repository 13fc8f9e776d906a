#pragma once

#include "cbfsyn/types.hpp"

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace cbfsyn {

/// z(x) = A x + b. Attached to a HardConstraint when the HCF is affine so that
/// closed-form checks (redundancy, expanded evaluation) are available.
struct AffineForm {
    RowVec A;
    double b = 0.0;
};

/// State-only hard constraint z(x) >= 0 together with its analytic gradient.
struct HardConstraint {
    std::function<double(const Vec&)> value;
    std::function<RowVec(const Vec&)> gradient;
    std::optional<AffineForm> affine;
};

/// Control-affine plant xdot = f(x) + g(x) u with its hard constraint.
struct SystemModel {
    std::string name;
    int n = 0;
    int m = 0;
    std::function<Vec(const Vec&)> drift;
    std::function<Mat(const Vec&)> actuation;
    HardConstraint hcf;
};

/// Parameters of h(x) = z(D x + c) + offset with D = diag(scale).
struct CbfCandidate {
    Vec scale;
    Vec shift;
    double offset = 0.0;

    static CbfCandidate identity(int n);
    int dim() const { return static_cast<int>(scale.size()); }
    bool is_uniform(double tol = 0.0) const;
    void validate() const;
};

double eval_z(const HardConstraint& hcf, const Vec& x);

double lie_f(const SystemModel& sys, const Vec& x);
RowVec lie_g(const SystemModel& sys, const Vec& x);
double eval_zdot(const SystemModel& sys, const Vec& x, const Vec& u);

double eval_h(const CbfCandidate& cand, const HardConstraint& hcf, const Vec& x);

/// Exact chain rule: dz/dx evaluated at D x + c, right-multiplied by D.
RowVec eval_h_grad(const CbfCandidate& cand, const HardConstraint& hcf, const Vec& x);

/// Minimum over candidates of h_j(x); +inf for an empty list.
double min_h(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf, const Vec& x);

/// Double integrator (position, velocity) with the damped constraint
///   z(x) = gamma1 - x - 1{xdot > 0} gamma2 xdot.
/// The indicator is 0 at xdot = 0, and the gradient takes the xdot <= 0 branch there.
SystemModel make_double_integrator(double gamma1, double gamma2);

HardConstraint make_affine_hcf(RowVec A, double b);

/// Checks the structural invariants of a model at one state (dimension agreement, finite values).
void check_model_at(const SystemModel& sys, const Vec& x);

using ParamTable = std::map<std::string, double>;

/// A registered system plus the admissible input box built from its parameters.
struct SystemInstance {
    SystemModel model;
    BoxSet input_box;
    ParamTable params;
};

/// Name-keyed factories so configs can select a plant. Only "double_integrator" ships built in.
class SystemRegistry {
public:
    using Factory = std::function<SystemInstance(const ParamTable&)>;

    static SystemRegistry& global();

    void add(const std::string& name, Factory factory);
    bool contains(const std::string& name) const;
    std::vector<std::string> names() const;
    SystemInstance create(const std::string& name, const ParamTable& params) const;

private:
    SystemRegistry();

    mutable std::mutex mutex_;
    std::map<std::string, Factory> factories_;
};

}  // namespace cbfsyn
