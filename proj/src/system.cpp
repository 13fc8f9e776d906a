#include "cbfsyn/system.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cbfsyn {

CbfCandidate CbfCandidate::identity(int n) {
    return CbfCandidate{Vec::Ones(n), Vec::Zero(n), 0.0};
}

bool CbfCandidate::is_uniform(double tol) const {
    if (scale.size() == 0) return true;
    return (scale.array() - scale[0]).abs().maxCoeff() <= tol;
}

void CbfCandidate::validate() const {
    if (scale.size() != shift.size()) {
        throw std::invalid_argument("CbfCandidate: scale and shift dimensions differ");
    }
    if ((scale.array() < 0.0).any()) {
        throw std::invalid_argument("CbfCandidate: scale entries must be non-negative");
    }
    if (!scale.allFinite() || !shift.allFinite() || !std::isfinite(offset)) {
        throw std::invalid_argument("CbfCandidate: parameters must be finite");
    }
}

double eval_z(const HardConstraint& hcf, const Vec& x) {
    return hcf.value(x);
}

double lie_f(const SystemModel& sys, const Vec& x) {
    return sys.hcf.gradient(x).dot(sys.drift(x));
}

RowVec lie_g(const SystemModel& sys, const Vec& x) {
    return sys.hcf.gradient(x) * sys.actuation(x);
}

double eval_zdot(const SystemModel& sys, const Vec& x, const Vec& u) {
    if (u.size() != sys.m) throw std::invalid_argument("eval_zdot: input dimension mismatch");
    const RowVec grad = sys.hcf.gradient(x);
    return grad.dot(sys.drift(x)) + (grad * sys.actuation(x)).dot(u);
}

namespace {

Vec transformed(const CbfCandidate& cand, const Vec& x) {
    if (x.size() != cand.scale.size()) {
        throw std::invalid_argument("candidate dimension does not match state dimension");
    }
    return cand.scale.cwiseProduct(x) + cand.shift;
}

}  // namespace

double eval_h(const CbfCandidate& cand, const HardConstraint& hcf, const Vec& x) {
    return hcf.value(transformed(cand, x)) + cand.offset;
}

RowVec eval_h_grad(const CbfCandidate& cand, const HardConstraint& hcf, const Vec& x) {
    RowVec g = hcf.gradient(transformed(cand, x));
    return g.cwiseProduct(cand.scale.transpose());
}

double min_h(const std::vector<CbfCandidate>& cands, const HardConstraint& hcf, const Vec& x) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& c : cands) best = std::min(best, eval_h(c, hcf, x));
    return best;
}

SystemModel make_double_integrator(double gamma1, double gamma2) {
    if (!(gamma2 >= 0.0)) throw std::invalid_argument("double integrator: gamma2 must be >= 0");
    if (!std::isfinite(gamma1) || !std::isfinite(gamma2)) {
        throw std::invalid_argument("double integrator: parameters must be finite");
    }
    SystemModel sys;
    sys.name = "double_integrator";
    sys.n = 2;
    sys.m = 1;
    sys.drift = [](const Vec& x) {
        Vec f(2);
        f << x[1], 0.0;
        return f;
    };
    sys.actuation = [](const Vec&) {
        Mat g(2, 1);
        g << 0.0, 1.0;
        return g;
    };
    sys.hcf.value = [gamma1, gamma2](const Vec& x) {
        const double damping = x[1] > 0.0 ? gamma2 * x[1] : 0.0;
        return gamma1 - x[0] - damping;
    };
    sys.hcf.gradient = [gamma2](const Vec& x) {
        RowVec g(2);
        g << -1.0, x[1] > 0.0 ? -gamma2 : 0.0;
        return g;
    };
    if (gamma2 == 0.0) {
        RowVec A(2);
        A << -1.0, 0.0;
        sys.hcf.affine = AffineForm{A, gamma1};
    }
    return sys;
}

HardConstraint make_affine_hcf(RowVec A, double b) {
    HardConstraint hcf;
    hcf.value = [A, b](const Vec& x) { return A.dot(x) + b; };
    hcf.gradient = [A](const Vec&) { return A; };
    hcf.affine = AffineForm{std::move(A), b};
    return hcf;
}

void check_model_at(const SystemModel& sys, const Vec& x) {
    if (x.size() != sys.n) throw std::invalid_argument("state dimension mismatch");
    const Vec f = sys.drift(x);
    const Mat g = sys.actuation(x);
    const RowVec dz = sys.hcf.gradient(x);
    if (f.size() != sys.n) throw std::logic_error("drift returned wrong dimension");
    if (g.rows() != sys.n || g.cols() != sys.m) throw std::logic_error("actuation must be n x m");
    if (dz.size() != sys.n) throw std::logic_error("hcf gradient must have length n");
    if (!f.allFinite() || !g.allFinite() || !dz.allFinite() || !std::isfinite(sys.hcf.value(x))) {
        throw std::domain_error("model produced a non-finite value");
    }
}

SystemRegistry::SystemRegistry() {
    factories_["double_integrator"] = [](const ParamTable& params) {
        ParamTable p{{"gamma1", 0.0}, {"gamma2", 0.1}, {"u_min", -300.0}, {"u_max", 300.0}};
        for (const auto& [key, value] : params) {
            if (!p.contains(key)) {
                throw std::invalid_argument("double_integrator: unknown parameter '" + key + "'");
            }
            p[key] = value;
        }
        SystemInstance inst;
        inst.model = make_double_integrator(p["gamma1"], p["gamma2"]);
        inst.input_box = BoxSet(Vec::Constant(1, p["u_min"]), Vec::Constant(1, p["u_max"]));
        inst.params = p;
        return inst;
    };
}

SystemRegistry& SystemRegistry::global() {
    static SystemRegistry registry;
    return registry;
}

void SystemRegistry::add(const std::string& name, Factory factory) {
    std::lock_guard lock(mutex_);
    factories_[name] = std::move(factory);
}

bool SystemRegistry::contains(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return factories_.contains(name);
}

std::vector<std::string> SystemRegistry::names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [name, _] : factories_) out.push_back(name);
    return out;
}

SystemInstance SystemRegistry::create(const std::string& name, const ParamTable& params) const {
    Factory factory;
    {
        std::lock_guard lock(mutex_);
        auto it = factories_.find(name);
        if (it == factories_.end()) throw std::invalid_argument("unknown system '" + name + "'");
        factory = it->second;
    }
    return factory(params);
}

}  // namespace cbfsyn
