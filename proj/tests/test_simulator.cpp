#include "doctest.h"

#include "cbfsyn/simulator.hpp"
#include "double_integrator.hpp"

#include <cmath>
#include <random>

using namespace cbfsyn;
namespace di = oracles::di;

namespace {

Vec v2(double a, double b) {
    Vec x(2);
    x << a, b;
    return x;
}

Vec u1(double a) { return Vec::Constant(1, a); }

const SystemModel kSys = make_double_integrator(0.0, di::kGamma2);
const BoxSet kInputs(u1(-di::kUMax), u1(di::kUMax));

CbfCandidate make_cand(double d1, double d2, double c1, double c2, double offset) {
    CbfCandidate c;
    c.scale = v2(d1, d2);
    c.shift = v2(c1, c2);
    c.offset = offset;
    return c;
}

// x <= -0.1 v - 7 across the whole box (the shift keeps the velocity argument positive).
CbfCandidate uniform_target() { return make_cand(1.0, 1.0, 0.0, 70.0, 0.0); }
// x <= -v/3 for v > 0 and x <= 0 below.
CbfCandidate nonuniform_target() { return make_cand(1.0, 10.0 / 3.0, 0.0, 0.0, 0.0); }

FilterConfig filter_for(std::size_t count, double kappa = 5.0) {
    FilterConfig fc;
    fc.alphas.assign(count, kappa);
    fc.input_box = kInputs;
    return fc;
}

// Hand-derived CBF rows for the two targets: h = -x - a v - b (a = 0.1, b = 7 or a = 1/3 on v > 0),
// so hdot = -v - a u and the row reads  -a u >= -kappa h + v.
bool row_ok(double a, double h, double v, double u, double kappa) {
    return -a * u >= -kappa * h + v - 1e-9;
}

}  // namespace

TEST_SUITE("simulator") {

TEST_CASE("reference spline") {
    const ReferenceSpline ref(u1(-9.0), u1(0.0), 5.0);
    CHECK(ref(0.0)[0] == doctest::Approx(-9.0));
    CHECK(ref(2.5)[0] == doctest::Approx(-4.5));
    CHECK(ref(5.0)[0] == doctest::Approx(0.0));
    CHECK(ref(7.0)[0] == doctest::Approx(0.0));
    CHECK(ref(-1.0)[0] == doctest::Approx(-9.0));
    CHECK(ref.velocity(0.0)[0] == 0.0);
    CHECK(ref.velocity(5.0)[0] == 0.0);
    // slope from finite differences matches the analytic one; ends are flat
    const double h = 1e-6;
    CHECK((ref(1.0 + h)[0] - ref(1.0 - h)[0]) / (2 * h) == doctest::Approx(ref.velocity(1.0)[0]));
    CHECK(std::abs(ref(h)[0] - ref(0.0)[0]) / h < 1e-4);
    CHECK(std::abs(ref(5.0)[0] - ref(5.0 - h)[0]) / h < 1e-4);
    // peak slope of the smoothstep is 1.5 * distance / duration
    CHECK(ref.velocity(2.5)[0] == doctest::Approx(1.5 * 9.0 / 5.0));
    CHECK_THROWS_AS(ReferenceSpline(u1(0.0), u1(1.0), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(ReferenceSpline(u1(0.0), v2(1.0, 2.0), 1.0), std::invalid_argument);
}

TEST_CASE("nominal controller") {
    CHECK(nominal_controller(v2(-9.0, 3.0), u1(-4.0), 10.0)[0] == doctest::Approx(50.0));
    CHECK(nominal_controller(v2(-0.5, 3.0), u1(0.0), 10.0)[0] == doctest::Approx(5.0));
    CHECK(nominal_controller(v2(-2.0, 7.0), u1(-2.0), 10.0)[0] == 0.0);
    CHECK_THROWS_AS(nominal_controller(v2(0, 0), u1(0), 0.0), std::invalid_argument);
}

TEST_CASE("filter leaves a safe nominal input untouched") {
    const auto cands = std::vector<CbfCandidate>{uniform_target()};
    const FilterResult r = safety_filter(v2(-9.0, 0.0), u1(12.345), cands, kSys, filter_for(1));
    CHECK(r.input[0] == 12.345);
    CHECK(r.status == StepStatus::Optimal);
    CHECK(r.slack == 0.0);
    const FilterResult low = safety_filter(v2(-9.0, 0.0), u1(-400.0), cands, kSys, filter_for(1));
    CHECK(low.input[0] == doctest::Approx(-300.0));
    CHECK(low.status == StepStatus::Optimal);
}

TEST_CASE("filter on the non-uniform boundary") {
    // h(-3, 9) = 3 - 3 = 0, so the row demands -9 - u/3 >= 0, i.e. u <= -27
    const auto cands = std::vector<CbfCandidate>{nonuniform_target()};
    CHECK(eval_h(cands[0], kSys.hcf, v2(-3.0, 9.0)) == doctest::Approx(0.0));
    const FilterResult r = safety_filter(v2(-3.0, 9.0), u1(100.0), cands, kSys, filter_for(1));
    CHECK(r.status == StepStatus::Optimal);
    CHECK(r.input[0] == doctest::Approx(-27.0).epsilon(1e-9));
    const FilterResult below = safety_filter(v2(-3.0, 9.0), u1(-50.0), cands, kSys, filter_for(1));
    CHECK(below.input[0] == -50.0);
}

TEST_CASE("filter saturates at the input bound when no input satisfies the row") {
    // h = 3.5 - 110/3 < 0 and the row needs u <= -3 (110 + 5 * 33.17) < -300
    const auto cands = std::vector<CbfCandidate>{nonuniform_target()};
    const Vec x = v2(-3.5, 110.0);
    const FilterResult hard = safety_filter(x, u1(0.0), cands, kSys, filter_for(1));
    CHECK(hard.status == StepStatus::Infeasible);
    CHECK(hard.input[0] == doctest::Approx(-300.0));

    FilterConfig soft = filter_for(1);
    soft.relaxation = 1e3;
    const FilterResult relaxed = safety_filter(x, u1(0.0), cands, kSys, soft);
    CHECK(relaxed.status == StepStatus::Relaxed);
    CHECK(relaxed.input[0] == doctest::Approx(-300.0));
    const double h = eval_h(cands[0], kSys.hcf, x);
    // slack closes the gap left at u = -300:  100 - 110 + 5 h + s = 0
    CHECK(relaxed.slack == doctest::Approx(110.0 - 100.0 - 5.0 * h).epsilon(1e-6));
}

TEST_CASE("filter output is the closest feasible input") {
    std::mt19937_64 gen(7);
    std::uniform_real_distribution<double> ux(-10.0, 0.0), uv(-40.0, 40.0), uu(-300.0, 300.0);
    const std::vector<CbfCandidate> both{uniform_target(), nonuniform_target()};
    const double kappa = 5.0;
    int checked = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const double x = ux(gen), v = uv(gen);
        const double hu = -x - 0.1 * v - 7.0;
        const double hn = v > 0 ? -x - v / 3.0 : -x;
        if (hu < 0.0 || hn < 0.0) continue;
        const double a_n = v > 0 ? 1.0 / 3.0 : 0.0;
        const double u_nom = uu(gen);
        const FilterResult r = safety_filter(v2(x, v), u1(u_nom), both, kSys, filter_for(2, kappa));
        REQUIRE(r.status == StepStatus::Optimal);
        const double u = r.input[0];
        CHECK(row_ok(0.1, hu, v, u, kappa));
        CHECK(row_ok(a_n, hn, v, u, kappa));
        double best = std::abs(u_nom - u) + 1.0;
        for (int k = 0; k < 1000; ++k) {
            const double cand = uu(gen);
            if (row_ok(0.1, hu, v, cand, kappa) && row_ok(a_n, hn, v, cand, kappa)) {
                best = std::min(best, std::abs(cand - u_nom));
            }
        }
        CHECK(std::abs(u - u_nom) <= best + 1e-7);
        // a second pass changes nothing
        const FilterResult again = safety_filter(v2(x, v), r.input, both, kSys, filter_for(2, kappa));
        CHECK(again.input[0] == doctest::Approx(u).epsilon(1e-9));
        ++checked;
    }
    CHECK(checked > 10);
}

TEST_CASE("filter argument checks") {
    const auto cands = std::vector<CbfCandidate>{uniform_target()};
    CHECK_THROWS_AS(safety_filter(v2(-9, 0), u1(0), {}, kSys, filter_for(1)), std::invalid_argument);
    CHECK_THROWS_AS(safety_filter(v2(-9, 0), u1(0), cands, kSys, filter_for(2)),
                    std::invalid_argument);
    CHECK_THROWS_AS(safety_filter(v2(-9, 0), v2(0, 0), cands, kSys, filter_for(1)),
                    std::invalid_argument);
    FilterConfig neg = filter_for(1, -1.0);
    CHECK_THROWS_AS(safety_filter(v2(-9, 0), u1(0), cands, kSys, neg), std::invalid_argument);
}

TEST_CASE("rk4 step") {
    // xdot = v, vdot = u has a quadratic flow, which RK4 reproduces exactly
    const Vec a = rk4_step(kSys, v2(0.0, 1.0), u1(0.0), 0.1);
    CHECK(a[0] == doctest::Approx(0.1));
    CHECK(a[1] == doctest::Approx(1.0));
    const Vec b = rk4_step(kSys, v2(0.0, 0.0), u1(2.0), 0.1);
    CHECK(b[0] == doctest::Approx(0.01));
    CHECK(b[1] == doctest::Approx(0.2));
    Vec x = v2(-4.0, 3.0);
    for (int k = 0; k < 250; ++k) x = rk4_step(kSys, x, u1(-1.5), 0.02);
    const double t = 5.0;
    CHECK(x[0] == doctest::Approx(-4.0 + 3.0 * t - 0.75 * t * t).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(3.0 - 1.5 * t).epsilon(1e-12));
    CHECK_THROWS_AS(rk4_step(kSys, x, u1(0.0), 0.0), std::invalid_argument);
}

TEST_CASE("simulation rejects unsafe starts and bad settings") {
    const auto cands = std::vector<CbfCandidate>{uniform_target()};
    SimConfig cfg;
    cfg.x_init = v2(-4.0, 20.0);  // h = 4 - 2 - 7 < 0
    cfg.x_goal = v2(0.0, 0.0);
    CHECK_THROWS_AS(simulate(cfg, kSys, cands, filter_for(1)), SafeStartError);
    cfg.require_safe_start = false;
    CHECK_NOTHROW(simulate(cfg, kSys, cands, filter_for(1)));

    SimConfig bad;
    bad.x_init = v2(-9.0, 0.0);
    bad.x_goal = v2(0.0, 0.0);
    bad.dt = 0.0;
    CHECK_THROWS_AS(simulate(bad, kSys, cands, filter_for(1)), std::invalid_argument);
    bad.dt = 0.01;
    bad.horizon = 0.005;
    CHECK_THROWS_AS(simulate(bad, kSys, cands, filter_for(1)), std::invalid_argument);
    bad.horizon = 1.0;
    bad.x_goal = u1(0.0);
    CHECK_THROWS_AS(simulate(bad, kSys, cands, filter_for(1)), std::invalid_argument);
}

TEST_CASE("zero horizon records only the start") {
    SimConfig cfg;
    cfg.x_init = v2(-9.0, 0.0);
    cfg.x_goal = v2(0.0, 0.0);
    cfg.horizon = 0.0;
    const Trajectory tr = simulate(cfg, kSys, {uniform_target()}, filter_for(1));
    REQUIRE(tr.states.size() == 1);
    CHECK(tr.states[0] == cfg.x_init);
    CHECK(tr.times[0] == 0.0);
}

TEST_CASE("closed loop stays in the certified set") {
    for (const auto& cand : {uniform_target(), nonuniform_target()}) {
        const std::vector<CbfCandidate> cands{cand};
        const FilterConfig fc = filter_for(1);
        SimConfig cfg;
        cfg.x_init = v2(-9.0, 0.0);
        cfg.x_goal = v2(0.0, 0.0);
        const Trajectory tr = simulate(cfg, kSys, cands, fc);
        CHECK(tr.states.size() == 1001);
        const InvarianceReport rep = check_invariance(tr);
        CHECK(rep.safe());
        CHECK(rep.infeasible_steps == 0);
        CHECK(alpha_monotonicity_violations(tr, fc.alphas, cfg.dt) == 0);
        CHECK(rep.min_z >= 0.0);

        // full throttle towards the constraint
        cfg.x_init = v2(-9.5, -20.0);
        cfg.constant_nominal = u1(di::kUMax);
        const InvarianceReport adv = check_invariance(simulate(cfg, kSys, cands, fc));
        CHECK(adv.safe());
        CHECK(adv.infeasible_steps == 0);
    }
}

TEST_CASE("unfiltered tracking leaves the constraint set") {
    SimConfig cfg;
    cfg.x_init = v2(-9.0, 15.0);
    cfg.x_goal = v2(0.0, 0.0);
    cfg.filter_enabled = false;
    const Trajectory tr = simulate(cfg, kSys, {uniform_target()}, filter_for(1));
    const InvarianceReport rep = check_invariance(tr);
    CHECK_FALSE(rep.safe());
    CHECK(rep.constraint_breaches > 0);
    REQUIRE(rep.first_breach_time.has_value());
    CHECK(*rep.first_breach_time > 0.0);
    for (StepStatus s : tr.statuses) CHECK(s == StepStatus::Unfiltered);
}

TEST_CASE("invariance and monotonicity bookkeeping") {
    Trajectory tr;
    const double hs[] = {1.0, 0.96, 0.5, -0.2};
    for (int k = 0; k < 4; ++k) {
        tr.times.push_back(0.1 * k);
        tr.states.push_back(v2(0, 0));
        tr.nominal_inputs.push_back(u1(0));
        tr.filtered_inputs.push_back(u1(0));
        tr.h_values.push_back(u1(hs[k]));
        tr.z_values.push_back(hs[k] + 0.1);
        tr.statuses.push_back(StepStatus::Optimal);
    }
    const InvarianceReport rep = check_invariance(tr);
    CHECK(rep.invariance_breaches == 1);
    CHECK(rep.constraint_breaches == 1);
    CHECK(rep.first_breach_time.value() == doctest::Approx(0.3));
    CHECK(rep.min_h[0] == -0.2);
    // (1 - 0.5 * 0.1) h: 0.95 <= 0.96 ok, 0.912 > 0.5 and 0.475 > -0.2 violate
    CHECK(alpha_monotonicity_violations(tr, {0.5}, 0.1) == 2);
    tr.statuses[2] = StepStatus::Relaxed;
    CHECK(alpha_monotonicity_violations(tr, {0.5}, 0.1) == 0);
}

TEST_CASE("trajectory csv and status names") {
    SimConfig cfg;
    cfg.x_init = v2(-9.0, 0.0);
    cfg.x_goal = v2(0.0, 0.0);
    cfg.horizon = 0.02;
    const Trajectory tr = simulate(cfg, kSys, {uniform_target(), nonuniform_target()}, filter_for(2));
    const std::string csv = trajectory_csv(tr);
    CHECK(csv.rfind("t,x1,x2,u_nom_1,u_1,h_1,h_2,z,status\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    for (StepStatus s : {StepStatus::Optimal, StepStatus::Infeasible, StepStatus::Relaxed,
                         StepStatus::Unfiltered}) {
        CHECK(step_status_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(step_status_from_string("bogus"), std::invalid_argument);
}

}  // TEST_SUITE
