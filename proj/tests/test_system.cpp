#include "doctest.h"

#include "cbfsyn/system.hpp"

#include <cmath>

using namespace cbfsyn;

namespace {

Vec v2(double a, double b) {
    Vec x(2);
    x << a, b;
    return x;
}

CbfCandidate cand(double d1, double d2, double c1, double c2, double eps) {
    CbfCandidate c;
    c.scale = v2(d1, d2);
    c.shift = v2(c1, c2);
    c.offset = eps;
    return c;
}

}  // namespace

TEST_SUITE("system") {

TEST_CASE("double integrator hcf values") {
    const SystemModel di = make_double_integrator(0.0, 0.1);
    CHECK(eval_z(di.hcf, v2(-5, 0)) == doctest::Approx(5.0));
    CHECK(eval_z(di.hcf, v2(-5, 20)) == doctest::Approx(3.0));
    CHECK(eval_z(di.hcf, v2(-1, 20)) == doctest::Approx(-1.0));
}

TEST_CASE("zdot") {
    const SystemModel di = make_double_integrator(0.0, 0.1);
    CHECK(eval_zdot(di, v2(-5, 20), Vec::Constant(1, -200.0)) == doctest::Approx(0.0));
    for (double u : {-300.0, 0.0, 17.0, 300.0}) {
        CHECK(eval_zdot(di, v2(-5, -3), Vec::Constant(1, u)) == doctest::Approx(3.0));
    }
    CHECK(eval_zdot(di, v2(-5, 0), Vec::Constant(1, 0.0)) == 0.0);
    CHECK_THROWS_AS(eval_zdot(di, v2(-5, 0), Vec::Zero(2)), std::invalid_argument);
}

TEST_CASE("model blocks") {
    const SystemModel di = make_double_integrator(0.0, 0.1);
    const Vec f = di.drift(v2(-5, 20));
    const Mat g = di.actuation(v2(-5, 20));
    CHECK(f[0] == 20.0);
    CHECK(f[1] == 0.0);
    CHECK(g.rows() == 2);
    CHECK(g.cols() == 1);
    CHECK(g(0, 0) == 0.0);
    CHECK(g(1, 0) == 1.0);
    CHECK_NOTHROW(check_model_at(di, v2(-5, 20)));
    CHECK_THROWS_AS(make_double_integrator(0.0, -0.1), std::invalid_argument);
}

TEST_CASE("undamped variant") {
    const SystemModel di = make_double_integrator(0.0, 0.0);
    for (double v : {-30.0, 0.0, 25.0}) {
        CHECK(eval_z(di.hcf, v2(-2, v)) == doctest::Approx(2.0));
        const RowVec g = di.hcf.gradient(v2(-2, v));
        CHECK(g[0] == -1.0);
        CHECK(g[1] == 0.0);
    }
    REQUIRE(di.hcf.affine.has_value());
}

TEST_CASE("gradient at the switching surface takes the non-positive branch") {
    const SystemModel di = make_double_integrator(0.0, 0.1);
    const RowVec g = di.hcf.gradient(v2(-4, 0));
    CHECK(g[1] == 0.0);
    CHECK(di.hcf.gradient(v2(-4, 1e-12))[1] == doctest::Approx(-0.1));
}

TEST_CASE("candidate evaluation") {
    const SystemModel di = make_double_integrator(0.0, 0.1);
    const CbfCandidate id = CbfCandidate::identity(2);
    CHECK(eval_h(id, di.hcf, v2(-3, 4)) == eval_z(di.hcf, v2(-3, 4)));

    const CbfCandidate shaped = cand(1.0, 10.0 / 3.0, 0.0, 0.0, 0.0);
    CHECK(eval_h(shaped, di.hcf, v2(-3, 3)) == doctest::Approx(2.0));
    const RowVec g = eval_h_grad(shaped, di.hcf, v2(-3, 3));
    CHECK(g[0] == doctest::Approx(-1.0));
    CHECK(g[1] == doctest::Approx(-1.0 / 3.0));

    RowVec a(2);
    a << 0.0, -1.0;
    const HardConstraint vel = make_affine_hcf(a, 0.0);
    CbfCandidate cap = CbfCandidate::identity(2);
    cap.offset = 30.0;
    CHECK(eval_h(cap, vel, v2(0, 30)) == doctest::Approx(0.0));
}

TEST_CASE("identity gradient matches finite differences on a grid") {
    const SystemModel di = make_double_integrator(0.0, 0.1);
    const CbfCandidate id = CbfCandidate::identity(2);
    int checked = 0;
    for (int i = 0; i < 100; ++i) {
        for (int j = 0; j < 100; ++j) {
            const double x = -10.0 + 10.0 * (i + 0.5) / 100.0;
            const double v = -40.0 + 80.0 * (j + 0.5) / 100.0;
            if (std::abs(v) < 1e-3) continue;
            const Vec p = v2(x, v);
            const RowVec g = eval_h_grad(id, di.hcf, p);
            CHECK(eval_h(id, di.hcf, p) == eval_z(di.hcf, p));
            for (int a = 0; a < 2; ++a) {
                const double step = 1e-6 * std::max(1.0, std::abs(p[a]));
                Vec lo = p;
                Vec hi = p;
                lo[a] -= step;
                hi[a] += step;
                const double fd = (eval_z(di.hcf, hi) - eval_z(di.hcf, lo)) / (2.0 * step);
                CHECK(std::abs(fd - g[a]) <= 1e-5 * std::max(1.0, std::abs(g[a])));
            }
            ++checked;
        }
    }
    CHECK(checked == 10000);
}

TEST_CASE("affine hcf composition matches the expanded form") {
    RowVec a(3);
    a << 0.7, -1.3, 2.1;
    const HardConstraint hcf = make_affine_hcf(a, 0.4);
    CbfCandidate c;
    c.scale = Vec(3);
    c.scale << 1.5, 0.2, 3.0;
    c.shift = Vec(3);
    c.shift << -1.0, 2.5, 0.3;
    c.offset = -0.8;
    for (int t = 0; t < 50; ++t) {
        Vec x(3);
        x << std::sin(t), std::cos(3 * t) * 4, 0.1 * t - 2.0;
        const RowVec ad = a.cwiseProduct(c.scale.transpose());
        const double expanded = ad.dot(x) + a.dot(c.shift) + 0.4 + c.offset;
        CHECK(std::abs(eval_h(c, hcf, x) - expanded) <= 1e-12);
        CHECK((eval_h_grad(c, hcf, x) - ad).cwiseAbs().maxCoeff() <= 1e-15);
    }
}

TEST_CASE("candidate validation") {
    CHECK_THROWS_AS(cand(-1, 1, 0, 0, 0).validate(), std::invalid_argument);
    CHECK_NOTHROW(cand(0, 1, 0, 0, 0).validate());
    CHECK(cand(2, 2, 0, 1, 0).is_uniform());
    CHECK_FALSE(cand(2, 3, 0, 1, 0).is_uniform());
}

TEST_CASE("box set") {
    const BoxSet box(v2(-10, -40), v2(0, 40));
    CHECK(box.volume() == 800.0);
    CHECK(box.contains(v2(-5, 0)));
    CHECK_FALSE(box.contains(v2(1, 0)));
    CHECK(box.normalize(v2(-5, 0))[0] == doctest::Approx(0.5));
    CHECK(box.denormalize(v2(1, 1))[1] == 40.0);
    CHECK_THROWS_AS(BoxSet(v2(1, 0), v2(0, 0)), std::invalid_argument);
    CHECK_THROWS_AS(BoxSet(Vec::Zero(2), Vec::Zero(3)), std::invalid_argument);
    const BoxSet flat(v2(0, 1), v2(0, 1));
    CHECK(flat.nondegenerate_axes() == 0);
    CHECK(flat.volume(true) == 1.0);
}

TEST_CASE("registry") {
    auto& reg = SystemRegistry::global();
    CHECK(reg.contains("double_integrator"));
    const SystemInstance inst = reg.create("double_integrator", {{"gamma2", 0.2}});
    CHECK(inst.params.at("gamma2") == 0.2);
    CHECK(inst.input_box.upper()[0] == 300.0);
    CHECK_THROWS_AS(reg.create("double_integrator", {{"gama2", 0.2}}), std::invalid_argument);
    CHECK_THROWS_AS(reg.create("pendulum", {}), std::invalid_argument);
}

}
