#include <catch2/catch_amalgamated.hpp>

#include "mlq/closed_forms.hpp"
#include "mlq/riccati.hpp"

using namespace mlq;
using Catch::Approx;

namespace {

const DoubleIntegratorParams kDi0{0.0, 1.0, 1.0, 1.0};
const DoubleIntegratorParams kDi1{1.0, 1.0, 1.0, 1.0};

}  // namespace

TEST_CASE("zero weights give the zero solution", "[riccati]") {
  Scalar1DParams prm;
  prm.a1 = 0.4;
  prm.b1 = 1.0;
  prm.a2 = -0.2;
  prm.b2 = 1.0;
  prm.c2 = 0.5;
  prm.q1 = prm.q2 = prm.g1 = prm.g2 = 0.0;
  const ProblemSpec spec = make_spec(prm, 64);
  const RiccatiSolution sol = solve_stage2(spec, 64);
  for (const auto& p : sol.p) REQUIRE(p.cwiseAbs().maxCoeff() == 0.0);
  for (const auto& g : sol.gain) REQUIRE(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("stage-2 solve matches the stopped-block closed form", "[riccati]") {
  SECTION("a = 0: P2(0) = 0.5, all other entries zero") {
    const ProblemSpec spec = make_spec(kDi0, 2000);
    const RiccatiSolution sol = solve_stage2(spec, 2000);
    REQUIRE(sol.p.front()(2, 2) == Approx(0.5).margin(1e-6));
    Eigen::MatrixXd off = sol.p.front();
    off(2, 2) = 0.0;
    REQUIRE(off.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("a = 1: P2(0) = 2e^2/(e^2+1)") {
    const ProblemSpec spec = make_spec(kDi1, 2000);
    const RiccatiSolution sol = solve_stage2(spec, 2000);
    REQUIRE(sol.p.front()(2, 2) == Approx(1.0 + std::tanh(1.0)).margin(1e-6));
    REQUIRE(sol.p.front()(2, 2) == Approx(1.76159).margin(1e-5));
  }
}

TEST_CASE("stage-1 solve against the closed form", "[riccati]") {
  SECTION("r = 0 is the single stitched node") {
    const ProblemSpec spec = make_spec(kDi0, 128);
    const RiccatiSolution s2 = solve_stage2(spec, 128);
    const Stage1Solution s1 = solve_stage1(spec, 0.0, s2.p_at(0.0), 128);
    REQUIRE(s1.p.size() == 1);
    const Eigen::MatrixXd stitched = stitched_terminal(spec, 0.0, s2.p_at(0.0));
    REQUIRE((s1.p[0] - stitched).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("reference matrix at r = 0.5") {
    const ProblemSpec spec = make_spec(kDi0, 2000);
    const RiccatiSolution s2 = solve_stage2(spec, 2000);
    const Stage1Solution s1 = solve_stage1(spec, 0.5, s2.p_at(0.5), 2000);
    const double factor = 1.5584415584415584;  // 120/77
    Eigen::Matrix2d expected;
    expected << 1.0, 0.5, 0.5, 0.25;
    expected *= factor;
    REQUIRE((s1.p[0] - expected).cwiseAbs().maxCoeff() <= 1e-6);
  }
  SECTION("pure quadrature: P1(0) = q when only Q1 is active") {
    Scalar1DParams prm;
    prm.q1 = 0.65;
    prm.b2 = 1.0;  // keep stage 2 solvable; all its weights vanish
    const ProblemSpec spec = make_spec(prm, 100);
    const RiccatiSolution s2 = solve_stage2(spec, 100);
    const Stage1Solution s1 = solve_stage1(spec, 1.0, s2.p_at(1.0), 100);
    REQUIRE(s1.p[0](0, 0) == Approx(0.65).margin(1e-12));
  }
}

TEST_CASE("terminal stitching is exact", "[riccati]") {
  const ProblemSpec spec = make_spec(kDi1, 500);
  const RiccatiSolution s2 = solve_stage2(spec, 500);
  for (double r : {0.2, 0.5, 0.9}) {
    const Eigen::MatrixXd p_r = s2.p_at(r);
    const Stage1Solution s1 = solve_stage1(spec, r, p_r, 500);
    const Eigen::MatrixXd stitched = stitched_terminal(spec, r, p_r);
    REQUIRE((s1.p.back() - stitched).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("feedback gains", "[riccati]") {
  SECTION("zero solution gives zero gains") {
    Scalar1DParams prm;
    prm.b1 = 1.0;
    prm.b2 = 1.0;
    const ProblemSpec spec = make_spec(prm, 64);
    const RiccatiSolution sol = solve_stage2(spec, 64);
    REQUIRE(sol.gain_at(0.37).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("stopped-block gain is (0, 0, P2(t))") {
    const ProblemSpec spec = make_spec(kDi0, 1000);
    const RiccatiSolution sol = solve_stage2(spec, 1000);
    for (double t : {0.0, 0.25, 0.8, 1.0}) {
      const Eigen::MatrixXd gain = sol.gain_at(t);
      REQUIRE(gain.rows() == 1);
      REQUIRE(gain(0, 0) == 0.0);
      REQUIRE(gain(0, 1) == 0.0);
      REQUIRE(gain(0, 2) == Approx(double_integrator_stage2(t, kDi0)).margin(1e-9));
    }
  }
  SECTION("node queries return node gains exactly") {
    const ProblemSpec spec = make_spec(kDi0, 100);
    const RiccatiSolution sol = solve_stage2(spec, 100);
    for (int k : {0, 17, 50, 100}) {
      const double t = sol.grid.node(k);
      REQUIRE((sol.gain_at(t) - sol.gain[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() ==
              0.0);
    }
    REQUIRE_THROWS_AS(sol.gain_at(1.5), std::domain_error);
  }
}

TEST_CASE("value_at_zero", "[riccati]") {
  SECTION("zero initial state costs nothing") {
    const ProblemSpec spec = make_spec(kDi0, 200);
    const RiccatiSolution s2 = solve_stage2(spec, 200);
    const Stage1Solution s1 = solve_stage1(spec, 0.5, s2.p_at(0.5), 200);
    REQUIRE(value_at_zero(s1, Eigen::Vector2d(0, 0)) == 0.0);
  }
  SECTION("half quadratic form of P1(0)") {
    Stage1Solution s1;
    s1.r = 0;
    s1.p.assign(1, Eigen::MatrixXd::Identity(2, 2));
    REQUIRE(value_at_zero(s1, Eigen::Vector2d(3, 4)) == Approx(12.5));
    REQUIRE_THROWS_AS(value_at_zero(s1, Eigen::VectorXd::Ones(3)), std::invalid_argument);
  }
  SECTION("double-integrator reference: half of the printed value") {
    const ProblemSpec spec = make_spec(kDi0, 2000);
    const RiccatiSolution s2 = solve_stage2(spec, 2000);
    const Stage1Solution s1 = solve_stage1(spec, 0.5, s2.p_at(0.5), 2000);
    REQUIRE(value_at_zero(s1, Eigen::Vector2d(1, 0)) ==
            Approx(0.5 * 1.5584415584415584).margin(1e-6));
  }
}

TEST_CASE("stored matrices are symmetric and positive semidefinite", "[riccati][property]") {
  for (const auto* prm : {&kDi0, &kDi1}) {
    const ProblemSpec spec = make_spec(*prm, 400);
    const RiccatiSolution s2 = solve_stage2(spec, 400);
    for (const auto& p : s2.p) {
      REQUIRE((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p, Eigen::EigenvaluesOnly);
      REQUIRE(es.eigenvalues().minCoeff() >= -1e-8);
    }
    const Stage1Solution s1 = solve_stage1(spec, 0.7, s2.p_at(0.7), 400);
    for (const auto& p : s1.p) {
      REQUIRE((p - p.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p, Eigen::EigenvaluesOnly);
      REQUIRE(es.eigenvalues().minCoeff() >= -1e-8);
    }
  }
}

TEST_CASE("refinement is fourth order", "[riccati]") {
  const ProblemSpec spec = make_spec(kDi1, 160);
  const Eigen::Matrix2d exact = double_integrator_stage1(0.0, 0.5, kDi1);
  std::vector<double> errs;
  for (int steps : {40, 80, 160}) {
    const RiccatiSolution s2 = solve_stage2(spec, steps);
    const Stage1Solution s1 = solve_stage1(spec, 0.5, s2.p_at(0.5), steps);
    errs.push_back((s1.p[0] - exact).cwiseAbs().maxCoeff());
  }
  const double r1 = errs[0] / errs[1];
  const double r2 = errs[1] / errs[2];
  CAPTURE(errs[0], errs[1], errs[2]);
  REQUIRE(r1 >= 12.0);
  REQUIRE(r1 <= 20.0);
  REQUIRE(r2 >= 12.0);
  REQUIRE(r2 <= 20.0);
}

TEST_CASE("oracle equivalence on scalar configurations", "[riccati]") {
  // Three parameter sets with distinct equilibrium layouts.
  std::vector<Scalar1DParams> cases;
  {
    Scalar1DParams p;  // growth above terminal, q2 = 0
    p.a2 = 1;
    p.b2 = 1;
    p.g2 = 0.5;
    p.b1 = 1;
    p.horizon = 1;
    cases.push_back(p);
  }
  {
    Scalar1DParams p;  // symmetric equilibria, terminal above both
    p.a2 = 0;
    p.b2 = 1;
    p.q2 = 1;
    p.g2 = 2.0;
    p.b1 = 1;
    p.horizon = 1;
    cases.push_back(p);
  }
  {
    Scalar1DParams p;  // decaying stage with diffusion in the state
    p.a2 = -0.5;
    p.c2 = 0.3;
    p.b2 = 1;
    p.q2 = 0.5;
    p.g2 = 0.2;
    p.b1 = 1;
    p.horizon = 1;
    cases.push_back(p);
  }
  for (const auto& prm : cases) {
    const ProblemSpec spec = make_spec(prm, 2000);
    const RiccatiSolution sol = solve_stage2(spec, 2000);
    double err = 0;
    for (int i = 0; i <= 100; ++i) {
      const double t = prm.horizon * i / 100.0;
      err = std::max(err, std::abs(sol.p_at(t)(1, 1) - stage2_closed_form(t, prm)));
    }
    CAPTURE(prm.a2, prm.q2, prm.g2);
    REQUIRE(err <= 1e-6);
  }
}

TEST_CASE("time-varying weights integrate exactly when polynomial", "[riccati]") {
  // Stage 1 reduced to quadrature of a linear ramp: P1' = -Q1(t), so
  // P1(0) = Int_0^1 t dt = 1/2, which RK4 reproduces to round-off.
  const int n_steps = 50;
  Scalar1DParams base;
  base.b2 = 1.0;
  ProblemSpec spec = make_spec(base, n_steps);
  std::vector<Eigen::MatrixXd> ramp;
  for (int k = 0; k <= n_steps; ++k)
    ramp.push_back(Eigen::MatrixXd::Constant(1, 1, static_cast<double>(k) / n_steps));
  spec.Q1 = CoeffTable::sampled(ramp);
  REQUIRE(validate_spec(spec).ok);
  const RiccatiSolution s2 = solve_stage2(spec, n_steps);
  const Stage1Solution s1 = solve_stage1(spec, 1.0, s2.p_at(1.0), n_steps);
  REQUIRE(s1.p[0](0, 0) == Approx(0.5).margin(1e-13));
}

TEST_CASE("stage-1 block solve matches an independent scalar sweep", "[riccati]") {
  Scalar1DParams prm;
  prm.a1 = 1;
  prm.b1 = 2;
  prm.q1 = 1;
  prm.a2 = 1;
  prm.b2 = 1;
  prm.g2 = 0.5;
  prm.k = 1;
  prm.horizon = 1;
  const ProblemSpec spec = make_spec(prm, 2000);
  const RiccatiSolution s2 = solve_stage2(spec, 2000);
  for (double r : {0.2, 0.5, 0.8}) {
    const Stage1Solution s1 = solve_stage1(spec, r, s2.p_at(r), 2000);
    const double terminal = prm.k * prm.k * s2.p_at(r)(1, 1) + prm.g1;
    const std::vector<double> p1 =
        detail::scalar_riccati_backward(1, prm, terminal, 0.0, r, s1.steps());
    CAPTURE(r);
    REQUIRE(s1.p[0](0, 0) == Approx(p1.front()).margin(1e-9));
  }
}

TEST_CASE("blow-up reports the failing node", "[riccati]") {
  Scalar1DParams prm;
  prm.b1 = 1;
  prm.b2 = 1;
  ProblemSpec spec = make_spec(prm, 50);
  spec.R = CoeffTable::constant(1e-12);  // below the positivity floor
  try {
    solve_stage2(spec, 50);
    FAIL("expected RiccatiBlowupError");
  } catch (const RiccatiBlowupError& e) {
    REQUIRE(e.node() == 50);
    REQUIRE(std::string(e.what()).find("node") != std::string::npos);
  }
}

TEST_CASE("solution interpolation is exact at nodes and C1 in between", "[riccati]") {
  const ProblemSpec spec = make_spec(kDi1, 100);
  const RiccatiSolution sol = solve_stage2(spec, 100);
  for (int k : {0, 31, 100}) {
    const double t = sol.grid.node(k);
    REQUIRE((sol.p_at(t) - sol.p[static_cast<std::size_t>(k)]).cwiseAbs().maxCoeff() == 0.0);
  }
  // Between nodes the interpolant should track the closed form to O(h^4).
  double err = 0;
  for (int i = 0; i < 400; ++i) {
    const double t = (i + 0.37) / 400.0;
    if (t > 1.0) break;
    err = std::max(err, std::abs(sol.p_at(t)(2, 2) - double_integrator_stage2(t, kDi1)));
  }
  REQUIRE(err <= 1e-7);
}
