#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "dsmbocd/diffusion.hpp"
#include "dsmbocd/rng.hpp"
#include "oracles.hpp"

using namespace dsmbocd;

namespace {

Vector v1(double a) { return Vector::Constant(1, a); }
Vector v2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

Vector random_point(const NaturalExpFamilyModel& model, RngStream& rng) {
  Vector x(model.data_dim());
  for (Index i = 0; i < x.size(); ++i) x(i) = rng.normal();
  if (!model.in_support(x)) x = x.array().abs() + 0.05;
  return x;
}

Vector random_theta(const NaturalExpFamilyModel& model, RngStream& rng) {
  const auto& dom = model.param_domain();
  Vector theta(model.param_dim());
  for (Index i = 0; i < theta.size(); ++i) {
    const double z = rng.normal();
    theta(i) = dom.lo(i) == kNegInf ? z : dom.lo(i) + 0.2 + std::abs(z);
  }
  return theta;
}

Vector random_anchor(const NaturalExpFamilyModel& model, RngStream& rng) {
  Vector a = random_theta(model, rng);
  if (a.isZero(0.0)) a(0) = 0.7;
  return a;
}

// Direct weighted score-matching loss, theta-dependent part only:
// ||J theta + grad_b||^2 - ||grad_b||^2 + 2 * sum_ij second_diag(i,j) theta_j.
double direct_score_matching_loss(const NaturalExpFamilyModel& model, const Vector& theta,
                                  const Vector& x) {
  const auto der = model.derivatives(x);
  const Vector score = der.jacobian * theta + der.base_grad;
  const double trace_term = (der.second_diag * theta).sum();
  return score.squaredNorm() - der.base_grad.squaredNorm() + 2.0 * trace_term;
}

}  // namespace

TEST_CASE("diffusion diagonal at fixed points") {
  auto gauss = make_model("gaussian");
  auto robust = DiffusionSpec::robust(v2(0.0, 1.0));
  CHECK(diffusion_diag(robust, *gauss, v1(0.0))(0) == doctest::Approx(1.0));
  CHECK(diffusion_diag(robust, *gauss, v1(1.0))(0) == doctest::Approx(1.0 / std::sqrt(2.0)));

  auto id = DiffusionSpec::identity();
  CHECK(diffusion_diag(id, *gauss, v1(123.0)).isApprox(Vector::Ones(1), 0.0));
  CHECK(diffusion_diag(id, *make_model("product:exponential,gaussian"), v2(1.0, -3.0))
            .isApprox(Vector::Ones(2), 0.0));

  CHECK_THROWS_AS((void)DiffusionSpec::robust(Vector::Zero(2)), std::invalid_argument);
}

TEST_CASE("loss summaries at fixed points") {
  auto gauss = make_model("gaussian");
  auto id = DiffusionSpec::identity();

  auto s0 = loss_summary(id, *gauss, v1(0.0));
  Matrix lam0(2, 2);
  lam0 << 1, 0, 0, 0;
  CHECK(s0.lambda.isApprox(lam0, 1e-15));
  CHECK(s0.nu.isApprox(v2(0.0, -1.0), 1e-15));

  auto s2 = loss_summary(id, *gauss, v1(2.0));
  Matrix lam2(2, 2);
  lam2 << 1, -2, -2, 4;
  CHECK(s2.lambda.isApprox(lam2, 1e-15));
  CHECK(s2.nu.isApprox(v2(0.0, -1.0), 1e-15));

  auto robust = DiffusionSpec::robust(v2(0.0, 1.0));
  auto sr = loss_summary(robust, *gauss, v1(2.0));
  CHECK(sr.lambda.isApprox(0.2 * lam2, 1e-14));
  CHECK(sr.nu.isApprox(v2(-4.0 / 25.0, 8.0 / 25.0 - 1.0 / 5.0), 1e-14));
}

TEST_CASE("pointwise loss values") {
  auto gauss = make_model("gaussian");
  auto id = DiffusionSpec::identity();
  CHECK(pointwise_loss(id, *gauss, v2(0.0, 1.0), v1(2.0)) == doctest::Approx(2.0));

  // Quadratic-plus-linear form vanishes at theta = 0.
  auto fixed = make_model("gaussian_fixed_var:1.0");
  CHECK(pointwise_loss(id, *fixed, v1(0.0), v1(3.7)) == 0.0);
  // At the open boundary of the gaussian domain the form also collapses.
  CHECK(pointwise_loss(id, *gauss, v2(0.0, 1e-12), v1(3.0)) ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("robust loss is dominated by the influence bound") {
  auto gauss = make_model("gaussian");
  const Vector anchor = v2(0.0, 1.0);
  auto robust = DiffusionSpec::robust(anchor);
  const Vector theta = v2(0.0, 1.0);
  // gamma_1 = d p |theta|^2/|anchor|^2; gamma_2 = d C (1 + 2 d |theta|^2/|anchor|^2)
  // with C = sup |second_diag * theta| over unit-capped weights = |theta_2|.
  const double ratio = theta.squaredNorm() / anchor.squaredNorm();
  const double gamma = 1.0 * 2.0 * ratio + 1.0 * std::abs(theta(1)) * (1.0 + 2.0 * ratio);
  for (double mag : {10.0, 1e3, 1e6}) {
    for (double sgn : {-1.0, 1.0}) {
      const double d = pointwise_loss(robust, *gauss, theta, v1(sgn * mag));
      CHECK(std::abs(d) <= gamma);
    }
  }
}

TEST_CASE("lambda is positive semidefinite") {
  RngStream rng(17);
  for (const auto& id : {"gaussian", "gamma", "exponential", "product:exponential,gaussian",
                         "diag_gaussian:2", "gaussian_fixed_var:2.0"}) {
    auto model = make_model(id);
    for (int kind = 0; kind < 2; ++kind) {
      const DiffusionSpec spec = kind == 0 ? DiffusionSpec::identity()
                                           : DiffusionSpec::robust(random_anchor(*model, rng));
      for (int rep = 0; rep < 100; ++rep) {
        const Vector x = random_point(*model, rng);
        const auto s = loss_summary(spec, *model, x);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(s.lambda);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
        CHECK((s.lambda - s.lambda.transpose()).norm() < 1e-14);
      }
    }
  }
}

TEST_CASE("identity weights recover plain score matching") {
  RngStream rng(19);
  auto id = DiffusionSpec::identity();
  for (const auto& mid : {"gaussian", "gamma", "exponential", "gaussian_fixed_var:2.0",
                          "product:exponential,gaussian"}) {
    auto model = make_model(mid);
    CAPTURE(mid);
    for (int rep = 0; rep < 50; ++rep) {
      const Vector x = random_point(*model, rng);
      const Vector theta = random_theta(*model, rng);
      const double got = pointwise_loss(id, *model, theta, x);
      const double want = direct_score_matching_loss(*model, theta, x);
      CHECK(got == doctest::Approx(want).epsilon(1e-10));
    }
  }
}

TEST_CASE("robust weights bound the loss where identity weights diverge") {
  auto gauss = make_model("gaussian");
  const Vector theta = v2(0.5, 1.5);
  auto robust = DiffusionSpec::robust(v2(0.0, 1.0));
  auto id = DiffusionSpec::identity();

  double running_max = 0.0;
  std::vector<double> robust_vals;
  for (int k = 1; k <= 8; ++k) {
    const double y = std::pow(10.0, k);
    const double dr = std::max(std::abs(pointwise_loss(robust, *gauss, theta, v1(y))),
                               std::abs(pointwise_loss(robust, *gauss, theta, v1(-y))));
    robust_vals.push_back(dr);
    running_max = std::max(running_max, dr);
    if (k > 4) CHECK(dr <= running_max * (1.0 + 1e-6));
  }
  const double id_small = std::abs(pointwise_loss(id, *gauss, theta, v1(10.0)));
  const double id_large = std::abs(pointwise_loss(id, *gauss, theta, v1(1e8)));
  CHECK(id_large / id_small > 1e6);
}

TEST_CASE("analytic divergence term matches finite differences") {
  RngStream rng(23);
  for (const auto& mid : {"gaussian", "gamma", "exponential", "gaussian_fixed_var:2.0",
                          "product:exponential,gaussian", "diag_gaussian:2"}) {
    auto model = make_model(mid);
    CAPTURE(mid);
    const Vector anchor = random_anchor(*model, rng);
    for (int kind = 0; kind < 2; ++kind) {
      const DiffusionSpec spec =
          kind == 0 ? DiffusionSpec::identity() : DiffusionSpec::robust(anchor);
      for (int rep = 0; rep < 100; ++rep) {
        const Vector x = random_point(*model, rng);
        const auto der = model->derivatives(x);
        const auto s = loss_summary(spec, *model, x);

        // Definitional weighted-jacobian entry, independent of the analytic
        // chain rule inside loss_summary.
        auto g = [&](const Vector& y, Index i, Index j) {
          const auto dy = model->derivatives(y);
          double w = 1.0;
          if (kind == 1) {
            const double u = dy.jacobian.row(i).dot(anchor);
            w = 1.0 / (1.0 + u * u);
          }
          return w * dy.jacobian(i, j);
        };

        for (Index j = 0; j < model->param_dim(); ++j) {
          double div_fd = 0.0;
          for (Index i = 0; i < model->data_dim(); ++i) {
            auto gij = [&](const Vector& y) { return g(y, i, j); };
            div_fd += oracles::fd_partial(gij, x, i);
          }
          double base_term = 0.0;
          for (Index i = 0; i < model->data_dim(); ++i) {
            double w = 1.0;
            if (kind == 1) {
              const double u = der.jacobian.row(i).dot(anchor);
              w = 1.0 / (1.0 + u * u);
            }
            base_term += w * der.jacobian(i, j) * der.base_grad(i);
          }
          const double want = base_term + div_fd;
          CHECK(std::abs(s.nu(j) - want) / (1.0 + std::abs(want)) < 1e-5);
        }
      }
    }
  }
}
