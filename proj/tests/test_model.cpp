#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dsmbocd/model.hpp"
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

// Random interior point for a model's support.
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
    if (dom.lo(i) == kNegInf)
      theta(i) = z;
    else
      theta(i) = dom.lo(i) + 0.2 + std::abs(z);
  }
  return theta;
}

std::vector<ModelPtr> all_models() {
  return {make_model("gaussian"), make_model("exponential"), make_model("gamma"),
          make_model("gaussian_fixed_var:2.0"), make_model("product:exponential,gaussian"),
          make_model("diag_gaussian:2")};
}

}  // namespace

TEST_CASE("sufficient statistics at fixed points") {
  auto gauss = make_model("gaussian");
  CHECK(gauss->suff_stat(v1(2.0)).isApprox(v2(2.0, -2.0)));
  CHECK(gauss->suff_stat(v1(0.0)).isApprox(v2(0.0, 0.0), 0.0));

  auto gamma = make_model("gamma");
  CHECK(gamma->suff_stat(v1(1.0)).isApprox(v2(0.0, -1.0), 1e-15));

  CHECK_THROWS_AS((void)gamma->suff_stat(v1(-1.0)), std::domain_error);
  CHECK_THROWS_AS((void)make_model("exponential")->suff_stat(v1(0.0)), std::domain_error);
}

TEST_CASE("derivative blocks at fixed points") {
  auto gauss = make_model("gaussian");
  auto d = gauss->derivatives(v1(3.0));
  CHECK(d.jacobian(0, 0) == 1.0);
  CHECK(d.jacobian(0, 1) == -3.0);
  CHECK(d.second_diag(0, 0) == 0.0);
  CHECK(d.second_diag(0, 1) == -1.0);
  CHECK(d.base_grad(0) == 0.0);

  auto expo = make_model("exponential");
  auto de = expo->derivatives(v1(5.0));
  CHECK(de.jacobian(0, 0) == -1.0);
  CHECK(de.second_diag(0, 0) == 0.0);
  CHECK(de.base_grad(0) == 0.0);
}

TEST_CASE("product model assembles block-diagonal derivatives") {
  auto prod = make_model("product:exponential,gaussian");
  CHECK(prod->data_dim() == 2);
  CHECK(prod->param_dim() == 3);
  auto d = prod->derivatives(v2(1.0, 0.0));
  Matrix jac_expected(2, 3);
  jac_expected << -1, 0, 0, 0, 1, 0;
  Matrix sec_expected(2, 3);
  sec_expected << 0, 0, 0, 0, 0, -1;
  CHECK(d.jacobian.isApprox(jac_expected, 0.0));
  CHECK(d.second_diag.isApprox(sec_expected, 0.0));

  // Exact blockwise composition against the factors, coordinatewise.
  RngStream rng(11);
  auto expo = make_model("exponential");
  auto gauss = make_model("gaussian");
  for (int it = 0; it < 20; ++it) {
    Vector x = v2(0.1 + std::abs(rng.normal()), rng.normal());
    auto dp = prod->derivatives(x);
    auto d1 = expo->derivatives(x.head(1));
    auto d2 = gauss->derivatives(x.tail(1));
    CHECK(dp.jacobian.block(0, 0, 1, 1) == d1.jacobian);
    CHECK(dp.jacobian.block(1, 1, 1, 2) == d2.jacobian);
    CHECK(dp.second_diag.block(0, 0, 1, 1) == d1.second_diag);
    CHECK(dp.second_diag.block(1, 1, 1, 2) == d2.second_diag);
    CHECK(dp.jacobian(0, 1) == 0.0);
    CHECK(dp.jacobian(1, 0) == 0.0);
  }
}

TEST_CASE("unnormalized log density") {
  auto gauss = make_model("gaussian");
  CHECK(log_density_unnorm(*gauss, v2(0.0, 1.0), v1(2.0)) == doctest::Approx(-2.0));
  CHECK_THROWS_AS((void)log_density_unnorm(*gauss, v2(0.0, -1.0), v1(2.0)),
                  std::domain_error);
  auto gamma = make_model("gamma");
  CHECK(log_density_unnorm(*gamma, v2(1.0, 1.0), v1(1.0)) == doctest::Approx(-1.0));
  // b == 0 models vanish at theta -> 0 boundary of the quadratic form; use a
  // tiny theta inside the domain.
  CHECK(log_density_unnorm(*gamma, v2(1e-300, 1e-300), v1(1.0)) == doctest::Approx(0.0));
}

TEST_CASE("normalized log density integrates to one") {
  RngStream rng(7);
  auto gauss = make_model("gaussian");
  auto gamma = make_model("gamma");
  auto expo = make_model("exponential");
  for (int rep = 0; rep < 3; ++rep) {
    const Vector tg = random_theta(*gauss, rng);
    const double mass_g = oracles::integrate_real_line(
        [&](double x) { return std::exp(log_density(*gauss, tg, v1(x))); }, tg(0) / tg(1),
        1.0 / std::sqrt(tg(1)), 1e-12);
    CHECK(mass_g == doctest::Approx(1.0).epsilon(1e-8));

    // x = exp(v) substitution tames the x^(shape-1) endpoint.
    const Vector tm = random_theta(*gamma, rng);
    const double upper = std::log((tm(0) + 2.0) / tm(1) * 40.0 + 50.0);
    const double mass_m = oracles::adaptive_simpson(
        [&](double v) {
          const double x = std::exp(v);
          return std::exp(log_density(*gamma, tm, v1(x))) * x;
        },
        -60.0, upper, 1e-12);
    CHECK(mass_m == doctest::Approx(1.0).epsilon(1e-6));

    const Vector te = random_theta(*expo, rng);
    const double mass_e = oracles::adaptive_simpson(
        [&](double x) { return x <= 0 ? 0.0 : std::exp(log_density(*expo, te, v1(x))); },
        1e-12, 60.0 / te(0), 1e-12);
    CHECK(mass_e == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("maximum likelihood estimates") {
  auto gauss = make_model("gaussian");
  Matrix d1(2, 1);
  d1 << -1.0, 1.0;
  CHECK(gauss->mle(d1).isApprox(v2(0.0, 1.0), 1e-12));

  auto expo = make_model("exponential");
  Matrix d2(2, 1);
  d2 << 2.0, 2.0;
  CHECK(expo->mle(d2)(0) == doctest::Approx(0.5));

  Matrix constant = Matrix::Constant(5, 1, 3.0);
  CHECK_THROWS_AS((void)gauss->mle(constant), DegenerateDataError);

  // Gamma MLE recovers the generating parameters on a large sample.
  auto gamma = make_model("gamma");
  RngStream rng(21);
  const double shape = 3.5, rate = 2.0;
  Matrix sample(20000, 1);
  for (Index i = 0; i < sample.rows(); ++i) sample(i, 0) = rng.gamma(shape, rate);
  const Vector theta = gamma->mle(sample);
  CHECK(theta(0) == doctest::Approx(shape - 1.0).epsilon(0.05));
  CHECK(theta(1) == doctest::Approx(rate).epsilon(0.05));
  CHECK_THROWS_AS((void)gamma->mle(constant), DegenerateDataError);
}

TEST_CASE("finite-difference consistency of all derivative blocks") {
  RngStream rng(3);
  for (const auto& model : all_models()) {
    CAPTURE(model->name());
    for (int rep = 0; rep < 100; ++rep) {
      const Vector x = random_point(*model, rng);
      const auto der = model->derivatives(x);
      for (Index j = 0; j < model->param_dim(); ++j) {
        auto rj = [&](const Vector& y) { return model->suff_stat(y)(j); };
        for (Index i = 0; i < model->data_dim(); ++i) {
          const double fd = oracles::fd_partial(rj, x, i);
          CHECK(std::abs(der.jacobian(i, j) - fd) / (1.0 + std::abs(fd)) < 1e-5);
          const double fd2 = oracles::fd_second(rj, x, i);
          CHECK(std::abs(der.second_diag(i, j) - fd2) / (1.0 + std::abs(fd2)) < 1e-4);
        }
      }
      auto b = [&](const Vector& y) { return model->base_log_density(y); };
      for (Index i = 0; i < model->data_dim(); ++i) {
        const double fd = oracles::fd_partial(b, x, i);
        CHECK(std::abs(der.base_grad(i) - fd) / (1.0 + std::abs(fd)) < 1e-5);
      }
    }
  }
}

TEST_CASE("score identity: jacobian * theta + base_grad matches the density gradient") {
  RngStream rng(5);
  for (const auto& model : all_models()) {
    CAPTURE(model->name());
    for (int rep = 0; rep < 100; ++rep) {
      const Vector x = random_point(*model, rng);
      const Vector theta = random_theta(*model, rng);
      const auto der = model->derivatives(x);
      const Vector score = der.jacobian * theta + der.base_grad;
      auto logp = [&](const Vector& y) { return log_density_unnorm(*model, theta, y); };
      for (Index i = 0; i < model->data_dim(); ++i) {
        const double fd = oracles::fd_partial(logp, x, i);
        CHECK(std::abs(score(i) - fd) / (1.0 + std::abs(fd)) < 1e-5);
      }
    }
  }
}

TEST_CASE("model factory grammar") {
  CHECK(make_model("diag_gaussian:3")->param_dim() == 6);
  CHECK(make_model("product:gamma,exponential")->data_support() ==
        DataSupport::positive_orthant);
  CHECK(make_model("product:exponential,gaussian")->data_support() ==
        DataSupport::product_of_supports);
  CHECK_THROWS_AS((void)make_model("weibull"), std::invalid_argument);
}

TEST_CASE("gaussian fixed-variance model carries the base-measure gradient") {
  auto m = make_model("gaussian_fixed_var:4.0");
  auto d = m->derivatives(v1(2.0));
  CHECK(d.base_grad(0) == doctest::Approx(-0.5));
  CHECK(m->log_normalizer(v1(1.5)) == doctest::Approx(0.5 * 4.0 * 1.5 * 1.5));
}
