#include <doctest.h>

#include <cmath>
#include <random>

#include "demblind/covmodel.hpp"
#include "demblind/error.hpp"

using namespace demblind;
using namespace demblind::covmodel;

namespace {

Theta make_theta(double x2, double h, double e2, double c2, NoiseShape shape = NoiseShape::gaussian) {
  Theta t;
  t.fbm = {x2, h};
  t.noise = {e2, c2, shape};
  return t;
}

}  // namespace

TEST_CASE("fbm increment covariance values") {
  CHECK(fbm_increment_cov(0, 0, 3, 4, {2.5, 0.3}) == 0.0);
  CHECK(fbm_increment_cov(1, 0, 1, 0, {1.0, 0.5}) == doctest::Approx(1.0));
  CHECK(fbm_increment_cov(1, 0, 0, 1, {1.0, 0.5}) == doctest::Approx(1.0 - std::sqrt(2.0) / 2.0));
}

TEST_CASE("fbm increment covariance properties") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> off(-5, 5);
  std::uniform_real_distribution<double> h(0.05, 0.95);
  for (int i = 0; i < 200; ++i) {
    const int t1 = off(rng), s1 = off(rng), t2 = off(rng), s2 = off(rng);
    const FbmParams f{1.7, h(rng)};
    CHECK(fbm_increment_cov(t1, s1, t2, s2, f) == fbm_increment_cov(t2, s2, t1, s1, f));
    CHECK(fbm_increment_cov(t1, s1, t2, s2, {3.0 * f.sigma_x2, f.hurst}) ==
          doctest::Approx(3.0 * fbm_increment_cov(t1, s1, t2, s2, f)));
    CHECK(fbm_increment_cov(t1, s1, t1, s1, f) ==
          doctest::Approx(f.sigma_x2 * std::pow(double(t1 * t1 + s1 * s1), f.hurst)));
  }
}

TEST_CASE("noise covariance") {
  const NoiseParams g{2.0, 0.81, NoiseShape::gaussian};
  const NoiseParams e{2.0, 0.81, NoiseShape::exponential};
  CHECK(noise_cov(0.0, g) == 2.0);
  CHECK(noise_cov(0.0, e) == 2.0);
  CHECK(noise_cov(0.9, g) == doctest::Approx(2.0 * std::exp(-0.5)));
  CHECK(noise_cov(0.9, e) == doctest::Approx(2.0 * std::exp(-1.0)));
  double prev = 2.0;
  for (double d = 0.1; d < 4.0; d += 0.1) {
    const double v = noise_cov(d, g);
    CHECK(v > 0.0);
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("observed covariance small cases") {
  const Coords one{{1, 0}};
  auto m = observed_cov_matrix(one, make_theta(1.0, 0.5, 0.0, 0.7));
  CHECK(m(0, 0) == doctest::Approx(1.0));
  m = observed_cov_matrix(one, make_theta(0.0, 0.5, 1.0, 0.25));
  CHECK(m(0, 0) == doctest::Approx(2.0 - 2.0 * std::exp(-2.0)));
  const auto z = observed_cov_matrix(square_patch_coords(3), make_theta(0.0, 0.5, 0.0, 0.25));
  CHECK(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("observed covariance structure") {
  const auto coords = square_patch_coords(3);
  REQUIRE(coords.size() == 48);
  for (const auto& c : coords) CHECK_FALSE((c.t == 0 && c.s == 0));
  const Theta th = make_theta(2.0, 0.6, 0.7, 1.3);
  const auto m = observed_cov_matrix(coords, th);
  CHECK((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  CHECK(es.eigenvalues().minCoeff() > -1e-10 * m.trace());

  const auto fbm_only = observed_cov_matrix(coords, make_theta(2.0, 0.6, 0.0, 1.3));
  const auto noise_only = observed_cov_matrix(coords, make_theta(0.0, 0.6, 0.7, 1.3));
  CHECK((m - fbm_only - noise_only).cwiseAbs().maxCoeff() < 1e-12);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const double r = std::hypot(coords[i].t, coords[i].s);
    const double expect = fbm_increment_cov(coords[i].t, coords[i].s, coords[i].t, coords[i].s, th.fbm) +
                          2.0 * th.noise.sigma_e2 - 2.0 * noise_cov(r, th.noise);
    CHECK(m(Eigen::Index(i), Eigen::Index(i)) == doctest::Approx(expect));
  }
  // Geometry tables agree with the direct coordinate path.
  const auto g = PatchGeometry::square(3);
  CHECK((observed_cov_matrix(g, th) - m).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("covariance derivatives match central differences") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto g = PatchGeometry::square(3);
  for (int draw = 0; draw < 10; ++draw) {
    const auto shape = draw % 2 ? NoiseShape::exponential : NoiseShape::gaussian;
    const Theta th = make_theta(0.1 + 5 * u(rng), 0.1 + 0.8 * u(rng), 0.1 + 5 * u(rng), 0.1 + 3 * u(rng), shape);
    for (int p = 0; p < kParamCount; ++p) {
      const auto which = static_cast<Param>(p);
      const double h = 1e-6 * std::max(1.0, std::abs(th.get(which)));
      Theta up = th, dn = th;
      up.set(which, th.get(which) + h);
      dn.set(which, th.get(which) - h);
      const Eigen::MatrixXd fd = (observed_cov_matrix(g, up) - observed_cov_matrix(g, dn)) / (2 * h);
      const Eigen::MatrixXd an = cov_derivative(g, th, which);
      CHECK((an - an.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK((an - fd).norm() <= 1e-4 * std::max(an.norm(), 1e-12));
    }
  }
}

TEST_CASE("named derivative examples") {
  const Coords one{{1, 0}};
  const auto d = cov_derivative(one, make_theta(3.0, 0.5, 2.0, 0.25), Param::sigma_e2);
  CHECK(d(0, 0) == doctest::Approx(2.0 - 2.0 * std::exp(-2.0)));
  const auto coords = square_patch_coords(2);
  const Theta a = make_theta(3.0, 0.4, 2.0, 0.5);
  const Theta b = make_theta(3.0, 0.4, 9.0, 0.5);
  const auto dx = cov_derivative(coords, a, Param::sigma_x2);
  CHECK((dx - cov_derivative(coords, b, Param::sigma_x2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((dx - observed_cov_matrix(coords, make_theta(3.0, 0.4, 0.0, 0.5)) / 3.0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bundle evaluation agrees with single calls") {
  const auto g = PatchGeometry::square(2);
  const Theta th = make_theta(1.2, 0.7, 0.4, 2.0);
  const auto b = evaluate_covariance(g, th, kAllParams);
  CHECK((b.cov - observed_cov_matrix(g, th)).cwiseAbs().maxCoeff() < 1e-12);
  for (int p = 0; p < kParamCount; ++p)
    CHECK((b.derivative[std::size_t(p)] - cov_derivative(g, th, Param(p))).cwiseAbs().maxCoeff() < 1e-12);
  const auto partial = evaluate_covariance(g, th, {false, false, true, false});
  CHECK(partial.derivative[0].size() == 0);
  CHECK(partial.derivative[2].rows() == g.size());
}

TEST_CASE("theta validation") {
  CHECK_NOTHROW(make_theta(0, 0.5, 0, 0.25).validate());
  CHECK_THROWS_AS(make_theta(-1, 0.5, 0, 0.25).validate(), InvalidArgument);
  CHECK_THROWS_AS(make_theta(1, 1.0, 0, 0.25).validate(), InvalidArgument);
  CHECK_THROWS_AS(make_theta(1, 0.5, -1, 0.25).validate(), InvalidArgument);
  CHECK_THROWS_AS(make_theta(1, 0.5, 1, 0.0).validate(), InvalidArgument);
}

TEST_CASE("sampling") {
  const auto g = PatchGeometry::square(2);
  CHECK(sample_patch(g, make_theta(0, 0.5, 0, 0.25), 5).cwiseAbs().maxCoeff() == 0.0);
  const Theta th = make_theta(1.0, 0.5, 0.3, 0.6);
  CHECK(sample_patch(g, th, 42) == sample_patch(g, th, 42));
  CHECK(sample_patch(g, th, 42) != sample_patch(g, th, 43));

  // Variance of the (1,0) increment for unit fBm is 1.
  const Coords one{{1, 0}};
  const PatchGeometry g1(one);
  const Theta unit = make_theta(1.0, 0.5, 0.0, 0.25);
  const int n = 100000;
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = sample_patch(g1, unit, std::uint64_t(i) + 1000)[0];
    ss += z * z;
  }
  const double var = ss / n;
  CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / n));
}

TEST_CASE("sampling factor rejects indefinite matrices") {
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(sampling_factor(m), DegenerateModel);
  CHECK(sampling_factor(Eigen::MatrixXd::Zero(3, 3)).cwiseAbs().maxCoeff() == 0.0);
}
