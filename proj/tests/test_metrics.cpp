#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "restorl/metrics.hpp"
#include "restorl/rng.hpp"
#include "restorl/runstore.hpp"

using namespace restorl;
namespace fs = std::filesystem;

namespace {

// 3x3 matrix helpers for the independent Frechet oracle (Denman-Beavers
// square-root iteration, no linear-algebra library involved).
using Mat3 = std::array<std::array<long double, 3>, 3>;

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      long double acc = 0.0L;
      for (int k = 0; k < 3; ++k) acc += a[i][k] * b[k][j];
      c[i][j] = acc;
    }
  }
  return c;
}

Mat3 mat_inv(const Mat3& m) {
  const long double det =
      m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
      m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
      m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  REQUIRE(det != 0.0L);
  Mat3 inv{};
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

// trace((A)^{1/2}) via Denman-Beavers. A must have positive eigenvalues.
long double trace_sqrt_db(const Mat3& a) {
  Mat3 y = a;
  Mat3 z{};
  for (int i = 0; i < 3; ++i) z[i][i] = 1.0L;
  for (int iter = 0; iter < 80; ++iter) {
    const Mat3 zi = mat_inv(z);
    const Mat3 yi = mat_inv(y);
    Mat3 y_next, z_next;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        y_next[i][j] = 0.5L * (y[i][j] + zi[i][j]);
        z_next[i][j] = 0.5L * (z[i][j] + yi[i][j]);
      }
    }
    y = y_next;
    z = z_next;
  }
  return y[0][0] + y[1][1] + y[2][2];
}

// Full independent Frechet-distance oracle on 3-d feature sets, replicating
// the documented 1e-10 ridge.
double frechet_oracle_3d(const std::vector<std::vector<double>>& fa,
                         const std::vector<std::vector<double>>& fb) {
  auto fit = [](const std::vector<std::vector<double>>& fs) {
    std::array<long double, 3> mu{};
    for (const auto& f : fs) {
      for (int i = 0; i < 3; ++i) mu[i] += f[i];
    }
    for (auto& v : mu) v /= static_cast<long double>(fs.size());
    Mat3 cov{};
    for (const auto& f : fs) {
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) cov[i][j] += (f[i] - mu[i]) * (f[j] - mu[j]);
      }
    }
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) cov[i][j] /= static_cast<long double>(fs.size());
      cov[i][i] += 1e-10L;
    }
    return std::make_pair(mu, cov);
  };
  const auto [mu_a, cov_a] = fit(fa);
  const auto [mu_b, cov_b] = fit(fb);
  long double mean_term = 0.0L;
  for (int i = 0; i < 3; ++i) mean_term += (mu_a[i] - mu_b[i]) * (mu_a[i] - mu_b[i]);
  const long double tr_a = cov_a[0][0] + cov_a[1][1] + cov_a[2][2];
  const long double tr_b = cov_b[0][0] + cov_b[1][1] + cov_b[2][2];
  const long double tr_sqrt = trace_sqrt_db(mat_mul(cov_a, cov_b));
  return static_cast<double>(mean_term + tr_a + tr_b - 2.0L * tr_sqrt);
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("psnr: cap, closed form, symmetry, errors") {
  Grid a(1, 4, 4, 0.3);
  CHECK(psnr(a, a) == kPsnrCap);

  // MSE 0.01 at peak 1 is exactly 20 dB.
  Grid b = a;
  for (double& v : b.values()) v += 0.1;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(psnr(a, b) == psnr(b, a));

  CHECK_THROWS_AS(psnr(a, Grid(1, 2, 2)), std::invalid_argument);
  CHECK_THROWS_AS(psnr(a, a, 0.0), std::invalid_argument);
}

TEST_CASE("ssim: identity, inverted binary image, direct-evaluation oracle") {
  Rng rng(4);
  Grid a(1, 16, 16);
  for (double& v : a.values()) v = rng.uniform();
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // Checkerboard against its inverse: every uniform 8x8 window has means
  // 0.5, variances 0.25, covariance -0.25; the closed form is negative.
  Grid board(1, 16, 16);
  Grid inverse(1, 16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      const double v = (x + y) % 2 == 0 ? 1.0 : 0.0;
      board.at(0, y, x) = v;
      inverse.at(0, y, x) = 1.0 - v;
    }
  }
  const SsimConfig uniform{.window = 8, .sigma = -1.0};
  const double c1 = 1e-4, c2 = 9e-4;
  const double expected =
      ((2.0 * 0.25 + c1) * (2.0 * -0.25 + c2)) / ((0.25 + 0.25 + c1) * (0.25 + 0.25 + c2));
  const double got = ssim(board, inverse, uniform);
  CHECK(got < 0.0);
  CHECK(got == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("ssim is nearly invariant to a simultaneous global shift") {
  Rng rng(9);
  Grid a(1, 16, 16), b(1, 16, 16);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = 0.3 + 0.3 * rng.uniform();
    b[i] = a[i] + 0.05 * rng.normal();
  }
  const double base = ssim(a, b);
  Grid a_shift = a, b_shift = b;
  for (double& v : a_shift.values()) v += 0.1;
  for (double& v : b_shift.values()) v += 0.1;
  // Only the stabilized luminance term moves; the change stays small.
  CHECK(std::abs(ssim(a_shift, b_shift) - base) < 0.02);
}

TEST_CASE("ssim rejects images smaller than the window") {
  Grid tiny(1, 4, 4, 0.5);
  CHECK_THROWS_AS(ssim(tiny, tiny, SsimConfig{.window = 11}), std::invalid_argument);
}

TEST_CASE("frechet proxy: identical sets, closed-form 1-d case, oracle match") {
  Rng rng(6);
  std::vector<Grid> set_a;
  for (int i = 0; i < 6; ++i) {
    Grid g(1, 8, 8);
    for (double& v : g.values()) v = rng.uniform();
    set_a.push_back(std::move(g));
  }
  CHECK(frechet_proxy(set_a, set_a) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(std::abs(frechet_proxy(set_a, set_a)) < 1e-8);

  // Two 1-d point masses at 0 and 1: squared Frechet distance 1.
  const std::vector<std::vector<double>> zeros = {{0.0}, {0.0}};
  const std::vector<std::vector<double>> ones = {{1.0}, {1.0}};
  CHECK(frechet_gaussian_distance(zeros, ones) == doctest::Approx(1.0).epsilon(1e-9));

  // Random 3-d features against the Denman-Beavers oracle.
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng frng(seed);
    std::vector<std::vector<double>> fa, fb;
    for (int i = 0; i < 40; ++i) {
      fa.push_back({frng.normal(), frng.normal() * 0.5, frng.normal() * 2.0});
      fb.push_back({frng.normal() + 0.3, frng.normal() * 1.5, frng.normal() * 0.8 - 0.2});
    }
    const double got = frechet_gaussian_distance(fa, fb);
    const double want = frechet_oracle_3d(fa, fb);
    CHECK(got == doctest::Approx(want).epsilon(1e-6));
    CHECK(std::abs(got - want) < 1e-6);
    // Symmetry.
    CHECK(frechet_gaussian_distance(fb, fa) == doctest::Approx(got).epsilon(1e-9));
  }
}

TEST_CASE("empirical OT cost: identities and the brute-force oracle") {
  Rng rng(12);
  std::vector<Grid> set(6, Grid(1, 2, 2));
  for (auto& g : set) {
    for (double& v : g.values()) v = rng.uniform();
  }
  CHECK(empirical_ot_cost(set, set) == doctest::Approx(0.0));

  const std::vector<std::vector<double>> a = {{0.0}};
  const std::vector<std::vector<double>> b = {{1.0}};
  CHECK(empirical_ot_cost_points(a, b) == doctest::Approx(1.0));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng prng(100 + seed);
    std::vector<std::vector<double>> pa, pb;
    for (int i = 0; i < 6; ++i) {
      pa.push_back({prng.uniform(), prng.uniform(), prng.uniform()});
      pb.push_back({prng.uniform(), prng.uniform(), prng.uniform()});
    }
    std::vector<std::vector<double>> cost(6, std::vector<double>(6));
    for (int i = 0; i < 6; ++i) {
      for (int j = 0; j < 6; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += (pa[i][k] - pb[j][k]) * (pa[i][k] - pb[j][k]);
        cost[i][j] = std::sqrt(acc);
      }
    }
    const double brute = oracles::brute_force_assignment(cost);
    const double got = empirical_ot_cost_points(pa, pb);
    CHECK(got == doctest::Approx(brute).epsilon(1e-12));
    // Symmetry of the matching cost.
    CHECK(empirical_ot_cost_points(pb, pa) == doctest::Approx(got).epsilon(1e-12));
  }

  CHECK_THROWS_AS(empirical_ot_cost_points({{0.0}}, {{0.0}, {1.0}}), std::invalid_argument);
  std::vector<std::vector<double>> big(kOtSizeCap + 1, {0.0});
  CHECK_THROWS_AS(empirical_ot_cost_points(big, big), std::invalid_argument);
}

TEST_CASE("same-distribution OT cost undercuts the shifted one almost always") {
  int hits = 0;
  const int trials = 100;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(5000 + trial);
    std::vector<std::vector<double>> g, same, shifted;
    for (int i = 0; i < 6; ++i) {
      g.push_back({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
      same.push_back({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()});
    }
    for (const auto& p : same) {
      shifted.push_back({p[0] + 0.8, p[1] + 0.8, p[2] + 0.8, p[3] + 0.8});
    }
    if (empirical_ot_cost_points(same, g) <= empirical_ot_cost_points(shifted, g)) ++hits;
  }
  CHECK(hits >= 95);
}

TEST_CASE("spearman handles monotone data and ties") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
  // Ties get averaged ranks; correlation stays defined.
  const double r = spearman({1, 1, 2, 3}, {2, 2, 4, 9});
  CHECK(r == doctest::Approx(1.0));
  CHECK_THROWS_AS(spearman({1.0}, {2.0}), std::invalid_argument);
}

TEST_CASE("run store appends, validates, and survives reopening") {
  const auto dir = fs::temp_directory_path() / "restorl_runstore";
  fs::remove_all(dir);
  RunStore store = RunStore::create(dir);

  MetricsRecord r1;
  r1.iteration = 1;
  r1.psnr = 21.5;
  r1.mean_reward = 3.2;
  r1.extra["loss_total"] = 0.5;
  store.append(r1);
  MetricsRecord r2 = r1;
  r2.iteration = 2;
  r2.mean_reward = 3.4;
  store.append(r2);

  const auto records = store.read_all();
  REQUIRE(records.size() == 2);
  CHECK(records[0].iteration == 1);
  CHECK(records[1].iteration == 2);
  CHECK(records[1].mean_reward == 3.4);
  CHECK(records[0].extra.at("loss_total") == 0.5);

  // Iterations must increase.
  MetricsRecord bad = r1;
  CHECK_THROWS_AS(store.append(bad), std::invalid_argument);
  MetricsRecord nonfinite = r1;
  nonfinite.iteration = 9;
  nonfinite.psnr = std::nan("");
  CHECK_THROWS_AS(store.append(nonfinite), std::invalid_argument);

  // Reopening continues from the last iteration.
  RunStore reopened = RunStore::open(dir);
  MetricsRecord r3 = r1;
  r3.iteration = 3;
  reopened.append(r3);
  CHECK(reopened.read_all().size() == 3);

  // Corrupting a line triggers the checksum error.
  const auto log = dir / "metrics.jsonl";
  std::string bytes = file_bytes(log);
  const auto pos = bytes.find("3.4");
  REQUIRE(pos != std::string::npos);
  bytes[pos] = '9';
  {
    std::ofstream out(log, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  CHECK_THROWS_AS(RunStore::open(dir), LogIntegrityError);
  fs::remove_all(dir);
}

TEST_CASE("report renders deterministically and tolerates empty runs") {
  const auto dir = fs::temp_directory_path() / "restorl_report";
  fs::remove_all(dir);
  RunStore store = RunStore::create(dir);

  render_report(dir);
  CHECK(fs::exists(dir / "report/report.txt"));
  const std::string empty_notice = file_bytes(dir / "report/report.txt");
  CHECK(empty_notice.find("empty run") != std::string::npos);

  for (int i = 1; i <= 5; ++i) {
    MetricsRecord r;
    r.iteration = i;
    r.psnr = 20.0 + i;
    r.ssim = 0.5 + 0.01 * i;
    r.mean_reward = 3.0 + 0.1 * i;
    store.append(r);
  }
  render_report(dir);
  REQUIRE(fs::exists(dir / "report/reward_curve.svg"));
  REQUIRE(fs::exists(dir / "report/psnr_curve.svg"));
  const std::string table = file_bytes(dir / "report/report.txt");
  CHECK(table.find("iter") != std::string::npos);
  CHECK(table.find("25") != std::string::npos);

  const std::string svg1 = file_bytes(dir / "report/reward_curve.svg");
  render_report(dir);
  CHECK(file_bytes(dir / "report/reward_curve.svg") == svg1);
  fs::remove_all(dir);
}
