#include "restorl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace restorl {

double psnr(const Grid& a, const Grid& b, double peak) {
  require_same_shape(a, b, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(10.0 * std::log10(peak * peak / m), kPsnrCap);
}

namespace {

std::vector<double> make_window(const SsimConfig& c) {
  std::vector<double> win(static_cast<std::size_t>(c.window) * c.window);
  const double half = (c.window - 1) / 2.0;
  double sum = 0.0;
  for (int y = 0; y < c.window; ++y) {
    for (int x = 0; x < c.window; ++x) {
      double v = 1.0;
      if (c.sigma > 0.0) {
        const double dy = y - half, dx = x - half;
        v = std::exp(-(dx * dx + dy * dy) / (2.0 * c.sigma * c.sigma));
      }
      win[static_cast<std::size_t>(y) * c.window + x] = v;
      sum += v;
    }
  }
  for (double& v : win) v /= sum;
  return win;
}

}  // namespace

double ssim(const Grid& a, const Grid& b, const SsimConfig& config) {
  require_same_shape(a, b, "ssim");
  if (config.window > a.height() || config.window > a.width()) {
    throw std::invalid_argument("ssim: image smaller than the window");
  }
  const double c1 = (config.k1 * config.peak) * (config.k1 * config.peak);
  const double c2 = (config.k2 * config.peak) * (config.k2 * config.peak);
  const auto win = make_window(config);
  const int k = config.window;

  double total = 0.0;
  long count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y + k <= a.height(); ++y) {
      for (int x = 0; x + k <= a.width(); ++x) {
        double mu_a = 0.0, mu_b = 0.0;
        for (int wy = 0; wy < k; ++wy) {
          for (int wx = 0; wx < k; ++wx) {
            const double wv = win[static_cast<std::size_t>(wy) * k + wx];
            mu_a += wv * a.at(c, y + wy, x + wx);
            mu_b += wv * b.at(c, y + wy, x + wx);
          }
        }
        double var_a = 0.0, var_b = 0.0, cov = 0.0;
        for (int wy = 0; wy < k; ++wy) {
          for (int wx = 0; wx < k; ++wx) {
            const double wv = win[static_cast<std::size_t>(wy) * k + wx];
            const double da = a.at(c, y + wy, x + wx) - mu_a;
            const double db = b.at(c, y + wy, x + wx) - mu_b;
            var_a += wv * da * da;
            var_b += wv * db * db;
            cov += wv * da * db;
          }
        }
        const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
        const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
        total += num / den;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

std::vector<double> frechet_features(const Grid& image) {
  const int h = image.height(), w = image.width();
  Grid lum(1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int c = 0; c < image.channels(); ++c) acc += image.at(c, y, x);
      lum.at(0, y, x) = acc / image.channels();
    }
  }

  std::vector<double> feat;
  feat.reserve(24);
  // 4x4 average pooling.
  for (int by = 0; by < 4; ++by) {
    for (int bx = 0; bx < 4; ++bx) {
      const int y0 = by * h / 4, y1 = (by + 1) * h / 4;
      const int x0 = bx * w / 4, x1 = (bx + 1) * w / 4;
      double acc = 0.0;
      int n = 0;
      for (int y = y0; y < std::max(y1, y0 + 1) && y < h; ++y) {
        for (int x = x0; x < std::max(x1, x0 + 1) && x < w; ++x) {
          acc += lum.at(0, y, x);
          ++n;
        }
      }
      feat.push_back(acc / std::max(n, 1));
    }
  }
  // 8-bin gradient-orientation histogram, magnitude weighted.
  std::vector<double> hist(8, 0.0);
  double total = 0.0;
  for (int y = 0; y + 1 < h; ++y) {
    for (int x = 0; x + 1 < w; ++x) {
      const double gx = lum.at(0, y, x + 1) - lum.at(0, y, x);
      const double gy = lum.at(0, y + 1, x) - lum.at(0, y, x);
      const double mag = std::hypot(gx, gy);
      if (mag < 1e-12) continue;
      double angle = std::atan2(gy, gx);  // [-pi, pi]
      int bin = static_cast<int>((angle + std::numbers::pi) / (2.0 * std::numbers::pi) * 8.0);
      bin = std::clamp(bin, 0, 7);
      hist[bin] += mag;
      total += mag;
    }
  }
  for (double v : hist) feat.push_back(total > 0.0 ? v / total : 0.0);
  return feat;
}

double frechet_gaussian_distance(const std::vector<std::vector<double>>& feats_a,
                                 const std::vector<std::vector<double>>& feats_b) {
  if (feats_a.empty() || feats_b.empty()) {
    throw std::invalid_argument("frechet: both sets must be nonempty");
  }
  const int d = static_cast<int>(feats_a.front().size());
  auto fit = [&](const std::vector<std::vector<double>>& feats) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (const auto& f : feats) mu += Eigen::Map<const Eigen::VectorXd>(f.data(), d);
    mu /= static_cast<double>(feats.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : feats) {
      const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(f.data(), d) - mu;
      cov += c * c.transpose();
    }
    cov /= static_cast<double>(feats.size());
    // Ridge keeps the square roots defined for rank-deficient sets.
    cov += 1e-10 * Eigen::MatrixXd::Identity(d, d);
    return std::make_pair(mu, cov);
  };

  const auto [mu_a, cov_a] = fit(feats_a);
  const auto [mu_b, cov_b] = fit(feats_b);

  // tr((Sa Sb)^{1/2}) via the symmetric form sqrt(sqrt(Sa) Sb sqrt(Sa)).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
  const Eigen::MatrixXd sqrt_a = es_a.operatorSqrt();
  const Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_i((inner + inner.transpose()) / 2.0);
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i) tr_sqrt += std::sqrt(std::max(es_i.eigenvalues()[i], 0.0));

  const double mean_term = (mu_a - mu_b).squaredNorm();
  const double result = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(result, 0.0);
}

double frechet_proxy(const std::vector<Grid>& set_a, const std::vector<Grid>& set_b) {
  if (set_a.empty() || set_b.empty()) {
    throw std::invalid_argument("frechet_proxy: both sets must be nonempty");
  }
  std::vector<std::vector<double>> fa, fb;
  for (const Grid& g : set_a) fa.push_back(frechet_features(g));
  for (const Grid& g : set_b) fb.push_back(frechet_features(g));
  return frechet_gaussian_distance(fa, fb);
}

double solve_assignment(const std::vector<std::vector<double>>& cost) {
  // O(n^3) shortest augmenting path formulation with potentials.
  const int n = static_cast<int>(cost.size());
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = 0;
      double delta = std::numeric_limits<double>::infinity();
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) {
    if (p[j]) total += cost[p[j] - 1][j - 1];
  }
  return total;
}

double empirical_ot_cost_points(const std::vector<std::vector<double>>& a,
                                const std::vector<std::vector<double>>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("empirical_ot_cost: sets must have equal sizes");
  }
  if (a.empty()) throw std::invalid_argument("empirical_ot_cost: empty sets");
  if (a.size() > kOtSizeCap) {
    throw std::invalid_argument("empirical_ot_cost: set size exceeds the documented cap of " +
                                std::to_string(kOtSizeCap));
  }
  const std::size_t n = a.size();
  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].size() != b[0].size()) {
      throw std::invalid_argument("empirical_ot_cost: dimension mismatch");
    }
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a[i].size(); ++k) {
        const double d = a[i][k] - b[j][k];
        acc += d * d;
      }
      cost[i][j] = std::sqrt(acc);
    }
  }
  return solve_assignment(cost);
}

double empirical_ot_cost(const std::vector<Grid>& set_a, const std::vector<Grid>& set_b) {
  std::vector<std::vector<double>> a, b;
  for (const Grid& g : set_a) a.push_back(g.values());
  for (const Grid& g : set_b) b.push_back(g.values());
  return empirical_ot_cost_points(a, b);
}

namespace {

std::vector<double> ranks_with_ties(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg_rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman: need two aligned samples of size >= 2");
  }
  const auto rx = ranks_with_ties(x);
  const auto ry = ranks_with_ties(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace restorl
