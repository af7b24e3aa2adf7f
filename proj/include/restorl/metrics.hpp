#pragma once

#include <vector>

#include "restorl/grid.hpp"

namespace restorl {

// Peak PSNR reported when the images are identical (MSE == 0); values are
// capped there.
inline constexpr double kPsnrCap = 100.0;

double psnr(const Grid& a, const Grid& b, double peak = 1.0);

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;    // gaussian window; <= 0 selects a uniform window
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

// Mean structural similarity over all full windows.
double ssim(const Grid& a, const Grid& b, const SsimConfig& config = {});

// Fixed hand-crafted feature map for distribution metrics: 4x4 average-pooled
// intensities plus an 8-bin magnitude-weighted gradient-orientation histogram.
std::vector<double> frechet_features(const Grid& image);

// Squared Frechet distance between Gaussians fitted to the feature sets:
//   |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2})
// Covariances are ridge-regularized with 1e-10 I before the square root.
double frechet_proxy(const std::vector<Grid>& set_a, const std::vector<Grid>& set_b);

// Variant on raw feature vectors, exposed for oracle tests.
double frechet_gaussian_distance(const std::vector<std::vector<double>>& feats_a,
                                 const std::vector<std::vector<double>>& feats_b);

inline constexpr std::size_t kOtSizeCap = 256;

// Exact minimum-cost perfect matching under pairwise L2 cost (total cost).
// Requires equal set sizes, at most kOtSizeCap elements each.
double empirical_ot_cost(const std::vector<Grid>& set_a, const std::vector<Grid>& set_b);
double empirical_ot_cost_points(const std::vector<std::vector<double>>& a,
                                const std::vector<std::vector<double>>& b);

// Exact solver for a square cost matrix; returns the minimal total cost.
double solve_assignment(const std::vector<std::vector<double>>& cost);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace restorl
