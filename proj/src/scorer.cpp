#include "restorl/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "restorl/metrics.hpp"
#include "restorl/optimizer.hpp"

namespace restorl {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Grid to_luminance(const Grid& image) {
  if (image.channels() == 1) return image;
  Grid lum(1, image.height(), image.width());
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      double acc = 0.0;
      for (int c = 0; c < image.channels(); ++c) acc += image.at(c, y, x);
      lum.at(0, y, x) = acc / image.channels();
    }
  }
  return lum;
}

}  // namespace

std::vector<double> quality_features(const Grid& image) {
  const Grid g = to_luminance(image);
  const int h = g.height(), w = g.width();
  const double n = static_cast<double>(g.size());

  double mean = 0.0;
  for (double v : g.values()) mean += v;
  mean /= n;
  double var = 0.0, dark = 0.0, bright = 0.0;
  for (double v : g.values()) {
    var += (v - mean) * (v - mean);
    if (v < 0.15) dark += 1.0;
    if (v > 0.85) bright += 1.0;
  }
  var /= n;

  double gx_abs = 0.0, gy_abs = 0.0, lap_sq = 0.0, edge = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = x + 1 < w ? g.at(0, y, x + 1) - g.at(0, y, x) : 0.0;
      const double gy = y + 1 < h ? g.at(0, y + 1, x) - g.at(0, y, x) : 0.0;
      gx_abs += std::abs(gx);
      gy_abs += std::abs(gy);
      if (std::hypot(gx, gy) > 0.08) edge += 1.0;
      if (x > 0 && x + 1 < w && y > 0 && y + 1 < h) {
        const double lap = g.at(0, y, x - 1) + g.at(0, y, x + 1) + g.at(0, y - 1, x) +
                           g.at(0, y + 1, x) - 4.0 * g.at(0, y, x);
        lap_sq += lap * lap;
      }
    }
  }
  gx_abs /= n;
  gy_abs /= n;
  lap_sq = std::sqrt(lap_sq / n);
  edge /= n;

  // Mean local 3x3 standard deviation (local contrast).
  double local_std = 0.0;
  int local_count = 0;
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      double m = 0.0, s = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) m += g.at(0, y + dy, x + dx);
      }
      m /= 9.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const double d = g.at(0, y + dy, x + dx) - m;
          s += d * d;
        }
      }
      local_std += std::sqrt(s / 9.0);
      ++local_count;
    }
  }
  if (local_count > 0) local_std /= local_count;

  std::vector<double> sorted(g.values());
  std::sort(sorted.begin(), sorted.end());
  const double p10 = sorted[static_cast<std::size_t>(0.10 * (sorted.size() - 1))];
  const double p90 = sorted[static_cast<std::size_t>(0.90 * (sorted.size() - 1))];
  const double dir_ratio = gx_abs / (gx_abs + gy_abs + 1e-9);

  return {mean,       std::sqrt(var), gx_abs, gy_abs, lap_sq, local_std,
          dark / n,   bright / n,     edge,   dir_ratio, p10, p90};
}

namespace {

double scorer_forward(const ScorerParams& s, const std::vector<double>& feat,
                      std::vector<double>* hidden_out, double* z_out) {
  std::vector<double> std_feat(s.feature_dim);
  for (int i = 0; i < s.feature_dim; ++i) {
    std_feat[i] = (feat[i] - s.feat_mean[i]) / s.feat_std[i];
  }
  std::vector<double> hidden(s.hidden_dim);
  for (int j = 0; j < s.hidden_dim; ++j) {
    double acc = s.b1[j];
    const double* row = s.w1.data() + static_cast<std::size_t>(j) * s.feature_dim;
    for (int i = 0; i < s.feature_dim; ++i) acc += row[i] * std_feat[i];
    hidden[j] = std::tanh(acc);
  }
  double z = s.b2;
  for (int j = 0; j < s.hidden_dim; ++j) z += s.w2[j] * hidden[j];
  if (hidden_out) *hidden_out = hidden;
  if (z_out) *z_out = z;
  return 1.0 + 4.0 * sigmoid(z);
}

struct ScorerGrads {
  std::vector<double> w1, b1, w2;
  double b2 = 0.0;
};

// Accumulates d(0.5*(score-label)^2)/d(params).
void scorer_backward(const ScorerParams& s, const std::vector<double>& feat, double label,
                     ScorerGrads& g) {
  std::vector<double> std_feat(s.feature_dim);
  for (int i = 0; i < s.feature_dim; ++i) {
    std_feat[i] = (feat[i] - s.feat_mean[i]) / s.feat_std[i];
  }
  std::vector<double> hidden;
  double z = 0.0;
  const double score = scorer_forward(s, feat, &hidden, &z);
  const double sig = sigmoid(z);
  const double d_z = (score - label) * 4.0 * sig * (1.0 - sig);
  g.b2 += d_z;
  for (int j = 0; j < s.hidden_dim; ++j) {
    g.w2[j] += d_z * hidden[j];
    const double d_h = d_z * s.w2[j] * (1.0 - hidden[j] * hidden[j]);
    g.b1[j] += d_h;
    double* row = g.w1.data() + static_cast<std::size_t>(j) * s.feature_dim;
    for (int i = 0; i < s.feature_dim; ++i) row[i] += d_h * std_feat[i];
  }
}

ScorerParams init_scorer(int feature_dim, int hidden_dim, Rng& rng) {
  ScorerParams s;
  s.feature_dim = feature_dim;
  s.hidden_dim = hidden_dim;
  s.w1.resize(static_cast<std::size_t>(hidden_dim) * feature_dim);
  s.b1.assign(hidden_dim, 0.0);
  s.w2.resize(hidden_dim);
  for (double& v : s.w1) v = rng.normal() / std::sqrt(static_cast<double>(feature_dim));
  for (double& v : s.w2) v = 0.1 * rng.normal() / std::sqrt(static_cast<double>(hidden_dim));
  s.feat_mean.assign(feature_dim, 0.0);
  s.feat_std.assign(feature_dim, 1.0);
  return s;
}

void train_epochs(ScorerParams& s, const std::vector<std::vector<double>>& feats,
                  const std::vector<double>& labels, int epochs, double lr, Rng& rng) {
  OptimizerHyper hyper{OptimizerKind::adam, lr};
  OptimizerState opt;
  const std::size_t n = feats.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  for (int e = 0; e < epochs; ++e) {
    // Fisher-Yates shuffle driven by the training rng.
    for (std::size_t i = n; i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
    }
    ScorerGrads g;
    g.w1.assign(s.w1.size(), 0.0);
    g.b1.assign(s.b1.size(), 0.0);
    g.w2.assign(s.w2.size(), 0.0);
    g.b2 = 0.0;
    for (std::size_t i : order) scorer_backward(s, feats[i], labels[i], g);
    const double inv_n = 1.0 / static_cast<double>(n);

    std::vector<double> flat_params;
    flat_params.reserve(s.w1.size() + s.b1.size() + s.w2.size() + 1);
    flat_params.insert(flat_params.end(), s.w1.begin(), s.w1.end());
    flat_params.insert(flat_params.end(), s.b1.begin(), s.b1.end());
    flat_params.insert(flat_params.end(), s.w2.begin(), s.w2.end());
    flat_params.push_back(s.b2);
    std::vector<double> flat_grad;
    flat_grad.reserve(flat_params.size());
    for (double v : g.w1) flat_grad.push_back(v * inv_n);
    for (double v : g.b1) flat_grad.push_back(v * inv_n);
    for (double v : g.w2) flat_grad.push_back(v * inv_n);
    flat_grad.push_back(g.b2 * inv_n);

    apply_update(flat_params, flat_grad, opt, hyper);

    std::size_t off = 0;
    std::copy(flat_params.begin(), flat_params.begin() + s.w1.size(), s.w1.begin());
    off += s.w1.size();
    std::copy(flat_params.begin() + off, flat_params.begin() + off + s.b1.size(), s.b1.begin());
    off += s.b1.size();
    std::copy(flat_params.begin() + off, flat_params.begin() + off + s.w2.size(), s.w2.begin());
    off += s.w2.size();
    s.b2 = flat_params[off];
  }
  s.epochs_trained += epochs;
}

}  // namespace

double iqa_reward(const ScorerParams& scorer, const Grid& image) {
  if (!all_finite(image)) throw std::invalid_argument("iqa_reward: non-finite input");
  const auto feat = quality_features(image);
  return scorer_forward(scorer, feat, nullptr, nullptr);
}

ScorerParams train_quality_scorer(const DatasetHandle& dataset, const ScorerTrainConfig& config,
                                  Rng& rng) {
  const auto train_idx = dataset.indices(Split::train);
  const auto val_idx = dataset.indices(Split::val);
  if (train_idx.empty() || val_idx.empty()) {
    throw std::invalid_argument("train_quality_scorer: dataset needs train and val splits");
  }

  std::set<long long> distinct;
  for (std::size_t i : train_idx) {
    distinct.insert(std::llround(dataset.item(i).severity * 1e6));
  }
  if (distinct.size() < 3) {
    throw std::invalid_argument(
        "train_quality_scorer: insufficient severity diversity (need >= 3 distinct levels, got " +
        std::to_string(distinct.size()) + ")");
  }

  std::vector<std::vector<double>> feats;
  std::vector<double> labels;
  for (std::size_t i : train_idx) {
    const RestorationPair p = dataset.pair(i);
    feats.push_back(quality_features(p.gt));
    labels.push_back(severity_label(0.0));
    feats.push_back(quality_features(p.degraded));
    labels.push_back(severity_label(p.severity));
  }

  const int fd = static_cast<int>(feats.front().size());
  ScorerParams s = init_scorer(fd, config.hidden_dim, rng);
  for (int i = 0; i < fd; ++i) {
    double m = 0.0;
    for (const auto& f : feats) m += f[i];
    m /= static_cast<double>(feats.size());
    double v = 0.0;
    for (const auto& f : feats) v += (f[i] - m) * (f[i] - m);
    v /= static_cast<double>(feats.size());
    s.feat_mean[i] = m;
    s.feat_std[i] = std::max(std::sqrt(v), 1e-8);
  }

  auto holdout_rank_corr = [&]() {
    std::vector<double> scores, severities;
    for (std::size_t i : val_idx) {
      const RestorationPair p = dataset.pair(i);
      scores.push_back(iqa_reward(s, p.gt));
      severities.push_back(0.0);
      scores.push_back(iqa_reward(s, p.degraded));
      severities.push_back(p.severity);
    }
    // Scores should fall as severity rises; report the magnitude of the
    // (negative) correlation.
    return -spearman(scores, severities);
  };

  train_epochs(s, feats, labels, config.epochs, config.lr, rng);
  double corr = holdout_rank_corr();
  for (int round = 0; round < config.max_extra_rounds && corr < config.min_rank_corr; ++round) {
    train_epochs(s, feats, labels, config.epochs, config.lr, rng);
    corr = holdout_rank_corr();
  }
  if (corr < config.min_rank_corr) {
    throw std::runtime_error("train_quality_scorer: held-out rank correlation " +
                             std::to_string(corr) + " below required " +
                             std::to_string(config.min_rank_corr));
  }
  s.holdout_rank_corr = corr;
  return s;
}

void finetune_scorer(ScorerParams& scorer, const std::vector<const Grid*>& images,
                     const std::vector<double>& labels, int epochs, double lr, Rng& rng) {
  if (images.size() != labels.size() || images.empty()) {
    throw std::invalid_argument("finetune_scorer: image/label misalignment");
  }
  std::vector<std::vector<double>> feats;
  for (const Grid* g : images) feats.push_back(quality_features(*g));
  train_epochs(scorer, feats, labels, epochs, lr, rng);
}

namespace {
constexpr char kScorerMagic[4] = {'R', 'S', 'C', 'R'};
constexpr std::uint32_t kScorerVersion = 1;
}  // namespace

void save_scorer(const std::filesystem::path& path, const ScorerParams& s) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_scorer: cannot open " + path.string());
  out.write(kScorerMagic, 4);
  auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_vec = [&](const std::vector<double>& v) {
    put_u32(static_cast<std::uint32_t>(v.size()));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  put_u32(kScorerVersion);
  put_u32(static_cast<std::uint32_t>(s.feature_dim));
  put_u32(static_cast<std::uint32_t>(s.hidden_dim));
  put_u32(static_cast<std::uint32_t>(s.epochs_trained));
  put_vec(s.w1);
  put_vec(s.b1);
  put_vec(s.w2);
  put_vec({s.b2, s.holdout_rank_corr});
  put_vec(s.feat_mean);
  put_vec(s.feat_std);
  if (!out) throw std::runtime_error("save_scorer: short write");
}

ScorerParams load_scorer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_scorer: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kScorerMagic, 4) != 0) {
    throw std::runtime_error("load_scorer: not a scorer file: " + path.string());
  }
  auto get_u32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_vec = [&]() {
    const std::uint32_t n = get_u32();
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kScorerVersion) {
    throw std::runtime_error("load_scorer: unsupported version " + std::to_string(version));
  }
  ScorerParams s;
  s.feature_dim = static_cast<int>(get_u32());
  s.hidden_dim = static_cast<int>(get_u32());
  s.epochs_trained = static_cast<int>(get_u32());
  s.w1 = get_vec();
  s.b1 = get_vec();
  s.w2 = get_vec();
  const auto scalars = get_vec();
  s.b2 = scalars.at(0);
  s.holdout_rank_corr = scalars.at(1);
  s.feat_mean = get_vec();
  s.feat_std = get_vec();
  if (!in) throw std::runtime_error("load_scorer: truncated file");
  return s;
}

}  // namespace restorl
