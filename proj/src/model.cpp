#include "restorl/model.hpp"

#include <cmath>
#include <stdexcept>

#include "restorl/diffusion.hpp"
#include "restorl/hash.hpp"

namespace restorl {

namespace {

struct ConvSpec {
  std::size_t w_off, b_off;
  int in_ch, out_ch;
};

struct BlockSpec {
  std::size_t temb_w, temb_b;
  ConvSpec conv;
};

struct Layout {
  int C, F, B, D, K;
  ConvSpec conv_in;
  std::vector<BlockSpec> blocks;
  ConvSpec conv_out;
  std::size_t total;
};

Layout make_layout(const DenoiserArch& a) {
  a.validate();
  Layout l;
  l.C = a.image_channels;
  l.F = a.hidden_channels;
  l.B = a.num_blocks;
  l.D = a.temb_dim;
  l.K = a.kernel;
  const std::size_t kk = static_cast<std::size_t>(l.K) * l.K;
  std::size_t off = 0;
  auto conv = [&](int in_ch, int out_ch) {
    ConvSpec c{off, off + static_cast<std::size_t>(out_ch) * in_ch * kk, in_ch, out_ch};
    off = c.b_off + static_cast<std::size_t>(out_ch);
    return c;
  };
  l.conv_in = conv(2 * l.C, l.F);
  l.blocks.resize(l.B);
  for (int b = 0; b < l.B; ++b) {
    l.blocks[b].temb_w = off;
    off += static_cast<std::size_t>(l.F) * l.D;
    l.blocks[b].temb_b = off;
    off += static_cast<std::size_t>(l.F);
    l.blocks[b].conv = conv(l.F, l.F);
  }
  l.conv_out = conv(l.F, l.C);
  l.total = off;
  return l;
}

double silu(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

// `same` convolution with zero padding.
void conv_forward(const double* w, const double* b, const ConvSpec& spec, int k,
                  const Grid& in, Grid& out) {
  const int h = in.height(), wd = in.width(), p = k / 2;
  for (int oc = 0; oc < spec.out_ch; ++oc) {
    const double bias = b[oc];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) out.at(oc, y, x) = bias;
    }
    for (int ic = 0; ic < spec.in_ch; ++ic) {
      for (int ky = 0; ky < k; ++ky) {
        const int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
        for (int kx = 0; kx < k; ++kx) {
          const double wv = w[((static_cast<std::size_t>(oc) * spec.in_ch + ic) * k + ky) * k + kx];
          const int x0 = std::max(0, p - kx), x1 = std::min(wd, wd + p - kx);
          for (int y = y0; y < y1; ++y) {
            const double* in_row = &in.at(ic, y + ky - p, 0);
            double* out_row = &out.at(oc, y, 0);
            for (int x = x0; x < x1; ++x) out_row[x] += wv * in_row[x + kx - p];
          }
        }
      }
    }
  }
}

// Accumulates input- and parameter-gradients for one convolution.
void conv_backward(const double* w, const ConvSpec& spec, int k, const Grid& in,
                   const Grid& d_out, Grid* d_in, double* dw, double* db) {
  const int h = in.height(), wd = in.width(), p = k / 2;
  for (int oc = 0; oc < spec.out_ch; ++oc) {
    double bias_acc = 0.0;
    for (int y = 0; y < h; ++y) {
      const double* row = &d_out.at(oc, y, 0);
      for (int x = 0; x < wd; ++x) bias_acc += row[x];
    }
    db[oc] += bias_acc;
    for (int ic = 0; ic < spec.in_ch; ++ic) {
      for (int ky = 0; ky < k; ++ky) {
        const int y0 = std::max(0, p - ky), y1 = std::min(h, h + p - ky);
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t widx =
              ((static_cast<std::size_t>(oc) * spec.in_ch + ic) * k + ky) * k + kx;
          const double wv = w[widx];
          const int x0 = std::max(0, p - kx), x1 = std::min(wd, wd + p - kx);
          double w_acc = 0.0;
          for (int y = y0; y < y1; ++y) {
            const double* in_row = &in.at(ic, y + ky - p, 0);
            const double* dout_row = &d_out.at(oc, y, 0);
            if (d_in) {
              double* din_row = &d_in->at(ic, y + ky - p, 0);
              for (int x = x0; x < x1; ++x) {
                w_acc += in_row[x + kx - p] * dout_row[x];
                din_row[x + kx - p] += wv * dout_row[x];
              }
            } else {
              for (int x = x0; x < x1; ++x) w_acc += in_row[x + kx - p] * dout_row[x];
            }
          }
          dw[widx] += w_acc;
        }
      }
    }
  }
}

}  // namespace

void DenoiserArch::validate() const {
  if (image_channels < 1 || hidden_channels < 1 || num_blocks < 1) {
    throw std::invalid_argument("DenoiserArch: channel/block counts must be positive");
  }
  if (temb_dim < 2 || temb_dim % 2 != 0) {
    throw std::invalid_argument("DenoiserArch: temb_dim must be even and >= 2");
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw std::invalid_argument("DenoiserArch: kernel must be odd and >= 1");
  }
}

std::size_t param_count(const DenoiserArch& arch) { return make_layout(arch).total; }

std::string ModelParams::hash() const {
  Fnv1a h;
  h.update_u64(static_cast<std::uint64_t>(arch.image_channels));
  h.update_u64(static_cast<std::uint64_t>(arch.hidden_channels));
  h.update_u64(static_cast<std::uint64_t>(arch.num_blocks));
  h.update_u64(static_cast<std::uint64_t>(arch.temb_dim));
  h.update_u64(static_cast<std::uint64_t>(arch.kernel));
  h.update_doubles(values);
  return h.hex();
}

ModelParams init_model(const DenoiserArch& arch, Rng& rng) {
  const Layout l = make_layout(arch);
  ModelParams p;
  p.arch = arch;
  p.values.assign(l.total, 0.0);

  auto fill_conv = [&](const ConvSpec& c, double scale) {
    const double std_dev = scale / std::sqrt(static_cast<double>(c.in_ch) * l.K * l.K);
    for (std::size_t i = c.w_off; i < c.b_off; ++i) p.values[i] = std_dev * rng.normal();
  };
  fill_conv(l.conv_in, 1.0);
  for (const auto& b : l.blocks) {
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(l.D));
    for (std::size_t i = b.temb_w; i < b.temb_b; ++i) p.values[i] = std_dev * rng.normal();
    fill_conv(b.conv, 1.0);
  }
  // Small output scale so the untrained model predicts near-zero noise.
  fill_conv(l.conv_out, 0.01);
  return p;
}

std::vector<double> sinusoidal_embedding(int timestep, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
  const int half = dim / 2;
  std::vector<double> emb(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    emb[2 * i] = std::sin(timestep * freq);
    emb[2 * i + 1] = std::cos(timestep * freq);
  }
  return emb;
}

Grid denoiser_forward(const ModelParams& params, const Grid& x, const Grid& cond,
                      int timestep, DenoiserCache* cache) {
  const Layout l = make_layout(params.arch);
  if (params.values.size() != l.total) {
    throw std::invalid_argument("denoiser_forward: parameter vector does not match architecture");
  }
  if (x.channels() != l.C) throw std::invalid_argument("denoiser_forward: bad input channel count");
  require_same_shape(x, cond, "denoiser_forward");

  const int h = x.height(), w = x.width();
  const double* v = params.values.data();

  Grid input(2 * l.C, h, w);
  for (int c = 0; c < l.C; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        input.at(c, y, xx) = x.at(c, y, xx);
        input.at(l.C + c, y, xx) = cond.at(c, y, xx);
      }
    }
  }
  const std::vector<double> temb = sinusoidal_embedding(timestep, l.D);

  Grid g(l.F, h, w);
  conv_forward(v + l.conv_in.w_off, v + l.conv_in.b_off, l.conv_in, l.K, input, g);

  if (cache) {
    cache->input = input;
    cache->temb = temb;
    cache->block_pre.resize(l.B);
    cache->block_act.resize(l.B);
  }

  for (int b = 0; b < l.B; ++b) {
    const BlockSpec& bs = l.blocks[b];
    // Per-channel bias from the timestep embedding.
    for (int f = 0; f < l.F; ++f) {
      double bias = v[bs.temb_b + f];
      const double* wrow = v + bs.temb_w + static_cast<std::size_t>(f) * l.D;
      for (int d = 0; d < l.D; ++d) bias += wrow[d] * temb[d];
      for (int y = 0; y < h; ++y) {
        double* row = &g.at(f, y, 0);
        for (int xx = 0; xx < w; ++xx) row[xx] += bias;
      }
    }
    if (cache) cache->block_pre[b] = g;
    Grid act = Grid::like(g);
    for (std::size_t i = 0; i < g.size(); ++i) act[i] = silu(g[i]);
    if (cache) cache->block_act[b] = act;
    conv_forward(v + bs.conv.w_off, v + bs.conv.b_off, bs.conv, l.K, act, g);
  }

  if (cache) cache->final_pre = g;
  Grid act = Grid::like(g);
  for (std::size_t i = 0; i < g.size(); ++i) act[i] = silu(g[i]);
  if (cache) cache->final_act = act;

  Grid out(l.C, h, w);
  conv_forward(v + l.conv_out.w_off, v + l.conv_out.b_off, l.conv_out, l.K, act, out);
  return out;
}

void denoiser_backward(const ModelParams& params, const DenoiserCache& cache,
                       const Grid& d_output, std::vector<double>& grad) {
  const Layout l = make_layout(params.arch);
  if (grad.size() != l.total) throw std::invalid_argument("denoiser_backward: bad gradient size");
  const double* v = params.values.data();
  double* gv = grad.data();

  Grid d_final_act = Grid::like(cache.final_act);
  conv_backward(v + l.conv_out.w_off, l.conv_out, l.K, cache.final_act, d_output, &d_final_act,
                gv + l.conv_out.w_off, gv + l.conv_out.b_off);

  Grid d_g = Grid::like(cache.final_pre);
  for (std::size_t i = 0; i < d_g.size(); ++i) {
    d_g[i] = d_final_act[i] * silu_grad(cache.final_pre[i]);
  }

  for (int b = l.B - 1; b >= 0; --b) {
    const BlockSpec& bs = l.blocks[b];
    Grid d_act = Grid::like(cache.block_act[b]);
    conv_backward(v + bs.conv.w_off, bs.conv, l.K, cache.block_act[b], d_g, &d_act,
                  gv + bs.conv.w_off, gv + bs.conv.b_off);
    Grid d_pre = Grid::like(cache.block_pre[b]);
    for (std::size_t i = 0; i < d_pre.size(); ++i) {
      d_pre[i] = d_act[i] * silu_grad(cache.block_pre[b][i]);
    }
    // Bias path: accumulate per-channel sums into the embedding projection.
    const int h = d_pre.height(), w = d_pre.width();
    for (int f = 0; f < l.F; ++f) {
      double sum = 0.0;
      for (int y = 0; y < h; ++y) {
        const double* row = &d_pre.at(f, y, 0);
        for (int xx = 0; xx < w; ++xx) sum += row[xx];
      }
      gv[bs.temb_b + f] += sum;
      double* wrow = gv + bs.temb_w + static_cast<std::size_t>(f) * l.D;
      for (int d = 0; d < l.D; ++d) wrow[d] += sum * cache.temb[d];
    }
    d_g = std::move(d_pre);
  }

  conv_backward(v + l.conv_in.w_off, l.conv_in, l.K, cache.input, d_g, nullptr,
                gv + l.conv_in.w_off, gv + l.conv_in.b_off);
}

namespace {

double sample_loss(const ModelParams& params, const SftSample& s, double weight,
                   const DiffusionSchedule& schedule, std::uint64_t seed,
                   std::vector<double>* grad) {
  Rng stream(seed);
  const int t = stream.uniform_int(1, schedule.num_steps());
  const Grid noise = stream.normal_grid(s.x0->channels(), s.x0->height(), s.x0->width());
  const Grid x_t = forward_sample(*s.x0, t, noise, schedule);

  DenoiserCache cache;
  const Grid eps_hat = denoiser_forward(params, x_t, *s.cond, schedule.model_timestep(t),
                                        grad ? &cache : nullptr);
  double loss = 0.0;
  Grid d_eps = Grid::like(eps_hat);
  const double inv_d = 1.0 / static_cast<double>(eps_hat.size());
  for (std::size_t i = 0; i < eps_hat.size(); ++i) {
    const double diff = eps_hat[i] - noise[i];
    loss += diff * diff * inv_d;
    d_eps[i] = 2.0 * diff * inv_d * weight;
  }
  if (grad) denoiser_backward(params, cache, d_eps, *grad);
  return loss;
}

std::uint64_t sample_stream_seed(std::uint64_t base, const SftSample& s) {
  Fnv1a h;
  h.update_doubles(s.x0->values());
  h.update_doubles(s.cond->values());
  return Rng::derive(base, h.digest());
}

}  // namespace

double sft_loss(const ModelParams& params, std::span<const SftSample> batch,
                const DiffusionSchedule& schedule, Rng& rng, std::vector<double>* grad) {
  if (batch.empty()) throw std::invalid_argument("sft_loss: empty batch");
  const std::uint64_t base = rng.next_u64();
  const double inv_m = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const SftSample& s : batch) {
    total += inv_m * sample_loss(params, s, inv_m, schedule, sample_stream_seed(base, s), grad);
  }
  return total;
}

double weighted_sft_loss(const ModelParams& params, std::span<const SftSample> batch,
                         std::span<const double> weights, const DiffusionSchedule& schedule,
                         Rng& rng, std::vector<double>* grad,
                         std::vector<double>* per_sample_losses) {
  if (batch.empty()) throw std::invalid_argument("weighted_sft_loss: empty batch");
  if (weights.size() != batch.size()) {
    throw std::invalid_argument("weighted_sft_loss: weight/sample misalignment");
  }
  const std::uint64_t base = rng.next_u64();
  if (per_sample_losses) per_sample_losses->clear();
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double li = sample_loss(params, batch[i], weights[i], schedule,
                                  sample_stream_seed(base, batch[i]), grad);
    if (per_sample_losses) per_sample_losses->push_back(li);
    total += weights[i] * li;
  }
  return total;
}

}  // namespace restorl
