#include "fragto/mapnet.hpp"

#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "fragto/util.hpp"

namespace fragto {
namespace nn {

void conv3x3_forward(const Tensor& in, const double* w, const double* b, int out_ch,
                     Tensor& out) {
  const int h = in.h, wd = in.w, in_ch = in.ch;
  out = Tensor(out_ch, h, wd);
  for (int oc = 0; oc < out_ch; ++oc) {
    double* dst = out.plane(oc);
    const double bias = b[oc];
    for (int i = 0; i < h * wd; ++i) dst[i] = bias;
    for (int ic = 0; ic < in_ch; ++ic) {
      const double* kw = w + (static_cast<size_t>(oc) * in_ch + ic) * 9;
      const double* src = in.plane(ic);
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = ky == 0 ? 1 : 0;
        const int y1 = ky == 2 ? h - 1 : h;
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = kw[ky * 3 + kx];
          const int x0 = kx == 0 ? 1 : 0;
          const int x1 = kx == 2 ? wd - 1 : wd;
          if (y1 <= y0 || x1 <= x0) continue;
          for (int y = y0; y < y1; ++y) {
            double* drow = dst + static_cast<size_t>(y) * wd + x0;
            const double* srow = src + static_cast<size_t>(y + ky - 1) * wd + (x0 + kx - 1);
            const int n = x1 - x0;
            for (int i = 0; i < n; ++i) drow[i] += wv * srow[i];
          }
        }
      }
    }
  }
}

void conv3x3_forward_circular(const Tensor& in, const double* w, const double* b, int out_ch,
                              Tensor& out) {
  const int h = in.h, wd = in.w, in_ch = in.ch;
  out = Tensor(out_ch, h, wd);
  for (int oc = 0; oc < out_ch; ++oc) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < wd; ++x) {
        double acc = b[oc];
        for (int ic = 0; ic < in_ch; ++ic) {
          const double* kw = w + (static_cast<size_t>(oc) * in_ch + ic) * 9;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = (y + ky - 1 + h) % h;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = (x + kx - 1 + wd) % wd;
              acc += kw[ky * 3 + kx] * in.at(ic, iy, ix);
            }
          }
        }
        out.at(oc, y, x) = acc;
      }
    }
  }
}

void conv3x3_backward(const Tensor& in, const double* w, int out_ch, const Tensor& gout,
                      Tensor* gin, double* gw, double* gb) {
  const int h = in.h, wd = in.w, in_ch = in.ch;
  for (int oc = 0; oc < out_ch; ++oc) {
    const double* gp = gout.plane(oc);
    double acc = 0.0;
    for (int i = 0; i < h * wd; ++i) acc += gp[i];
    gb[oc] += acc;
    for (int ic = 0; ic < in_ch; ++ic) {
      const double* kw = w + (static_cast<size_t>(oc) * in_ch + ic) * 9;
      double* kg = gw + (static_cast<size_t>(oc) * in_ch + ic) * 9;
      const double* src = in.plane(ic);
      double* gsrc = gin ? gin->plane(ic) : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = ky == 0 ? 1 : 0;
        const int y1 = ky == 2 ? h - 1 : h;
        for (int kx = 0; kx < 3; ++kx) {
          const int x0 = kx == 0 ? 1 : 0;
          const int x1 = kx == 2 ? wd - 1 : wd;
          if (y1 <= y0 || x1 <= x0) continue;
          const double wv = kw[ky * 3 + kx];
          double wacc = 0.0;
          const int n = x1 - x0;
          for (int y = y0; y < y1; ++y) {
            const double* grow = gp + static_cast<size_t>(y) * wd + x0;
            const size_t soff = static_cast<size_t>(y + ky - 1) * wd + (x0 + kx - 1);
            const double* srow = src + soff;
            for (int i = 0; i < n; ++i) wacc += grow[i] * srow[i];
            if (gsrc) {
              double* girow = gsrc + soff;
              for (int i = 0; i < n; ++i) girow[i] += wv * grow[i];
            }
          }
          kg[ky * 3 + kx] += wacc;
        }
      }
    }
  }
}

void tconv3x3_forward(const Tensor& in, const double* w, const double* b, int out_ch,
                      Tensor& out) {
  const int h = in.h, wd = in.w, in_ch = in.ch;
  const int oh = 2 * h, ow = 2 * wd;
  out = Tensor(out_ch, oh, ow);
  for (int oc = 0; oc < out_ch; ++oc) {
    double* dst = out.plane(oc);
    const double bias = b[oc];
    for (int i = 0; i < oh * ow; ++i) dst[i] = bias;
    for (int ic = 0; ic < in_ch; ++ic) {
      const double* kw = w + (static_cast<size_t>(oc) * in_ch + ic) * 9;
      const double* src = in.plane(ic);
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = ky == 0 ? 1 : 0;
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = kw[ky * 3 + kx];
          const int x0 = kx == 0 ? 1 : 0;
          for (int iy = y0; iy < h; ++iy) {
            const double* srow = src + static_cast<size_t>(iy) * wd;
            double* drow = dst + static_cast<size_t>(2 * iy + ky - 1) * ow + (kx - 1);
            for (int ix = x0; ix < wd; ++ix) drow[2 * ix] += wv * srow[ix];
          }
        }
      }
    }
  }
}

void tconv3x3_backward(const Tensor& in, const double* w, int out_ch, const Tensor& gout,
                       Tensor* gin, double* gw, double* gb) {
  const int h = in.h, wd = in.w, in_ch = in.ch;
  const int ow = gout.w;
  for (int oc = 0; oc < out_ch; ++oc) {
    const double* gp = gout.plane(oc);
    double acc = 0.0;
    for (int i = 0; i < gout.h * ow; ++i) acc += gp[i];
    gb[oc] += acc;
    for (int ic = 0; ic < in_ch; ++ic) {
      const double* kw = w + (static_cast<size_t>(oc) * in_ch + ic) * 9;
      double* kg = gw + (static_cast<size_t>(oc) * in_ch + ic) * 9;
      const double* src = in.plane(ic);
      double* gsrc = gin ? gin->plane(ic) : nullptr;
      for (int ky = 0; ky < 3; ++ky) {
        const int y0 = ky == 0 ? 1 : 0;
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = kw[ky * 3 + kx];
          const int x0 = kx == 0 ? 1 : 0;
          double wacc = 0.0;
          for (int iy = y0; iy < h; ++iy) {
            const double* srow = src + static_cast<size_t>(iy) * wd;
            const double* grow = gp + static_cast<size_t>(2 * iy + ky - 1) * ow + (kx - 1);
            if (gsrc) {
              double* girow = gsrc + static_cast<size_t>(iy) * wd;
              for (int ix = x0; ix < wd; ++ix) {
                const double g = grow[2 * ix];
                wacc += g * srow[ix];
                girow[ix] += wv * g;
              }
            } else {
              for (int ix = x0; ix < wd; ++ix) wacc += grow[2 * ix] * srow[ix];
            }
          }
          kg[ky * 3 + kx] += wacc;
        }
      }
    }
  }
}

void relu_inplace(Tensor& t) {
  for (double& x : t.v)
    if (x < 0.0) x = 0.0;
}

void relu_backward(const Tensor& out, Tensor& grad) {
  for (size_t i = 0; i < grad.v.size(); ++i)
    if (out.v[i] <= 0.0) grad.v[i] = 0.0;
}

Tensor avg_pool(const Tensor& in, int block) {
  if (block <= 0 || in.h % block != 0 || in.w % block != 0)
    throw std::invalid_argument("avg_pool: block must divide the field extent");
  if (block == 1) return in;
  Tensor out(in.ch, in.h / block, in.w / block);
  const double inv = 1.0 / (static_cast<double>(block) * block);
  for (int c = 0; c < in.ch; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < block; ++dy)
          for (int dx = 0; dx < block; ++dx) acc += in.at(c, y * block + dy, x * block + dx);
        out.at(c, y, x) = acc * inv;
      }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("concat: spatial shape mismatch");
  Tensor out(a.ch + b.ch, a.h, a.w);
  std::memcpy(out.v.data(), a.v.data(), a.v.size() * sizeof(double));
  std::memcpy(out.v.data() + a.v.size(), b.v.data(), b.v.size() * sizeof(double));
  return out;
}

}  // namespace nn

size_t LayerSpec::weight_count() const {
  if (kind == LayerKind::conv || kind == LayerKind::tconv)
    return static_cast<size_t>(in_ch) * out_ch * 9;
  return 0;
}

size_t LayerSpec::bias_count() const {
  if (kind == LayerKind::conv || kind == LayerKind::tconv) return static_cast<size_t>(out_ch);
  return 0;
}

std::vector<LayerSpec> mapnet_layers(int coarse_patch, int fine_patch, int channels_base) {
  if (coarse_patch < 1 || channels_base < 1)
    throw std::invalid_argument("mapnet_layers: patch and channel sizes must be positive");
  int stages = 0, extent = coarse_patch;
  while (extent < fine_patch) {
    extent *= 2;
    ++stages;
  }
  if (extent != fine_patch || stages < 1)
    throw std::invalid_argument(
        "mapnet_layers: fine_patch must be coarse_patch times a power of two >= 2");
  const int b = channels_base;
  std::vector<LayerSpec> layers;
  layers.push_back({LayerKind::conv, 1, b, Activation::relu, -1});
  layers.push_back({LayerKind::conv, b, 2 * b, Activation::relu, -1});
  layers.push_back({LayerKind::concat_skip, 2 * b, 3 * b, Activation::none, 0});
  int cur = 3 * b;
  for (int s = 0; s < stages; ++s) {
    const int oc = std::max(1, b >> s);
    layers.push_back({LayerKind::tconv, cur, oc, Activation::relu, -1});
    layers.push_back({LayerKind::concat_dens, oc, oc + 1, Activation::none, -1});
    cur = oc + 1;
  }
  layers.push_back({LayerKind::conv, cur, 1, Activation::relu, -1});
  return layers;
}

size_t parameter_count(const std::vector<LayerSpec>& layers) {
  size_t n = 0;
  for (const auto& l : layers) n += l.weight_count() + l.bias_count();
  return n;
}

bool MapNetModel::compatible(const FragmentSpec& spec) const {
  return spec.coarse_patch == coarse_patch && spec.fine_patch == fine_patch &&
         spec.overlap == overlap;
}

namespace {

double next_unit(std::mt19937_64& gen) {
  // 53-bit mantissa draw in [0, 1); bit-exact across standard libraries.
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

struct LayerOffsets {
  size_t w = 0, b = 0;
};

std::vector<LayerOffsets> param_offsets(const std::vector<LayerSpec>& layers) {
  std::vector<LayerOffsets> offs(layers.size());
  size_t off = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    offs[i].w = off;
    off += layers[i].weight_count();
    offs[i].b = off;
    off += layers[i].bias_count();
  }
  return offs;
}

// Runs the layer graph; outs[i] holds every post-activation output so the same
// pass serves prediction and backpropagation.
void run_graph(const MapNetModel& m, const std::vector<LayerOffsets>& offs,
               const nn::Tensor& coarse, const nn::Tensor& density,
               std::vector<nn::Tensor>& outs) {
  const double* p = m.params.data();
  const size_t L = m.layers.size();
  outs.assign(L, nn::Tensor());
  const nn::Tensor* cur = &coarse;
  for (size_t i = 0; i < L; ++i) {
    const LayerSpec& ls = m.layers[i];
    switch (ls.kind) {
      case LayerKind::conv:
        nn::conv3x3_forward(*cur, p + offs[i].w, p + offs[i].b, ls.out_ch, outs[i]);
        break;
      case LayerKind::tconv:
        nn::tconv3x3_forward(*cur, p + offs[i].w, p + offs[i].b, ls.out_ch, outs[i]);
        break;
      case LayerKind::concat_skip:
        outs[i] = nn::concat(*cur, outs[ls.skip_from]);
        break;
      case LayerKind::concat_dens:
        outs[i] = nn::concat(*cur, nn::avg_pool(density, density.h / cur->h));
        break;
    }
    if (ls.act == Activation::relu) nn::relu_inplace(outs[i]);
    cur = &outs[i];
  }
}

void ensure_grad(nn::Tensor& g, const nn::Tensor& like) {
  if (g.v.empty()) g = nn::Tensor(like.ch, like.h, like.w);
}

// dlast is the loss gradient with respect to the final (post-activation) output.
// Parameter gradients are accumulated into grad.
void run_backward(const MapNetModel& m, const std::vector<LayerOffsets>& offs,
                  const nn::Tensor& coarse, const std::vector<nn::Tensor>& outs,
                  nn::Tensor dlast, double* grad) {
  const double* p = m.params.data();
  const int L = static_cast<int>(m.layers.size());
  std::vector<nn::Tensor> g(L);
  g[L - 1] = std::move(dlast);
  for (int i = L - 1; i >= 0; --i) {
    const LayerSpec& ls = m.layers[i];
    const nn::Tensor& input = i == 0 ? coarse : outs[i - 1];
    nn::Tensor* gin = nullptr;
    if (i > 0) {
      ensure_grad(g[i - 1], input);
      gin = &g[i - 1];
    }
    if (ls.act == Activation::relu) nn::relu_backward(outs[i], g[i]);
    switch (ls.kind) {
      case LayerKind::conv:
        nn::conv3x3_backward(input, p + offs[i].w, ls.out_ch, g[i], gin, grad + offs[i].w,
                             grad + offs[i].b);
        break;
      case LayerKind::tconv:
        nn::tconv3x3_backward(input, p + offs[i].w, ls.out_ch, g[i], gin, grad + offs[i].w,
                              grad + offs[i].b);
        break;
      case LayerKind::concat_skip:
      case LayerKind::concat_dens: {
        const size_t main_n = input.v.size();
        if (gin)
          for (size_t k = 0; k < main_n; ++k) gin->v[k] += g[i].v[k];
        if (ls.kind == LayerKind::concat_skip) {
          const int src = ls.skip_from;
          ensure_grad(g[src], outs[src]);
          for (size_t k = 0; k < g[src].v.size(); ++k) g[src].v[k] += g[i].v[main_n + k];
        }
        break;
      }
    }
    g[i] = nn::Tensor();  // free as we go
  }
}

nn::Tensor field_to_tensor(const ScalarField& f) {
  nn::Tensor t(1, f.rows, f.cols);
  t.v = f.data;
  return t;
}

void check_sample_shapes(const MapNetModel& m, const ScalarField& coarse,
                         const ScalarField& density) {
  if (coarse.rows != m.coarse_patch || coarse.cols != m.coarse_patch)
    throw std::invalid_argument("mapnet: coarse patch shape mismatch");
  if (density.rows != m.fine_patch || density.cols != m.fine_patch)
    throw std::invalid_argument("mapnet: density patch shape mismatch");
}

constexpr size_t kGradBlock = 8;  // fixed reduction block so results are thread-count independent

}  // namespace

MapNetModel build_model(int coarse_patch, int fine_patch, bool overlap, int channels_base,
                        uint64_t seed) {
  MapNetModel m;
  m.coarse_patch = coarse_patch;
  m.fine_patch = fine_patch;
  m.overlap = overlap;
  m.channels_base = channels_base;
  m.layers = mapnet_layers(coarse_patch, fine_patch, channels_base);
  m.params.assign(parameter_count(m.layers), 0.0);
  std::mt19937_64 gen(seed);
  const auto offs = param_offsets(m.layers);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const size_t nw = m.layers[i].weight_count();
    if (nw == 0) continue;
    const double limit = std::sqrt(6.0 / (static_cast<double>(m.layers[i].in_ch) * 9.0));
    for (size_t k = 0; k < nw; ++k)
      m.params[offs[i].w + k] = (2.0 * next_unit(gen) - 1.0) * limit;
    // biases stay zero
  }
  return m;
}

ScalarField mapnet_forward(const MapNetModel& model, const ScalarField& coarse,
                           const ScalarField& density) {
  check_sample_shapes(model, coarse, density);
  const auto offs = param_offsets(model.layers);
  std::vector<nn::Tensor> outs;
  run_graph(model, offs, field_to_tensor(coarse), field_to_tensor(density), outs);
  ScalarField out(model.fine_patch, model.fine_patch);
  out.data = std::move(outs.back().v);
  return out;
}

std::vector<ScalarField> predict_batch(const MapNetModel& model, const FragmentBatch& batch) {
  const size_t n = batch.size();
  std::vector<ScalarField> preds(n);
  const auto offs = param_offsets(model.layers);
  parallel_for(n, [&](size_t begin, size_t end) {
    std::vector<nn::Tensor> outs;
    for (size_t s = begin; s < end; ++s) {
      check_sample_shapes(model, batch.coarse_patches[s], batch.density_patches[s]);
      run_graph(model, offs, field_to_tensor(batch.coarse_patches[s]),
                field_to_tensor(batch.density_patches[s]), outs);
      preds[s].rows = preds[s].cols = model.fine_patch;
      preds[s].data = std::move(outs.back().v);
    }
  });
  return preds;
}

double loss_and_gradient(const MapNetModel& model, const FragmentBatch& batch,
                         const std::vector<size_t>& sample_indices, std::vector<double>* grad) {
  if (!batch.has_targets())
    throw std::invalid_argument("loss_and_gradient: batch has no target patches");
  std::vector<size_t> all;
  const std::vector<size_t>* idx = &sample_indices;
  if (sample_indices.empty()) {
    all.resize(batch.size());
    for (size_t i = 0; i < all.size(); ++i) all[i] = i;
    idx = &all;
  }
  const size_t ns = idx->size();
  if (ns == 0) throw std::invalid_argument("loss_and_gradient: empty batch");
  const size_t np = model.params.size();
  const size_t pixels = static_cast<size_t>(model.fine_patch) * model.fine_patch;
  const double scale = 1.0 / (static_cast<double>(ns) * static_cast<double>(pixels));
  const auto offs = param_offsets(model.layers);

  const size_t nblocks = (ns + kGradBlock - 1) / kGradBlock;
  std::vector<std::vector<double>> block_grad(nblocks);
  std::vector<double> block_loss(nblocks, 0.0);

  parallel_for(nblocks, [&](size_t bbegin, size_t bend) {
    std::vector<nn::Tensor> outs;
    for (size_t bi = bbegin; bi < bend; ++bi) {
      block_grad[bi].assign(np, 0.0);
      double loss = 0.0;
      const size_t s0 = bi * kGradBlock;
      const size_t s1 = std::min(ns, s0 + kGradBlock);
      for (size_t k = s0; k < s1; ++k) {
        const size_t s = (*idx)[k];
        if (s >= batch.size()) throw std::out_of_range("loss_and_gradient: sample index");
        check_sample_shapes(model, batch.coarse_patches[s], batch.density_patches[s]);
        const nn::Tensor coarse = field_to_tensor(batch.coarse_patches[s]);
        const nn::Tensor density = field_to_tensor(batch.density_patches[s]);
        run_graph(model, offs, coarse, density, outs);
        const nn::Tensor& pred = outs.back();
        const ScalarField& target = batch.fine_patches[s];
        nn::Tensor dpred(1, pred.h, pred.w);
        for (size_t px = 0; px < pred.v.size(); ++px) {
          const double d = pred.v[px] - target.data[px];
          loss += d * d * scale;
          dpred.v[px] = 2.0 * d * scale;
        }
        run_backward(model, offs, coarse, outs, std::move(dpred), block_grad[bi].data());
      }
      block_loss[bi] = loss;
    }
  });

  if (grad) {
    grad->assign(np, 0.0);
    for (size_t bi = 0; bi < nblocks; ++bi)
      for (size_t i = 0; i < np; ++i) (*grad)[i] += block_grad[bi][i];
  }
  double loss = 0.0;
  for (size_t bi = 0; bi < nblocks; ++bi) loss += block_loss[bi];
  return loss;
}

std::vector<double> train(MapNetModel& model, const FragmentBatch& batch,
                          const TrainConfig& cfg) {
  if (batch.size() == 0 || !batch.has_targets())
    throw std::invalid_argument("train: need a non-empty batch with targets");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw std::invalid_argument("train: bad config");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate))
    throw std::invalid_argument("train: bad learning rate");

  const size_t np = model.params.size();
  std::vector<double> m1(np, 0.0), m2(np, 0.0), grad;
  std::vector<double> history;
  history.reserve(cfg.steps);
  std::mt19937_64 gen(cfg.seed);
  std::vector<size_t> minibatch(cfg.batch_size);
  double first_loss = -1.0;
  double b1p = 1.0, b2p = 1.0;

  for (int step = 1; step <= cfg.steps; ++step) {
    for (auto& s : minibatch) s = gen() % batch.size();
    const double loss = loss_and_gradient(model, batch, minibatch, &grad);
    if (!std::isfinite(loss)) throw std::runtime_error("train: loss diverged (non-finite)");
    if (first_loss < 0.0)
      first_loss = loss;
    else if (loss > 1e6 * first_loss + 1e-12)
      throw std::runtime_error("train: loss diverged (exceeded 1e6x the initial loss)");
    history.push_back(loss);
    if (cfg.on_step) cfg.on_step(step, loss);

    b1p *= cfg.adam_beta1;
    b2p *= cfg.adam_beta2;
    const double c1 = 1.0 / (1.0 - b1p);
    const double c2 = 1.0 / (1.0 - b2p);
    for (size_t i = 0; i < np; ++i) {
      m1[i] = cfg.adam_beta1 * m1[i] + (1.0 - cfg.adam_beta1) * grad[i];
      m2[i] = cfg.adam_beta2 * m2[i] + (1.0 - cfg.adam_beta2) * grad[i] * grad[i];
      model.params[i] -= cfg.learning_rate * (m1[i] * c1) / (std::sqrt(m2[i] * c2) + cfg.adam_eps);
    }
  }
  return history;
}

static constexpr char kModelMagic[5] = {'M', 'N', 'E', 'T', '1'};
static constexpr uint32_t kModelVersion = 1;

void save_model(const MapNetModel& model, const std::string& path) {
  std::string buf;
  buf.append(kModelMagic, 5);
  put_u32(buf, kModelVersion);
  put_u32(buf, static_cast<uint32_t>(model.coarse_patch));
  put_u32(buf, static_cast<uint32_t>(model.fine_patch));
  put_u8(buf, model.overlap ? 1 : 0);
  put_u32(buf, static_cast<uint32_t>(model.channels_base));
  put_f64(buf, model.norm.coarse_factor);
  put_f64(buf, model.norm.fine_factor);
  put_u32(buf, static_cast<uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    put_u8(buf, static_cast<uint8_t>(l.kind));
    put_u32(buf, static_cast<uint32_t>(l.in_ch));
    put_u32(buf, static_cast<uint32_t>(l.out_ch));
    put_u8(buf, static_cast<uint8_t>(l.act));
    put_u32(buf, static_cast<uint32_t>(l.skip_from + 1));  // 0 = none
  }
  put_u64(buf, model.params.size());
  const size_t body_start = buf.size();
  for (double p : model.params) put_f64(buf, p);
  const uint32_t crc =
      crc32(reinterpret_cast<const uint8_t*>(buf.data()) + body_start, buf.size() - body_start);
  put_u32(buf, crc);
  write_file_bytes(path, buf);
}

MapNetModel load_model(const std::string& path) {
  const std::string buf = read_file_bytes(path);
  ByteReader r(buf);
  char magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, kModelMagic, 5) != 0)
    throw std::runtime_error("load_model: bad magic in " + path);
  if (r.u32() != kModelVersion) throw std::runtime_error("load_model: unsupported version");
  MapNetModel m;
  m.coarse_patch = static_cast<int>(r.u32());
  m.fine_patch = static_cast<int>(r.u32());
  m.overlap = r.u8() != 0;
  m.channels_base = static_cast<int>(r.u32());
  m.norm.coarse_factor = r.f64();
  m.norm.fine_factor = r.f64();
  const uint32_t nlayers = r.u32();
  std::vector<LayerSpec> stored(nlayers);
  for (auto& l : stored) {
    l.kind = static_cast<LayerKind>(r.u8());
    l.in_ch = static_cast<int>(r.u32());
    l.out_ch = static_cast<int>(r.u32());
    l.act = static_cast<Activation>(r.u8());
    l.skip_from = static_cast<int>(r.u32()) - 1;
  }
  const uint64_t np = r.u64();
  if (r.remaining() < np * 8 + 4) throw std::runtime_error("load_model: truncated file");
  const size_t body_start = r.pos;
  m.params.resize(np);
  for (auto& p : m.params) p = r.f64();
  const uint32_t stored_crc = r.u32();
  const uint32_t crc =
      crc32(reinterpret_cast<const uint8_t*>(buf.data()) + body_start, np * 8);
  if (crc != stored_crc) throw std::runtime_error("load_model: parameter checksum mismatch");

  const auto expected = mapnet_layers(m.coarse_patch, m.fine_patch, m.channels_base);
  if (stored.size() != expected.size())
    throw std::runtime_error("load_model: layer table does not match architecture");
  for (size_t i = 0; i < expected.size(); ++i) {
    if (stored[i].kind != expected[i].kind || stored[i].in_ch != expected[i].in_ch ||
        stored[i].out_ch != expected[i].out_ch || stored[i].act != expected[i].act ||
        stored[i].skip_from != expected[i].skip_from)
      throw std::runtime_error("load_model: layer table does not match architecture");
  }
  m.layers = std::move(stored);
  if (m.params.size() != parameter_count(m.layers))
    throw std::runtime_error("load_model: parameter count mismatch");
  return m;
}

}  // namespace fragto
