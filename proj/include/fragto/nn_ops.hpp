#pragma once

#include <cstddef>
#include <vector>

namespace fragto::nn {

// Channel-major dense activation tensor (ch x h x w).
struct Tensor {
  int ch = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c, int hh, int ww)
      : ch(c), h(hh), w(ww), v(static_cast<size_t>(c) * hh * ww, 0.0) {}

  double& at(int c, int y, int x) {
    return v[(static_cast<size_t>(c) * h + y) * w + x];
  }
  double at(int c, int y, int x) const {
    return v[(static_cast<size_t>(c) * h + y) * w + x];
  }
  double* plane(int c) { return v.data() + static_cast<size_t>(c) * h * w; }
  const double* plane(int c) const { return v.data() + static_cast<size_t>(c) * h * w; }
  size_t size() const { return v.size(); }
};

// 3x3 kernels throughout; weights laid out w[oc][ic][ky][kx], biases b[oc].

// Stride-1 "same" convolution with zero padding.
void conv3x3_forward(const Tensor& in, const double* w, const double* b, int out_ch,
                     Tensor& out);
// Same convolution with circular (wrap-around) padding; test harness only.
void conv3x3_forward_circular(const Tensor& in, const double* w, const double* b, int out_ch,
                              Tensor& out);
// gin is accumulated (+=) and must be pre-sized/zeroed by the caller, as are gw/gb.
void conv3x3_backward(const Tensor& in, const double* w, int out_ch, const Tensor& gout,
                      Tensor* gin, double* gw, double* gb);

// Stride-2 transposed convolution; output is exactly 2x the input extent.
void tconv3x3_forward(const Tensor& in, const double* w, const double* b, int out_ch,
                      Tensor& out);
void tconv3x3_backward(const Tensor& in, const double* w, int out_ch, const Tensor& gout,
                       Tensor* gin, double* gw, double* gb);

void relu_inplace(Tensor& t);
// grad *= 1{out > 0}; uses the forward output (valid since relu(x) > 0 iff x > 0).
void relu_backward(const Tensor& out, Tensor& grad);

// Block-mean downsample by an integer factor.
Tensor avg_pool(const Tensor& in, int block);

// Channel concatenation [a; b].
Tensor concat(const Tensor& a, const Tensor& b);

}  // namespace fragto::nn
