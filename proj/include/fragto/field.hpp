#pragma once

#include <cstddef>
#include <vector>

namespace fragto {

// Dense row-major 2D grid of 64-bit reals. Row 0 is the top of the domain,
// columns grow to the right. Used for densities, energy fields, patches.
struct Field2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Field2D() = default;
  Field2D(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {}

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

  size_t size() const { return data.size(); }
  bool same_shape(const Field2D& o) const { return rows == o.rows && cols == o.cols; }
};

// One scalar per element: strain energy, thermal dissipation, sensitivities.
using ScalarField = Field2D;

double field_min(const Field2D& f);
double field_max(const Field2D& f);
double field_mean(const Field2D& f);

// Largest |a - b| over all entries; fields must share a shape.
double max_abs_diff(const Field2D& a, const Field2D& b);

}  // namespace fragto
