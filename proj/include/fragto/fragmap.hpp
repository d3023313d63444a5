#pragma once

#include <utility>
#include <vector>

#include "fragto/grid.hpp"

namespace fragto {

// Fine and coarse mesh extents tied by an integer refinement ratio.
struct ScaleSpec {
  int fine_w = 0, fine_h = 0;
  int coarse_w = 0, coarse_h = 0;
  int ratio = 16;

  static ScaleSpec from_fine(int fine_w, int fine_h, int ratio);
};

// Patch geometry for fragmentation. crop_scale counts fragments across the
// coarse width in the non-overlapping tiling; overlapping extraction slides
// the same window with coarse stride 1.
struct FragmentSpec {
  int crop_scale = 0;
  int coarse_patch = 0;
  int fine_patch = 0;
  bool overlap = false;
  int stride_coarse = 0;

  int ratio() const { return coarse_patch > 0 ? fine_patch / coarse_patch : 0; }
  int count_along(int coarse_extent) const;

  static FragmentSpec make(const ScaleSpec& scale, int crop_scale, bool overlap);
  static FragmentSpec from_patch(int coarse_patch, int ratio, bool overlap);
};

// Aligned coarse-energy / fine-density (/ fine-energy target) patches cut at
// the same window positions. fine_patches is empty at inference time.
struct FragmentBatch {
  int coarse_patch = 0;
  int fine_patch = 0;
  std::vector<Field2D> coarse_patches;
  std::vector<Field2D> density_patches;
  std::vector<Field2D> fine_patches;
  std::vector<std::pair<int, int>> origins;  // coarse-grid (row, col), row-major order

  size_t size() const { return coarse_patches.size(); }
  bool has_targets() const { return !fine_patches.empty(); }
};

struct NormalizationFactors {
  double coarse_factor = 1.0;
  double fine_factor = 1.0;
};

// ratio x ratio block means. The coarse passive mask marks a coarse element
// passive only when its whole fine block is passive.
DensityField coarsen_density(const DensityField& fine, const ScaleSpec& scale);

FragmentBatch fragment(const ScalarField& coarse_field, const DensityField& fine_density,
                       const ScalarField* fine_field, const FragmentSpec& spec);

// Reassembles fine patches onto an out_h x out_w fine grid, averaging where
// overlapping windows cover a pixel more than once. Throws if any pixel is
// left uncovered.
ScalarField defragment(const std::vector<Field2D>& fine_patches,
                       const std::vector<std::pair<int, int>>& origins,
                       const FragmentSpec& spec, int out_w, int out_h);

// 10^round(log10(p95)) over the pooled nonzero values of the given fields;
// guarantees the normalized p95 lands within [10^-0.5, 10^0.5].
double estimate_normalization(const std::vector<ScalarField>& fields);

ScalarField normalize(const ScalarField& field, double factor);
ScalarField denormalize(const ScalarField& field, double factor);

}  // namespace fragto
