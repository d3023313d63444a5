#include "fragto/fragmap.hpp"

#include <cmath>
#include <stdexcept>

#include "fragto/util.hpp"

namespace fragto {

ScaleSpec ScaleSpec::from_fine(int fine_w, int fine_h, int ratio) {
  if (fine_w < 1 || fine_h < 1 || ratio < 1)
    throw std::invalid_argument("ScaleSpec: extents and ratio must be positive");
  if (fine_w % ratio != 0 || fine_h % ratio != 0)
    throw std::invalid_argument("ScaleSpec: fine extents not divisible by ratio");
  return {fine_w, fine_h, fine_w / ratio, fine_h / ratio, ratio};
}

int FragmentSpec::count_along(int coarse_extent) const {
  if (overlap) {
    if (coarse_extent < coarse_patch)
      throw std::invalid_argument("fragment: patch larger than the coarse extent");
    return coarse_extent - coarse_patch + 1;
  }
  if (coarse_extent % coarse_patch != 0)
    throw std::invalid_argument("fragment: coarse extent not divisible by the patch");
  return coarse_extent / coarse_patch;
}

FragmentSpec FragmentSpec::make(const ScaleSpec& scale, int crop_scale, bool overlap) {
  if (crop_scale < 1) throw std::invalid_argument("FragmentSpec: crop_scale must be >= 1");
  if (scale.coarse_w % crop_scale != 0)
    throw std::invalid_argument("FragmentSpec: coarse width not divisible by crop_scale");
  FragmentSpec s;
  s.crop_scale = crop_scale;
  s.coarse_patch = scale.coarse_w / crop_scale;
  s.fine_patch = s.coarse_patch * scale.ratio;
  s.overlap = overlap;
  s.stride_coarse = overlap ? 1 : s.coarse_patch;
  return s;
}

FragmentSpec FragmentSpec::from_patch(int coarse_patch, int ratio, bool overlap) {
  if (coarse_patch < 1 || ratio < 1)
    throw std::invalid_argument("FragmentSpec: patch and ratio must be positive");
  FragmentSpec s;
  s.crop_scale = 0;  // domain-dependent; unused in this form
  s.coarse_patch = coarse_patch;
  s.fine_patch = coarse_patch * ratio;
  s.overlap = overlap;
  s.stride_coarse = overlap ? 1 : coarse_patch;
  return s;
}

DensityField coarsen_density(const DensityField& fine, const ScaleSpec& scale) {
  const auto& dom = *fine.domain;
  if (dom.width_elems != scale.fine_w || dom.height_elems != scale.fine_h)
    throw std::invalid_argument("coarsen_density: scale does not match the fine domain");
  const int cw = scale.coarse_w, ch = scale.coarse_h, k = scale.ratio;
  const double inv_block = 1.0 / (static_cast<double>(k) * k);

  auto coarse_dom = std::make_shared<DomainSpec>();
  coarse_dom->width_elems = cw;
  coarse_dom->height_elems = ch;

  DensityField out;
  out.values = Field2D(ch, cw, 0.0);
  bool any_passive = false;
  std::vector<uint8_t> mask(static_cast<size_t>(cw) * ch, 0);
  for (int r = 0; r < ch; ++r) {
    for (int c = 0; c < cw; ++c) {
      double s = 0.0;
      bool all_passive = true;
      for (int rr = r * k; rr < (r + 1) * k; ++rr)
        for (int cc = c * k; cc < (c + 1) * k; ++cc) {
          s += fine.values.at(rr, cc);
          all_passive = all_passive && dom.passive(rr, cc);
        }
      out.values.at(r, c) = s * inv_block;
      if (all_passive) {
        mask[static_cast<size_t>(r) * cw + c] = 1;
        any_passive = true;
      }
    }
  }
  if (any_passive) coarse_dom->passive_mask = std::move(mask);
  out.domain = std::move(coarse_dom);
  return out;
}

namespace {

Field2D cut(const Field2D& f, int r0, int c0, int side) {
  Field2D p(side, side, 0.0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) p.at(r, c) = f.at(r0 + r, c0 + c);
  return p;
}

}  // namespace

FragmentBatch fragment(const ScalarField& coarse_field, const DensityField& fine_density,
                       const ScalarField* fine_field, const FragmentSpec& spec) {
  const int cw = coarse_field.cols, ch = coarse_field.rows;
  const int ratio = spec.ratio();
  const Field2D& dens = fine_density.values;
  if (dens.cols != cw * ratio || dens.rows != ch * ratio)
    throw std::invalid_argument("fragment: fine/coarse extents inconsistent with the fragment spec ratio");
  if (fine_field && !fine_field->same_shape(dens))
    throw std::invalid_argument("fragment: fine field shape mismatch");

  const int nc = spec.count_along(cw);
  const int nr = spec.count_along(ch);

  FragmentBatch out;
  out.coarse_patch = spec.coarse_patch;
  out.fine_patch = spec.fine_patch;
  const size_t total = static_cast<size_t>(nr) * nc;
  out.coarse_patches.reserve(total);
  out.density_patches.reserve(total);
  if (fine_field) out.fine_patches.reserve(total);
  out.origins.reserve(total);

  for (int r = 0; r < nr; ++r) {
    for (int c = 0; c < nc; ++c) {
      const int cr = r * spec.stride_coarse, cc = c * spec.stride_coarse;
      out.origins.emplace_back(cr, cc);
      out.coarse_patches.push_back(cut(coarse_field, cr, cc, spec.coarse_patch));
      out.density_patches.push_back(cut(dens, cr * ratio, cc * ratio, spec.fine_patch));
      if (fine_field)
        out.fine_patches.push_back(cut(*fine_field, cr * ratio, cc * ratio, spec.fine_patch));
    }
  }
  return out;
}

ScalarField defragment(const std::vector<Field2D>& fine_patches,
                       const std::vector<std::pair<int, int>>& origins,
                       const FragmentSpec& spec, int out_w, int out_h) {
  if (fine_patches.size() != origins.size())
    throw std::invalid_argument("defragment: patch/origin count mismatch");
  const int ratio = spec.ratio();
  ScalarField sum(out_h, out_w, 0.0);
  Field2D cover(out_h, out_w, 0.0);
  for (size_t i = 0; i < fine_patches.size(); ++i) {
    const Field2D& p = fine_patches[i];
    if (p.rows != spec.fine_patch || p.cols != spec.fine_patch)
      throw std::invalid_argument("defragment: patch size mismatch");
    const int r0 = origins[i].first * ratio, c0 = origins[i].second * ratio;
    if (r0 < 0 || c0 < 0 || r0 + p.rows > out_h || c0 + p.cols > out_w)
      throw std::invalid_argument("defragment: patch outside the output grid");
    for (int r = 0; r < p.rows; ++r)
      for (int c = 0; c < p.cols; ++c) {
        sum.at(r0 + r, c0 + c) += p.at(r, c);
        cover.at(r0 + r, c0 + c) += 1.0;
      }
  }
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c) {
      if (cover.at(r, c) == 0.0)
        throw std::invalid_argument("defragment: uncovered pixel");
      sum.at(r, c) /= cover.at(r, c);
    }
  return sum;
}

double estimate_normalization(const std::vector<ScalarField>& fields) {
  std::vector<double> pooled;
  for (const auto& f : fields)
    for (double v : f.data)
      if (v != 0.0) pooled.push_back(std::fabs(v));
  if (pooled.empty())
    throw std::invalid_argument("estimate_normalization: no nonzero values");
  const double p95 = percentile_nearest_rank(pooled, 95.0);
  return std::pow(10.0, std::round(std::log10(p95)));
}

ScalarField normalize(const ScalarField& field, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("normalize: factor must be positive");
  ScalarField out = field;
  const double inv = 1.0 / factor;
  for (double& v : out.data) v *= inv;
  return out;
}

ScalarField denormalize(const ScalarField& field, double factor) {
  if (!(factor > 0.0)) throw std::invalid_argument("denormalize: factor must be positive");
  ScalarField out = field;
  for (double& v : out.data) v *= factor;
  return out;
}

}  // namespace fragto
