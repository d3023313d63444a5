#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fragto/field.hpp"
#include "fragto/fragmap.hpp"
#include "fragto/nn_ops.hpp"

namespace fragto {

enum class LayerKind : uint8_t {
  conv = 0,        // 3x3, stride 1, zero padding
  tconv = 1,       // 3x3, stride 2 (doubles extent)
  concat_skip = 2, // append a retained earlier activation
  concat_dens = 3, // append the density field pooled to the current extent
};

enum class Activation : uint8_t { none = 0, relu = 1 };

struct LayerSpec {
  LayerKind kind;
  int in_ch = 0;
  int out_ch = 0;
  Activation act = Activation::none;
  int skip_from = -1;  // concat_skip: index of the retained layer

  size_t weight_count() const;  // 0 for concat layers
  size_t bias_count() const;
};

// Fixed upscaling graph: two stride-1 encoder convs, a skip concatenation,
// log2(fine/coarse) stride-2 upsampling stages with the pooled density field
// appended after each, and a final stride-1 projection to one channel.
std::vector<LayerSpec> mapnet_layers(int coarse_patch, int fine_patch, int channels_base);

size_t parameter_count(const std::vector<LayerSpec>& layers);

struct MapNetModel {
  int coarse_patch = 0;
  int fine_patch = 0;
  bool overlap = false;
  int channels_base = 16;
  NormalizationFactors norm;
  std::vector<LayerSpec> layers;
  std::vector<double> params;  // all weights then biases, layer by layer

  int ratio() const { return fine_patch / coarse_patch; }
  bool compatible(const FragmentSpec& spec) const;
};

constexpr int kDefaultChannelsBase = 16;

// He-uniform initialised model (limit sqrt(6/(in*9)) per conv layer, zero biases).
MapNetModel build_model(int coarse_patch, int fine_patch, bool overlap, int channels_base,
                        uint64_t seed);

// coarse: normalized coarse patch (coarse_patch square); density: fine-resolution
// densities in [0,1] (fine_patch square). Returns the predicted normalized fine patch.
ScalarField mapnet_forward(const MapNetModel& model, const ScalarField& coarse,
                           const ScalarField& density);

// Forward pass over every sample of the batch (inputs must be normalized).
std::vector<ScalarField> predict_batch(const MapNetModel& model, const FragmentBatch& batch);

// Mean-squared-error loss over every output pixel of the batch plus its parameter
// gradient. Batch fields must already be normalized and targets present.
double loss_and_gradient(const MapNetModel& model, const FragmentBatch& batch,
                         const std::vector<size_t>& sample_indices, std::vector<double>* grad);

struct TrainConfig {
  int steps = 1000;
  int batch_size = 64;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  std::function<void(int step, double loss)> on_step;  // optional progress hook
};

// In-place ADAM on model.params; returns the minibatch loss per step.
// Throws if the loss becomes non-finite or exceeds 1e6x the first step's loss.
std::vector<double> train(MapNetModel& model, const FragmentBatch& batch,
                          const TrainConfig& cfg);

void save_model(const MapNetModel& model, const std::string& path);
MapNetModel load_model(const std::string& path);

}  // namespace fragto
