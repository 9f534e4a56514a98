#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "spdconv/tensor.hpp"

namespace spdconv {

/// Dataset and file-format failures (missing files, corrupt layouts).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Images normalized to [0,1], shape (n, 3, h, w), with integer labels.
struct LabeledDataset {
  Tensor<float> images;
  std::vector<int> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;

  int size() const { return images.shape().n; }

  /// Copies samples [begin, begin+count) into a fresh batch tensor.
  Tensor<float> batch(const std::vector<int>& order, int begin,
                      int count) const;
  std::vector<int> batch_labels(const std::vector<int>& order, int begin,
                                int count) const;
  /// First per-class `per_class` samples, in original order.
  LabeledDataset take_per_class(int per_class) const;
};

/// CIFAR-10 binary format: records of 1 label byte + 3072 pixel bytes
/// (1024 R, 1024 G, 1024 B, row-major 32x32), five data_batch files plus
/// test_batch. Pixels are scaled by 1/255.
std::pair<LabeledDataset, LabeledDataset> load_cifar10(
    const std::string& directory);

/// Writes datasets back out in the same binary layout (5 train shards +
/// 1 test file). Counterpart of load_cifar10 for generated corpora.
void write_cifar10_batches(const LabeledDataset& train,
                           const LabeledDataset& test,
                           const std::string& directory);

/// Block-average downsample by an exact factor; labels unchanged.
LabeledDataset downsample(const LabeledDataset& ds, int factor);

struct AugmentPolicy {
  double flip_p = 0.0;
  int crop_pad = 0;
};

/// Horizontal flip with probability flip_p, then zero-pad by crop_pad and
/// random-crop back. Consumes the rng in sample order: same state, same
/// output.
Tensor<float> augment(const Tensor<float>& batch, const AugmentPolicy& policy,
                      Pcg32& rng);

struct SynthSpec {
  int n = 0;
  int classes = 2;
  int h = 16;
  int w = 16;
  /// "separable": class-colored images, linearly separable by channel means.
  /// "parity-grid": classes are sub-pixel-period translates of a dot grid;
  ///   the label lives in 1-pixel phase information.
  /// "cifar-like": 10-class 32x32 color/texture/blob images for CIFAR-shaped
  ///   experiments when the real corpus is absent.
  std::string kind = "separable";
};

LabeledDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

}  // namespace spdconv
