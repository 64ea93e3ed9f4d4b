#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "snn/tensor.hpp"

namespace snn {

/// Labelled images, stored as one (count, C, H, W) tensor with pixels in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<Index> labels;
  std::string name;
  Index num_classes = 10;

  Index size() const { return static_cast<Index>(labels.size()); }
  Shape image_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  Tensor image(Index i) const;
};

/// Builds a Dataset after checking counts, label range and pixel range.
Dataset make_dataset(Tensor images, std::vector<Index> labels, std::string name, Index num_classes = 10);

struct SplitDataset {
  Dataset train;
  Dataset test;
};

/// Big-endian IDX readers (images magic 2051, labels magic 2049).
Tensor read_idx_images(const std::filesystem::path& path);
std::vector<Index> read_idx_labels(const std::filesystem::path& path);

/// Writers for the same format; pixels are stored as round(255 * v).
void write_idx_images(const std::filesystem::path& path, const Tensor& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<Index>& labels);

/// train-{images-idx3,labels-idx1}-ubyte and t10k-* in `dir`.
SplitDataset load_mnist(const std::filesystem::path& dir);

/// One CIFAR-10 binary batch file: 3073-byte records, label then 3072 channel-major pixels.
Dataset read_cifar10_batch(const std::filesystem::path& path);
void write_cifar10_batch(const std::filesystem::path& path, const Dataset& data);

/// data_batch_1..5.bin and test_batch.bin in `dir`.
SplitDataset load_cifar10(const std::filesystem::path& dir);

/// Seeded permutation cut into batches of `batch_size`; the last batch may be short.
std::vector<std::vector<Index>> batches(Index count, Index batch_size, std::uint64_t shuffle_seed);

/// Seeded sample of n examples without replacement. Classes are visited
/// round-robin so every label present in the source appears once n >= #labels.
Dataset subset(const Dataset& data, Index n, std::uint64_t seed);

/// First n examples (no shuffling).
Dataset head(const Dataset& data, Index n);

/// Two-class toy set on a 1x4x4 grid: class 0 has its left two columns near
/// 0.7 and the right two near 0.3, class 1 the mirror image; noise sd 0.05,
/// clipped to [0, 1]. Linearly separable with a wide margin and no offset.
Dataset make_blob_dataset(Index count, std::uint64_t seed);

}  // namespace snn
