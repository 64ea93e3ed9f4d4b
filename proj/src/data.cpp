#include "snn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <stdexcept>

#include "snn/errors.hpp"
#include "snn/rng.hpp"

namespace snn {

Tensor Dataset::image(Index i) const {
  const Shape shape = image_shape();
  const Index stride = shape_size(shape);
  return Tensor(shape, images.data().segment(i * stride, stride));
}

Dataset make_dataset(Tensor images, std::vector<Index> labels, std::string name, Index num_classes) {
  if (images.rank() != 4) throw ShapeError("dataset images must be (N,C,H,W), got " + shape_string(images.shape()));
  if (images.dim(0) != static_cast<Index>(labels.size())) {
    throw ShapeError("dataset: " + std::to_string(images.dim(0)) + " images but " + std::to_string(labels.size()) +
                     " labels");
  }
  for (Index label : labels) {
    if (label < 0 || label >= num_classes) throw std::invalid_argument("dataset: label out of range");
  }
  if (images.size() > 0 && (images.data().minCoeff() < 0.0 || images.data().maxCoeff() > 1.0)) {
    throw std::invalid_argument("dataset: pixels must lie in [0, 1]");
  }
  return Dataset{std::move(images), std::move(labels), std::move(name), num_classes};
}

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;
constexpr std::size_t kCifarRecord = 1 + kCifarPixels;

}  // namespace

Tensor read_idx_images(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.filename().string();
  if (bytes.size() < 16) throw FormatError(where + ": header truncated (need 16 bytes)");
  if (const auto magic = be32(bytes, 0); magic != kIdxImageMagic) {
    throw FormatError(where + ": bad magic " + std::to_string(magic) + " (expected 2051)");
  }
  const Index count = be32(bytes, 4), rows = be32(bytes, 8), cols = be32(bytes, 12);
  if (count == 0 || rows == 0 || cols == 0) throw FormatError(where + ": zero dimension in header");
  const auto expected = 16 + static_cast<std::size_t>(count * rows * cols);
  if (bytes.size() != expected) {
    throw FormatError(where + ": image count " + std::to_string(count) + " implies " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(bytes.size()));
  }
  Tensor images({count, 1, rows, cols});
  for (Index i = 0; i < images.size(); ++i) images[i] = bytes[16 + static_cast<std::size_t>(i)] / 255.0;
  return images;
}

std::vector<Index> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.filename().string();
  if (bytes.size() < 8) throw FormatError(where + ": header truncated (need 8 bytes)");
  if (const auto magic = be32(bytes, 0); magic != kIdxLabelMagic) {
    throw FormatError(where + ": bad magic " + std::to_string(magic) + " (expected 2049)");
  }
  const std::size_t count = be32(bytes, 4);
  if (bytes.size() != 8 + count) {
    throw FormatError(where + ": label count " + std::to_string(count) + " does not match file length " +
                      std::to_string(bytes.size()));
  }
  std::vector<Index> labels(bytes.begin() + 8, bytes.end());
  for (Index label : labels) {
    if (label > 9) throw FormatError(where + ": label " + std::to_string(label) + " out of range");
  }
  return labels;
}

void write_idx_images(const std::filesystem::path& path, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != 1) throw ShapeError("write_idx_images: expected (N,1,H,W)");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 + static_cast<std::size_t>(images.size()));
  put_be32(bytes, kIdxImageMagic);
  for (Index axis : {0, 2, 3}) put_be32(bytes, static_cast<std::uint32_t>(images.dim(axis)));
  for (Index i = 0; i < images.size(); ++i) bytes.push_back(to_byte(images[i]));
  write_file(path, bytes);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<Index>& labels) {
  std::vector<std::uint8_t> bytes;
  put_be32(bytes, kIdxLabelMagic);
  put_be32(bytes, static_cast<std::uint32_t>(labels.size()));
  for (Index label : labels) bytes.push_back(static_cast<std::uint8_t>(label));
  write_file(path, bytes);
}

SplitDataset load_mnist(const std::filesystem::path& dir) {
  auto load = [&](const std::string& prefix, const std::string& name) {
    Tensor images = read_idx_images(dir / (prefix + "-images-idx3-ubyte"));
    std::vector<Index> labels = read_idx_labels(dir / (prefix + "-labels-idx1-ubyte"));
    if (images.dim(0) != static_cast<Index>(labels.size())) {
      throw FormatError(prefix + ": image count " + std::to_string(images.dim(0)) + " != label count " +
                        std::to_string(labels.size()));
    }
    return make_dataset(std::move(images), std::move(labels), name);
  };
  return {load("train", "mnist-train"), load("t10k", "mnist-test")};
}

Dataset read_cifar10_batch(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string where = path.filename().string();
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw FormatError(where + ": length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  const Index count = static_cast<Index>(bytes.size() / kCifarRecord);
  Tensor images({count, 3, 32, 32});
  std::vector<Index> labels(static_cast<std::size_t>(count));
  for (Index r = 0; r < count; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * kCifarRecord;
    if (bytes[base] > 9) {
      throw FormatError(where + ": record " + std::to_string(r) + " label " + std::to_string(bytes[base]) +
                        " out of range");
    }
    labels[static_cast<std::size_t>(r)] = bytes[base];
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      images[r * static_cast<Index>(kCifarPixels) + static_cast<Index>(p)] = bytes[base + 1 + p] / 255.0;
    }
  }
  return make_dataset(std::move(images), std::move(labels), where);
}

void write_cifar10_batch(const std::filesystem::path& path, const Dataset& data) {
  if (data.image_shape() != Shape{3, 32, 32}) throw ShapeError("write_cifar10_batch: images must be 3x32x32");
  std::vector<std::uint8_t> bytes;
  bytes.reserve(static_cast<std::size_t>(data.size()) * kCifarRecord);
  for (Index r = 0; r < data.size(); ++r) {
    bytes.push_back(static_cast<std::uint8_t>(data.labels[static_cast<std::size_t>(r)]));
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      bytes.push_back(to_byte(data.images[r * static_cast<Index>(kCifarPixels) + static_cast<Index>(p)]));
    }
  }
  write_file(path, bytes);
}

namespace {
Dataset concat(const std::vector<Dataset>& parts, std::string name) {
  Index total = 0;
  for (const auto& p : parts) total += p.size();
  Shape shape = parts.front().images.shape();
  shape[0] = total;
  Tensor images(shape);
  std::vector<Index> labels;
  Index offset = 0;
  for (const auto& p : parts) {
    images.data().segment(offset, p.images.size()) = p.images.data();
    offset += p.images.size();
    labels.insert(labels.end(), p.labels.begin(), p.labels.end());
  }
  return make_dataset(std::move(images), std::move(labels), std::move(name));
}
}  // namespace

SplitDataset load_cifar10(const std::filesystem::path& dir) {
  std::vector<Dataset> train_parts;
  for (int i = 1; i <= 5; ++i) train_parts.push_back(read_cifar10_batch(dir / ("data_batch_" + std::to_string(i) + ".bin")));
  Dataset test = read_cifar10_batch(dir / "test_batch.bin");
  test.name = "cifar10-test";
  return {concat(train_parts, "cifar10-train"), std::move(test)};
}

std::vector<std::vector<Index>> batches(Index count, Index batch_size, std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) order[static_cast<std::size_t>(i)] = i;
  SeededRng rng(shuffle_seed, 0x62617463ULL);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<Index>> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return out;
}

namespace {
Dataset gather(const Dataset& data, const std::vector<Index>& picks, std::string name) {
  const Index stride = shape_size(data.image_shape());
  Shape shape = data.images.shape();
  shape[0] = static_cast<Index>(picks.size());
  Tensor images(shape);
  std::vector<Index> labels;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    images.data().segment(static_cast<Index>(i) * stride, stride) = data.images.data().segment(picks[i] * stride, stride);
    labels.push_back(data.labels[static_cast<std::size_t>(picks[i])]);
  }
  return Dataset{std::move(images), std::move(labels), std::move(name), data.num_classes};
}
}  // namespace

Dataset subset(const Dataset& data, Index n, std::uint64_t seed) {
  if (n < 1 || n > data.size()) {
    throw std::invalid_argument("subset: requested " + std::to_string(n) + " of " + std::to_string(data.size()) +
                                " examples");
  }
  std::map<Index, std::vector<Index>> by_class;
  for (Index i = 0; i < data.size(); ++i) by_class[data.labels[static_cast<std::size_t>(i)]].push_back(i);
  SeededRng rng(seed, 0x73756273ULL);
  for (auto& [label, idx] : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  std::vector<Index> picks;
  for (std::size_t round = 0; static_cast<Index>(picks.size()) < n; ++round) {
    for (auto& [label, idx] : by_class) {
      if (round < idx.size() && static_cast<Index>(picks.size()) < n) picks.push_back(idx[round]);
    }
  }
  // interleave classes in a seeded order rather than strict round-robin
  for (std::size_t i = picks.size(); i > 1; --i) std::swap(picks[i - 1], picks[rng.below(i)]);
  return gather(data, picks, data.name + "-subset" + std::to_string(n));
}

Dataset head(const Dataset& data, Index n) {
  if (n < 1 || n > data.size()) throw std::invalid_argument("head: n out of range");
  std::vector<Index> picks(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) picks[static_cast<std::size_t>(i)] = i;
  return gather(data, picks, data.name + "-head" + std::to_string(n));
}

Dataset make_blob_dataset(Index count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("make_blob_dataset: count must be >= 1");
  SeededRng rng(seed, 0x626c6f62ULL);
  Tensor images({count, 1, 4, 4});
  std::vector<Index> labels;
  for (Index i = 0; i < count; ++i) {
    const Index label = i % 2;
    for (Index p = 0; p < 16; ++p) {
      const bool left = p % 4 < 2;
      const double center = (left == (label == 0)) ? 0.7 : 0.3;
      images[i * 16 + p] = std::clamp(center + 0.05 * rng.normal(), 0.0, 1.0);
    }
    labels.push_back(label);
  }
  return make_dataset(std::move(images), std::move(labels), "blobs", 2);
}

}  // namespace snn
