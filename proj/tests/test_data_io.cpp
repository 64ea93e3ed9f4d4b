#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "snn/data.hpp"
#include "snn/rng.hpp"

using namespace snn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> be32(std::uint32_t v) {
  return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8),
          static_cast<std::uint8_t>(v)};
}

std::vector<std::uint8_t> idx_header(std::uint32_t magic, std::vector<std::uint32_t> dims) {
  std::vector<std::uint8_t> out = be32(magic);
  for (auto d : dims) {
    const auto b = be32(d);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("IDX images and labels") {
  TempDir dir("snn_idx_test");
  SUBCASE("two-image fixture round trip") {
    Tensor images({2, 1, 3, 4});
    for (Index i = 0; i < images.size(); ++i) images[i] = static_cast<double>((i * 37) % 256) / 255.0;
    write_idx_images(dir.path / "img", images);
    write_idx_labels(dir.path / "lbl", {7, 2});
    CHECK(read_idx_images(dir.path / "img") == images);
    CHECK(read_idx_labels(dir.path / "lbl") == std::vector<Index>{7, 2});
    // hand-built file with the same bytes
    auto bytes = idx_header(2051, {2, 3, 4});
    for (Index i = 0; i < 24; ++i) bytes.push_back(static_cast<std::uint8_t>((i * 37) % 256));
    write_bytes(dir.path / "hand", bytes);
    CHECK(read_idx_images(dir.path / "hand") == images);
  }
  SUBCASE("full-size MNIST header is accepted") {
    auto bytes = idx_header(2051, {60000, 28, 28});
    bytes.resize(bytes.size() + 60000u * 28u * 28u, 0);
    write_bytes(dir.path / "big", bytes);
    const Tensor images = read_idx_images(dir.path / "big");
    CHECK(images.shape() == Shape{60000, 1, 28, 28});
  }
  SUBCASE("bad magic names the field") {
    auto bytes = idx_header(1234, {1, 2, 2});
    bytes.resize(bytes.size() + 4, 0);
    write_bytes(dir.path / "bad", bytes);
    CHECK(error_of([&] { read_idx_images(dir.path / "bad"); }).find("magic") != std::string::npos);
    CHECK(error_of([&] { read_idx_labels(dir.path / "bad"); }).find("magic") != std::string::npos);
  }
  SUBCASE("truncated and count mismatch") {
    auto bytes = idx_header(2051, {3, 2, 2});
    bytes.resize(bytes.size() + 8, 0);
    write_bytes(dir.path / "short", bytes);
    CHECK(error_of([&] { read_idx_images(dir.path / "short"); }).find("count") != std::string::npos);
    write_bytes(dir.path / "tiny", {0, 0, 8});
    CHECK_THROWS_AS(read_idx_images(dir.path / "tiny"), FormatError);
    auto labels = idx_header(2049, {5});
    labels.insert(labels.end(), {1, 2, 3});
    write_bytes(dir.path / "lshort", labels);
    CHECK(error_of([&] { read_idx_labels(dir.path / "lshort"); }).find("count") != std::string::npos);
  }
  SUBCASE("load_mnist checks image and label counts agree") {
    write_idx_images(dir.path / "train-images-idx3-ubyte", Tensor({3, 1, 2, 2}));
    write_idx_labels(dir.path / "train-labels-idx1-ubyte", {0, 1});
    write_idx_images(dir.path / "t10k-images-idx3-ubyte", Tensor({1, 1, 2, 2}));
    write_idx_labels(dir.path / "t10k-labels-idx1-ubyte", {4});
    CHECK(error_of([&] { load_mnist(dir.path); }).find("label count") != std::string::npos);
    write_idx_labels(dir.path / "train-labels-idx1-ubyte", {0, 1, 9});
    const SplitDataset d = load_mnist(dir.path);
    CHECK(d.train.size() == 3);
    CHECK(d.test.labels == std::vector<Index>{4});
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_idx_images(dir.path / "nope"), FormatError);
  }
}

TEST_CASE("CIFAR-10 batches") {
  TempDir dir("snn_cifar_test");
  SUBCASE("two records parse to two images") {
    std::vector<std::uint8_t> bytes(2 * 3073);
    bytes[0] = 3;
    bytes[3073] = 9;
    for (std::size_t i = 0; i < 3072; ++i) {
      bytes[1 + i] = static_cast<std::uint8_t>(i % 256);
      bytes[3074 + i] = static_cast<std::uint8_t>(255 - i % 256);
    }
    write_bytes(dir.path / "b.bin", bytes);
    const Dataset d = read_cifar10_batch(dir.path / "b.bin");
    CHECK(d.size() == 2);
    CHECK(d.labels == std::vector<Index>{3, 9});
    CHECK(d.images.shape() == Shape{2, 3, 32, 32});
    // channel-major: pixel 1024 is the first green value
    CHECK(d.images[1024] == static_cast<double>(1024 % 256) / 255.0);
    CHECK(d.image(1)(2, 31, 31) == static_cast<double>(255 - 3071 % 256) / 255.0);
  }
  SUBCASE("label 12 is rejected") {
    std::vector<std::uint8_t> bytes(3073);
    bytes[0] = 12;
    write_bytes(dir.path / "b.bin", bytes);
    CHECK(error_of([&] { read_cifar10_batch(dir.path / "b.bin"); }).find("label") != std::string::npos);
  }
  SUBCASE("length must be a multiple of the record size") {
    write_bytes(dir.path / "b.bin", std::vector<std::uint8_t>(3073 + 10));
    CHECK_THROWS_AS(read_cifar10_batch(dir.path / "b.bin"), FormatError);
    write_bytes(dir.path / "e.bin", {});
    CHECK_THROWS_AS(read_cifar10_batch(dir.path / "e.bin"), FormatError);
  }
  SUBCASE("round trip and directory loader") {
    SeededRng rng(3);
    auto fixture = [&](Index n) {
      Tensor images({n, 3, 32, 32});
      for (Index i = 0; i < images.size(); ++i) images[i] = static_cast<double>(rng.below(256)) / 255.0;
      std::vector<Index> labels;
      for (Index i = 0; i < n; ++i) labels.push_back(static_cast<Index>(rng.below(10)));
      return make_dataset(images, labels, "fixture");
    };
    std::vector<Dataset> parts;
    for (int b = 1; b <= 5; ++b) {
      parts.push_back(fixture(2));
      write_cifar10_batch(dir.path / ("data_batch_" + std::to_string(b) + ".bin"), parts.back());
    }
    const Dataset test = fixture(3);
    write_cifar10_batch(dir.path / "test_batch.bin", test);
    const Dataset back = read_cifar10_batch(dir.path / "test_batch.bin");
    CHECK(back.images == test.images);
    CHECK(back.labels == test.labels);
    const SplitDataset all = load_cifar10(dir.path);
    CHECK(all.train.size() == 10);
    CHECK(all.test.size() == 3);
    CHECK(all.train.image(9) == parts[4].image(1));
    CHECK(all.train.labels[4] == parts[2].labels[0]);
  }
}

TEST_CASE("make_dataset validation") {
  CHECK_THROWS_AS(make_dataset(Tensor({2, 1, 2, 2}), {0}, "x"), ShapeError);
  CHECK_THROWS_AS(make_dataset(Tensor({1, 1, 2, 2}), {10}, "x"), std::invalid_argument);
  CHECK_THROWS_AS(make_dataset(Tensor::full({1, 1, 2, 2}, 1.5), {0}, "x"), std::invalid_argument);
  CHECK_THROWS_AS(make_dataset(Tensor({1, 4}), {0}, "x"), ShapeError);
}

TEST_CASE("batches") {
  auto sizes = [](const std::vector<std::vector<Index>>& b) {
    std::vector<std::size_t> s;
    for (const auto& v : b) s.push_back(v.size());
    return s;
  };
  CHECK(sizes(batches(10, 3, 1)) == std::vector<std::size_t>{3, 3, 3, 1});
  CHECK(batches(10, 3, 1) == batches(10, 3, 1));
  CHECK(batches(100, 7, 1) != batches(100, 7, 2));
  CHECK_THROWS_AS(batches(10, 0, 1), std::invalid_argument);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::multiset<Index> seen;
    for (const auto& b : batches(97, 8, seed)) seen.insert(b.begin(), b.end());
    std::multiset<Index> all;
    for (Index i = 0; i < 97; ++i) all.insert(i);
    CHECK(seen == all);
  }
}

TEST_CASE("subset and head") {
  Tensor images({40, 1, 2, 2});
  std::vector<Index> labels;
  for (Index i = 0; i < 40; ++i) {
    images.data().segment(i * 4, 4).setConstant(static_cast<double>(i) / 40.0);
    labels.push_back(i < 30 ? 0 : (i < 38 ? 1 : 2));
  }
  const Dataset d = make_dataset(images, labels, "toy", 3);
  const Dataset s = subset(d, 5, 4);
  CHECK(s.size() == 5);
  CHECK(std::set<Index>(s.labels.begin(), s.labels.end()) == std::set<Index>{0, 1, 2});
  std::set<double> firsts;
  for (Index i = 0; i < s.size(); ++i) {
    const double v = s.image(i)[0];
    firsts.insert(v);
    const Index src = static_cast<Index>(std::lround(v * 40.0));
    CHECK(s.labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(src)]);
  }
  CHECK(firsts.size() == 5);  // without replacement
  CHECK(subset(d, 5, 4).images == s.images);
  CHECK(subset(d, 40, 1).size() == 40);
  CHECK_THROWS_AS(subset(d, 41, 1), std::invalid_argument);
  const Dataset h = head(d, 3);
  CHECK(h.labels == std::vector<Index>{0, 0, 0});
  CHECK(h.image(2)[0] == 2.0 / 40.0);
}

TEST_CASE("bundled MNIST subset") {
  const SplitDataset d = load_mnist(SNN_TEST_DATA_DIR);
  CHECK(d.train.size() == 8000);
  CHECK(d.test.size() == 2000);
  CHECK(d.train.image_shape() == Shape{1, 28, 28});
  CHECK(d.train.images.data().minCoeff() >= 0.0);
  CHECK(d.train.images.data().maxCoeff() <= 1.0);
  std::vector<Index> counts(10, 0);
  for (Index l : d.test.labels) ++counts[static_cast<std::size_t>(l)];
  for (Index c : counts) CHECK(c > 100);
}

TEST_CASE("blob dataset") {
  const Dataset b = make_blob_dataset(200, 1);
  CHECK(b.size() == 200);
  CHECK(b.num_classes == 2);
  CHECK(b.image_shape() == Shape{1, 4, 4});
  CHECK(make_blob_dataset(200, 1).images == b.images);
  for (Index i = 0; i < b.size(); ++i) {
    const Tensor img = b.image(i);
    double contrast = 0.0;
    for (Index p = 0; p < 16; ++p) contrast += (p % 4 < 2 ? 1.0 : -1.0) * img[p];
    CHECK((b.labels[static_cast<std::size_t>(i)] == 0 ? contrast > 2.0 : contrast < -2.0));
  }
}
