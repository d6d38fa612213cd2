#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace mvadv {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);

/// Dense row-major array of doubles with up to four extents. The last axis
/// is the channel (or class) axis everywhere in the project; image batches
/// are N x H x W x C and single images H x W x C.
///
/// Construction validates the extent count, the data length and that every
/// value is finite, so a Tensor that exists is always well formed.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const { return data_.empty(); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Number of elements in one slice along axis 0.
  std::size_t slice_size() const;
  /// Copy of slice i along axis 0 (e.g. one image from a batch).
  Tensor slice(std::size_t i) const;
  std::span<const double> slice_values(std::size_t i) const;
  std::span<double> slice_values(std::size_t i);

  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Throws std::domain_error when any element is NaN or infinite.
void require_finite(std::span<const double> values, const char* what);

Tensor sign(const Tensor& t);
Tensor clip(const Tensor& t, double lo, double hi);
/// Elementwise clamp into [lo[i], hi[i]].
Tensor clip(const Tensor& t, const Tensor& lo, const Tensor& hi);
double l2_norm(const Tensor& t);
double linf_norm(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double factor);
/// a + factor * b
Tensor axpy(const Tensor& a, double factor, const Tensor& b);

/// Adds one H x W x C tensor to every image of an N x H x W x C batch.
Tensor broadcast_add(const Tensor& batch, const Tensor& image);
/// Sums an N x H x W x C batch over its first axis.
Tensor sum_batch(const Tensor& batch);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);
/// Selects slices along axis 0.
Tensor gather(const Tensor& t, std::span<const std::size_t> indices);

/// Row-wise argmax of an N x K matrix. Ties resolve to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& m);
/// Row-wise indices of the k largest entries, highest first. Ties resolve
/// to the lowest index.
std::vector<std::vector<std::size_t>> top_k_rows(const Tensor& m, std::size_t k);

// Binary dump: 8-byte magic "MVTENSOR", rank, extents (u64 LE), then the
// values as IEEE-754 binary64 LE.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace mvadv
