#include "mvadv/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mvadv {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'T', 'E', 'N', 'S', 'O', 'R'};
constexpr std::size_t kMaxRank = 4;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw std::runtime_error("tensor dump: truncated stream");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

template <typename Fn>
Tensor map(const Tensor& t, Fn fn) {
  std::vector<double> out(t.size());
  auto in = t.values();
  std::transform(in.begin(), in.end(), out.begin(), fn);
  return Tensor(t.shape(), std::move(out));
}

template <typename Fn>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, Fn fn) {
  require_same_shape(a, b, op);
  std::vector<double> out(a.size());
  auto av = a.values();
  auto bv = b.values();
  std::transform(av.begin(), av.end(), bv.begin(), out.begin(), fn);
  return Tensor(a.shape(), std::move(out));
}

}  // namespace

std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > kMaxRank) throw std::invalid_argument("tensor rank exceeds 4");
  if (!std::isfinite(fill)) throw std::domain_error("tensor fill value is not finite");
  data_.assign(shape_volume(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > kMaxRank) throw std::invalid_argument("tensor rank exceeds 4");
  if (data_.size() != shape_volume(shape_)) {
    throw std::invalid_argument("tensor data length does not match its shape");
  }
  require_finite(data_, "tensor");
}

std::size_t Tensor::slice_size() const {
  if (shape_.empty()) throw std::logic_error("slice of a rank-0 tensor");
  return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

Tensor Tensor::slice(std::size_t i) const {
  auto v = slice_values(i);
  return Tensor(Shape(shape_.begin() + 1, shape_.end()), std::vector<double>(v.begin(), v.end()));
}

std::span<const double> Tensor::slice_values(std::size_t i) const {
  if (shape_.empty() || i >= shape_[0]) throw std::out_of_range("tensor slice index");
  const std::size_t n = slice_size();
  return std::span<const double>(data_).subspan(i * n, n);
}

std::span<double> Tensor::slice_values(std::size_t i) {
  if (shape_.empty() || i >= shape_[0]) throw std::out_of_range("tensor slice index");
  const std::size_t n = slice_size();
  return std::span<double>(data_).subspan(i * n, n);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size()) throw std::invalid_argument("reshape changes volume");
  return Tensor(std::move(shape), data_);
}

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(what) + ": non-finite value");
  }
}

Tensor sign(const Tensor& t) {
  // sign(0) == 0 so zero gradients leave pixels untouched.
  return map(t, [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
}

Tensor clip(const Tensor& t, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clip: lo > hi");
  return map(t, [lo, hi](double v) { return std::clamp(v, lo, hi); });
}

Tensor clip(const Tensor& t, const Tensor& lo, const Tensor& hi) {
  require_same_shape(t, lo, "clip");
  require_same_shape(t, hi, "clip");
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (lo[i] > hi[i]) throw std::invalid_argument("clip: lo > hi");
    out[i] = std::clamp(t[i], lo[i], hi[i]);
  }
  return Tensor(t.shape(), std::move(out));
}

double l2_norm(const Tensor& t) {
  // Scaled accumulation so large entries cannot overflow the sum of squares.
  double scale_max = linf_norm(t);
  if (scale_max == 0.0) return 0.0;
  double sum = 0.0;
  for (double v : t.values()) {
    const double r = v / scale_max;
    sum += r * r;
  }
  return scale_max * std::sqrt(sum);
}

double linf_norm(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, "add", std::plus<>());
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, "sub", std::minus<>());
}

Tensor scale(const Tensor& t, double factor) {
  return map(t, [factor](double v) { return factor * v; });
}

Tensor axpy(const Tensor& a, double factor, const Tensor& b) {
  return zip(a, b, "axpy", [factor](double x, double y) { return x + factor * y; });
}

Tensor broadcast_add(const Tensor& batch, const Tensor& image) {
  if (batch.rank() != image.rank() + 1 ||
      !std::equal(image.shape().begin(), image.shape().end(), batch.shape().begin() + 1)) {
    throw std::invalid_argument("broadcast_add: image shape does not match batch");
  }
  std::vector<double> out(batch.size());
  const std::size_t n = image.size();
  for (std::size_t b = 0; b < batch.extent(0); ++b) {
    auto src = batch.slice_values(b);
    for (std::size_t i = 0; i < n; ++i) out[b * n + i] = src[i] + image[i];
  }
  return Tensor(batch.shape(), std::move(out));
}

Tensor sum_batch(const Tensor& batch) {
  if (batch.rank() == 0) throw std::invalid_argument("sum_batch: rank-0 tensor");
  Shape inner(batch.shape().begin() + 1, batch.shape().end());
  std::vector<double> out(shape_volume(inner), 0.0);
  for (std::size_t b = 0; b < batch.extent(0); ++b) {
    auto src = batch.slice_values(b);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += src[i];
  }
  return Tensor(std::move(inner), std::move(out));
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack: no tensors");
  Shape shape = items.front().shape();
  std::vector<double> out;
  out.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    if (t.shape() != shape) throw std::invalid_argument("stack: shape mismatch");
    out.insert(out.end(), t.values().begin(), t.values().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor(std::move(shape), std::move(out));
}

Tensor gather(const Tensor& t, std::span<const std::size_t> indices) {
  Shape shape = t.shape();
  if (shape.empty()) throw std::invalid_argument("gather: rank-0 tensor");
  shape[0] = indices.size();
  std::vector<double> out;
  out.reserve(indices.size() * t.slice_size());
  for (std::size_t i : indices) {
    auto v = t.slice_values(i);
    out.insert(out.end(), v.begin(), v.end());
  }
  return Tensor(std::move(shape), std::move(out));
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
  if (m.rank() != 2) throw std::invalid_argument("argmax_rows: expected a matrix");
  std::vector<std::size_t> out(m.extent(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = m.slice_values(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<std::vector<std::size_t>> top_k_rows(const Tensor& m, std::size_t k) {
  if (m.rank() != 2) throw std::invalid_argument("top_k_rows: expected a matrix");
  const std::size_t cols = m.extent(1);
  k = std::min(k, cols);
  std::vector<std::vector<std::size_t>> out(m.extent(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = m.slice_values(r);
    std::vector<std::size_t> idx(cols);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    idx.resize(k);
    out[r] = std::move(idx);
  }
  return out;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, sizeof(kMagic));
  put_u64(out, t.rank());
  for (std::size_t e : t.shape()) put_u64(out, e);
  for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("tensor dump: write failed");
}

Tensor read_tensor(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw std::runtime_error("tensor dump: bad magic");
  }
  const std::uint64_t rank = get_u64(in);
  if (rank > kMaxRank) throw std::runtime_error("tensor dump: rank exceeds 4");
  Shape shape(rank);
  for (auto& e : shape) e = get_u64(in);
  std::vector<double> data(shape_volume(shape));
  for (auto& v : data) v = std::bit_cast<double>(get_u64(in));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace mvadv
