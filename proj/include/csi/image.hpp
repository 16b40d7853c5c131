#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace csi {

/// Single-channel row-major float image. Holds projections, binary masks
/// ({0,1}) and intermediate diffusion samples.
class Image2D {
 public:
  Image2D() = default;
  Image2D(int rows, int cols, float fill = 0.0f);
  Image2D(int rows, int cols, std::vector<float> data);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  float operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_shape(const Image2D& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  /// True when every pixel is exactly 0 or 1.
  bool is_binary() const;

  float min() const;
  float max() const;
  double l2_norm() const;

  Image2D& operator+=(const Image2D& other);
  Image2D& operator-=(const Image2D& other);
  Image2D& operator*=(float s);

  friend bool operator==(const Image2D&, const Image2D&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<float> data_;
};

Image2D operator+(Image2D a, const Image2D& b);
Image2D operator-(Image2D a, const Image2D& b);
Image2D operator*(Image2D a, float s);

/// Throws std::invalid_argument when the shapes differ.
void require_same_shape(const Image2D& a, const Image2D& b, const char* what);

/// Metadata stored next to a raw float32 image.
struct ImageSidecar {
  int rows = 0;
  int cols = 0;
  std::optional<double> normalization;
};

// Raw little-endian float32 + "<stem>.json" sidecar.
void write_image(const std::filesystem::path& raw_path, const Image2D& img,
                 std::optional<double> normalization = std::nullopt);
Image2D read_image(const std::filesystem::path& raw_path, ImageSidecar* sidecar = nullptr);

/// 8-bit binary PGM. Values are mapped linearly from [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, const Image2D& img, float lo = 0.0f,
               float hi = 1.0f);
/// Reads an 8-bit P5 PGM and returns values scaled to [0, 1].
Image2D read_pgm(const std::filesystem::path& path);

/// Sidecar path for a raw file: foo.raw -> foo.json.
std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

// Little-endian float32 blob helpers, shared with volume and checkpoint IO.
void write_f32_blob(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32_blob(const std::filesystem::path& path);

}  // namespace csi
