#include "csi/image.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace csi {

namespace fs = std::filesystem;
using nlohmann::json;

// Raw blobs are written in host order; only little-endian hosts are supported.
static_assert(std::endian::native == std::endian::little);

Image2D::Image2D(int rows, int cols, float fill) : rows_(rows), cols_(cols) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("Image2D: rows and cols must be >= 1");
  data_.assign(static_cast<std::size_t>(rows) * cols, fill);
}

Image2D::Image2D(int rows, int cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("Image2D: rows and cols must be >= 1");
  if (data_.size() != static_cast<std::size_t>(rows) * cols)
    throw std::invalid_argument("Image2D: data length != rows*cols");
}

bool Image2D::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

bool Image2D::is_binary() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

float Image2D::min() const { return *std::min_element(data_.begin(), data_.end()); }
float Image2D::max() const { return *std::max_element(data_.begin(), data_.end()); }

double Image2D::l2_norm() const {
  double acc = 0.0;
  for (float v : data_) acc += static_cast<double>(v) * v;
  return std::sqrt(acc);
}

Image2D& Image2D::operator+=(const Image2D& other) {
  require_same_shape(*this, other, "Image2D::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Image2D& Image2D::operator-=(const Image2D& other) {
  require_same_shape(*this, other, "Image2D::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Image2D& Image2D::operator*=(float s) {
  for (float& v : data_) v *= s;
  return *this;
}

Image2D operator+(Image2D a, const Image2D& b) { return a += b; }
Image2D operator-(Image2D a, const Image2D& b) { return a -= b; }
Image2D operator*(Image2D a, float s) { return a *= s; }

void require_same_shape(const Image2D& a, const Image2D& b, const char* what) {
  if (!a.same_shape(b)) {
    std::ostringstream os;
    os << what << ": shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
       << b.cols();
    throw std::invalid_argument(os.str());
  }
}

fs::path sidecar_path(const fs::path& raw_path) {
  fs::path p = raw_path;
  p.replace_extension(".json");
  return p;
}

void write_f32_blob(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<float> read_f32_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0) throw std::runtime_error("truncated float blob: " + path.string());
  std::vector<float> values(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return values;
}

void write_image(const fs::path& raw_path, const Image2D& img, std::optional<double> normalization) {
  write_f32_blob(raw_path, img.values());
  json meta = {{"rows", img.rows()}, {"cols", img.cols()}, {"dtype", "float32"},
               {"endianness", "little"}};
  if (normalization) meta["normalization"] = *normalization;
  std::ofstream out(sidecar_path(raw_path), std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write sidecar for " + raw_path.string());
  out << meta.dump(2) << '\n';
}

Image2D read_image(const fs::path& raw_path, ImageSidecar* sidecar) {
  std::ifstream in(sidecar_path(raw_path));
  if (!in) throw std::runtime_error("missing sidecar for " + raw_path.string());
  const json meta = json::parse(in);
  ImageSidecar sc;
  sc.rows = meta.at("rows").get<int>();
  sc.cols = meta.at("cols").get<int>();
  if (meta.contains("normalization")) sc.normalization = meta["normalization"].get<double>();
  auto values = read_f32_blob(raw_path);
  if (values.size() != static_cast<std::size_t>(sc.rows) * sc.cols)
    throw std::runtime_error("raw size does not match sidecar: " + raw_path.string());
  if (sidecar) *sidecar = sc;
  return Image2D(sc.rows, sc.cols, std::move(values));
}

void write_pgm(const fs::path& path, const Image2D& img, float lo, float hi) {
  if (!(hi > lo)) throw std::invalid_argument("write_pgm: hi must exceed lo");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const float u = std::clamp((img[i] - lo) / (hi - lo), 0.0f, 1.0f);
    bytes[i] = static_cast<unsigned char>(std::lround(u * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image2D read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::string magic;
  int cols = 0, rows = 0, maxval = 0;
  in >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || maxval != 255) throw std::runtime_error("unsupported PGM: " + path.string());
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(rows) * cols);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  std::vector<float> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = bytes[i] / 255.0f;
  return Image2D(rows, cols, std::move(values));
}

}  // namespace csi
