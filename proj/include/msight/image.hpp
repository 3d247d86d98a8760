#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace msight {

/// Single-channel image, row-major, intensities nominally in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0);

  bool empty() const { return width <= 0 || height <= 0; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  /// Clamped to the border.
  double at_clamped(int x, int y) const;
};

/// Three-channel image, interleaved RGB, intensities in [0, 1].
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;  // size 3 * width * height

  RgbImage() = default;
  RgbImage(int w, int h, double r = 0.0, double g = 0.0, double b = 0.0);

  bool empty() const { return width <= 0 || height <= 0; }
  double& at(int x, int y, int c) { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// Luminance 0.299 R + 0.587 G + 0.114 B. Throws EmptyImage.
GrayImage to_gray(const RgbImage& rgb);

/// Bilinear sample; false when (x, y) is outside the pixel grid.
bool sample_bilinear(const GrayImage& img, double x, double y, double& out);

/// 2x2 box average (odd trailing row/column dropped).
GrayImage downsample(const GrayImage& img);

// Binary netpbm I/O, 8-bit.
GrayImage read_pgm(std::istream& in);
void write_pgm(std::ostream& out, const GrayImage& img);
RgbImage read_ppm(std::istream& in);
void write_ppm(std::ostream& out, const RgbImage& img);
GrayImage read_pgm_file(const std::string& path);
void write_pgm_file(const std::string& path, const GrayImage& img);

/// Smooth analytic test texture: a sum of Gaussian blobs over a soft gradient.
/// Being analytic, it can be rendered under any view without resampling loss.
class BlobTexture {
 public:
  BlobTexture(int width, int height, std::uint64_t seed, int blobs = 60);

  double value(double x, double y) const;
  /// Renders the view where output pixel x shows texture point view_to_texture * x.
  GrayImage render(const Eigen::Matrix3d& view_to_texture = Eigen::Matrix3d::Identity()) const;
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  struct Blob {
    double x, y, sigma, amplitude;
  };
  int width_;
  int height_;
  std::vector<Blob> blobs_;
  double gx_ = 0.0;
  double gy_ = 0.0;
};

}  // namespace msight
