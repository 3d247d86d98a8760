#include "msight/image.hpp"

#include "msight/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>

namespace msight {

GrayImage::GrayImage(int w, int h, double fill)
    : width(w), height(h), values(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0), fill) {}

double GrayImage::at_clamped(int x, int y) const {
  return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1));
}

RgbImage::RgbImage(int w, int h, double r, double g, double b)
    : width(w), height(h), values(static_cast<std::size_t>(std::max(w, 0)) * std::max(h, 0) * 3) {
  for (std::size_t i = 0; i < values.size(); i += 3) {
    values[i] = r;
    values[i + 1] = g;
    values[i + 2] = b;
  }
}

GrayImage to_gray(const RgbImage& rgb) {
  if (rgb.empty() || rgb.values.size() != static_cast<std::size_t>(rgb.width) * rgb.height * 3)
    throw Error(Errc::EmptyImage, "empty RGB image");
  GrayImage g(rgb.width, rgb.height);
  for (std::size_t i = 0; i < g.values.size(); ++i)
    g.values[i] = 0.299 * rgb.values[3 * i] + 0.587 * rgb.values[3 * i + 1] + 0.114 * rgb.values[3 * i + 2];
  return g;
}

bool sample_bilinear(const GrayImage& img, double x, double y, double& out) {
  if (!(x >= 0.0) || !(y >= 0.0) || x > img.width - 1 || y > img.height - 1) return false;
  const int x0 = std::min(static_cast<int>(x), img.width - 1);
  const int y0 = std::min(static_cast<int>(y), img.height - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  // Exact copies at integer positions.
  if (fx == 0.0 && fy == 0.0) {
    out = img.at(x0, y0);
    return true;
  }
  const double top = img.at(x0, y0) + fx * (img.at(x1, y0) - img.at(x0, y0));
  const double bottom = img.at(x0, y1) + fx * (img.at(x1, y1) - img.at(x0, y1));
  out = top + fy * (bottom - top);
  return true;
}

GrayImage downsample(const GrayImage& img) {
  GrayImage out(img.width / 2, img.height / 2);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      out.at(x, y) = 0.25 * (img.at(2 * x, 2 * y) + img.at(2 * x + 1, 2 * y) + img.at(2 * x, 2 * y + 1) +
                             img.at(2 * x + 1, 2 * y + 1));
  return out;
}

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

void read_header(std::istream& in, const char* magic, int& w, int& h) {
  if (next_token(in) != magic) throw Error(Errc::ParseError, std::string("expected netpbm ") + magic);
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    const int maxval = std::stoi(next_token(in));
    if (maxval != 255) throw Error(Errc::ParseError, "only 8-bit netpbm is supported");
  } catch (const std::logic_error&) {
    throw Error(Errc::ParseError, "malformed netpbm header");
  }
  if (w <= 0 || h <= 0) throw Error(Errc::EmptyImage, "netpbm image has no pixels");
}

unsigned char quantize(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

GrayImage read_pgm(std::istream& in) {
  int w = 0;
  int h = 0;
  read_header(in, "P5", w, h);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw Error(Errc::ParseError, "truncated PGM data");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = buf[i] / 255.0;
  return img;
}

void write_pgm(std::ostream& out, const GrayImage& img) {
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.values) out.put(static_cast<char>(quantize(v)));
}

RgbImage read_ppm(std::istream& in) {
  int w = 0;
  int h = 0;
  read_header(in, "P6", w, h);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw Error(Errc::ParseError, "truncated PPM data");
  RgbImage img(w, h);
  for (std::size_t i = 0; i < buf.size(); ++i) img.values[i] = buf[i] / 255.0;
  return img;
}

void write_ppm(std::ostream& out, const RgbImage& img) {
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.values) out.put(static_cast<char>(quantize(v)));
}

GrayImage read_pgm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot open " + path);
  return read_pgm(f);
}

void write_pgm_file(const std::string& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot write " + path);
  write_pgm(f, img);
}

BlobTexture::BlobTexture(int width, int height, std::uint64_t seed, int blobs) : width_(width), height_(height) {
  std::mt19937_64 rng(seed);
  const double scale = std::min(width, height);
  std::uniform_real_distribution<double> px(-0.1 * width, 1.1 * width);
  std::uniform_real_distribution<double> py(-0.1 * height, 1.1 * height);
  std::uniform_real_distribution<double> sig(0.04 * scale, 0.12 * scale);
  std::uniform_real_distribution<double> amp(-0.35, 0.35);
  blobs_.reserve(static_cast<std::size_t>(blobs));
  for (int i = 0; i < blobs; ++i) blobs_.push_back({px(rng), py(rng), sig(rng), amp(rng)});
  std::uniform_real_distribution<double> grad(-0.15, 0.15);
  gx_ = grad(rng) / width;
  gy_ = grad(rng) / height;
}

double BlobTexture::value(double x, double y) const {
  double v = 0.5 + gx_ * (x - 0.5 * width_) + gy_ * (y - 0.5 * height_);
  for (const auto& b : blobs_) {
    const double dx = x - b.x;
    const double dy = y - b.y;
    v += b.amplitude * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
  }
  return v;
}

GrayImage BlobTexture::render(const Eigen::Matrix3d& view_to_texture) const {
  GrayImage img(width_, height_);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      const Eigen::Vector2d t = (view_to_texture * Eigen::Vector3d(x, y, 1.0)).hnormalized();
      img.at(x, y) = value(t.x(), t.y());
    }
  return img;
}

}  // namespace msight
