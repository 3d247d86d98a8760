#include "msight/align.hpp"

#include "msight/error.hpp"

#include <cmath>

namespace msight {

namespace {

constexpr int kDivergenceRun = 5;
// Smaller drops are interpolation noise while the warp settles.
constexpr double kDecreaseTol = 1e-7;

int param_count(MotionModel m) {
  switch (m) {
    case MotionModel::Translation: return 2;
    case MotionModel::Affine: return 6;
    case MotionModel::Homography: return 8;
  }
  return 8;
}

// Parameters are offsets from the identity so that zero means "no motion".
Eigen::Matrix3d to_matrix(const Eigen::VectorXd& p, MotionModel m) {
  Eigen::Matrix3d w = Eigen::Matrix3d::Identity();
  switch (m) {
    case MotionModel::Translation:
      w(0, 2) += p(0);
      w(1, 2) += p(1);
      break;
    case MotionModel::Affine:
    case MotionModel::Homography:
      for (int i = 0; i < param_count(m); ++i) w(i / 3, i % 3) += p(i);
      break;
  }
  return w;
}

Eigen::VectorXd to_params(const Eigen::Matrix3d& w_in, MotionModel m) {
  Eigen::Matrix3d w = w_in / w_in(2, 2);
  w -= Eigen::Matrix3d::Identity();
  Eigen::VectorXd p(param_count(m));
  if (m == MotionModel::Translation) {
    p << w(0, 2), w(1, 2);
  } else {
    for (int i = 0; i < p.size(); ++i) p(i) = w(i / 3, i % 3);
  }
  return p;
}

struct Gradients {
  GrayImage gx;
  GrayImage gy;
};

Gradients central_gradients(const GrayImage& img) {
  Gradients g{GrayImage(img.width, img.height), GrayImage(img.width, img.height)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      g.gx.at(x, y) = 0.5 * (img.at_clamped(x + 1, y) - img.at_clamped(x - 1, y));
      g.gy.at(x, y) = 0.5 * (img.at_clamped(x, y + 1) - img.at_clamped(x, y - 1));
    }
  return g;
}

// Correlation of template against image sampled through warp (template -> image coords).
struct Sampled {
  std::vector<double> tmpl;
  std::vector<double> img;
  std::vector<double> gx;
  std::vector<double> gy;
  std::vector<Eigen::Vector2d> pos;     // template pixel
  std::vector<Eigen::Vector3d> warped;  // homogeneous image position
};

Sampled sample(const GrayImage& image, const Gradients* grad, const GrayImage& tmpl, const Eigen::Matrix3d& warp) {
  Sampled s;
  const std::size_t n = tmpl.values.size();
  s.tmpl.reserve(n);
  s.img.reserve(n);
  for (int y = 0; y < tmpl.height; ++y)
    for (int x = 0; x < tmpl.width; ++x) {
      const Eigen::Vector3d q = warp * Eigen::Vector3d(x, y, 1.0);
      if (!(q.z() > 0.0)) continue;
      const double u = q.x() / q.z();
      const double v = q.y() / q.z();
      double val;
      if (!sample_bilinear(image, u, v, val)) continue;
      s.tmpl.push_back(tmpl.at(x, y));
      s.img.push_back(val);
      if (grad) {
        double gx;
        double gy;
        sample_bilinear(grad->gx, u, v, gx);
        sample_bilinear(grad->gy, u, v, gy);
        s.gx.push_back(gx);
        s.gy.push_back(gy);
        s.pos.emplace_back(x, y);
        s.warped.push_back(q);
      }
    }
  return s;
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto n = static_cast<Eigen::Index>(a.size());
  if (n < 2) return 0.0;
  Eigen::Map<const Eigen::VectorXd> va(a.data(), n);
  Eigen::Map<const Eigen::VectorXd> vb(b.data(), n);
  const Eigen::VectorXd za = va.array() - va.mean();
  const Eigen::VectorXd zb = vb.array() - vb.mean();
  const double denom = za.norm() * zb.norm();
  return denom > 0.0 ? za.dot(zb) / denom : 0.0;
}

double variance(const GrayImage& img) {
  Eigen::Map<const Eigen::VectorXd> v(img.values.data(), static_cast<Eigen::Index>(img.values.size()));
  return (v.array() - v.mean()).square().mean();
}

struct LevelOutcome {
  Eigen::Matrix3d warp;
  int iterations = 0;
  bool converged = false;
};

// One pyramid level of forward-additive ECC; warp maps template -> image pixels.
LevelOutcome ecc_level(const GrayImage& image, const GrayImage& tmpl, Eigen::Matrix3d warp, MotionModel model,
                       const AlignOptions& opts) {
  const Gradients grad = central_gradients(image);
  const int np = param_count(model);
  Eigen::VectorXd p = to_params(warp, model);
  LevelOutcome out;
  double last_rho = -2.0;
  double best_rho = -2.0;
  Eigen::Matrix3d best = warp;
  int falling = 0;
  for (int it = 0; it < opts.max_iters; ++it) {
    const Sampled s = sample(image, &grad, tmpl, warp);
    const auto n = static_cast<Eigen::Index>(s.tmpl.size());
    if (n < 2 * np) throw Error(Errc::Diverged, "warp left the image");
    Eigen::Map<const Eigen::VectorXd> t(s.tmpl.data(), n);
    Eigen::Map<const Eigen::VectorXd> im(s.img.data(), n);
    const Eigen::VectorXd tzm = t.array() - t.mean();
    const Eigen::VectorXd izm = im.array() - im.mean();
    const double t_norm = tzm.norm();
    const double i_norm = izm.norm();
    if (t_norm == 0.0 || i_norm == 0.0) throw Error(Errc::FlatImage, "no intensity variation in overlap");
    const double corr = tzm.dot(izm);
    const double rho = corr / (t_norm * i_norm);

    if (rho > best_rho) {
      best_rho = rho;
      best = warp;
    }
    if (rho < last_rho - kDecreaseTol) {
      if (++falling >= kDivergenceRun) throw Error(Errc::Diverged, "ECC decreased for 5 consecutive iterations");
    } else {
      falling = 0;
    }
    last_rho = rho;

    Eigen::MatrixXd jac(n, np);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = s.pos[static_cast<std::size_t>(i)].x();
      const double y = s.pos[static_cast<std::size_t>(i)].y();
      const double gx = s.gx[static_cast<std::size_t>(i)];
      const double gy = s.gy[static_cast<std::size_t>(i)];
      switch (model) {
        case MotionModel::Translation:
          jac(i, 0) = gx;
          jac(i, 1) = gy;
          break;
        case MotionModel::Affine:
          jac.row(i) << gx * x, gx * y, gx, gy * x, gy * y, gy;
          break;
        case MotionModel::Homography: {
          const Eigen::Vector3d& q = s.warped[static_cast<std::size_t>(i)];
          const double den = q.z();
          const double u = q.x() / den;
          const double v = q.y() / den;
          const double gxd = gx / den;
          const double gyd = gy / den;
          const double mix = -(gxd * u + gyd * v);
          jac.row(i) << gxd * x, gxd * y, gxd, gyd * x, gyd * y, gyd, mix * x, mix * y;
          break;
        }
      }
    }
    const Eigen::MatrixXd hess = jac.transpose() * jac;
    const Eigen::LDLT<Eigen::MatrixXd> hess_ldlt(hess);
    const Eigen::VectorXd img_proj = jac.transpose() * izm;
    const Eigen::VectorXd tmpl_proj = jac.transpose() * tzm;
    const Eigen::VectorXd img_proj_h = hess_ldlt.solve(img_proj);
    const double lambda_n = i_norm * i_norm - img_proj.dot(img_proj_h);
    const double lambda_d = corr - tmpl_proj.dot(img_proj_h);
    if (!(lambda_d > 0.0)) throw Error(Errc::Diverged, "ECC correlation became non-positive");
    const double lambda = lambda_n / lambda_d;
    const Eigen::VectorXd err = lambda * tzm - izm;
    const Eigen::VectorXd dp = hess_ldlt.solve(jac.transpose() * err);
    if (!dp.allFinite()) throw Error(Errc::Diverged, "non-finite ECC update");
    p += dp;
    warp = to_matrix(p, model);
    out.iterations = it + 1;
    if (dp.norm() < opts.eps) {
      out.converged = true;
      break;
    }
  }
  const Sampled s = sample(image, nullptr, tmpl, warp);
  out.warp = static_cast<Eigen::Index>(s.tmpl.size()) >= 2 * np && correlation(s.tmpl, s.img) < best_rho ? best : warp;
  return out;
}

Eigen::Matrix3d inverse_checked(const Eigen::Matrix3d& m) {
  if (!m.allFinite() || std::abs(m.determinant()) < 1e-12) throw Error(Errc::SingularTransform, "transform is not invertible");
  return m.inverse();
}

}  // namespace

double ecc_value(const GrayImage& input, const GrayImage& standard, const AlignTransform& t) {
  const Sampled s = sample(input, nullptr, standard, inverse_checked(t.w));
  return correlation(s.tmpl, s.img);
}

AlignResult estimate_transform(const GrayImage& input, const GrayImage& standard, const AlignOptions& opts) {
  if (input.empty() || standard.empty()) throw Error(Errc::EmptyImage, "empty image");
  if (input.width != standard.width || input.height != standard.height)
    throw Error(Errc::SizeMismatch, "input and standard differ in size");
  if (variance(standard) <= 1e-20) throw Error(Errc::FlatImage, "standard image has zero variance");
  if (variance(input) <= 1e-20) throw Error(Errc::FlatImage, "input image has zero variance");

  std::vector<GrayImage> tmpl_pyr{standard};
  std::vector<GrayImage> img_pyr{input};
  for (int l = 1; l < opts.pyramid_levels; ++l) {
    if (tmpl_pyr.back().width < 32 || tmpl_pyr.back().height < 32) break;
    tmpl_pyr.push_back(downsample(tmpl_pyr.back()));
    img_pyr.push_back(downsample(img_pyr.back()));
  }

  // Coarse pixel x sits at fine position 2x + 0.5.
  Eigen::Matrix3d up;
  up << 2.0, 0.0, 0.5, 0.0, 2.0, 0.5, 0.0, 0.0, 1.0;
  const Eigen::Matrix3d down = up.inverse();

  Eigen::Matrix3d warp = Eigen::Matrix3d::Identity();  // standard -> input, current level
  AlignResult res;
  res.transform.model = opts.model;
  for (int l = static_cast<int>(tmpl_pyr.size()) - 1; l >= 0; --l) {
    const auto level = ecc_level(img_pyr[static_cast<std::size_t>(l)], tmpl_pyr[static_cast<std::size_t>(l)], warp,
                                 opts.model, opts);
    res.iterations += level.iterations;
    res.converged = level.converged;
    warp = level.warp;
    if (l > 0) {
      warp = up * warp * down;
      warp /= warp(2, 2);
      if (opts.model != MotionModel::Homography) warp.row(2) << 0.0, 0.0, 1.0;
    }
  }

  res.transform.w = inverse_checked(warp);
  res.transform.w /= res.transform.w(2, 2);
  res.ecc = ecc_value(input, standard, res.transform);
  res.identity_ecc = ecc_value(input, standard, AlignTransform{Eigen::Matrix3d::Identity(), opts.model});
  if (res.ecc < res.identity_ecc) {
    res.transform.w = Eigen::Matrix3d::Identity();
    res.ecc = res.identity_ecc;
    res.no_improvement = true;
  }
  return res;
}

WarpedGray warp_perspective(const GrayImage& img, const AlignTransform& t) {
  const Eigen::Matrix3d inv = inverse_checked(t.w);
  WarpedGray out{GrayImage(img.width, img.height), std::vector<std::uint8_t>(img.values.size(), 0)};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const Eigen::Vector3d q = inv * Eigen::Vector3d(x, y, 1.0);
      double v;
      if (q.z() > 0.0 && sample_bilinear(img, q.x() / q.z(), q.y() / q.z(), v)) {
        out.image.at(x, y) = v;
        out.valid[static_cast<std::size_t>(y) * img.width + x] = 1;
      }
    }
  return out;
}

WarpedRgb warp_perspective(const RgbImage& img, const AlignTransform& t) {
  WarpedRgb out{RgbImage(img.width, img.height), {}};
  for (int c = 0; c < 3; ++c) {
    GrayImage channel(img.width, img.height);
    for (std::size_t i = 0; i < channel.values.size(); ++i) channel.values[i] = img.values[3 * i + c];
    auto w = warp_perspective(channel, t);
    for (std::size_t i = 0; i < channel.values.size(); ++i) out.image.values[3 * i + c] = w.image.values[i];
    if (c == 0) out.valid = std::move(w.valid);
  }
  return out;
}

}  // namespace msight
