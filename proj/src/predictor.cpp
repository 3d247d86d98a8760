#include "msight/predictor.hpp"

#include "bytes.hpp"
#include "msight/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace msight {

namespace {

constexpr char kModelMagic[4] = {'M', 'S', 'P', 'T'};
constexpr std::uint32_t kModelVersion = 1;

// softplus^-1(1): initial variances start at 1 m^2.
const double kVarianceBiasInit = std::log(std::numbers::e - 1.0);

std::string layer_prefix(int l) { return "layer" + std::to_string(l) + "."; }

}  // namespace

bool TrajectoryHistory::complete() const {
  for (bool v : valid)
    if (!v) return false;
  return true;
}

void EncoderConfig::validate() const {
  if (model_dim < 1 || layers < 0 || heads < 1 || model_dim % heads != 0)
    throw Error(Errc::InvalidArgument, "model_dim must be positive and divisible by heads");
  if (future_frames < 1) throw Error(Errc::InvalidArgument, "K must be at least 1");
  if (positional_length < 0) throw Error(Errc::InvalidArgument, "L must be non-negative");
  if (mlp_ratio < 1) throw Error(Errc::InvalidArgument, "mlp_ratio must be at least 1");
  if (!(frame_interval_s > 0.0) || !(norm_radius_m > 0.0))
    throw Error(Errc::InvalidArgument, "frame interval and normalization radius must be positive");
}

PlanePoint PredictionOutput::mean_at(Eigen::Index object, int k) const {
  return {mean(object, 2 * (k - 1)), mean(object, 2 * (k - 1) + 1)};
}

std::vector<PlanePoint> PredictionOutput::track(Eigen::Index object) const {
  std::vector<PlanePoint> out;
  for (int k = 1; 2 * k <= mean.cols(); ++k) out.push_back(mean_at(object, k));
  return out;
}

std::size_t ModelParameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.size());
  return n;
}

const Eigen::MatrixXd& ModelParameters::get(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw Error(Errc::InvalidArgument, "no parameter named " + name);
}

Eigen::MatrixXd& ModelParameters::get(const std::string& name) {
  return const_cast<Eigen::MatrixXd&>(std::as_const(*this).get(name));
}

std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> parameter_layout(const EncoderConfig& cfg) {
  cfg.validate();
  const Eigen::Index d = cfg.model_dim;
  const Eigen::Index hidden = d * cfg.mlp_ratio;
  const Eigen::Index out = 2 * cfg.future_frames;
  std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> l;
  l.push_back({"input.w", {cfg.token_features(), d}});
  l.push_back({"input.b", {1, d}});
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = layer_prefix(i);
    l.push_back({p + "ln1.g", {1, d}});
    l.push_back({p + "ln1.b", {1, d}});
    for (const char* m : {"q", "k", "v", "o"}) {
      l.push_back({p + "attn." + m + ".w", {d, d}});
      l.push_back({p + "attn." + m + ".b", {1, d}});
    }
    l.push_back({p + "ln2.g", {1, d}});
    l.push_back({p + "ln2.b", {1, d}});
    l.push_back({p + "mlp.fc1.w", {d, hidden}});
    l.push_back({p + "mlp.fc1.b", {1, hidden}});
    l.push_back({p + "mlp.fc2.w", {hidden, d}});
    l.push_back({p + "mlp.fc2.b", {1, d}});
  }
  l.push_back({"mean.w", {d, out}});
  l.push_back({"mean.b", {1, out}});
  l.push_back({"var.w", {d, out}});
  l.push_back({"var.b", {1, out}});
  return l;
}

ModelParameters init_parameters(const EncoderConfig& cfg, std::uint64_t seed) {
  ModelParameters p;
  p.config = cfg;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double residual_scale = 1.0 / std::sqrt(2.0 * std::max(cfg.layers, 1));
  for (const auto& [name, shape] : parameter_layout(cfg)) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(shape.first, shape.second);
    const bool is_weight = name.ends_with(".w");
    if (name.ends_with(".g")) m.setOnes();
    if (is_weight) {
      double stddev = 1.0 / std::sqrt(static_cast<double>(shape.first));
      if (name.ends_with("attn.o.w") || name.ends_with("fc2.w")) stddev *= residual_scale;
      if (name == "mean.w" || name == "var.w") stddev *= 0.01;
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * normal(rng);
    }
    if (name == "var.b") m.setConstant(kVarianceBiasInit);
    p.names.push_back(name);
    p.tensors.push_back(std::move(m));
  }
  return p;
}

std::vector<double> positional_map(double c, int L) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(2 * std::max(L, 0) + 1));
  out.push_back(c);
  for (int k = 0; k < L; ++k) {
    const double w = std::ldexp(std::numbers::pi, k);
    out.push_back(std::sin(w * c));
    out.push_back(std::cos(w * c));
  }
  return out;
}

Eigen::RowVectorXd encode_history(const TrajectoryHistory& h, const EncoderConfig& cfg) {
  const int per = cfg.features_per_scalar();
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(cfg.token_features());
  for (int f = 0; f < kHistoryFrames; ++f) {
    if (!h.valid[static_cast<std::size_t>(f)]) continue;
    const PlanePoint& p = h.positions[static_cast<std::size_t>(f)];
    const double coords[2] = {p.east / cfg.norm_radius_m, p.north / cfg.norm_radius_m};
    for (int c = 0; c < 2; ++c) {
      const auto enc = positional_map(coords[c], cfg.positional_length);
      for (int i = 0; i < per; ++i) row((f * 2 + c) * per + i) = enc[static_cast<std::size_t>(i)];
    }
  }
  return row;
}

RecordedForward forward_graph(ad::Tape& tape, std::span<const TrajectoryHistory> histories,
                              const ModelParameters& params) {
  const EncoderConfig& cfg = params.config;
  const auto layout = parameter_layout(cfg);
  if (layout.size() != params.tensors.size()) throw Error(Errc::ShapeMismatch, "parameter count does not match config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = params.tensors[i];
    if (t.rows() != layout[i].second.first || t.cols() != layout[i].second.second)
      throw Error(Errc::ShapeMismatch, "parameter " + layout[i].first + " has the wrong shape");
  }
  if (histories.empty()) throw Error(Errc::ShapeMismatch, "forward needs at least one object");

  RecordedForward out;
  for (const auto& t : params.tensors) out.params.push_back(tape.parameter(t));
  std::size_t next = 0;
  auto take = [&]() { return out.params[next++]; };

  const auto n = static_cast<Eigen::Index>(histories.size());
  Eigen::MatrixXd features(n, cfg.token_features());
  ad::Mask allowed(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    features.row(i) = encode_history(histories[static_cast<std::size_t>(i)], cfg);
    for (Eigen::Index j = 0; j < n; ++j) allowed(i, j) = i == j || histories[static_cast<std::size_t>(j)].complete();
  }

  const ad::Var x = tape.constant(std::move(features));
  const ad::Var in_w = take();
  const ad::Var in_b = take();
  ad::Var h = ad::add_row(ad::matmul(x, in_w), in_b);

  const int dh = cfg.model_dim / cfg.heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg.layers; ++l) {
    const ad::Var g1 = take(), b1 = take();
    const ad::Var wq = take(), bq = take(), wk = take(), bk = take(), wv = take(), bv = take(), wo = take(), bo = take();
    const ad::Var g2 = take(), b2 = take();
    const ad::Var w1 = take(), c1 = take(), w2 = take(), c2 = take();

    const ad::Var a = ad::layer_norm_rows(h, g1, b1);
    const ad::Var q = ad::add_row(ad::matmul(a, wq), bq);
    const ad::Var k = ad::add_row(ad::matmul(a, wk), bk);
    const ad::Var v = ad::add_row(ad::matmul(a, wv), bv);
    std::vector<ad::Var> heads;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const ad::Var qh = ad::slice_cols(q, hd * dh, dh);
      const ad::Var kh = ad::slice_cols(k, hd * dh, dh);
      const ad::Var vh = ad::slice_cols(v, hd * dh, dh);
      const ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dh), allowed);
      heads.push_back(ad::matmul(attn, vh));
    }
    const ad::Var merged = cfg.heads == 1 ? heads.front() : ad::concat_cols(heads);
    h = ad::add(h, ad::add_row(ad::matmul(merged, wo), bo));

    const ad::Var a2 = ad::layer_norm_rows(h, g2, b2);
    const ad::Var hidden = ad::gelu(ad::add_row(ad::matmul(a2, w1), c1));
    h = ad::add(h, ad::add_row(ad::matmul(hidden, w2), c2));
  }

  const ad::Var mw = take(), mb = take(), vw = take(), vb = take();
  // Mean weights act in normalized units; the bias is in meters.
  out.mean = ad::add_row(ad::scale(ad::matmul(h, mw), cfg.norm_radius_m), mb);
  out.variance = ad::softplus(ad::add_row(ad::matmul(h, vw), vb));
  return out;
}

PredictionOutput forward(std::span<const TrajectoryHistory> histories, const ModelParameters& params) {
  ad::Tape tape(false);
  const RecordedForward f = forward_graph(tape, histories, params);
  return {f.mean.value(), f.variance.value()};
}

namespace {

struct LossInputs {
  Eigen::MatrixXd target;
  Eigen::MatrixXd weight_x;
  Eigen::MatrixXd weight_y;
  std::size_t terms = 0;
};

LossInputs loss_inputs(Eigen::Index n, Eigen::Index cols, std::span<const FutureTrack> gt,
                       const std::vector<bool>& include) {
  if (cols % 2 != 0) throw Error(Errc::ShapeMismatch, "prediction columns must come in (e, n) pairs");
  const Eigen::Index K = cols / 2;
  if (static_cast<Eigen::Index>(gt.size()) != n) throw Error(Errc::ShapeMismatch, "ground truth object count differs");
  LossInputs in;
  in.target = Eigen::MatrixXd::Zero(n, cols);
  in.weight_x = Eigen::MatrixXd::Zero(n, cols);
  in.weight_y = Eigen::MatrixXd::Zero(n, cols);
  std::size_t objects = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!include[static_cast<std::size_t>(i)]) continue;
    const auto& f = gt[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(f.size()) != K) throw Error(Errc::ShapeMismatch, "ground truth horizon differs from K");
    ++objects;
    for (Eigen::Index k = 0; k < K; ++k) {
      in.target(i, 2 * k) = f[static_cast<std::size_t>(k)].east;
      in.target(i, 2 * k + 1) = f[static_cast<std::size_t>(k)].north;
      in.weight_x(i, 2 * k) = 1.0;
      in.weight_y(i, 2 * k + 1) = 1.0;
    }
  }
  in.terms = objects * static_cast<std::size_t>(K);
  if (in.terms > 0) {
    in.weight_x /= static_cast<double>(in.terms);
    in.weight_y /= static_cast<double>(in.terms);
  }
  return in;
}

}  // namespace

LossBreakdown loss(const PredictionOutput& pred, std::span<const FutureTrack> gt, const std::vector<bool>* include) {
  const Eigen::Index n = pred.mean.rows();
  if (pred.variance.rows() != n || pred.variance.cols() != pred.mean.cols())
    throw Error(Errc::ShapeMismatch, "mean and variance shapes differ");
  const std::vector<bool> all(static_cast<std::size_t>(n), true);
  if (include && include->size() != static_cast<std::size_t>(n))
    throw Error(Errc::ShapeMismatch, "include mask length differs from object count");
  const LossInputs in = loss_inputs(n, pred.mean.cols(), gt, include ? *include : all);
  LossBreakdown b;
  b.terms = in.terms;
  if (in.terms == 0) return b;
  const Eigen::ArrayXXd e2 = (pred.mean - in.target).array().square();
  const Eigen::ArrayXXd s2 = (e2 - pred.variance.array()).square();
  b.mu = (e2 * (in.weight_x + in.weight_y).array()).sum();
  b.sigma_x = (s2 * in.weight_x.array()).sum();
  b.sigma_y = (s2 * in.weight_y.array()).sum();
  b.total = b.mu + b.sigma_x + b.sigma_y;
  return b;
}

ad::Var loss_graph(ad::Tape& tape, const RecordedForward& fwd, const Sample& s, LossBreakdown* parts) {
  const Eigen::Index n = fwd.mean.rows();
  std::vector<bool> include(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < include.size(); ++i) include[i] = s.histories[i].complete();
  const LossInputs in = loss_inputs(n, fwd.mean.cols(), s.futures, include);
  if (in.terms == 0) {
    if (parts) *parts = {};
    return tape.constant(Eigen::MatrixXd::Zero(1, 1));
  }
  const ad::Var wx = tape.constant(in.weight_x);
  const ad::Var wy = tape.constant(in.weight_y);
  const ad::Var e2 = ad::square(ad::sub(fwd.mean, tape.constant(in.target)));
  const ad::Var s2 = ad::square(ad::sub(e2, fwd.variance));
  const ad::Var mu = ad::sum(ad::mul(e2, tape.constant(in.weight_x + in.weight_y)));
  const ad::Var sx = ad::sum(ad::mul(s2, wx));
  const ad::Var sy = ad::sum(ad::mul(s2, wy));
  const ad::Var total = ad::add(ad::add(mu, sx), sy);
  if (parts) {
    parts->mu = mu.value()(0, 0);
    parts->sigma_x = sx.value()(0, 0);
    parts->sigma_y = sy.value()(0, 0);
    parts->total = total.value()(0, 0);
    parts->terms = in.terms;
  }
  return total;
}

std::vector<Eigen::MatrixXd> backward(ad::Tape& tape, const ad::Var& loss, const RecordedForward& fwd) {
  tape.backward(loss);
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(fwd.params.size());
  for (const auto& p : fwd.params) {
    const auto& g = p.grad();
    grads.push_back(g.size() == 0 ? Eigen::MatrixXd::Zero(p.rows(), p.cols()) : g);
  }
  return grads;
}

LossAndGradients loss_and_gradients(const Sample& s, const ModelParameters& params) {
  if (s.futures.size() != s.histories.size()) throw Error(Errc::ShapeMismatch, "sample histories and futures differ in count");
  ad::Tape tape;
  const RecordedForward fwd = forward_graph(tape, s.histories, params);
  LossAndGradients out;
  const ad::Var l = loss_graph(tape, fwd, s, &out.loss);
  out.gradients = backward(tape, l, fwd);
  return out;
}

TrainResult train(std::span<const Sample> data, const EncoderConfig& cfg, const TrainOptions& opt) {
  return train(data, init_parameters(cfg, opt.seed), opt);
}

TrainResult train(std::span<const Sample> data, ModelParameters init, const TrainOptions& opt) {
  if (data.empty()) throw Error(Errc::InvalidArgument, "training set is empty");
  if (opt.steps < 0 || opt.batch_size < 1 || !(opt.lr > 0.0))
    throw Error(Errc::InvalidArgument, "steps, batch size and learning rate must be positive");
  TrainResult r;
  r.params = std::move(init);
  auto& params = r.params.tensors;
  std::mt19937_64 rng(opt.seed ^ 0x5eedf00dULL);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const bool full_batch = static_cast<std::size_t>(opt.batch_size) >= data.size();

  std::vector<Eigen::MatrixXd> m1, m2;
  if (opt.optimizer == OptimizerKind::Adam)
    for (const auto& p : params) {
      m1.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
      m2.push_back(Eigen::MatrixXd::Zero(p.rows(), p.cols()));
    }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  for (int step = 0; step < opt.steps; ++step) {
    std::vector<Eigen::MatrixXd> grad;
    double batch_loss = 0.0;
    const std::size_t count = full_batch ? data.size() : static_cast<std::size_t>(opt.batch_size);
    for (std::size_t b = 0; b < count; ++b) {
      const Sample& s = data[full_batch ? b : pick(rng)];
      auto lg = loss_and_gradients(s, r.params);
      batch_loss += lg.loss.total;
      if (grad.empty())
        grad = std::move(lg.gradients);
      else
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += lg.gradients[i];
    }
    batch_loss /= static_cast<double>(count);
    if (!std::isfinite(batch_loss))
      throw Error(Errc::Diverged, "training loss became non-finite at step " + std::to_string(step));
    r.loss_curve.push_back(batch_loss);

    double norm2 = 0.0;
    for (auto& g : grad) {
      g /= static_cast<double>(count);
      norm2 += g.squaredNorm();
    }
    if (opt.grad_clip > 0.0 && std::sqrt(norm2) > opt.grad_clip)
      for (auto& g : grad) g *= opt.grad_clip / std::sqrt(norm2);

    const double progress = opt.steps > 1 ? static_cast<double>(step) / (opt.steps - 1) : 0.0;
    const double lr =
        opt.lr * (opt.final_lr_fraction + (1.0 - opt.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
    if (opt.optimizer == OptimizerKind::GradientDescent) {
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
    } else {
      const double c1 = 1.0 - std::pow(beta1, step + 1);
      const double c2 = 1.0 - std::pow(beta2, step + 1);
      for (std::size_t i = 0; i < params.size(); ++i) {
        m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
        m2[i] = beta2 * m2[i] + (1.0 - beta2) * grad[i].cwiseAbs2();
        params[i].array() -= lr * (m1[i].array() / c1) / ((m2[i].array() / c2).sqrt() + adam_eps);
      }
    }
  }
  return r;
}

FdeResult fde(std::span<const PlanePoint> pred, std::span<const PlanePoint> gt, int K,
              const Eigen::Vector2d& gt_velocity) {
  if (K < 1 || static_cast<std::size_t>(K) > pred.size() || static_cast<std::size_t>(K) > gt.size())
    throw Error(Errc::InvalidArgument, "K exceeds the predicted or ground-truth horizon");
  const Eigen::Vector2d d = pred[static_cast<std::size_t>(K - 1)].vec() - gt[static_cast<std::size_t>(K - 1)].vec();
  FdeResult r;
  const double speed = gt_velocity.norm();
  if (!(speed >= kMinHeadingSpeed)) {
    r.lateral = d.x();
    r.longitudinal = d.y();
    r.degenerate_heading = true;
    return r;
  }
  const Eigen::Vector2d h = gt_velocity / speed;
  r.longitudinal = h.dot(d);
  r.lateral = h.x() * d.y() - h.y() * d.x();
  return r;
}

FdeResult fde(std::span<const PlanePoint> pred, std::span<const PlanePoint> gt, int K, double frame_interval_s) {
  if (K < 2 || static_cast<std::size_t>(K) > gt.size())
    throw Error(Errc::InvalidArgument, "heading needs two ground-truth frames");
  const Eigen::Vector2d v =
      (gt[static_cast<std::size_t>(K - 1)].vec() - gt[static_cast<std::size_t>(K - 2)].vec()) / frame_interval_s;
  return fde(pred, gt, K, v);
}

std::vector<Sample> constant_velocity_dataset(const CvDatasetOptions& opt, const EncoderConfig& cfg) {
  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> objects(1, std::max(opt.max_objects, 1));
  const double dt = cfg.frame_interval_s;
  std::vector<Sample> out;
  std::uint64_t next_id = 1;
  for (int s = 0; s < opt.samples; ++s) {
    Sample sample;
    const int n = objects(rng);
    for (int i = 0; i < n; ++i) {
      const double r = opt.spawn_radius_m * std::sqrt(unit(rng));
      const double a = 2.0 * std::numbers::pi * unit(rng);
      const double heading = 2.0 * std::numbers::pi * unit(rng);
      const double speed = opt.speed_min_mps + (opt.speed_max_mps - opt.speed_min_mps) * unit(rng);
      const Eigen::Vector2d p0(r * std::cos(a), r * std::sin(a));
      const Eigen::Vector2d step = speed * dt * Eigen::Vector2d(std::cos(heading), std::sin(heading));
      TrajectoryHistory h;
      h.id = next_id++;
      for (int f = 0; f < kHistoryFrames; ++f) {
        const Eigen::Vector2d p = p0 + (f - (kHistoryFrames - 1)) * step;
        h.positions[static_cast<std::size_t>(f)] = {p.x() + opt.history_noise_m * noise(rng),
                                                    p.y() + opt.history_noise_m * noise(rng)};
      }
      FutureTrack fut;
      for (int k = 1; k <= cfg.future_frames; ++k) fut.push_back(PlanePoint::from(p0 + k * step));
      sample.histories.push_back(h);
      sample.futures.push_back(std::move(fut));
    }
    out.push_back(std::move(sample));
  }
  return out;
}

FutureTrack constant_position_baseline(const TrajectoryHistory& h, int K) {
  return FutureTrack(static_cast<std::size_t>(K), h.positions.back());
}

FutureTrack constant_velocity_baseline(const TrajectoryHistory& h, int K) {
  const Eigen::Vector2d last = h.positions[kHistoryFrames - 1].vec();
  const Eigen::Vector2d step = last - h.positions[kHistoryFrames - 2].vec();
  FutureTrack out;
  for (int k = 1; k <= K; ++k) out.push_back(PlanePoint::from(last + k * step));
  return out;
}

std::string serialize_model(const ModelParameters& p) {
  const EncoderConfig& c = p.config;
  detail::ByteWriter w;
  w.put_bytes(std::string_view(kModelMagic, 4));
  w.put<std::uint32_t>(kModelVersion);
  for (int v : {c.model_dim, c.layers, c.heads, c.positional_length, c.future_frames, c.mlp_ratio})
    w.put<std::int32_t>(v);
  w.put_f64(c.frame_interval_s);
  w.put_f64(c.norm_radius_m);
  w.put<std::uint64_t>(p.seed);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& t : p.tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rows()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      for (Eigen::Index j = 0; j < t.cols(); ++j) w.put_f64(t(i, j));
  }
  return w.take();
}

ModelParameters deserialize_model(std::string_view bytes) {
  detail::ByteReader r(bytes, Errc::ParseError);
  if (r.get_bytes(4) != std::string_view(kModelMagic, 4)) throw Error(Errc::BadMagic, "not a model file");
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion) throw Error(Errc::UnsupportedVersion, "model version " + std::to_string(version));
  ModelParameters p;
  EncoderConfig& c = p.config;
  c.model_dim = r.get<std::int32_t>();
  c.layers = r.get<std::int32_t>();
  c.heads = r.get<std::int32_t>();
  c.positional_length = r.get<std::int32_t>();
  c.future_frames = r.get<std::int32_t>();
  c.mlp_ratio = r.get<std::int32_t>();
  c.frame_interval_s = r.get_f64();
  c.norm_radius_m = r.get_f64();
  p.seed = r.get<std::uint64_t>();
  const auto layout = parameter_layout(c);
  const auto count = r.get<std::uint32_t>();
  if (count != layout.size()) throw Error(Errc::ShapeMismatch, "parameter count does not match config");
  for (const auto& [name, shape] : layout) {
    const auto rows = r.get<std::uint32_t>();
    const auto cols = r.get<std::uint32_t>();
    if (rows != shape.first || cols != shape.second)
      throw Error(Errc::ShapeMismatch, "parameter " + name + " has the wrong shape");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.get_f64();
    p.names.push_back(name);
    p.tensors.push_back(std::move(m));
  }
  if (r.remaining() != 0) throw Error(Errc::ParseError, "trailing bytes after parameters");
  return p;
}

void save_model(const ModelParameters& p, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot write " + path.string());
  const std::string bytes = serialize_model(p);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(Errc::IoError, "write failed for " + path.string());
}

ModelParameters load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

namespace {

[[noreturn]] void dataset_error(int line_no, const std::string& what) {
  throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + what);
}

std::vector<PlanePoint> read_points(const nlohmann::json& j, const char* key, std::size_t n, int line_no) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) dataset_error(line_no, std::string("field '") + key + "' missing or not an array");
  if (it->size() != n)
    dataset_error(line_no, std::string("field '") + key + "' needs " + std::to_string(n) + " points");
  std::vector<PlanePoint> out;
  for (const auto& p : *it) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      dataset_error(line_no, std::string("field '") + key + "' holds a malformed point");
    out.push_back({p[0].get<double>(), p[1].get<double>()});
  }
  return out;
}

}  // namespace

std::vector<Sample> read_dataset(const std::filesystem::path& path, int K) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::IoError, "cannot read " + path.string());
  std::vector<Sample> out;
  std::string line;
  int line_no = 0;
  std::optional<std::int64_t> scene;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      dataset_error(line_no, "malformed JSON");
    }
    if (!j.is_object()) dataset_error(line_no, "expected an object");
    TrajectoryHistory h;
    const auto hist = read_points(j, "history", kHistoryFrames, line_no);
    std::copy(hist.begin(), hist.end(), h.positions.begin());
    if (const auto v = j.find("valid"); v != j.end()) {
      if (!v->is_array() || v->size() != kHistoryFrames) dataset_error(line_no, "field 'valid' needs 6 flags");
      for (std::size_t i = 0; i < kHistoryFrames; ++i) h.valid[i] = (*v)[i].get<bool>();
    }
    if (const auto id = j.find("id"); id != j.end() && id->is_number_unsigned()) h.id = id->get<std::uint64_t>();
    const auto fut = read_points(j, "future", static_cast<std::size_t>(K), line_no);
    std::optional<std::int64_t> this_scene;
    if (const auto s = j.find("scene"); s != j.end()) {
      if (!s->is_number_integer()) dataset_error(line_no, "field 'scene' is not an integer");
      this_scene = s->get<std::int64_t>();
    }
    if (out.empty() || !this_scene || this_scene != scene) out.emplace_back();
    scene = this_scene;
    out.back().histories.push_back(h);
    out.back().futures.push_back(fut);
  }
  return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const Sample> data, bool with_scene_ids) {
  std::ofstream f(path);
  if (!f) throw Error(Errc::IoError, "cannot write " + path.string());
  auto points = [](auto&& pts) {
    nlohmann::json a = nlohmann::json::array();
    for (const PlanePoint& p : pts) a.push_back({p.east, p.north});
    return a;
  };
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (std::size_t i = 0; i < data[s].histories.size(); ++i) {
      const auto& h = data[s].histories[i];
      nlohmann::ordered_json j;
      if (with_scene_ids) j["scene"] = s;
      j["id"] = h.id;
      j["history"] = points(h.positions);
      if (!h.complete()) j["valid"] = h.valid;
      j["future"] = points(data[s].futures[i]);
      f << j.dump() << '\n';
    }
  }
  if (!f) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace msight
