#pragma once

#include "msight/geo.hpp"
#include "msight/tensor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace msight {

inline constexpr int kHistoryFrames = 6;

/// Six positions x^(t-5) ... x^(t), oldest first, 0.4 s apart.
struct TrajectoryHistory {
  std::uint64_t id = 0;
  std::array<PlanePoint, kHistoryFrames> positions{};
  std::array<bool, kHistoryFrames> valid{true, true, true, true, true, true};

  bool complete() const;
};

struct EncoderConfig {
  int model_dim = 256;
  int layers = 4;
  int heads = 8;
  int positional_length = 4;  // L
  int future_frames = 3;      // K
  int mlp_ratio = 4;
  double frame_interval_s = 0.4;
  /// Coordinates are divided by this before the positional map.
  double norm_radius_m = 50.0;

  /// Throws InvalidArgument.
  void validate() const;
  int features_per_scalar() const { return 2 * positional_length + 1; }
  int token_features() const { return kHistoryFrames * 2 * features_per_scalar(); }
  double horizon_s() const { return future_frames * frame_interval_s; }
};

/// Per object rows; columns (e_1, n_1, e_2, n_2, ...) for k = 1..K.
struct PredictionOutput {
  Eigen::MatrixXd mean;      // meters
  Eigen::MatrixXd variance;  // m^2, > 0

  Eigen::Index objects() const { return mean.rows(); }
  PlanePoint mean_at(Eigen::Index object, int k) const;
  std::vector<PlanePoint> track(Eigen::Index object) const;
};

/// Parameters in declared order. Matrices multiply token rows from the right.
struct ModelParameters {
  EncoderConfig config;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::vector<Eigen::MatrixXd> tensors;

  std::size_t count() const { return tensors.size(); }
  std::size_t scalar_count() const;
  const Eigen::MatrixXd& get(const std::string& name) const;
  Eigen::MatrixXd& get(const std::string& name);
};

/// Expected names and shapes for a config, in declared order.
std::vector<std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>>> parameter_layout(const EncoderConfig& cfg);

ModelParameters init_parameters(const EncoderConfig& cfg, std::uint64_t seed);

/// (c, sin 2^0 pi c, cos 2^0 pi c, ..., sin 2^(L-1) pi c, cos 2^(L-1) pi c).
std::vector<double> positional_map(double c, int L);

/// Flattened token features; invalid frames are zero-filled.
Eigen::RowVectorXd encode_history(const TrajectoryHistory& h, const EncoderConfig& cfg);

/// Tokens of incomplete histories are hidden from the other objects.
PredictionOutput forward(std::span<const TrajectoryHistory> histories, const ModelParameters& params);

using FutureTrack = std::vector<PlanePoint>;

struct LossBreakdown {
  double total = 0.0;
  double mu = 0.0;
  double sigma_x = 0.0;
  double sigma_y = 0.0;
  std::size_t terms = 0;  // objects x frames averaged over
};

/// Uncertainty regression loss averaged over included objects and frames.
/// include: optional per-object flags; defaults to all objects.
LossBreakdown loss(const PredictionOutput& pred, std::span<const FutureTrack> gt,
                   const std::vector<bool>* include = nullptr);

/// A scene: every object's history and, for training, its future.
struct Sample {
  std::vector<TrajectoryHistory> histories;
  std::vector<FutureTrack> futures;
};

/// Parameters on a tape plus the recorded outputs.
struct RecordedForward {
  std::vector<ad::Var> params;
  ad::Var mean;
  ad::Var variance;
};

RecordedForward forward_graph(ad::Tape& tape, std::span<const TrajectoryHistory> histories,
                              const ModelParameters& params);

/// Loss node for a recorded forward; objects with incomplete history are excluded.
ad::Var loss_graph(ad::Tape& tape, const RecordedForward& fwd, const Sample& s, LossBreakdown* parts = nullptr);

/// Reverse sweep from a scalar loss. Throws GraphNotRecorded.
std::vector<Eigen::MatrixXd> backward(ad::Tape& tape, const ad::Var& loss, const RecordedForward& fwd);

struct LossAndGradients {
  LossBreakdown loss;
  std::vector<Eigen::MatrixXd> gradients;
};

LossAndGradients loss_and_gradients(const Sample& s, const ModelParameters& params);

enum class OptimizerKind { GradientDescent, Adam };

struct TrainOptions {
  OptimizerKind optimizer = OptimizerKind::GradientDescent;
  double lr = 1e-3;
  int steps = 500;
  int batch_size = 8;
  std::uint64_t seed = 1;
  /// Cosine decay from lr to lr * final_lr_fraction over the run.
  double final_lr_fraction = 1.0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
};

struct TrainResult {
  ModelParameters params;
  std::vector<double> loss_curve;  // mean batch loss per step
};

/// Deterministic per seed. Throws Diverged on a non-finite loss.
TrainResult train(std::span<const Sample> data, const EncoderConfig& cfg, const TrainOptions& opt);
/// Continues from given parameters.
TrainResult train(std::span<const Sample> data, ModelParameters init, const TrainOptions& opt);

struct FdeResult {
  double lateral = 0.0;       // cross-track, left of heading positive
  double longitudinal = 0.0;  // along-track, ahead positive
  /// Speed below 0.1 m/s: lateral/longitudinal hold raw east/north errors.
  bool degenerate_heading = false;
};

inline constexpr double kMinHeadingSpeed = 0.1;

/// Displacement pred_K - gt_K split against the ground-truth heading given by
/// gt_velocity (m/s).
FdeResult fde(std::span<const PlanePoint> pred, std::span<const PlanePoint> gt, int K,
              const Eigen::Vector2d& gt_velocity);
/// Heading from the last two ground-truth frames.
FdeResult fde(std::span<const PlanePoint> pred, std::span<const PlanePoint> gt, int K, double frame_interval_s = 0.4);

struct CvDatasetOptions {
  int samples = 400;
  int max_objects = 3;
  double speed_min_mps = 3.0;
  double speed_max_mps = 8.0;
  double spawn_radius_m = 35.0;
  double history_noise_m = 0.05;
  std::uint64_t seed = 1;
};

/// Scenes of objects moving at constant velocity; noise on histories only.
std::vector<Sample> constant_velocity_dataset(const CvDatasetOptions& opt, const EncoderConfig& cfg);

/// Repeats the last position.
FutureTrack constant_position_baseline(const TrajectoryHistory& h, int K);
/// Extrapolates the last frame-to-frame displacement.
FutureTrack constant_velocity_baseline(const TrajectoryHistory& h, int K);

void save_model(const ModelParameters& p, const std::filesystem::path& path);
ModelParameters load_model(const std::filesystem::path& path);
std::string serialize_model(const ModelParameters& p);
ModelParameters deserialize_model(std::string_view bytes);

/// NDJSON lines {history:[[e,n]x6], future:[[e,n]xK]}; an optional integer
/// "scene" groups consecutive lines into one sample.
std::vector<Sample> read_dataset(const std::filesystem::path& path, int K);
void write_dataset(const std::filesystem::path& path, std::span<const Sample> data, bool with_scene_ids = true);

}  // namespace msight
