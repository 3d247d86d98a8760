#include "msight/calibration.hpp"
#include "msight/error.hpp"
#include "msight/synth_camera.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace msight;

namespace {

std::vector<Correspondence> to_plane(const std::vector<LandmarkPair>& l, const LocalFrame& f) {
  std::vector<Correspondence> out;
  for (const auto& p : l) out.push_back({p.pixel, f.to_plane(p.world)});
  return out;
}

}  // namespace

TEST(Calibration, IdentityMapsOriginPixelToSceneOrigin) {
  FisheyeIntrinsics k;
  k.focal = 1.0;
  k.principal_point = {0.0, 0.0};
  const WorldPoint origin{42.0, -83.0};
  const auto c = CameraCalibration::restore(CameraId::NE, k, Homography(), origin, 0.0);
  const auto w = pixel_to_world({0.0, 0.0}, c);
  EXPECT_NEAR(w.lat, origin.lat, 1e-12);
  EXPECT_NEAR(w.lon, origin.lon, 1e-12);
}

TEST(Calibration, ExactCameraHasZeroError) {
  const auto cam = SyntheticCamera::standard(CameraId::SW);
  const auto c = exact_calibration(cam, kDefaultSceneOrigin);
  EXPECT_LT(c.mean_error_m(), 1e-6);
  const LocalFrame f(kDefaultSceneOrigin);
  for (const auto& l : synth_landmarks(cam, f, 20, 0.0, 5)) {
    const auto w = pixel_to_world(l.pixel, c);
    EXPECT_LT((f.to_plane(w).vec() - f.to_plane(l.world).vec()).norm(), 1e-6);
    const auto px = c.plane_to_pixel(f.to_plane(l.world));
    EXPECT_NEAR(px.u, l.pixel.u, 1e-6);
    EXPECT_NEAR(px.v, l.pixel.v, 1e-6);
  }
}

TEST(Calibration, MeanOfResiduals) {
  const auto c = exact_calibration(SyntheticCamera::standard(CameraId::NE), kDefaultSceneOrigin);
  const LocalFrame& f = c.frame();
  const PixelPoint a{400.0, 600.0};
  const PixelPoint b{700.0, 450.0};
  const Eigen::Vector2d pa = c.pixel_to_plane(a).vec();
  const Eigen::Vector2d pb = c.pixel_to_plane(b).vec();
  std::vector<LandmarkPair> pairs{{a, f.to_world(PlanePoint::from(pa + Eigen::Vector2d(0.3, 0.0)))},
                                  {b, f.to_world(PlanePoint::from(pb + Eigen::Vector2d(0.0, -0.5)))}};
  EXPECT_NEAR(calibration_error(pairs, c), 0.4, 1e-9);
  try {
    calibration_error({}, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptySet);
  }
}

TEST(Calibration, MidpointLinearityOnPlane) {
  const auto cam = SyntheticCamera::standard(CameraId::NE);
  const auto c = exact_calibration(cam, kDefaultSceneOrigin);
  const PixelPoint a{300.0, 400.0};
  const PixelPoint b{600.0, 700.0};
  const auto ua = undistort_point(a, c.intrinsics());
  const auto ub = undistort_point(b, c.intrinsics());
  const Eigen::Vector2d mid = 0.5 * (ua.vec() + ub.vec());
  const Eigen::Vector3d direct = c.homography().matrix() * mid.homogeneous();
  const auto via = c.homography().apply(mid);
  EXPECT_LT((via - direct.hnormalized()).norm(), 1e-12);
}

TEST(Calibration, GateRejectsBadCalibration) {
  const auto cam = SyntheticCamera::standard(CameraId::NE);
  const LocalFrame f(kDefaultSceneOrigin);
  auto landmarks = synth_landmarks(cam, f, 20, 0.0, 3);
  Eigen::Matrix3d shift = Eigen::Matrix3d::Identity();
  shift(0, 2) = 3.0;
  const Homography off(shift * cam.ground_homography().matrix());
  try {
    CameraCalibration::create(cam.id(), cam.intrinsics(), off, kDefaultSceneOrigin, landmarks);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::CalibrationGateExceeded);
  }
}

TEST(Calibration, PlaneToPixelRejectsPointsBehindCamera) {
  const auto cam = SyntheticCamera::standard(CameraId::NE);
  const auto c = exact_calibration(cam, kDefaultSceneOrigin);
  EXPECT_THROW(c.plane_to_pixel({200.0, 200.0}), Error);
}

TEST(Intrinsics, FixedPointAtTruth) {
  const auto cam = SyntheticCamera::standard(CameraId::NE);
  const LocalFrame f(kDefaultSceneOrigin);
  const auto pairs = to_plane(synth_landmarks(cam, f, 20, 0.0, 9), f);
  const auto fit = estimate_intrinsics(pairs, cam.intrinsics());
  EXPECT_LT(fit.final_rms_m, 1e-6);
  EXPECT_NEAR(fit.intrinsics.focal, cam.intrinsics().focal, 1e-6);
  EXPECT_NEAR(fit.intrinsics.k2, cam.intrinsics().k2, 1e-8);
}

TEST(Intrinsics, RecoversFromPerturbedInit) {
  const auto cam = SyntheticCamera::standard(CameraId::NW);
  const LocalFrame f(kDefaultSceneOrigin);
  const auto pairs = to_plane(synth_landmarks(cam, f, 24, 0.0, 21), f);
  FisheyeIntrinsics init = cam.intrinsics();
  init.focal *= 1.1;
  init.principal_point.u *= 0.97;
  init.principal_point.v *= 1.03;
  init.k2 *= 1.1;
  init.k3 *= 0.9;
  const auto fit = estimate_intrinsics(pairs, init);
  const auto& t = cam.intrinsics();
  EXPECT_TRUE(fit.converged) << fit.diagnostic;
  EXPECT_LE(fit.final_rms_m, fit.initial_rms_m);
  EXPECT_LT(std::abs(fit.intrinsics.focal / t.focal - 1.0), 1e-4);
  EXPECT_LT(std::abs(fit.intrinsics.principal_point.u / t.principal_point.u - 1.0), 1e-4);
  EXPECT_LT(std::abs(fit.intrinsics.principal_point.v / t.principal_point.v - 1.0), 1e-4);
  EXPECT_LT(std::abs(fit.intrinsics.k2 / t.k2 - 1.0), 1e-4);
  EXPECT_LT(std::abs(fit.intrinsics.k3 / t.k3 - 1.0), 1e-4);
}

TEST(Intrinsics, DescentFromNominalInit) {
  const auto cam = SyntheticCamera::standard(CameraId::SE);
  const LocalFrame f(kDefaultSceneOrigin);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto pairs = to_plane(synth_landmarks(cam, f, 20, 0.5, seed), f);
    const auto fit = estimate_intrinsics(pairs, nominal_intrinsics());
    EXPECT_LE(fit.final_rms_m, fit.initial_rms_m);
  }
}

TEST(Intrinsics, Preconditions) {
  const auto cam = SyntheticCamera::standard(CameraId::NE);
  const LocalFrame f(kDefaultSceneOrigin);
  auto pairs = to_plane(synth_landmarks(cam, f, 20, 0.0, 2), f);
  pairs.resize(8);
  try {
    estimate_intrinsics(pairs, nominal_intrinsics());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InsufficientData);
  }
  // Landmarks crowded near the centre of the image.
  std::vector<Correspondence> central;
  const auto h = cam.ground_homography();
  for (int i = 0; i < 12; ++i) {
    const PixelPoint px{480.0 + 7.0 * i, 500.0 + 5.0 * (i % 4)};
    central.push_back({px, PlanePoint::from(h.apply(undistort_point(px, cam.intrinsics()).vec()))});
  }
  EXPECT_THROW(estimate_intrinsics(central, nominal_intrinsics()), Error);
}

TEST(Calibrate, NoisyLandmarksStayUnderGate) {
  const LocalFrame f(kDefaultSceneOrigin);
  for (auto id : kAllCameras) {
    const auto cam = SyntheticCamera::standard(id);
    const auto landmarks = synth_landmarks(cam, f, 20, 0.5, 40 + static_cast<int>(id));
    const auto res = calibrate(id, landmarks, nominal_intrinsics(), kDefaultSceneOrigin);
    EXPECT_LT(res.calibration.mean_error_m(), 1.0);
    // Including the landmarks RANSAC set aside.
    EXPECT_LT(calibration_error(landmarks, res.calibration), 1.0);
  }
}

TEST(CalibrationIo, LandmarkCsvRoundTrip) {
  const LocalFrame f(kDefaultSceneOrigin);
  std::map<CameraId, std::vector<LandmarkPair>> sets;
  sets[CameraId::NE] = synth_landmarks(SyntheticCamera::standard(CameraId::NE), f, 5, 0.0, 1);
  sets[CameraId::SW] = synth_landmarks(SyntheticCamera::standard(CameraId::SW), f, 4, 0.0, 1);
  std::stringstream ss;
  write_landmarks_csv(ss, sets);
  const auto back = read_landmarks_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  ASSERT_EQ(back.at(CameraId::NE).size(), 5u);
  EXPECT_NEAR(back.at(CameraId::SW)[2].world.lat, sets[CameraId::SW][2].world.lat, 1e-10);
  std::stringstream bad("camera_id,u_px,v_px,lat_deg,lon_deg\nNE,1,2,x,4\n");
  try {
    read_landmarks_csv(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(CalibrationIo, JsonRoundTrip) {
  const auto c = exact_calibration(SyntheticCamera::standard(CameraId::SE), kDefaultSceneOrigin);
  const auto back = calibration_from_json(calibration_to_json(c));
  EXPECT_EQ(back.camera_id(), CameraId::SE);
  EXPECT_DOUBLE_EQ(back.intrinsics().k3, c.intrinsics().k3);
  EXPECT_DOUBLE_EQ(back.homography().matrix()(1, 2), c.homography().matrix()(1, 2));
  EXPECT_DOUBLE_EQ(back.mean_error_m(), c.mean_error_m());
  EXPECT_THROW(calibration_from_json("{\"version\":2}"), Error);
}
