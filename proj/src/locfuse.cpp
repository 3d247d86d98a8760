#include "msight/locfuse.hpp"

#include "msight/error.hpp"

#include <algorithm>
#include <cmath>

namespace msight {

WorldDetection localize(const DetectionRecord& d, const CameraCalibration& c, const RoiMap& roi) {
  const LocalFrame frame = roi.frame();
  const bool same_frame = c.scene_origin() == roi.center;
  auto to_roi_plane = [&](const PixelPoint& px) {
    const PlanePoint p = same_frame ? c.pixel_to_plane(px) : frame.to_plane(pixel_to_world(px, c));
    if (p.vec().norm() > roi.radius_m) throw Error(Errc::OutOfFieldOfView, "box maps outside the ROI disc");
    return p;
  };
  WorldDetection w;
  w.source = d.camera;
  w.ts_ms = d.frame_ts_ms;
  w.cls = d.cls;
  w.confidence = d.confidence;
  w.plane = to_roi_plane(d.box.center);
  w.position = frame.to_world(w.plane);

  const double hw = 0.5 * d.box.width;
  const double hh = 0.5 * d.box.height;
  const PixelPoint corners[4] = {{d.box.center.u - hw, d.box.center.v - hh},
                                 {d.box.center.u + hw, d.box.center.v - hh},
                                 {d.box.center.u + hw, d.box.center.v + hh},
                                 {d.box.center.u - hw, d.box.center.v + hh}};
  Eigen::Vector2d pts[4];
  for (int i = 0; i < 4; ++i) pts[i] = to_roi_plane(corners[i]).vec();
  double area = 0.0;
  Eigen::Vector2d lo = pts[0];
  Eigen::Vector2d hi = pts[0];
  for (int i = 0; i < 4; ++i) {
    const auto& a = pts[i];
    const auto& b = pts[(i + 1) % 4];
    area += a.x() * b.y() - b.x() * a.y();
    lo = lo.cwiseMin(a);
    hi = hi.cwiseMax(a);
  }
  w.s = std::max(0.5 * std::abs(area), 1e-6);
  const Eigen::Vector2d ext = hi - lo;
  w.r = ext.y() > 0.0 ? std::max(ext.x() / ext.y(), 1e-6) : 1.0;
  return w;
}

CameraId roi_assign(const PlanePoint& p, const RoiMap& m) {
  if (!(p.vec().norm() <= m.radius_m)) throw Error(Errc::OutsideRoi, "point outside the ROI disc");
  const bool east = p.east >= 0.0;
  const bool north = p.north >= 0.0;
  if (east) return north ? CameraId::NE : CameraId::SE;
  return north ? CameraId::NW : CameraId::SW;
}

CameraId roi_assign(const WorldPoint& p, const RoiMap& m) { return roi_assign(m.frame().to_plane(p), m); }

FusionResult fuse(std::int64_t ts_ms, std::span<const DetectionFrame> frames,
                  const std::map<CameraId, CameraCalibration>& calibs, const RoiMap& m,
                  std::span<const CameraId> expected) {
  FusionResult out;
  std::vector<const DetectionFrame*> by_cam(4, nullptr);
  for (const auto& f : frames) {
    if (std::llabs(f.frame_ts_ms - ts_ms) > kFuseJitterMs)
      throw Error(Errc::InvalidArgument, "frame from camera " + std::string(to_string(f.camera)) +
                                             " outside the fusion jitter window");
    auto& slot = by_cam[static_cast<std::size_t>(f.camera)];
    if (slot) throw Error(Errc::InvalidArgument, "two frames for one camera at one timestamp");
    slot = &f;
  }
  for (CameraId id : kAllCameras) {
    const bool wanted = std::find(expected.begin(), expected.end(), id) != expected.end();
    const DetectionFrame* f = by_cam[static_cast<std::size_t>(id)];
    const auto calib = calibs.find(id);
    if (!f || calib == calibs.end()) {
      if (wanted) out.missing.push_back(id);
      continue;
    }
    for (const auto& d : f->detections) {
      WorldDetection w;
      try {
        w = localize(d, calib->second, m);
      } catch (const Error&) {
        ++out.rejected;
        continue;
      }
      if (roi_assign(w.plane, m) != id) continue;
      w.ts_ms = ts_ms;
      out.detections.push_back(w);
    }
  }
  return out;
}

}  // namespace msight
