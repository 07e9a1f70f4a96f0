#pragma once

// Road projection plane, BEV tile grid and camera frame transforms.
//
// Plane frame: origin on the road projection plane directly below the camera,
// x to the right, y forward, z up. The camera frame uses the same axis
// semantics, translated to the camera center and pitched by phi_cam.

#include <Eigen/Core>
#include <cstddef>

namespace lane3d {

struct PlanePoint {
  double x = 0.0;
  double y = 0.0;
};

struct PlanePoint3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  PlanePoint xy() const { return {x, y}; }
};

struct CameraFramePoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct ImagePoint {
  double u = 0.0;
  double v = 0.0;
};

struct CameraRig {
  double phi_cam = 0.05;  // pitch, radians, positive tilts the camera down
  double h_cam = 1.5;     // meters above the road plane
  double fx = 1000.0;
  double fy = 1000.0;
  double cx = 640.0;
  double cy = 360.0;
  int width = 1280;
  int height = 720;

  // Throws ConfigError when an invariant does not hold.
  void validate() const;
};

struct GridSpec {
  int n_cols = 16;
  int n_rows = 26;
  double tile_width = 1.28;
  double tile_length = 3.0;
  double y_min = 0.0;

  void validate() const;

  double lateral_extent() const { return n_cols * tile_width; }
  double longitudinal_extent() const { return n_rows * tile_length; }
  double x_min() const { return -0.5 * lateral_extent(); }
  double x_max() const { return 0.5 * lateral_extent(); }
  double y_max() const { return y_min + longitudinal_extent(); }
  std::size_t tile_count() const {
    return static_cast<std::size_t>(n_cols) * static_cast<std::size_t>(n_rows);
  }
};

// Axis-aligned rectangle on the projection plane.
struct PlaneRect {
  double x_lo = 0.0;
  double x_hi = 0.0;
  double y_lo = 0.0;
  double y_hi = 0.0;

  bool contains(const PlanePoint& p) const {
    return p.x >= x_lo && p.x <= x_hi && p.y >= y_lo && p.y <= y_hi;
  }
};

struct TileIndex {
  int row = 0;
  int col = 0;

  friend bool operator==(const TileIndex&, const TileIndex&) = default;
};

PlanePoint tile_center(int row, int col, const GridSpec& grid);
PlaneRect tile_rect(int row, int col, const GridSpec& grid);
PlaneRect grid_rect(const GridSpec& grid);

// Tile containing p, clamped to the grid when p lies on the outer border.
// Throws std::out_of_range for points outside the grid extent.
TileIndex locate_tile(const PlanePoint& p, const GridSpec& grid);

// Maps road-plane points (x, y, 1) to image pixels (u, v, 1) and back.
class PlaneHomography {
 public:
  explicit PlaneHomography(const CameraRig& rig);

  const Eigen::Matrix3d& plane_to_image_matrix() const { return forward_; }
  const Eigen::Matrix3d& image_to_plane_matrix() const { return inverse_; }

  // Both throw HorizonError when the point is at or beyond the horizon.
  ImagePoint plane_to_image(const PlanePoint& p) const;
  PlanePoint image_to_plane(const ImagePoint& q) const;

 private:
  Eigen::Matrix3d forward_;
  Eigen::Matrix3d inverse_;
};

PlaneHomography plane_homography(const CameraRig& rig);

CameraFramePoint plane_to_camera(const PlanePoint3& p, const CameraRig& rig);
PlanePoint3 camera_to_plane(const CameraFramePoint& q, const CameraRig& rig);

}  // namespace lane3d
