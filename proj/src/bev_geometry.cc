#include "lane3d/bev_geometry.h"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "lane3d/error.h"

namespace lane3d {

void CameraRig::validate() const {
  if (!(h_cam > 0.0) || !std::isfinite(h_cam)) {
    throw ConfigError("camera rig: h_cam must be positive");
  }
  if (!(std::abs(phi_cam) < 0.5 * std::numbers::pi)) {
    throw ConfigError("camera rig: phi_cam must lie in (-pi/2, pi/2)");
  }
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera rig: focal lengths must be positive");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy)) {
    throw ConfigError("camera rig: principal point must be finite");
  }
  if (width <= 0 || height <= 0) {
    throw ConfigError("camera rig: image size must be positive");
  }
}

void GridSpec::validate() const {
  if (n_cols <= 0 || n_rows <= 0) {
    throw ConfigError("grid: tile counts must be positive");
  }
  if (!(tile_width > 0.0) || !(tile_length > 0.0)) {
    throw ConfigError("grid: tile dimensions must be positive");
  }
  if (!std::isfinite(y_min)) throw ConfigError("grid: y_min must be finite");
}

PlanePoint tile_center(int row, int col, const GridSpec& grid) {
  if (row < 0 || row >= grid.n_rows || col < 0 || col >= grid.n_cols) {
    throw std::out_of_range("tile index (" + std::to_string(row) + ", " +
                            std::to_string(col) + ") outside the grid");
  }
  return {grid.x_min() + (col + 0.5) * grid.tile_width,
          grid.y_min + (row + 0.5) * grid.tile_length};
}

PlaneRect tile_rect(int row, int col, const GridSpec& grid) {
  const PlanePoint c = tile_center(row, col, grid);
  const double hw = 0.5 * grid.tile_width;
  const double hl = 0.5 * grid.tile_length;
  return {c.x - hw, c.x + hw, c.y - hl, c.y + hl};
}

PlaneRect grid_rect(const GridSpec& grid) {
  return {grid.x_min(), grid.x_max(), grid.y_min, grid.y_max()};
}

TileIndex locate_tile(const PlanePoint& p, const GridSpec& grid) {
  if (!grid_rect(grid).contains(p)) {
    throw std::out_of_range("point outside the grid extent");
  }
  int col = static_cast<int>(std::floor((p.x - grid.x_min()) / grid.tile_width));
  int row = static_cast<int>(std::floor((p.y - grid.y_min) / grid.tile_length));
  col = std::min(col, grid.n_cols - 1);
  row = std::min(row, grid.n_rows - 1);
  return {row, col};
}

PlaneHomography::PlaneHomography(const CameraRig& rig) {
  rig.validate();
  const double c = std::cos(rig.phi_cam);
  const double s = std::sin(rig.phi_cam);
  const double h = rig.h_cam;
  // Camera coordinates of a plane point (x, y, 0):
  //   x' = x,  y' = c*y + h*s (depth),  z' = s*y - h*c.
  // Pinhole with v growing downward: u = cx + fx*x'/y', v = cy - fy*z'/y'.
  forward_ << rig.fx, rig.cx * c, rig.cx * h * s,
      0.0, rig.cy * c - rig.fy * s, rig.cy * h * s + rig.fy * h * c,
      0.0, c, h * s;
  inverse_ = forward_.inverse();
}

ImagePoint PlaneHomography::plane_to_image(const PlanePoint& p) const {
  if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
    throw std::invalid_argument("plane point must be finite");
  }
  const Eigen::Vector3d q = forward_ * Eigen::Vector3d(p.x, p.y, 1.0);
  if (!(q.z() > 1e-12 * q.norm())) {
    throw HorizonError("plane point lies at or behind the camera horizon");
  }
  return {q.x() / q.z(), q.y() / q.z()};
}

PlanePoint PlaneHomography::image_to_plane(const ImagePoint& q) const {
  if (!std::isfinite(q.u) || !std::isfinite(q.v)) {
    throw std::invalid_argument("image point must be finite");
  }
  const Eigen::Vector3d p = inverse_ * Eigen::Vector3d(q.u, q.v, 1.0);
  // The third component equals 1/depth; rays at or above the horizon have
  // non-positive depth.
  if (!(p.z() > 1e-12 * p.norm())) {
    throw HorizonError("image point lies at or above the horizon");
  }
  return {p.x() / p.z(), p.y() / p.z()};
}

PlaneHomography plane_homography(const CameraRig& rig) { return PlaneHomography(rig); }

CameraFramePoint plane_to_camera(const PlanePoint3& p, const CameraRig& rig) {
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
    throw std::invalid_argument("plane point must be finite");
  }
  const double c = std::cos(rig.phi_cam);
  const double s = std::sin(rig.phi_cam);
  const double dz = p.z - rig.h_cam;
  return {p.x, c * p.y - s * dz, s * p.y + c * dz};
}

PlanePoint3 camera_to_plane(const CameraFramePoint& q, const CameraRig& rig) {
  if (!std::isfinite(q.x) || !std::isfinite(q.y) || !std::isfinite(q.z)) {
    throw std::invalid_argument("camera point must be finite");
  }
  const double c = std::cos(rig.phi_cam);
  const double s = std::sin(rig.phi_cam);
  return {q.x, c * q.y + s * q.z, -s * q.y + c * q.z + rig.h_cam};
}

}  // namespace lane3d
