#pragma once

#include <vector>

#include "fluxpoint/cloud.hpp"
#include "fluxpoint/core.hpp"

namespace fluxpoint {

// Face of a control cell. `neighbor` is the id of the point whose bisector
// produced the face, or kBoundaryFace for the boundary truncation plane.
constexpr int kBoundaryFace = -1;

struct CellFace {
  int neighbor = kBoundaryFace;
  double area = 0;             // length in 2D, area in 3D
  Vec normal = Vec::Zero();    // unit, pointing away from the owner
  Vec center = Vec::Zero();    // segment/polygon centroid
  std::vector<Vec> vertices;   // segment endpoints / ordered polygon
};

struct ControlCell {
  int owner = -1;
  std::vector<CellFace> faces;
  double volume = 0;
  bool defect = false;  // a seed-polytope face survived clipping

  const CellFace* boundary_face() const {
    for (const CellFace& f : faces)
      if (f.neighbor == kBoundaryFace) return &f;
    return nullptr;
  }
  const CellFace* face_to(int neighbor_id) const {
    for (const CellFace& f : faces)
      if (f.neighbor == neighbor_id) return &f;
    return nullptr;
  }
};

// Locally clipped Voronoi cell of point i: the seed box of half-width
// beta*h_i intersected with all neighbor bisector half-spaces, and with the
// boundary half-space {(x - x_i) . n_i <= 0} for boundary points.
ControlCell build_control_cell(const PointCloud& cloud, const Neighborhood& nbhd,
                               int i);

std::vector<ControlCell> build_all_cells(
    const PointCloud& cloud, const std::vector<Neighborhood>& nbhds,
    ExecPolicy policy = ExecPolicy::Parallel);

// Geometric closure residuals. r0 = sum n A; r1 uses face centroids,
// r1_mid the midpoint convention (x_i + x_l)/2 (owner position on the
// boundary face); both subtract V * I.
struct GeomResiduals {
  Vec r0 = Vec::Zero();
  Mat3 r1 = Mat3::Zero();
  Mat3 r1_mid = Mat3::Zero();
};

GeomResiduals cell_geometric_residuals(const ControlCell& cell,
                                       const PointCloud& cloud);

// Volume recomputed from the first-order identity, (1/dim) tr(sum n x' A)
// with centroid face centers; test cross-check for the fan volume.
double volume_from_face_moments(const ControlCell& cell, int dim);

// Mismatch of paired face area-normals across all cells, normalized by
// twice the total volume. Zero for a globally consistent tessellation.
double stitching_error(const std::vector<ControlCell>& cells);

}  // namespace fluxpoint
