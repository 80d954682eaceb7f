#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "fluxpoint/core.hpp"

namespace fluxpoint {

enum class PointKind { Interior, Wall, Inflow, Outflow, DirichletBoundary };

inline bool is_boundary(PointKind k) { return k != PointKind::Interior; }

struct Point {
  int id = -1;
  Vec x = Vec::Zero();       // position
  double h = 0;              // smoothing length
  PointKind kind = PointKind::Interior;
  Vec n = Vec::Zero();       // unit outward normal, boundary points only
  Vec v = Vec::Zero();       // velocity
  Vec v_prev = Vec::Zero();  // velocity at previous time level
  double phi = 0;            // transported scalar
  double p = 0;              // pressure
};

struct CloudParams {
  double r_min = 0.2;   // no two points closer than r_min*h
  double r_max = 0.45;  // every hole of radius r_max*h gets refilled
  double beta = 0.85;   // support radius factor, S_i = { ||x_j-x_i|| <= beta*h_i }
  double c_dt = 0.01;   // CFL coefficient
  double v_ref = 1.0;   // reference speed for the all-zero-velocity fallback

  void validate() const;
};

// Supported analytic domains. Signed distance is negative inside.
struct DomainSpec {
  enum class Shape { Rectangle, RectangleWithHole, Box, Sphere };

  Shape shape = Shape::Rectangle;
  int dim = 2;
  Vec lo = Vec::Zero(), hi = Vec::Zero();
  Vec hole_lo = Vec::Zero(), hole_hi = Vec::Zero();
  Vec center = Vec::Zero();
  double radius = 0;

  static DomainSpec rectangle(double x0, double y0, double x1, double y1);
  static DomainSpec rectangle_with_hole(double x0, double y0, double x1,
                                        double y1, double hx0, double hy0,
                                        double hx1, double hy1);
  static DomainSpec box(const Vec& lo, const Vec& hi);
  static DomainSpec sphere(const Vec& center, double radius);

  double measure() const;  // area in 2D, volume in 3D
  double signed_distance(const Vec& x) const;
  bool contains(const Vec& x) const { return signed_distance(x) <= 0.0; }
  void bounding_box(Vec& bb_lo, Vec& bb_hi) const;
};

struct Neighborhood {
  int owner = -1;
  std::vector<int> members;      // owner first, then sorted by distance
  std::vector<double> distances; // matching order
  int size() const { return static_cast<int>(members.size()); }
};

// Uniform-grid bucket index with cell size beta * h_max.
class SpatialIndex {
 public:
  void build(const std::vector<Point>& points, int dim, double cell_size);
  // Appends ids of points within `radius` (inclusive) of x to out.
  void query(const std::vector<Point>& points, const Vec& x, double radius,
             std::vector<int>& out) const;
  bool empty() const { return buckets_.empty(); }
  double cell_size() const { return cell_; }

 private:
  std::uint64_t key_of(const Vec& x) const;
  double cell_ = 0;
  int dim_ = 2;
  std::unordered_map<std::uint64_t, std::vector<int>> buckets_;
};

struct PointCloud {
  std::vector<Point> points;
  int dim = 2;
  CloudParams params;
  double h_ref = 0;          // generation smoothing length
  double lattice_pitch = 0;  // generation lattice pitch (hole refill grid)
  SpatialIndex index;

  int size() const { return static_cast<int>(points.size()); }
  void rebuild_index();
  // Required support size for second-order consistency: 6 in 2D, 10 in 3D.
  int monomial_count() const { return dim == 2 ? 6 : 10; }
};

struct GenerationOptions {
  double boundary_spacing = 0.35;  // arc spacing factor (times h)
  double pitch = 0.4;              // interior lattice pitch factor (times h)
  double jitter = 0.1;             // jitter amplitude factor (times h)
  std::uint64_t seed = 42;
};

PointCloud discretize_domain(const DomainSpec& spec, double h,
                             const CloudParams& params = {},
                             const GenerationOptions& gen = {});

std::vector<Neighborhood> build_neighborhoods(
    const PointCloud& cloud, ExecPolicy policy = ExecPolicy::Parallel);

double compute_time_step(const PointCloud& cloud);

void move_points(PointCloud& cloud, double dt);

struct ManagementReport {
  int removed_outside = 0;
  int removed_too_close = 0;
  int inserted = 0;
  int skipped_insertions = 0;
  bool empty() const {
    return removed_outside == 0 && removed_too_close == 0 && inserted == 0 &&
           skipped_insertions == 0;
  }
};

ManagementReport manage_cloud(PointCloud& cloud, const DomainSpec& domain);

// Moving-least-squares interpolation at an arbitrary position, exact for
// quadratic fields. Throws InsufficientSupport / IllConditioned.
double mls_interpolate(const PointCloud& cloud, const Vec& x_new,
                       const std::function<double(const Point&)>& field);

// Same stencil applied to several fields at once.
std::vector<double> mls_interpolate_many(
    const PointCloud& cloud, const Vec& x_new,
    const std::vector<std::function<double(const Point&)>>& fields);

// Validation helpers (used by manage_cloud and the test suite).
bool spacing_ok(const PointCloud& cloud);
bool lattice_holes_covered(const PointCloud& cloud, const DomainSpec& domain);

// Reassign boundary kinds (normals untouched); fn sees each boundary point.
void classify_boundary(PointCloud& cloud,
                       const std::function<PointKind(const Point&)>& fn);

}  // namespace fluxpoint
