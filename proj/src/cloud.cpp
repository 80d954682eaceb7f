#include "fluxpoint/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

namespace fluxpoint {

namespace {

// Deterministic uniform in [0,1) straight from the generator output, so
// clouds are reproducible bit-for-bit for a given seed.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double box_signed_distance(const Vec& x, const Vec& lo, const Vec& hi,
                           int dim) {
  double inside = -std::numeric_limits<double>::infinity();
  double outside_sq = 0;
  for (int k = 0; k < dim; ++k) {
    const double q = std::max(lo[k] - x[k], x[k] - hi[k]);
    inside = std::max(inside, q);
    if (q > 0) outside_sq += q * q;
  }
  if (outside_sq > 0) return std::sqrt(outside_sq);
  return inside;
}

}  // namespace

void CloudParams::validate() const {
  if (!(0 < r_min && r_min < r_max && r_max < beta && beta <= 1.0))
    throw InvalidConfig("cloud parameters must satisfy 0 < r_min < r_max < beta <= 1");
  if (c_dt <= 0) throw InvalidConfig("c_dt must be positive");
}

DomainSpec DomainSpec::rectangle(double x0, double y0, double x1, double y1) {
  DomainSpec d;
  d.shape = Shape::Rectangle;
  d.dim = 2;
  d.lo = Vec(x0, y0, 0);
  d.hi = Vec(x1, y1, 0);
  return d;
}

DomainSpec DomainSpec::rectangle_with_hole(double x0, double y0, double x1,
                                           double y1, double hx0, double hy0,
                                           double hx1, double hy1) {
  DomainSpec d = rectangle(x0, y0, x1, y1);
  d.shape = Shape::RectangleWithHole;
  d.hole_lo = Vec(hx0, hy0, 0);
  d.hole_hi = Vec(hx1, hy1, 0);
  return d;
}

DomainSpec DomainSpec::box(const Vec& lo, const Vec& hi) {
  DomainSpec d;
  d.shape = Shape::Box;
  d.dim = 3;
  d.lo = lo;
  d.hi = hi;
  return d;
}

DomainSpec DomainSpec::sphere(const Vec& center, double radius) {
  DomainSpec d;
  d.shape = Shape::Sphere;
  d.dim = 3;
  d.center = center;
  d.radius = radius;
  return d;
}

double DomainSpec::measure() const {
  switch (shape) {
    case Shape::Rectangle:
      return (hi[0] - lo[0]) * (hi[1] - lo[1]);
    case Shape::RectangleWithHole:
      return (hi[0] - lo[0]) * (hi[1] - lo[1]) -
             (hole_hi[0] - hole_lo[0]) * (hole_hi[1] - hole_lo[1]);
    case Shape::Box:
      return (hi - lo).prod();
    case Shape::Sphere:
      return 4.0 / 3.0 * std::numbers::pi * radius * radius * radius;
  }
  return 0;
}

double DomainSpec::signed_distance(const Vec& x) const {
  switch (shape) {
    case Shape::Rectangle:
      return box_signed_distance(x, lo, hi, 2);
    case Shape::RectangleWithHole:
      return std::max(box_signed_distance(x, lo, hi, 2),
                      -box_signed_distance(x, hole_lo, hole_hi, 2));
    case Shape::Box:
      return box_signed_distance(x, lo, hi, 3);
    case Shape::Sphere:
      return (x - center).norm() - radius;
  }
  return 0;
}

void DomainSpec::bounding_box(Vec& bb_lo, Vec& bb_hi) const {
  if (shape == Shape::Sphere) {
    bb_lo = center - Vec::Constant(radius);
    bb_hi = center + Vec::Constant(radius);
    if (dim == 2) bb_lo[2] = bb_hi[2] = 0;
  } else {
    bb_lo = lo;
    bb_hi = hi;
  }
}

// ---------------------------------------------------------------------------
// Spatial index

std::uint64_t SpatialIndex::key_of(const Vec& x) const {
  constexpr std::int64_t offset = 1 << 20;
  std::uint64_t key = 0;
  for (int k = 0; k < 3; ++k) {
    std::int64_t c = static_cast<std::int64_t>(std::floor(x[k] / cell_)) + offset;
    key = (key << 21) | static_cast<std::uint64_t>(c & ((1 << 21) - 1));
  }
  return key;
}

void SpatialIndex::build(const std::vector<Point>& points, int dim,
                         double cell_size) {
  cell_ = cell_size;
  dim_ = dim;
  buckets_.clear();
  buckets_.reserve(points.size());
  for (const Point& p : points) buckets_[key_of(p.x)].push_back(p.id);
}

void SpatialIndex::query(const std::vector<Point>& points, const Vec& x,
                         double radius, std::vector<int>& out) const {
  const double r2 = radius * radius;
  std::int64_t lo[3], hi[3];
  for (int k = 0; k < 3; ++k) {
    if (k < dim_) {
      lo[k] = static_cast<std::int64_t>(std::floor((x[k] - radius) / cell_));
      hi[k] = static_cast<std::int64_t>(std::floor((x[k] + radius) / cell_));
    } else {
      lo[k] = hi[k] = static_cast<std::int64_t>(std::floor(0.0 / cell_));
    }
  }
  constexpr std::int64_t offset = 1 << 20;
  for (std::int64_t iz = lo[2]; iz <= hi[2]; ++iz)
    for (std::int64_t iy = lo[1]; iy <= hi[1]; ++iy)
      for (std::int64_t ix = lo[0]; ix <= hi[0]; ++ix) {
        std::uint64_t key =
            (static_cast<std::uint64_t>((ix + offset) & ((1 << 21) - 1)) << 42) |
            (static_cast<std::uint64_t>((iy + offset) & ((1 << 21) - 1)) << 21) |
            static_cast<std::uint64_t>((iz + offset) & ((1 << 21) - 1));
        auto it = buckets_.find(key);
        if (it == buckets_.end()) continue;
        for (int id : it->second)
          if ((points[id].x - x).squaredNorm() <= r2) out.push_back(id);
      }
}

void PointCloud::rebuild_index() {
  double h_max = 0;
  for (const Point& p : points) h_max = std::max(h_max, p.h);
  if (h_max <= 0) h_max = h_ref > 0 ? h_ref : 1.0;
  index.build(points, dim, params.beta * h_max);
}

// ---------------------------------------------------------------------------
// Domain discretization

namespace {

struct BoundarySample {
  Vec x;
  Vec n;
};

// Points along a 2D segment a->b with outward normal n, spacing ~= target,
// endpoints excluded (corners are emitted separately).
void sample_edge(const Vec& a, const Vec& b, const Vec& n, double target,
                 std::vector<BoundarySample>& out) {
  const double len = (b - a).norm();
  const int nseg = std::max(1, static_cast<int>(std::lround(len / target)));
  for (int k = 1; k < nseg; ++k) {
    const double s = static_cast<double>(k) / nseg;
    out.push_back({a + s * (b - a), n});
  }
}

void sample_rect_boundary(const Vec& lo, const Vec& hi, double target,
                          bool outward_flip, std::vector<BoundarySample>& out) {
  const Vec c0(lo[0], lo[1], 0), c1(hi[0], lo[1], 0), c2(hi[0], hi[1], 0),
      c3(lo[0], hi[1], 0);
  const double f = outward_flip ? -1.0 : 1.0;
  const Vec nb(0, -f, 0), nr(f, 0, 0), nt(0, f, 0), nl(-f, 0, 0);
  auto corner = [&](const Vec& x, const Vec& na, const Vec& nbv) {
    out.push_back({x, (na + nbv).normalized()});
  };
  corner(c0, nb, nl);
  corner(c1, nb, nr);
  corner(c2, nt, nr);
  corner(c3, nt, nl);
  sample_edge(c0, c1, nb, target, out);
  sample_edge(c1, c2, nr, target, out);
  sample_edge(c2, c3, nt, target, out);
  sample_edge(c3, c0, nl, target, out);
}

void sample_box_boundary(const Vec& lo, const Vec& hi, double target,
                         std::vector<BoundarySample>& out) {
  // Sample all six faces on grids that include the face borders, then merge
  // coincident edge/corner nodes by averaging their face normals.
  std::map<std::array<std::int64_t, 3>, std::pair<Vec, Vec>> merged;
  auto quant = [](const Vec& x) {
    return std::array<std::int64_t, 3>{
        static_cast<std::int64_t>(std::llround(x[0] * 1e9)),
        static_cast<std::int64_t>(std::llround(x[1] * 1e9)),
        static_cast<std::int64_t>(std::llround(x[2] * 1e9))};
  };
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      const int u = (axis + 1) % 3, w = (axis + 2) % 3;
      const int nu = std::max(1, static_cast<int>(std::lround((hi[u] - lo[u]) / target)));
      const int nw = std::max(1, static_cast<int>(std::lround((hi[w] - lo[w]) / target)));
      Vec n = Vec::Zero();
      n[axis] = side == 0 ? -1.0 : 1.0;
      for (int iu = 0; iu <= nu; ++iu)
        for (int iw = 0; iw <= nw; ++iw) {
          Vec x;
          x[axis] = side == 0 ? lo[axis] : hi[axis];
          x[u] = lo[u] + (hi[u] - lo[u]) * iu / nu;
          x[w] = lo[w] + (hi[w] - lo[w]) * iw / nw;
          auto [it, fresh] = merged.try_emplace(quant(x), std::pair<Vec, Vec>{x, n});
          if (!fresh) it->second.second += n;
        }
    }
  for (auto& [k, xn] : merged) out.push_back({xn.first, xn.second.normalized()});
}

void sample_sphere_boundary(const Vec& center, double radius, double target,
                            std::vector<BoundarySample>& out) {
  const double area = 4.0 * std::numbers::pi * radius * radius;
  const int n = std::max(8, static_cast<int>(std::lround(
                                area / (0.866 * target * target))));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int k = 0; k < n; ++k) {
    const double z = 1.0 - 2.0 * (k + 0.5) / n;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * k;
    const Vec dir(r * std::cos(a), r * std::sin(a), z);
    out.push_back({center + radius * dir, dir});
  }
}

// Incremental min-distance grid used during generation.
class MinDistGrid {
 public:
  MinDistGrid(double cell, int dim) : cell_(cell), dim_(dim) {}
  bool far_enough(const Vec& x, double min_dist,
                  const std::vector<Vec>& pts) const {
    const double r2 = min_dist * min_dist;
    std::int64_t c[3];
    for (int k = 0; k < 3; ++k)
      c[k] = k < dim_ ? static_cast<std::int64_t>(std::floor(x[k] / cell_)) : 0;
    const std::int64_t zspan = dim_ == 3 ? 1 : 0;
    for (std::int64_t iz = c[2] - zspan; iz <= c[2] + zspan; ++iz)
      for (std::int64_t iy = c[1] - 1; iy <= c[1] + 1; ++iy)
        for (std::int64_t ix = c[0] - 1; ix <= c[0] + 1; ++ix) {
          auto it = buckets_.find({ix, iy, iz});
          if (it == buckets_.end()) continue;
          for (int id : it->second)
            if ((pts[id] - x).squaredNorm() < r2) return false;
        }
    return true;
  }
  void insert(const Vec& x, int id) {
    std::array<std::int64_t, 3> c{0, 0, 0};
    for (int k = 0; k < dim_; ++k)
      c[k] = static_cast<std::int64_t>(std::floor(x[k] / cell_));
    buckets_[c].push_back(id);
  }

 private:
  double cell_;
  int dim_;
  std::map<std::array<std::int64_t, 3>, std::vector<int>> buckets_;
};

}  // namespace

PointCloud discretize_domain(const DomainSpec& spec, double h,
                             const CloudParams& params,
                             const GenerationOptions& gen) {
  if (h <= 0) throw InvalidDomain("smoothing length must be positive");
  if (spec.measure() <= 0) throw InvalidDomain("domain has zero measure");
  params.validate();

  PointCloud cloud;
  cloud.dim = spec.dim;
  cloud.params = params;
  cloud.h_ref = h;
  cloud.lattice_pitch = gen.pitch * h;

  std::vector<BoundarySample> boundary;
  const double btarget = gen.boundary_spacing * h;
  switch (spec.shape) {
    case DomainSpec::Shape::Rectangle:
      sample_rect_boundary(spec.lo, spec.hi, btarget, false, boundary);
      break;
    case DomainSpec::Shape::RectangleWithHole:
      sample_rect_boundary(spec.lo, spec.hi, btarget, false, boundary);
      sample_rect_boundary(spec.hole_lo, spec.hole_hi, btarget, true, boundary);
      break;
    case DomainSpec::Shape::Box:
      sample_box_boundary(spec.lo, spec.hi, btarget, boundary);
      break;
    case DomainSpec::Shape::Sphere:
      sample_sphere_boundary(spec.center, spec.radius, btarget, boundary);
      break;
  }

  const double min_dist = params.r_min * h;
  std::vector<Vec> accepted;
  MinDistGrid grid(std::max(min_dist, 1e-12), spec.dim);

  auto push_point = [&](const Vec& x, PointKind kind, const Vec& n) {
    Point p;
    p.id = static_cast<int>(cloud.points.size());
    p.x = x;
    p.h = h;
    p.kind = kind;
    p.n = n;
    cloud.points.push_back(p);
    grid.insert(x, p.id);
    accepted.push_back(x);
  };

  for (const BoundarySample& b : boundary) {
    if (!grid.far_enough(b.x, min_dist, accepted)) continue;
    push_point(b.x, PointKind::Wall, b.n);
  }

  // Interior: jittered lattice, dropped when violating the pair rule or the
  // wall clearance.
  Vec bb_lo, bb_hi;
  spec.bounding_box(bb_lo, bb_hi);
  const double pitch = cloud.lattice_pitch;
  const double jitter = gen.jitter * h;
  std::mt19937_64 rng(gen.seed);
  int nc[3] = {1, 1, 1};
  for (int k = 0; k < spec.dim; ++k)
    nc[k] = std::max(1, static_cast<int>(std::floor((bb_hi[k] - bb_lo[k]) / pitch)));
  for (int iz = 0; iz < nc[2]; ++iz)
    for (int iy = 0; iy < nc[1]; ++iy)
      for (int ix = 0; ix < nc[0]; ++ix) {
        Vec node(bb_lo[0] + (ix + 0.5) * pitch, bb_lo[1] + (iy + 0.5) * pitch,
                 spec.dim == 3 ? bb_lo[2] + (iz + 0.5) * pitch : 0.0);
        Vec x = node;
        for (int k = 0; k < spec.dim; ++k)
          x[k] += (2.0 * uniform01(rng) - 1.0) * jitter;
        if (spec.signed_distance(x) > -min_dist) continue;
        if (!grid.far_enough(x, min_dist, accepted)) continue;
        push_point(x, PointKind::Interior, Vec::Zero());
      }

  cloud.rebuild_index();
  return cloud;
}

// ---------------------------------------------------------------------------
// Neighborhoods

std::vector<Neighborhood> build_neighborhoods(const PointCloud& cloud,
                                              ExecPolicy policy) {
  const int n = cloud.size();
  std::vector<Neighborhood> nbhds(n);
  const int need = cloud.monomial_count();
  parallel_for(
      n,
      [&](std::int64_t i) {
        const Point& pi = cloud.points[i];
        Neighborhood& nb = nbhds[i];
        nb.owner = pi.id;
        std::vector<int> found;
        cloud.index.query(cloud.points, pi.x, cloud.params.beta * pi.h, found);
        std::vector<std::pair<double, int>> ordered;
        ordered.reserve(found.size());
        for (int id : found) {
          if (id == pi.id) continue;
          ordered.emplace_back((cloud.points[id].x - pi.x).norm(), id);
        }
        std::sort(ordered.begin(), ordered.end());
        nb.members.reserve(ordered.size() + 1);
        nb.distances.reserve(ordered.size() + 1);
        nb.members.push_back(pi.id);
        nb.distances.push_back(0.0);
        for (auto& [d, id] : ordered) {
          nb.members.push_back(id);
          nb.distances.push_back(d);
        }
        if (nb.size() < need)
          throw InsufficientSupport(pi.id, nb.size(), need);
      },
      policy);
  return nbhds;
}

// ---------------------------------------------------------------------------
// Time step and movement

double compute_time_step(const PointCloud& cloud) {
  if (cloud.points.empty()) throw Error("compute_time_step on empty cloud");
  double best = std::numeric_limits<double>::infinity();
  double h_min = std::numeric_limits<double>::infinity();
  for (const Point& p : cloud.points) {
    h_min = std::min(h_min, p.h);
    const double speed = p.v.norm();
    if (speed > 0) best = std::min(best, p.h / speed);
  }
  if (!std::isfinite(best)) best = h_min / cloud.params.v_ref;
  return cloud.params.c_dt * best;
}

void move_points(PointCloud& cloud, double dt) {
  for (Point& p : cloud.points) {
    if (p.kind == PointKind::Interior)
      p.x += p.v * dt + (p.v - p.v_prev) * dt;
    p.v_prev = p.v;
  }
  cloud.rebuild_index();
}

// ---------------------------------------------------------------------------
// Point management

namespace {

// Distance of an inside point to the domain boundary.
double boundary_distance(const DomainSpec& domain, const Vec& x) {
  return -domain.signed_distance(x);
}

void compact(PointCloud& cloud, const std::vector<char>& removed) {
  std::vector<Point> kept;
  kept.reserve(cloud.points.size());
  for (const Point& p : cloud.points)
    if (!removed[p.id]) kept.push_back(p);
  for (int i = 0; i < static_cast<int>(kept.size()); ++i) kept[i].id = i;
  cloud.points = std::move(kept);
}

}  // namespace

ManagementReport manage_cloud(PointCloud& cloud, const DomainSpec& domain) {
  ManagementReport report;
  const int n0 = cloud.size();
  std::vector<char> removed(n0, 0);

  // (a) interior points advected out of the domain
  for (const Point& p : cloud.points)
    if (p.kind == PointKind::Interior && domain.signed_distance(p.x) > 0) {
      removed[p.id] = 1;
      ++report.removed_outside;
    }

  // (b) pair rule: of two points closer than r_min*h, drop the one farther
  // from the boundary; boundary points are never dropped.
  cloud.rebuild_index();
  bool changed = true;
  std::vector<int> near;
  while (changed) {
    changed = false;
    for (const Point& pi : cloud.points) {
      if (removed[pi.id]) continue;
      near.clear();
      cloud.index.query(cloud.points, pi.x,
                        cloud.params.r_min * pi.h, near);
      for (int j : near) {
        const Point& pj = cloud.points[j];
        if (j == pi.id || removed[j] || removed[pi.id]) continue;
        const double limit =
            cloud.params.r_min * std::min(pi.h, pj.h);
        if ((pj.x - pi.x).norm() >= limit) continue;
        const bool bi = is_boundary(pi.kind), bj = is_boundary(pj.kind);
        int victim;
        if (bi && bj) continue;
        if (bi) victim = pj.id;
        else if (bj) victim = pi.id;
        else {
          const double di = boundary_distance(domain, pi.x);
          const double dj = boundary_distance(domain, pj.x);
          victim = di > dj ? pi.id : (dj > di ? pj.id : std::max(pi.id, pj.id));
        }
        removed[victim] = 1;
        ++report.removed_too_close;
        changed = true;
      }
    }
  }
  if (report.removed_outside + report.removed_too_close > 0)
    compact(cloud, removed);

  // (c) hole filling on the generation lattice
  cloud.rebuild_index();
  Vec bb_lo, bb_hi;
  domain.bounding_box(bb_lo, bb_hi);
  const double pitch = cloud.lattice_pitch > 0 ? cloud.lattice_pitch
                                               : 0.4 * cloud.h_ref;
  const double h = cloud.h_ref;
  const double clearance = cloud.params.r_min * h;
  int nc[3] = {1, 1, 1};
  for (int k = 0; k < cloud.dim; ++k)
    nc[k] = std::max(1, static_cast<int>(std::floor((bb_hi[k] - bb_lo[k]) / pitch)));

  std::vector<std::function<double(const Point&)>> fields = {
      [](const Point& p) { return p.v[0]; },
      [](const Point& p) { return p.v[1]; },
      [](const Point& p) { return p.v[2]; },
      [](const Point& p) { return p.v_prev[0]; },
      [](const Point& p) { return p.v_prev[1]; },
      [](const Point& p) { return p.v_prev[2]; },
      [](const Point& p) { return p.phi; },
      [](const Point& p) { return p.p; }};

  std::vector<int> found;
  for (int iz = 0; iz < nc[2]; ++iz)
    for (int iy = 0; iy < nc[1]; ++iy)
      for (int ix = 0; ix < nc[0]; ++ix) {
        Vec node(bb_lo[0] + (ix + 0.5) * pitch, bb_lo[1] + (iy + 0.5) * pitch,
                 cloud.dim == 3 ? bb_lo[2] + (iz + 0.5) * pitch : 0.0);
        if (domain.signed_distance(node) > -clearance) continue;
        found.clear();
        cloud.index.query(cloud.points, node, cloud.params.r_max * h, found);
        if (!found.empty()) continue;
        try {
          std::vector<double> vals = mls_interpolate_many(cloud, node, fields);
          Point p;
          p.id = cloud.size();
          p.x = node;
          p.h = h;
          p.kind = PointKind::Interior;
          p.v = Vec(vals[0], vals[1], vals[2]);
          p.v_prev = Vec(vals[3], vals[4], vals[5]);
          p.phi = vals[6];
          p.p = vals[7];
          cloud.points.push_back(p);
          cloud.rebuild_index();
          ++report.inserted;
        } catch (const Error&) {
          ++report.skipped_insertions;
        }
      }

  cloud.rebuild_index();
  return report;
}

// ---------------------------------------------------------------------------
// Validation helpers

bool spacing_ok(const PointCloud& cloud) {
  std::vector<int> near;
  for (const Point& pi : cloud.points) {
    near.clear();
    cloud.index.query(cloud.points, pi.x, cloud.params.r_min * pi.h, near);
    for (int j : near) {
      if (j == pi.id) continue;
      const Point& pj = cloud.points[j];
      const double limit = cloud.params.r_min * std::min(pi.h, pj.h);
      if ((pj.x - pi.x).norm() < limit * (1.0 - 1e-12)) return false;
    }
  }
  return true;
}

bool lattice_holes_covered(const PointCloud& cloud, const DomainSpec& domain) {
  Vec bb_lo, bb_hi;
  domain.bounding_box(bb_lo, bb_hi);
  const double pitch = cloud.lattice_pitch;
  const double h = cloud.h_ref;
  int nc[3] = {1, 1, 1};
  for (int k = 0; k < cloud.dim; ++k)
    nc[k] = std::max(1, static_cast<int>(std::floor((bb_hi[k] - bb_lo[k]) / pitch)));
  std::vector<int> found;
  for (int iz = 0; iz < nc[2]; ++iz)
    for (int iy = 0; iy < nc[1]; ++iy)
      for (int ix = 0; ix < nc[0]; ++ix) {
        Vec node(bb_lo[0] + (ix + 0.5) * pitch, bb_lo[1] + (iy + 0.5) * pitch,
                 cloud.dim == 3 ? bb_lo[2] + (iz + 0.5) * pitch : 0.0);
        if (domain.signed_distance(node) > -cloud.params.r_min * h) continue;
        found.clear();
        cloud.index.query(cloud.points, node, cloud.params.r_max * h, found);
        if (found.empty()) return false;
      }
  return true;
}

void classify_boundary(PointCloud& cloud,
                       const std::function<PointKind(const Point&)>& fn) {
  for (Point& p : cloud.points) {
    if (!is_boundary(p.kind)) continue;
    PointKind k = fn(p);
    if (!is_boundary(k))
      throw InvalidBoundary("classify_boundary must keep boundary points on the boundary");
    p.kind = k;
  }
}

}  // namespace fluxpoint
