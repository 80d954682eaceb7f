#include "fluxpoint/cells.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fluxpoint {

namespace {

constexpr int kSeedFace = -2;

// --- 2D: convex polygon with per-edge source tags -------------------------

struct Poly2 {
  std::vector<Vec> v;     // CCW
  std::vector<int> tag;   // tag[k]: source of edge v[k] -> v[k+1]
};

// Clip CCW polygon by half-plane (x - q) . u <= 0; the closing edge along the
// cut line receives `newtag`.
void clip_poly2(const Poly2& in, const Vec& q, const Vec& u, int newtag,
                Poly2& out) {
  out.v.clear();
  out.tag.clear();
  const int n = static_cast<int>(in.v.size());
  if (n == 0) return;
  for (int k = 0; k < n; ++k) {
    const Vec& a = in.v[k];
    const Vec& b = in.v[(k + 1) % n];
    const int t = in.tag[k];
    const double sa = (a - q).dot(u);
    const double sb = (b - q).dot(u);
    const bool ina = sa <= 0.0, inb = sb <= 0.0;
    if (ina && inb) {
      out.v.push_back(a);
      out.tag.push_back(t);
    } else if (ina && !inb) {
      out.v.push_back(a);
      out.tag.push_back(t);
      const double s = sa / (sa - sb);
      out.v.push_back(a + s * (b - a));
      out.tag.push_back(newtag);
    } else if (!ina && inb) {
      const double s = sa / (sa - sb);
      out.v.push_back(a + s * (b - a));
      out.tag.push_back(t);
    }
  }
}

// --- 3D: convex polytope with per-face source tags ------------------------

struct Face3 {
  std::vector<Vec> v;  // wound CCW seen from outside
  int tag = kSeedFace;
};

Vec newell_normal(const std::vector<Vec>& v) {
  Vec n = Vec::Zero();
  const int m = static_cast<int>(v.size());
  for (int k = 0; k < m; ++k) {
    const Vec& a = v[k];
    const Vec& b = v[(k + 1) % m];
    n[0] += (a[1] - b[1]) * (a[2] + b[2]);
    n[1] += (a[2] - b[2]) * (a[0] + b[0]);
    n[2] += (a[0] - b[0]) * (a[1] + b[1]);
  }
  return n;
}

std::vector<Face3> seed_cube(const Vec& c, double w) {
  std::vector<Face3> faces;
  for (int axis = 0; axis < 3; ++axis)
    for (int side = 0; side < 2; ++side) {
      const int u = (axis + 1) % 3, t = (axis + 2) % 3;
      Vec n = Vec::Zero();
      n[axis] = side == 0 ? -1.0 : 1.0;
      Face3 f;
      f.tag = kSeedFace;
      for (int corner = 0; corner < 4; ++corner) {
        const int su = (corner == 1 || corner == 2) ? 1 : 0;
        const int st = (corner >= 2) ? 1 : 0;
        Vec x = c;
        x[axis] += side == 0 ? -w : w;
        x[u] += su == 0 ? -w : w;
        x[t] += st == 0 ? -w : w;
        f.v.push_back(x);
      }
      if (newell_normal(f.v).dot(n) < 0) std::reverse(f.v.begin(), f.v.end());
      faces.push_back(std::move(f));
    }
  return faces;
}

// Clip polytope by half-space (x - q) . u <= 0. Returns false if the result
// is empty. A new face tagged `newtag` closes the cut.
bool clip_poly3(std::vector<Face3>& faces, const Vec& q, const Vec& u,
                int newtag, double weld_tol) {
  bool any_cut = false;
  std::vector<Vec> on_plane;
  std::vector<Face3> kept;
  kept.reserve(faces.size() + 1);
  for (Face3& f : faces) {
    const int m = static_cast<int>(f.v.size());
    int inside = 0, outside = 0;
    static thread_local std::vector<double> s;
    s.resize(m);
    for (int k = 0; k < m; ++k) {
      s[k] = (f.v[k] - q).dot(u);
      if (s[k] <= 0) ++inside;
      else ++outside;
    }
    if (outside == 0) {
      kept.push_back(std::move(f));
      continue;
    }
    any_cut = true;
    if (inside == 0) continue;
    Face3 g;
    g.tag = f.tag;
    for (int k = 0; k < m; ++k) {
      const int k1 = (k + 1) % m;
      const bool ina = s[k] <= 0, inb = s[k1] <= 0;
      if (ina) {
        g.v.push_back(f.v[k]);
        if (std::abs(s[k]) <= weld_tol) on_plane.push_back(f.v[k]);
      }
      if (ina != inb) {
        const double t = s[k] / (s[k] - s[k1]);
        Vec x = f.v[k] + t * (f.v[k1] - f.v[k]);
        g.v.push_back(x);
        on_plane.push_back(x);
      }
    }
    if (g.v.size() >= 3) kept.push_back(std::move(g));
  }
  if (!any_cut) {
    faces = std::move(kept);
    return !faces.empty();
  }
  // assemble the cut face from the collected on-plane vertices
  if (on_plane.size() >= 3) {
    std::vector<Vec> uniq;
    for (const Vec& x : on_plane) {
      bool dup = false;
      for (const Vec& y : uniq)
        if ((x - y).squaredNorm() <= weld_tol * weld_tol) {
          dup = true;
          break;
        }
      if (!dup) uniq.push_back(x);
    }
    if (uniq.size() >= 3) {
      Vec centroid = Vec::Zero();
      for (const Vec& x : uniq) centroid += x;
      centroid /= static_cast<double>(uniq.size());
      // in-plane basis
      Vec e1 = std::abs(u[0]) < 0.9 ? Vec(1, 0, 0) : Vec(0, 1, 0);
      e1 = (e1 - e1.dot(u) * u).normalized();
      const Vec e2 = u.cross(e1);
      std::sort(uniq.begin(), uniq.end(), [&](const Vec& a, const Vec& b) {
        const Vec da = a - centroid, db = b - centroid;
        return std::atan2(da.dot(e2), da.dot(e1)) <
               std::atan2(db.dot(e2), db.dot(e1));
      });
      Face3 nf;
      nf.tag = newtag;
      nf.v = std::move(uniq);
      if (newell_normal(nf.v).dot(u) < 0)
        std::reverse(nf.v.begin(), nf.v.end());
      kept.push_back(std::move(nf));
    }
  }
  faces = std::move(kept);
  return !faces.empty();
}

double polygon_area_centroid(const std::vector<Vec>& v, const Vec& n,
                             Vec& centroid) {
  const int m = static_cast<int>(v.size());
  double area = 0;
  Vec acc = Vec::Zero();
  for (int k = 1; k + 1 < m; ++k) {
    const Vec c = (v[k] - v[0]).cross(v[k + 1] - v[0]);
    const double a = 0.5 * c.dot(n);
    area += a;
    acc += a * (v[0] + v[k] + v[k + 1]) / 3.0;
  }
  centroid = area != 0 ? Vec(acc / area) : v[0];
  return area;
}

}  // namespace

ControlCell build_control_cell(const PointCloud& cloud, const Neighborhood& nbhd,
                               int i) {
  const Point& pi = cloud.points[i];
  if (nbhd.owner != pi.id)
    throw Error("build_control_cell: neighborhood does not belong to point");
  if (nbhd.size() < cloud.dim + 2)
    throw DegenerateCell("too few support members for a control cell at point " +
                         std::to_string(i));

  const double w = cloud.params.beta * pi.h;
  const double area_floor =
      1e-12 * std::pow(w, cloud.dim - 1);
  ControlCell cell;
  cell.owner = pi.id;

  if (cloud.dim == 2) {
    static thread_local Poly2 poly, scratch;
    poly.v = {pi.x + Vec(-w, -w, 0), pi.x + Vec(w, -w, 0), pi.x + Vec(w, w, 0),
              pi.x + Vec(-w, w, 0)};
    poly.tag = {kSeedFace, kSeedFace, kSeedFace, kSeedFace};

    if (is_boundary(pi.kind)) {
      clip_poly2(poly, pi.x, pi.n, kBoundaryFace, scratch);
      std::swap(poly, scratch);
    }

    for (int k = 1; k < nbhd.size(); ++k) {
      const double d = nbhd.distances[k];
      // remaining planes cannot reach the polygon once d/2 exceeds its radius
      double r2 = 0;
      for (const Vec& vv : poly.v)
        r2 = std::max(r2, (vv - pi.x).squaredNorm());
      if (0.25 * d * d >= r2) break;
      const int j = nbhd.members[k];
      const Vec& xj = cloud.points[j].x;
      const Vec mid = 0.5 * (pi.x + xj);
      const Vec u = (xj - pi.x) / d;
      clip_poly2(poly, mid, u, j, scratch);
      std::swap(poly, scratch);
      if (poly.v.empty()) throw DegenerateCell("empty 2D cell at point " + std::to_string(i));
    }

    // polygon area (shoelace, CCW)
    const int m = static_cast<int>(poly.v.size());
    double area2 = 0;
    for (int k = 0; k < m; ++k) {
      const Vec& a = poly.v[k];
      const Vec& b = poly.v[(k + 1) % m];
      area2 += a[0] * b[1] - b[0] * a[1];
    }
    cell.volume = 0.5 * area2;
    if (cell.volume <= 0)
      throw DegenerateCell("non-positive 2D cell area at point " + std::to_string(i));

    // group edges by tag
    for (int k = 0; k < m; ++k) {
      const Vec& a = poly.v[k];
      const Vec& b = poly.v[(k + 1) % m];
      const int t = poly.tag[k];
      const double len = (b - a).norm();
      if (len < area_floor) continue;
      if (t == kSeedFace) {
        cell.defect = true;
        continue;
      }
      CellFace* existing = nullptr;
      for (CellFace& f : cell.faces)
        if (f.neighbor == t) existing = &f;
      if (existing) {
        const Vec mid = 0.5 * (a + b);
        existing->center =
            (existing->center * existing->area + mid * len) /
            (existing->area + len);
        existing->area += len;
        existing->vertices.push_back(a);
        existing->vertices.push_back(b);
        continue;
      }
      CellFace f;
      f.neighbor = t;
      f.area = len;
      f.center = 0.5 * (a + b);
      f.vertices = {a, b};
      if (t == kBoundaryFace) {
        f.normal = pi.n;
      } else {
        f.normal = (cloud.points[t].x - pi.x).normalized();
      }
      cell.faces.push_back(std::move(f));
    }
    return cell;
  }

  // 3D
  std::vector<Face3> faces = seed_cube(pi.x, w);
  const double weld = 1e-12 * w;
  if (is_boundary(pi.kind))
    if (!clip_poly3(faces, pi.x, pi.n, kBoundaryFace, weld))
      throw DegenerateCell("empty 3D cell at point " + std::to_string(i));
  for (int k = 1; k < nbhd.size(); ++k) {
    const double d = nbhd.distances[k];
    double r2 = 0;
    for (const Face3& f : faces)
      for (const Vec& vv : f.v) r2 = std::max(r2, (vv - pi.x).squaredNorm());
    if (0.25 * d * d >= r2) break;
    const int j = nbhd.members[k];
    const Vec& xj = cloud.points[j].x;
    if (!clip_poly3(faces, 0.5 * (pi.x + xj), (xj - pi.x) / d, j, weld))
      throw DegenerateCell("empty 3D cell at point " + std::to_string(i));
  }

  // fan volume from the vertex mean
  Vec ref = Vec::Zero();
  int nv = 0;
  for (const Face3& f : faces)
    for (const Vec& vv : f.v) {
      ref += vv;
      ++nv;
    }
  ref /= std::max(1, nv);
  double vol = 0;
  for (const Face3& f : faces) {
    const int m = static_cast<int>(f.v.size());
    for (int k = 1; k + 1 < m; ++k)
      vol += (f.v[0] - ref).dot((f.v[k] - ref).cross(f.v[k + 1] - ref)) / 6.0;
  }
  cell.volume = vol;
  if (cell.volume <= 0)
    throw DegenerateCell("non-positive 3D cell volume at point " + std::to_string(i));

  for (Face3& f : faces) {
    Vec n;
    if (f.tag == kSeedFace) {
      n = newell_normal(f.v).normalized();
    } else if (f.tag == kBoundaryFace) {
      n = pi.n;
    } else {
      n = (cloud.points[f.tag].x - pi.x).normalized();
    }
    Vec centroid;
    const double area = polygon_area_centroid(f.v, n, centroid);
    if (area < area_floor) continue;
    if (f.tag == kSeedFace) {
      cell.defect = true;
      continue;
    }
    CellFace cf;
    cf.neighbor = f.tag;
    cf.area = area;
    cf.normal = n;
    cf.center = centroid;
    cf.vertices = std::move(f.v);
    cell.faces.push_back(std::move(cf));
  }
  return cell;
}

std::vector<ControlCell> build_all_cells(const PointCloud& cloud,
                                         const std::vector<Neighborhood>& nbhds,
                                         ExecPolicy policy) {
  std::vector<ControlCell> cells(cloud.size());
  parallel_for(
      cloud.size(),
      [&](std::int64_t i) {
        cells[i] = build_control_cell(cloud, nbhds[i], static_cast<int>(i));
      },
      policy);
  return cells;
}

GeomResiduals cell_geometric_residuals(const ControlCell& cell,
                                       const PointCloud& cloud) {
  GeomResiduals res;
  const Point& pi = cloud.points[cell.owner];
  const int dim = cloud.dim;
  for (const CellFace& f : cell.faces) {
    res.r0 += f.normal * f.area;
    res.r1 += f.normal * f.center.transpose() * f.area;
    const Vec mid = f.neighbor == kBoundaryFace
                        ? pi.x
                        : Vec(0.5 * (pi.x + cloud.points[f.neighbor].x));
    res.r1_mid += f.normal * mid.transpose() * f.area;
  }
  for (int k = 0; k < dim; ++k) {
    res.r1(k, k) -= cell.volume;
    res.r1_mid(k, k) -= cell.volume;
  }
  return res;
}

double volume_from_face_moments(const ControlCell& cell, int dim) {
  double tr = 0;
  for (const CellFace& f : cell.faces)
    tr += f.normal.head(dim).dot(f.center.head(dim)) * f.area;
  return tr / dim;
}

double stitching_error(const std::vector<ControlCell>& cells) {
  double mismatch = 0;
  double total_volume = 0;
  for (const ControlCell& ci : cells) {
    total_volume += ci.volume;
    for (const CellFace& f : ci.faces) {
      if (f.neighbor == kBoundaryFace) continue;
      Vec paired = Vec::Zero();
      const ControlCell& cl = cells[f.neighbor];
      if (const CellFace* g = cl.face_to(ci.owner))
        paired = g->normal * g->area;
      mismatch += (f.normal * f.area + paired).norm();
    }
  }
  if (total_volume <= 0) throw Error("stitching_error: zero total volume");
  return mismatch / (2.0 * total_volume);
}

}  // namespace fluxpoint
