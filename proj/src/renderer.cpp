#include "mvadv/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <stdexcept>
#include <variant>

#include "mvadv/image_io.hpp"
#include "mvadv/random.hpp"

namespace mvadv {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kBaseRadius = 4.5;
constexpr double kFieldOfView = 36.0 * kPi / 180.0;
constexpr double kElevationLow = 0.15;
constexpr double kElevationHigh = 0.6;
constexpr double kHitTolerance = 1e-9;

struct Vec3 {
  double x = 0, y = 0, z = 0;
};

Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
Vec3 normalize(Vec3 a) { return (1.0 / std::sqrt(dot(a, a))) * a; }

// Half-space n.p <= d.
struct Plane {
  Vec3 n;
  double d;
};

// x^2/a^2 + y^2/b^2 + z^2/c^2 <= 1.
struct Ellipsoid {
  Vec3 radii;
};

// x^2 + y^2 <= r(z)^2 with r linear between (z0, r0) and (z1, r1). Bounded
// by separate cap planes.
struct Radial {
  double z0, z1, r0, r1;
  double slope() const { return (r1 - r0) / (z1 - z0); }
  double radius_at(double z) const { return r0 + slope() * (z - z0); }
};

using Constraint = std::variant<Plane, Ellipsoid, Radial>;

// Every solid is convex: the intersection of its constraints.
using Solid = std::vector<Constraint>;

double evaluate(const Constraint& c, Vec3 p) {
  return std::visit(
      [&](const auto& k) -> double {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Plane>) {
          return dot(k.n, p) - k.d;
        } else if constexpr (std::is_same_v<T, Ellipsoid>) {
          const Vec3 r = k.radii;
          return p.x * p.x / (r.x * r.x) + p.y * p.y / (r.y * r.y) + p.z * p.z / (r.z * r.z) - 1.0;
        } else {
          const double r = k.radius_at(p.z);
          return p.x * p.x + p.y * p.y - r * r;
        }
      },
      c);
}

Vec3 gradient(const Constraint& c, Vec3 p) {
  return std::visit(
      [&](const auto& k) -> Vec3 {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Plane>) {
          return k.n;
        } else if constexpr (std::is_same_v<T, Ellipsoid>) {
          const Vec3 r = k.radii;
          return {p.x / (r.x * r.x), p.y / (r.y * r.y), p.z / (r.z * r.z)};
        } else {
          return {p.x, p.y, -k.radius_at(p.z) * k.slope()};
        }
      },
      c);
}

// Real roots of a t^2 + b t + c = 0 (or the linear case).
std::vector<double> solve_quadratic(double a, double b, double c) {
  if (std::abs(a) < 1e-14) {
    if (std::abs(b) < 1e-14) return {};
    return {-c / b};
  }
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return {};
  const double s = std::sqrt(disc);
  const double q = -0.5 * (b + std::copysign(s, b));
  std::vector<double> roots{q / a};
  if (q != 0.0) roots.push_back(c / q);
  return roots;
}

std::vector<double> boundary_hits(const Constraint& c, Vec3 o, Vec3 d) {
  return std::visit(
      [&](const auto& k) -> std::vector<double> {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, Plane>) {
          const double denom = dot(k.n, d);
          if (std::abs(denom) < 1e-14) return {};
          return {(k.d - dot(k.n, o)) / denom};
        } else if constexpr (std::is_same_v<T, Ellipsoid>) {
          const Vec3 inv{1 / k.radii.x, 1 / k.radii.y, 1 / k.radii.z};
          const Vec3 os{o.x * inv.x, o.y * inv.y, o.z * inv.z};
          const Vec3 ds{d.x * inv.x, d.y * inv.y, d.z * inv.z};
          return solve_quadratic(dot(ds, ds), 2 * dot(os, ds), dot(os, os) - 1.0);
        } else {
          const double m = k.slope();
          const double base = k.r0 - m * k.z0;  // r(z) = base + m z
          const double rz0 = base + m * o.z;
          const double rz1 = m * d.z;
          return solve_quadratic(d.x * d.x + d.y * d.y - rz1 * rz1, 2 * (o.x * d.x + o.y * d.y - rz0 * rz1),
                                 o.x * o.x + o.y * o.y - rz0 * rz0);
        }
      },
      c);
}

struct Hit {
  double t;
  Vec3 normal;
};

// First entry point of a ray into a convex solid: the nearest boundary
// point of any constraint that satisfies all the others.
std::optional<Hit> intersect(const Solid& solid, Vec3 o, Vec3 d) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < solid.size(); ++i) {
    for (double t : boundary_hits(solid[i], o, d)) {
      if (t <= 0.0 || (best && t >= best->t)) continue;
      const Vec3 p = o + t * d;
      bool inside = true;
      for (std::size_t j = 0; j < solid.size() && inside; ++j) {
        if (j != i && evaluate(solid[j], p) > kHitTolerance) inside = false;
      }
      if (!inside) continue;
      Vec3 n = normalize(gradient(solid[i], p));
      if (dot(n, d) > 0) continue;  // exit point, not entry
      best = Hit{t, n};
    }
  }
  return best;
}

std::vector<Plane> caps(double z0, double z1) {
  return {Plane{{0, 0, -1}, -z0}, Plane{{0, 0, 1}, z1}};
}

Solid box(double hx, double hy, double hz) {
  return {Plane{{1, 0, 0}, hx}, Plane{{-1, 0, 0}, hx}, Plane{{0, 1, 0}, hy},
          Plane{{0, -1, 0}, hy}, Plane{{0, 0, 1}, hz}, Plane{{0, 0, -1}, hz}};
}

Solid radial(double z0, double z1, double r0, double r1) {
  Solid s{Radial{z0, z1, r0, r1}};
  for (const auto& p : caps(z0, z1)) s.emplace_back(p);
  return s;
}

Solid pyramid(double half_base, double z0, double apex) {
  Solid s{Plane{{0, 0, -1}, -z0}};
  const double h = apex - z0;
  const std::array<Vec3, 4> sides{Vec3{h, 0, half_base}, Vec3{-h, 0, half_base}, Vec3{0, h, half_base},
                                  Vec3{0, -h, half_base}};
  for (Vec3 n : sides) {
    n = normalize(n);
    s.emplace_back(Plane{n, n.z * apex});
  }
  return s;
}

Solid solid_for(std::size_t class_id) {
  switch (static_cast<ShapeClass>(class_id)) {
    case ShapeClass::kSphere: return {Ellipsoid{{1.0, 1.0, 1.0}}};
    case ShapeClass::kCube: return box(0.8, 0.8, 0.8);
    case ShapeClass::kCone: return radial(-0.9, 1.0, 0.9, 0.0);
    case ShapeClass::kPyramid: return pyramid(0.9, -0.9, 1.0);
    case ShapeClass::kCylinder: return radial(-0.9, 0.9, 0.75, 0.75);
    case ShapeClass::kEllipsoid: return {Ellipsoid{{0.55, 0.55, 1.1}}};
    case ShapeClass::kSlab: return box(1.0, 1.0, 0.3);
    case ShapeClass::kFrustum: return radial(-0.9, 0.9, 0.9, 0.4);
  }
  throw std::invalid_argument("unknown shape class");
}

constexpr std::array<std::string_view, 8> kShapeNames{"sphere", "cube", "cone", "pyramid",
                                                      "cylinder", "ellipsoid", "slab", "frustum"};
constexpr std::array<std::string_view, 5> kAliases{"baseball-analog", "dining-table-analog", "shovel-analog",
                                                   "tractor-analog", "lemon-analog"};

CameraPose jittered(const CameraPose& base, Rng& rng) {
  CameraPose p = base;
  for (auto& j : p.jitter) j = uniform(rng, -kPoseJitter, kPoseJitter);
  p.azimuth = base.azimuth * (1.0 + p.jitter[0]);
  p.elevation = base.elevation * (1.0 + p.jitter[1]);
  p.radius = base.radius * (1.0 + p.jitter[2]);
  return p;
}

}  // namespace

std::string_view shape_name(std::size_t class_id) {
  if (class_id >= kShapeNames.size()) throw std::out_of_range("shape class id");
  return kShapeNames[class_id];
}

std::string_view object_alias(std::size_t class_id) {
  if (class_id >= kAliases.size()) return shape_name(class_id);
  return kAliases[class_id];
}

std::optional<std::size_t> parse_object_name(std::string_view name) {
  for (std::size_t i = 0; i < kShapeNames.size(); ++i) {
    if (name == kShapeNames[i]) return i;
  }
  for (std::size_t i = 0; i < kAliases.size(); ++i) {
    if (name == kAliases[i]) return i;
  }
  return std::nullopt;
}

void validate(const ObjectSpec& obj) {
  if (obj.class_id >= kObjectClassCount + kMaxDistractorClasses) {
    throw std::invalid_argument("object class id out of range");
  }
  for (double c : {obj.color.r, obj.color.g, obj.color.b}) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("object colour channel outside [0, 1]");
  }
  if (!(obj.size > 0.0)) throw std::invalid_argument("object size must be positive");
}

ObjectSpec default_object(std::size_t class_id) {
  static constexpr std::array<Color, 8> kColors{
      Color{0.85, 0.30, 0.25}, Color{0.25, 0.40, 0.85}, Color{0.30, 0.70, 0.30}, Color{0.90, 0.75, 0.20},
      Color{0.60, 0.30, 0.75}, Color{0.30, 0.75, 0.75}, Color{0.75, 0.45, 0.25}, Color{0.55, 0.55, 0.30}};
  if (class_id >= kColors.size()) throw std::out_of_range("shape class id");
  return ObjectSpec{class_id, kColors[class_id], 1.0};
}

std::vector<ObjectSpec> default_objects() {
  std::vector<ObjectSpec> out;
  for (std::size_t i = 0; i < kObjectClassCount; ++i) out.push_back(default_object(i));
  return out;
}

RenderedView render_view(const ObjectSpec& obj, const CameraPose& pose, Resolution res) {
  validate(obj);
  if (res.height == 0 || res.width == 0) throw std::invalid_argument("render: zero resolution");
  if (!(pose.radius > 0.0) || !(std::abs(pose.elevation) < kPi / 2)) {
    throw std::invalid_argument("render: camera radius must be positive and elevation inside (-pi/2, pi/2)");
  }

  const Solid solid = solid_for(obj.class_id);
  // Rendering happens in the object's unit frame: scale the camera instead.
  const double ce = std::cos(pose.elevation);
  const Vec3 eye = (pose.radius / obj.size) *
                   Vec3{ce * std::cos(pose.azimuth), ce * std::sin(pose.azimuth), std::sin(pose.elevation)};
  const Vec3 forward = normalize(Vec3{} - eye);
  const Vec3 right = normalize(cross(forward, Vec3{0, 0, 1}));
  const Vec3 up = cross(right, forward);
  const Vec3 light = normalize(Vec3{} - forward + 0.5 * up - 0.35 * right);

  const double half = std::tan(kFieldOfView / 2);
  const double aspect = static_cast<double>(res.width) / static_cast<double>(res.height);
  const std::array<double, 3> albedo{obj.color.r, obj.color.g, obj.color.b};

  std::vector<double> pixels(res.height * res.width * 3, kBackground);
  std::vector<std::uint8_t> mask(res.height * res.width, 0);
  for (std::size_t i = 0; i < res.height; ++i) {
    const double v = (1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(res.height)) * half;
    for (std::size_t j = 0; j < res.width; ++j) {
      const double u = (2.0 * (static_cast<double>(j) + 0.5) / static_cast<double>(res.width) - 1.0) * half * aspect;
      const Vec3 dir = normalize(forward + u * right + v * up);
      const auto hit = intersect(solid, eye, dir);
      if (!hit) continue;
      const double shade = kAmbient + (1.0 - kAmbient) * std::max(0.0, dot(hit->normal, light));
      const std::size_t px = i * res.width + j;
      mask[px] = 1;
      for (std::size_t k = 0; k < 3; ++k) pixels[px * 3 + k] = std::clamp(albedo[k] * shade, 0.0, 1.0);
    }
  }
  return {Tensor({res.height, res.width, 3}, std::move(pixels)), std::move(mask)};
}

Tensor ViewSet::images(const std::vector<std::size_t>& indices) const {
  std::vector<Tensor> items;
  items.reserve(indices.size());
  for (auto i : indices) items.push_back(views.at(i).image);
  return stack(items);
}

std::vector<CameraPose> base_poses(std::size_t n_angles) {
  std::vector<CameraPose> poses(n_angles);
  for (std::size_t i = 0; i < n_angles; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(n_angles);
    poses[i].azimuth = -kPi + 2.0 * kPi * (frac + 0.5 / static_cast<double>(n_angles));
    poses[i].elevation = kElevationLow + (kElevationHigh - kElevationLow) * static_cast<double>(i) /
                                             static_cast<double>(n_angles - 1);
    poses[i].radius = kBaseRadius;
  }
  return poses;
}

ViewSet render_views(const ObjectSpec& obj, std::size_t n_angles, Resolution res, std::uint64_t seed,
                     SplitRule split) {
  validate(obj);
  if (n_angles < 2) throw std::invalid_argument("render_views: need at least two angles");
  if (res.height == 0 || res.width == 0) throw std::invalid_argument("render_views: zero resolution");

  ViewSet set;
  set.object = obj;
  const auto poses = base_poses(n_angles);
  for (std::size_t i = 0; i < n_angles; ++i) {
    Rng rng(derive_seed(seed, {obj.class_id, i, 0x7015e}));
    const CameraPose pose = jittered(poses[i], rng);
    set.views.push_back({render_view(obj, pose, res).image, pose});
  }

  std::vector<std::size_t> order(n_angles);
  for (std::size_t i = 0; i < n_angles; ++i) order[i] = i;
  if (split == SplitRule::kSeededRandom) {
    Rng rng(derive_seed(seed, {obj.class_id, 0x5911}));
    shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = (n_angles + 1) / 2;
    set.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    set.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(set.train.begin(), set.train.end());
    std::sort(set.test.begin(), set.test.end());
  } else {
    for (auto i : order) (i % 2 == 0 ? set.train : set.test).push_back(i);
  }
  return set;
}

namespace {

Dataset collect(const std::vector<ViewSet>& objects, std::vector<std::size_t> ViewSet::*member) {
  std::vector<Tensor> images;
  LabelBatch labels;
  for (const auto& set : objects) {
    const auto indices = member ? set.*member : [&] {
      std::vector<std::size_t> all(set.views.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      return all;
    }();
    for (auto i : indices) {
      images.push_back(set.views[i].image);
      labels.push_back(set.object.class_id);
    }
  }
  return {stack(images), std::move(labels)};
}

}  // namespace

Dataset MultiViewDataset::all() const { return collect(objects, nullptr); }
Dataset MultiViewDataset::train() const { return collect(objects, &ViewSet::train); }
Dataset MultiViewDataset::test() const { return collect(objects, &ViewSet::test); }

MultiViewDataset build_dataset(const std::vector<ObjectSpec>& specs, std::size_t n_angles, Resolution res,
                               std::uint64_t seed, SplitRule split) {
  if (specs.empty()) throw std::invalid_argument("build_dataset: no objects");
  std::set<std::size_t> seen;
  for (const auto& s : specs) {
    if (!seen.insert(s.class_id).second) throw std::invalid_argument("build_dataset: duplicate class id");
  }
  MultiViewDataset out;
  for (const auto& s : specs) out.objects.push_back(render_views(s, n_angles, res, seed, split));
  return out;
}

Dataset render_training_corpus(const std::vector<ObjectSpec>& specs, std::size_t views_per_class,
                               Resolution res, std::uint64_t seed) {
  if (specs.empty() || views_per_class == 0) throw std::invalid_argument("training corpus: nothing to render");
  std::vector<Tensor> images;
  LabelBatch labels;
  for (const auto& spec : specs) {
    for (std::size_t i = 0; i < views_per_class; ++i) {
      Rng rng(derive_seed(seed, {0xc0de, spec.class_id, i}));
      CameraPose pose;
      pose.azimuth = uniform(rng, -kPi, kPi);
      pose.elevation = uniform(rng, -0.05, 0.8);
      pose.radius = kBaseRadius * uniform(rng, 1.0 - kPoseJitter, 1.0 + kPoseJitter);
      ObjectSpec varied = spec;
      varied.size = spec.size * uniform(rng, 0.9, 1.1);
      for (double* c : {&varied.color.r, &varied.color.g, &varied.color.b}) {
        *c = std::clamp(*c + uniform(rng, -0.08, 0.08), 0.0, 1.0);
      }
      images.push_back(render_view(varied, pose, res).image);
      labels.push_back(spec.class_id);
    }
  }
  return {stack(images), std::move(labels)};
}

void dump_views(const ViewSet& set, const std::filesystem::path& dir, const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::ofstream poses(dir / (stem + "_poses.txt"));
  if (!poses) throw std::runtime_error("cannot write pose file in " + dir.string());
  poses << "# index split azimuth elevation radius jitter_azimuth jitter_elevation jitter_radius\n"
        << std::setprecision(17);
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    const auto& v = set.views[i];
    const bool is_train = std::find(set.train.begin(), set.train.end(), i) != set.train.end();
    write_ppm(dir / (stem + "_" + std::to_string(i) + ".ppm"), v.image);
    poses << i << ' ' << (is_train ? "train" : "test") << ' ' << v.pose.azimuth << ' ' << v.pose.elevation << ' '
          << v.pose.radius << ' ' << v.pose.jitter[0] << ' ' << v.pose.jitter[1] << ' ' << v.pose.jitter[2]
          << '\n';
  }
}

}  // namespace mvadv
