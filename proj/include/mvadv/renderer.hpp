#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvadv/classifier.hpp"
#include "mvadv/tensor.hpp"

namespace mvadv {

/// Parametric solids. The first five are the attacked object classes; the
/// remaining ids are distractor classes that only widen the label space.
enum class ShapeClass : std::size_t {
  kSphere = 0,
  kCube = 1,
  kCone = 2,
  kPyramid = 3,
  kCylinder = 4,
  kEllipsoid = 5,
  kSlab = 6,
  kFrustum = 7,
};

inline constexpr std::size_t kObjectClassCount = 5;
inline constexpr std::size_t kMaxDistractorClasses = 3;

std::string_view shape_name(std::size_t class_id);
/// Accepts a shape name ("cone") or its object alias ("shovel-analog").
std::optional<std::size_t> parse_object_name(std::string_view name);
/// Alias naming the real-world object a shape stands in for.
std::string_view object_alias(std::size_t class_id);

struct Color {
  double r = 0.0, g = 0.0, b = 0.0;
};

struct ObjectSpec {
  std::size_t class_id = 0;
  Color color;
  double size = 1.0;
};

/// Validates the class id and colour range; throws std::invalid_argument.
void validate(const ObjectSpec& obj);

/// Default appearance of the five attacked objects (and distractors).
ObjectSpec default_object(std::size_t class_id);
std::vector<ObjectSpec> default_objects();

struct CameraPose {
  double azimuth = 0.0;    // radians
  double elevation = 0.0;  // radians, inside (-pi/2, pi/2)
  double radius = 1.0;     // in object-size units
  std::array<double, 3> jitter{};  // realised relative deviation per coordinate
};

struct Resolution {
  std::size_t height = 64;
  std::size_t width = 64;
};

struct RenderedView {
  Tensor image;                    // H x W x 3 in [0, 1]
  std::vector<std::uint8_t> mask;  // 1 where the ray hit the object
};

inline constexpr double kBackground = 0.8;
inline constexpr double kAmbient = 0.2;
inline constexpr double kPoseJitter = 0.15;

/// Ray-casts one object from one camera. Lighting is Lambertian from a light
/// fixed in the camera frame, plus a constant ambient term.
RenderedView render_view(const ObjectSpec& obj, const CameraPose& pose, Resolution res);

enum class SplitRule { kEvenOdd, kSeededRandom };

struct View {
  Tensor image;
  CameraPose pose;
};

struct ViewSet {
  ObjectSpec object;
  std::vector<View> views;
  std::vector<std::size_t> train;  // indices into views
  std::vector<std::size_t> test;

  Tensor images(const std::vector<std::size_t>& indices) const;
  Tensor train_images() const { return images(train); }
  Tensor test_images() const { return images(test); }
};

/// Base poses of a view ring: azimuths evenly spaced over the circle,
/// elevations evenly spanning a band above the equator.
std::vector<CameraPose> base_poses(std::size_t n_angles);

/// Renders `n_angles` jittered views of `obj` and splits them into train
/// and test halves. Deterministic in `seed`.
ViewSet render_views(const ObjectSpec& obj, std::size_t n_angles, Resolution res, std::uint64_t seed,
                     SplitRule split = SplitRule::kEvenOdd);

/// Every view of every object with its class label; per-object splits kept.
struct MultiViewDataset {
  std::vector<ViewSet> objects;

  Dataset all() const;
  Dataset train() const;
  Dataset test() const;
};

MultiViewDataset build_dataset(const std::vector<ObjectSpec>& specs, std::size_t n_angles, Resolution res,
                               std::uint64_t seed, SplitRule split = SplitRule::kEvenOdd);

/// Classifier training corpus: uniformly random camera directions with
/// mild size and colour variation. Independent of the build_dataset views.
Dataset render_training_corpus(const std::vector<ObjectSpec>& specs, std::size_t views_per_class,
                               Resolution res, std::uint64_t seed);

/// Writes each view as <stem>_<index>.ppm plus <stem>_poses.txt.
void dump_views(const ViewSet& set, const std::filesystem::path& dir, const std::string& stem);

}  // namespace mvadv
