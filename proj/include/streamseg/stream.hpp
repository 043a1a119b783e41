#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "streamseg/geom.hpp"

namespace streamseg::stream {

// Semantic class ids shared with the generator and the bundled class maps.
enum ClassId : int {
  kUnlabelled = 0,
  kVehicle = 1,
  kPedestrian = 2,
  kRoad = 3,
  kSidewalk = 4,
  kTerrain = 5,
  kManmade = 6,
  kVegetation = 7,
};

struct SceneConfig {
  // sensor
  int rings = 64;
  int azimuth_steps = 512;
  double elevation_min_deg = -24.0;
  double elevation_max_deg = 4.0;
  double min_range = 2.0;
  double max_range = 70.0;
  double sensor_height = 1.8;
  int points_per_frame = 1024;
  // stream
  int frames = 200;
  double speed = 1.0;  // meters per frame along +x
  unsigned long long seed = 0;
  // world layout
  double road_half_width = 4.0;
  double sidewalk_half_width = 7.0;  // sidewalk band: road..this
  double sidewalk_height = 0.15;
  double terrain_amplitude = 0.35;
  double world_length = 320.0;
  int vehicle_count = 7;
  int pedestrian_count = 5;
  int wall_count = 10;
  int vegetation_count = 14;
  double unlabelled_fraction = 0.02;
  // domain-shift knobs
  double noise_sigma = 0.0;    // range noise, meters
  double point_dropout = 0.0;  // fraction of returns discarded
  double vehicle_frequency = 1.0;
  double pedestrian_frequency = 1.0;
  double wall_frequency = 1.0;
  double vegetation_frequency = 1.0;

  void validate() const;  // throws InvalidConfig
};

// Deterministic procedural stream: a static world sampled by a ring-patterned
// range sensor moving along +x. Frames carry labels and sensor-to-world poses.
class Generator {
 public:
  explicit Generator(const SceneConfig& cfg);

  const SceneConfig& config() const { return cfg_; }
  int frame_count() const { return cfg_.frames; }
  geom::RigidTransform pose_at(int t) const;
  geom::Frame frame_at(int t) const;  // frames are independent; any order

 private:
  struct Box {  // yawed box: vehicles and walls
    Eigen::Vector3d center;
    Eigen::Vector3d half;
    double yaw;
    int label;
  };
  struct Cylinder {
    Eigen::Vector2d center;
    double radius, z0, z1;
    int label;
  };
  struct Sphere {
    Eigen::Vector3d center;
    double radius;
    int label;
  };
  double terrain_height(double x, double y) const;
  bool cast_ray(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                double& t_hit, int& label) const;

  SceneConfig cfg_;
  std::vector<Box> boxes_;
  std::vector<Cylinder> cylinders_;
  std::vector<Sphere> spheres_;
  double wave_phase_[4];  // terrain undulation phases drawn from the seed
};

std::vector<geom::Frame> generate_stream(const SceneConfig& cfg);

// Two views of the same underlying points: `a` is the reference frame
// (optionally noised), `b` holds identical world points expressed in another
// sensor frame, so ground-truth correspondence is (i, i) and `b_to_a`
// realigns them exactly when sigma is 0.
struct CorrespondencePair {
  geom::Frame a;
  geom::Frame b;
  geom::RigidTransform b_to_a;
};
CorrespondencePair make_correspondence_pair(const geom::Frame& frame,
                                            const geom::RigidTransform& a_to_b,
                                            double noise_sigma, Rng& rng);

// ---- KITTI-format containers ----

struct ClassMap {
  std::unordered_map<int, int> table;  // raw id -> 0..7

  static ClassMap identity(int max_id = 7);
  // strict: unknown raw id throws UnknownLabelId; otherwise maps to 0.
  int lookup(int raw, bool strict = true) const;
};

ClassMap load_class_map(const std::string& path);
std::vector<int> remap_labels(const std::vector<int>& raw, const ClassMap& map,
                              bool strict = true);

// scan: packed float32 LE records (x, y, z, intensity); intensity written as 0
void save_kitti_scan(const std::string& path, const geom::Frame& frame);
// labels: packed uint32 LE, semantic id in the low 16 bits
void save_kitti_labels(const std::string& path, const std::vector<int>& labels);
// poses: one row-major 3x4 [R|t] per line
void save_poses(const std::string& path,
                const std::vector<geom::RigidTransform>& poses);

geom::Frame load_kitti_frame(const std::string& scan_path,
                             const std::string& label_path,  // "" = unlabeled
                             const ClassMap& map, bool strict = true);
std::vector<geom::RigidTransform> load_poses(const std::string& path);

}  // namespace streamseg::stream
