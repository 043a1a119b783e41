#include "streamseg/stream.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace streamseg::stream {

void SceneConfig::validate() const {
  if (rings < 1 || azimuth_steps < 4) throw InvalidConfigError("sensor grid too small");
  if (frames < 2) throw InvalidConfigError("a stream needs at least 2 frames");
  if (points_per_frame < 1) throw InvalidConfigError("points_per_frame must be >= 1");
  if (min_range <= 0.0 || max_range <= min_range)
    throw InvalidConfigError("range interval is empty");
  if (noise_sigma < 0.0 || point_dropout < 0.0 || point_dropout >= 1.0)
    throw InvalidConfigError("noise/dropout knobs out of range");
  if (road_half_width <= 0.0 || sidewalk_half_width <= road_half_width)
    throw InvalidConfigError("ground bands are inconsistent");
  if (vehicle_frequency < 0.0 || pedestrian_frequency < 0.0 ||
      wall_frequency < 0.0 || vegetation_frequency < 0.0)
    throw InvalidConfigError("class frequency multipliers must be non-negative");
  if (unlabelled_fraction < 0.0 || unlabelled_fraction >= 1.0)
    throw InvalidConfigError("unlabelled fraction out of range");
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  return d(rng);
}

int scaled_count(int base, double freq) {
  return std::max(0, static_cast<int>(std::lround(base * freq)));
}

}  // namespace

Generator::Generator(const SceneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(split_seed(cfg_.seed, 0xa11));
  for (double& p : wave_phase_) p = uniform(rng, 0.0, 2.0 * M_PI);

  const double x_lo = 5.0, x_hi = cfg_.world_length - 5.0;
  const int vehicles = scaled_count(cfg_.vehicle_count, cfg_.vehicle_frequency);
  for (int i = 0; i < vehicles; ++i) {
    Box b;
    b.center.x() = uniform(rng, x_lo, x_hi);
    double lane = uniform(rng, 0.8, cfg_.road_half_width - 1.0);
    b.center.y() = (uniform(rng, 0.0, 1.0) < 0.5 ? -lane : lane);
    b.half = {2.1, 0.9, 0.75};
    b.center.z() = b.half.z();
    b.yaw = (uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : M_PI) + uniform(rng, -0.08, 0.08);
    b.label = kVehicle;
    boxes_.push_back(b);
  }
  const int walls = scaled_count(cfg_.wall_count, cfg_.wall_frequency);
  for (int i = 0; i < walls; ++i) {
    Box b;
    b.center.x() = uniform(rng, x_lo, x_hi);
    double off = uniform(rng, cfg_.sidewalk_half_width + 1.0,
                         cfg_.sidewalk_half_width + 6.0);
    b.center.y() = (uniform(rng, 0.0, 1.0) < 0.5 ? -off : off);
    b.half = {uniform(rng, 3.0, 7.0), 0.25, uniform(rng, 1.2, 2.5)};
    b.center.z() = terrain_height(b.center.x(), b.center.y()) + b.half.z();
    b.yaw = uniform(rng, -0.15, 0.15);
    b.label = kManmade;
    boxes_.push_back(b);
  }
  const int pedestrians = scaled_count(cfg_.pedestrian_count, cfg_.pedestrian_frequency);
  for (int i = 0; i < pedestrians; ++i) {
    Cylinder c;
    c.center.x() = uniform(rng, x_lo, x_hi);
    double off = uniform(rng, cfg_.road_half_width + 0.6,
                         cfg_.sidewalk_half_width - 0.6);
    c.center.y() = (uniform(rng, 0.0, 1.0) < 0.5 ? -off : off);
    c.radius = uniform(rng, 0.25, 0.38);
    c.z0 = cfg_.sidewalk_height;
    c.z1 = cfg_.sidewalk_height + uniform(rng, 1.5, 1.85);
    c.label = kPedestrian;
    cylinders_.push_back(c);
  }
  const int vegetation = scaled_count(cfg_.vegetation_count, cfg_.vegetation_frequency);
  for (int i = 0; i < vegetation; ++i) {
    Sphere s;
    s.center.x() = uniform(rng, x_lo, x_hi);
    double off = uniform(rng, cfg_.sidewalk_half_width + 0.8, 24.0);
    s.center.y() = (uniform(rng, 0.0, 1.0) < 0.5 ? -off : off);
    s.radius = uniform(rng, 1.0, 2.3);
    s.center.z() = terrain_height(s.center.x(), s.center.y()) + 0.8 * s.radius;
    s.label = kVegetation;
    spheres_.push_back(s);
  }
}

double Generator::terrain_height(double x, double y) const {
  const double a = cfg_.terrain_amplitude;
  return a * (0.5 * std::sin(0.11 * x + wave_phase_[0]) *
                  std::cos(0.13 * y + wave_phase_[1]) +
              0.3 * std::sin(0.23 * x + wave_phase_[2]) +
              0.2 * std::cos(0.19 * y + wave_phase_[3]));
}

geom::RigidTransform Generator::pose_at(int t) const {
  geom::RigidTransform p;
  p.translation = {cfg_.speed * t, 0.0, cfg_.sensor_height};
  return p;
}

bool Generator::cast_ray(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                         double& t_hit, int& label) const {
  double best = cfg_.max_range;
  int best_label = -1;
  auto consider = [&](double t, int lbl) {
    if (t >= cfg_.min_range && t < best) {
      best = t;
      best_label = lbl;
    }
  };

  if (d.z() < -1e-9) {
    // road plane
    double t = -o.z() / d.z();
    double y = o.y() + t * d.y();
    if (std::abs(y) <= cfg_.road_half_width) consider(t, kRoad);
    // sidewalk band
    t = (cfg_.sidewalk_height - o.z()) / d.z();
    y = o.y() + t * d.y();
    if (std::abs(y) > cfg_.road_half_width && std::abs(y) <= cfg_.sidewalk_half_width)
      consider(t, kSidewalk);
    // terrain: refine against the undulating surface
    t = -o.z() / d.z();
    for (int it = 0; it < 3; ++it) {
      double x = o.x() + t * d.x();
      y = o.y() + t * d.y();
      t = (terrain_height(x, y) - o.z()) / d.z();
      if (t <= 0.0) break;
    }
    if (t > 0.0) {
      y = o.y() + t * d.y();
      if (std::abs(y) > cfg_.sidewalk_half_width) consider(t, kTerrain);
    }
  }

  for (const Box& b : boxes_) {
    const double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
    Eigen::Vector3d p = o - b.center;
    Eigen::Vector3d pl(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z());
    Eigen::Vector3d dl(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
    double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (int ax = 0; ax < 3 && ok; ++ax) {
      if (std::abs(dl[ax]) < 1e-12) {
        if (std::abs(pl[ax]) > b.half[ax]) ok = false;
        continue;
      }
      double t0 = (-b.half[ax] - pl[ax]) / dl[ax];
      double t1 = (b.half[ax] - pl[ax]) / dl[ax];
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
      if (tmin > tmax) ok = false;
    }
    if (ok && tmin > 1e-6) consider(tmin, b.label);
  }

  for (const Cylinder& cy : cylinders_) {
    double px = o.x() - cy.center.x(), py = o.y() - cy.center.y();
    double a = d.x() * d.x() + d.y() * d.y();
    if (a < 1e-12) continue;
    double bq = 2.0 * (px * d.x() + py * d.y());
    double cq = px * px + py * py - cy.radius * cy.radius;
    double disc = bq * bq - 4.0 * a * cq;
    if (disc < 0.0) continue;
    double sq = std::sqrt(disc);
    for (double t : {(-bq - sq) / (2.0 * a), (-bq + sq) / (2.0 * a)}) {
      if (t <= 1e-6) continue;
      double z = o.z() + t * d.z();
      if (z >= cy.z0 && z <= cy.z1) {
        consider(t, cy.label);
        break;
      }
    }
  }

  for (const Sphere& sp : spheres_) {
    Eigen::Vector3d p = o - sp.center;
    double bq = 2.0 * p.dot(d);
    double cq = p.squaredNorm() - sp.radius * sp.radius;
    double disc = bq * bq - 4.0 * cq;  // |d| = 1
    if (disc < 0.0) continue;
    double sq = std::sqrt(disc);
    double t = (-bq - sq) / 2.0;
    if (t <= 1e-6) t = (-bq + sq) / 2.0;
    if (t > 1e-6) consider(t, sp.label);
  }

  if (best_label < 0) return false;
  t_hit = best;
  label = best_label;
  return true;
}

geom::Frame Generator::frame_at(int t) const {
  if (t < 0 || t >= cfg_.frames)
    throw InvalidConfigError("frame index outside the stream");
  const geom::RigidTransform pose = pose_at(t);
  const Eigen::Vector3d origin = pose.translation;

  struct Hit {
    Eigen::Vector3d dir;
    double range;
    int label;
    std::uint64_t ray_id;
  };
  std::vector<Hit> hits;
  hits.reserve(static_cast<std::size_t>(cfg_.rings) * cfg_.azimuth_steps / 2);

  const double e0 = cfg_.elevation_min_deg * M_PI / 180.0;
  const double e1 = cfg_.elevation_max_deg * M_PI / 180.0;
  for (int r = 0; r < cfg_.rings; ++r) {
    const double elev =
        cfg_.rings == 1 ? e0 : e0 + (e1 - e0) * r / (cfg_.rings - 1);
    const double ce = std::cos(elev), se = std::sin(elev);
    for (int a = 0; a < cfg_.azimuth_steps; ++a) {
      const double az = 2.0 * M_PI * a / cfg_.azimuth_steps;
      Eigen::Vector3d dir(ce * std::cos(az), ce * std::sin(az), se);
      double range;
      int label;
      if (cast_ray(origin, dir, range, label)) {
        std::uint64_t ray_id =
            (static_cast<std::uint64_t>(r) << 32) | static_cast<std::uint32_t>(a);
        hits.push_back({dir, range, label, ray_id});
      }
    }
  }

  Rng rng(split_seed(cfg_.seed, 0x0f00 + static_cast<unsigned long long>(t)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Hit> kept;
  kept.reserve(hits.size());
  for (const Hit& h : hits) {
    const double u = unit(rng);  // always drawn, keeps draws aligned
    if (cfg_.point_dropout > 0.0 && u < cfg_.point_dropout) continue;
    kept.push_back(h);
  }
  if (kept.empty()) throw InvalidConfigError("sensor saw nothing; check the scene");

  std::vector<std::size_t> pick;
  if (static_cast<int>(kept.size()) <= cfg_.points_per_frame) {
    pick.resize(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) pick[i] = i;
  } else {
    // deterministic stride subsample, independent of rng
    pick.resize(static_cast<std::size_t>(cfg_.points_per_frame));
    const double stride =
        static_cast<double>(kept.size()) / cfg_.points_per_frame;
    for (int i = 0; i < cfg_.points_per_frame; ++i)
      pick[static_cast<std::size_t>(i)] =
          static_cast<std::size_t>(i * stride);
  }

  geom::Frame frame;
  frame.frame_id = t;
  frame.pose = pose;
  frame.points.resize(static_cast<Eigen::Index>(pick.size()), 3);
  frame.labels.resize(pick.size());
  for (std::size_t i = 0; i < pick.size(); ++i) {
    const Hit& h = kept[pick[i]];
    const double range = h.range + cfg_.noise_sigma * gauss(rng);
    frame.points.row(static_cast<Eigen::Index>(i)) = (range * h.dir).transpose();
    // unlabelled points follow a per-ray hash so static frames stay identical
    const double hv =
        static_cast<double>(fnv1a(&h.ray_id, sizeof(h.ray_id)) % 1000003) / 1000003.0;
    frame.labels[i] = hv < cfg_.unlabelled_fraction ? kUnlabelled : h.label;
  }
  return frame;
}

std::vector<geom::Frame> generate_stream(const SceneConfig& cfg) {
  Generator gen(cfg);
  std::vector<geom::Frame> out;
  out.reserve(static_cast<std::size_t>(cfg.frames));
  for (int t = 0; t < cfg.frames; ++t) out.push_back(gen.frame_at(t));
  return out;
}

CorrespondencePair make_correspondence_pair(const geom::Frame& frame,
                                            const geom::RigidTransform& a_to_b,
                                            double noise_sigma, Rng& rng) {
  if (frame.size() == 0) throw EmptyFrameError("make_correspondence_pair: empty frame");
  CorrespondencePair out;
  out.b = geom::apply_transform(a_to_b, frame);
  out.b_to_a = a_to_b.inverse();
  out.a = frame;
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> gauss(0.0, noise_sigma);
    for (Eigen::Index i = 0; i < out.a.points.rows(); ++i)
      for (int j = 0; j < 3; ++j) out.a.points(i, j) += gauss(rng);
  }
  return out;
}

// ---- class maps and KITTI-format IO ----

ClassMap ClassMap::identity(int max_id) {
  ClassMap m;
  for (int i = 0; i <= max_id; ++i) m.table[i] = i;
  return m;
}

int ClassMap::lookup(int raw, bool strict) const {
  auto it = table.find(raw);
  if (it != table.end()) return it->second;
  if (strict)
    throw UnknownLabelIdError("unmapped raw label id " + std::to_string(raw));
  return kUnlabelled;
}

ClassMap load_class_map(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MalformedFileError("class map: cannot open " + path);
  ClassMap map;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    long raw, mapped;
    if (!(ss >> raw)) continue;  // blank or comment-only line
    std::string trailing;
    if (!(ss >> mapped) || (ss >> trailing) ||
        mapped < 0 || mapped > geom::kClassCount)
      throw MalformedFileError("class map: bad line " + std::to_string(line_no) +
                               " in " + path);
    map.table[static_cast<int>(raw)] = static_cast<int>(mapped);
  }
  if (map.table.empty()) throw MalformedFileError("class map: no entries in " + path);
  return map;
}

std::vector<int> remap_labels(const std::vector<int>& raw, const ClassMap& map,
                              bool strict) {
  std::vector<int> out;
  out.reserve(raw.size());
  for (int r : raw) out.push_back(map.lookup(r, strict));
  return out;
}

void save_kitti_scan(const std::string& path, const geom::Frame& frame) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MalformedFileError("scan: cannot open " + path);
  for (Eigen::Index i = 0; i < frame.points.rows(); ++i) {
    float rec[4] = {static_cast<float>(frame.points(i, 0)),
                    static_cast<float>(frame.points(i, 1)),
                    static_cast<float>(frame.points(i, 2)), 0.0f};
    os.write(reinterpret_cast<const char*>(rec), sizeof(rec));
  }
  if (!os) throw MalformedFileError("scan: write failed for " + path);
}

void save_kitti_labels(const std::string& path, const std::vector<int>& labels) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MalformedFileError("labels: cannot open " + path);
  for (int l : labels) {
    std::uint32_t v = static_cast<std::uint32_t>(l) & 0xffffu;
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  if (!os) throw MalformedFileError("labels: write failed for " + path);
}

void save_poses(const std::string& path,
                const std::vector<geom::RigidTransform>& poses) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw MalformedFileError("poses: cannot open " + path);
  os.precision(17);
  for (const auto& p : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) os << p.rotation(r, c) << ' ';
      os << p.translation(r);
      os << (r == 2 ? '\n' : ' ');
    }
  }
  if (!os) throw MalformedFileError("poses: write failed for " + path);
}

geom::Frame load_kitti_frame(const std::string& scan_path,
                             const std::string& label_path, const ClassMap& map,
                             bool strict) {
  std::ifstream is(scan_path, std::ios::binary | std::ios::ate);
  if (!is) throw MalformedFileError("scan: cannot open " + scan_path);
  const std::streamoff bytes = is.tellg();
  if (bytes % 16 != 0)
    throw MalformedFileError("scan: size not a multiple of 16 bytes: " + scan_path);
  const Eigen::Index n = static_cast<Eigen::Index>(bytes / 16);
  is.seekg(0);
  geom::Frame frame;
  frame.points.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    float rec[4];
    is.read(reinterpret_cast<char*>(rec), sizeof(rec));
    if (!is) throw MalformedFileError("scan: short read in " + scan_path);
    frame.points(i, 0) = rec[0];
    frame.points(i, 1) = rec[1];
    frame.points(i, 2) = rec[2];
  }
  if (label_path.empty()) return frame;

  std::ifstream ls(label_path, std::ios::binary | std::ios::ate);
  if (!ls) throw MalformedFileError("labels: cannot open " + label_path);
  const std::streamoff lbytes = ls.tellg();
  if (lbytes % 4 != 0)
    throw MalformedFileError("labels: size not a multiple of 4 bytes: " + label_path);
  if (lbytes / 4 != n)
    throw LabelCountMismatchError("labels: " + std::to_string(lbytes / 4) +
                                  " entries for " + std::to_string(n) + " points");
  ls.seekg(0);
  frame.labels.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint32_t v;
    ls.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!ls) throw MalformedFileError("labels: short read in " + label_path);
    frame.labels[static_cast<std::size_t>(i)] =
        map.lookup(static_cast<int>(v & 0xffffu), strict);
  }
  return frame;
}

std::vector<geom::RigidTransform> load_poses(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MalformedFileError("poses: cannot open " + path);
  std::vector<geom::RigidTransform> out;
  std::string line;
  long line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v[12];
    for (int i = 0; i < 12; ++i)
      if (!(ss >> v[i]))
        throw MalformedLineError("poses: line " + std::to_string(line_no) +
                                 " has fewer than 12 fields");
    double extra;
    if (ss >> extra)
      throw MalformedLineError("poses: line " + std::to_string(line_no) +
                               " has more than 12 fields");
    geom::RigidTransform p;
    p.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
    p.translation << v[3], v[7], v[11];
    const double drift =
        (p.rotation.transpose() * p.rotation - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff();
    if (drift > 1e-6 || p.rotation.determinant() < 0.0) {
      warn("poses: re-orthonormalizing drifted rotation at line " +
           std::to_string(line_no));
      Eigen::JacobiSVD<Eigen::Matrix3d> svd(
          p.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
      Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
      if (r.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
      }
      p.rotation = r;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace streamseg::stream
