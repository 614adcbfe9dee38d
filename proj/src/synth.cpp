#include "rahand/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Geometry>
#include <nlohmann/json.hpp>

#include "rahand/error.hpp"
#include "rahand/preprocess.hpp"
#include "rahand/random.hpp"

namespace rahand {

namespace {

using Vec2 = Eigen::Vector2d;

constexpr double kDeg = 3.14159265358979323846 / 180.0;

// Marker colour shift per unit intensity.
constexpr double kMarkerR = 105.0, kMarkerG = -40.0, kMarkerB = -50.0;

struct Capsule {
  Vec2 a, b;
  double r;
};

struct Ellipse {
  Vec2 c;
  double ax, ay;  // semi-axes before rotation
  double angle;
};

struct Crease {
  Vec2 c, dir;  // dir runs along the finger
  double half_width;
};

struct Nail {
  Vec2 c, dir;
  double r;
};

// Hand layout in image pixels.
struct HandGeometry {
  Ellipse palm;
  std::vector<Capsule> capsules;
  std::vector<Crease> creases;
  std::vector<Nail> nails;
  std::array<Vec2, kNumJoints> joints;
  double skin[3];
};

Vec2 Dir(double degrees_from_up) {
  return {std::sin(degrees_from_up * kDeg), -std::cos(degrees_from_up * kDeg)};
}

int JointIndex(Finger f, JointLevel l) { return JointId::Make(f, l)->index(); }

// Patient-level geometry in the right-hand frame (thumb on the image left),
// then placed, mirrored for left hands, and scaled to the image.
HandGeometry PatientGeometry(std::uint64_t patient_seed, HandSide side, const SynthConfig& config) {
  Rng rng(patient_seed);
  const double scale = Uniform(rng, 0.92, 1.05);
  const double rot = Uniform(rng, -8.0, 8.0) * kDeg;
  const Vec2 shift(Uniform(rng, -0.03, 0.03), Uniform(rng, -0.03, 0.03));
  const double palm_w = Uniform(rng, 0.93, 1.07);
  double length[kNumFingers], splay[kNumFingers];
  for (int f = 0; f < kNumFingers; ++f) {
    length[f] = Uniform(rng, 0.92, 1.08);
    splay[f] = Uniform(rng, -3.0, 3.0);
  }
  double bend[kNumFingers][3];
  for (auto& b : bend) {
    for (double& v : b) v = Uniform(rng, -2.0, 2.0);
  }
  HandGeometry g;
  g.skin[0] = Uniform(rng, 138, 152) + config.background_clutter * Uniform(rng, -8, 20);
  g.skin[1] = Uniform(rng, 100, 115);
  g.skin[2] = Uniform(rng, 85, 100);

  const double u = std::min(config.image_width, config.image_height);
  const Vec2 center(0.5 * config.image_width, 0.60 * config.image_height);
  const Eigen::Matrix2d R = Eigen::Rotation2Dd(rot).toRotationMatrix();
  auto place = [&](const Vec2& q) {
    Vec2 p = center + u * (scale * (R * q) + shift);
    if (side == HandSide::kLeft) p.x() = config.image_width - 1 - p.x();
    return p;
  };
  auto place_dir = [&](const Vec2& d) {
    Vec2 v = R * d;
    if (side == HandSide::kLeft) v.x() = -v.x();
    return v;
  };
  const double k = u * scale;

  g.palm = {place(Vec2(0, 0)), 0.16 * palm_w * k, 0.17 * k, side == HandSide::kLeft ? -rot : rot};
  g.capsules.push_back({place(Vec2(0, 0.12)), place(Vec2(0, 0.60)), 0.10 * k});

  struct FingerShape {
    Finger finger;
    double x, y, angle, r;
    double seg[3];
  };
  const FingerShape shapes[] = {
      {Finger::kIndex, -0.105, -0.140, -8.0, 0.021, {0.105, 0.065, 0.050}},
      {Finger::kMiddle, -0.035, -0.155, -2.0, 0.022, {0.115, 0.072, 0.052}},
      {Finger::kRing, 0.035, -0.145, 4.0, 0.021, {0.108, 0.068, 0.050}},
      {Finger::kLittle, 0.105, -0.115, 10.0, 0.018, {0.085, 0.052, 0.043}},
  };
  const JointLevel levels[3] = {JointLevel::kMCP, JointLevel::kPIP, JointLevel::kDIP};
  for (const FingerShape& s : shapes) {
    const int f = static_cast<int>(s.finger);
    Vec2 q(s.x * palm_w, s.y);
    double angle = s.angle + splay[f];
    const double r = s.r * k;
    for (int seg = 0; seg < 3; ++seg) {
      g.joints[JointIndex(s.finger, levels[seg])] = place(q);
      angle += bend[f][seg];
      const Vec2 next = q + s.seg[seg] * length[f] * Dir(angle);
      g.capsules.push_back({place(q), place(next), r});
      if (seg > 0) g.creases.push_back({place(q), place_dir(Dir(angle)), r});
      q = next;
    }
    g.nails.push_back({place(q), place_dir(Dir(angle)), r});
  }

  // Thumb: carpometacarpal base, MCP, interphalangeal (PIP level), tip.
  {
    const int f = 0;
    Vec2 q(-0.12 * palm_w, 0.07);
    double angle = -50.0 + splay[f];
    const Vec2 mcp = q + 0.09 * length[f] * Dir(angle);
    g.capsules.push_back({place(q), place(mcp), 0.030 * k});
    g.joints[JointIndex(Finger::kThumb, JointLevel::kMCP)] = place(mcp);
    angle += 8.0 + bend[f][0];
    const Vec2 ip = mcp + 0.07 * length[f] * Dir(angle);
    g.capsules.push_back({place(mcp), place(ip), 0.025 * k});
    g.joints[JointIndex(Finger::kThumb, JointLevel::kPIP)] = place(ip);
    angle += 6.0 + bend[f][1];
    const Vec2 tip = ip + 0.055 * length[f] * Dir(angle);
    g.capsules.push_back({place(ip), place(tip), 0.024 * k});
    g.creases.push_back({place(ip), place_dir(Dir(angle)), 0.024 * k});
    g.nails.push_back({place(tip), place_dir(Dir(angle)), 0.024 * k});
  }
  return g;
}

double SegmentDistance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / std::max(ab.squaredNorm(), 1e-12), 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Planar float canvas.
struct Canvas {
  int w, h;
  std::vector<double> rgb;  // 3 * w * h, interleaved
  double* px(int x, int y) { return &rgb[3 * (static_cast<size_t>(y) * w + x)]; }
};

struct Box {
  int x0, y0, x1, y1;  // inclusive
};

Box Bounds(const Vec2& c, double r, int w, int h) {
  return {std::max(0, static_cast<int>(std::floor(c.x() - r))), std::max(0, static_cast<int>(std::floor(c.y() - r))),
          std::min(w - 1, static_cast<int>(std::ceil(c.x() + r))),
          std::min(h - 1, static_cast<int>(std::ceil(c.y() + r)))};
}

void AddTint(double* p, double amount) {
  p[0] += amount * kMarkerR;
  p[1] += amount * kMarkerG;
  p[2] += amount * kMarkerB;
}

}  // namespace

std::array<double, kNumJoints> SynthConfig::UniformPrevalence(double p) {
  std::array<double, kNumJoints> out;
  out.fill(p);
  return out;
}

void SynthConfig::Validate() const {
  if (n_patients < 1 || images_per_patient < 1) throw ConfigError("synth needs at least one patient and image");
  if (image_width < 32 || image_height < 32) throw ConfigError("synth images must be at least 32x32");
  for (int j = 0; j < kNumJoints; ++j) {
    if (!(prevalence[j] >= 0.0 && prevalence[j] <= 1.0)) {
      throw ConfigError("prevalence for " + JointId::FromIndex(j).Name() + " is outside [0, 1]");
    }
  }
  if (!(marker_intensity > 0.0 && marker_intensity <= 1.0)) throw ConfigError("marker_intensity must be in (0, 1]");
  if (marker_radius_px < 1 || 4 * marker_radius_px >= std::min(image_width, image_height)) {
    throw ConfigError("marker_radius_px must be positive and below min(image dimensions) / 4");
  }
  if (!(background_clutter >= 0.0 && background_clutter <= 1.0)) {
    throw ConfigError("background_clutter must be in [0, 1]");
  }
  if (!(landmark_jitter_px >= 0.0)) throw ConfigError("landmark_jitter_px must be non-negative");
  if (!(unlabeled_fraction >= 0.0 && unlabeled_fraction <= 1.0)) {
    throw ConfigError("unlabeled_fraction must be in [0, 1]");
  }
}

RenderedHand RenderHand(std::uint64_t patient_seed, std::uint64_t image_seed, HandSide side,
                        const std::array<int, kNumJoints>& labels, const SynthConfig& config) {
  config.Validate();
  const int W = config.image_width, H = config.image_height;
  const double clutter = config.background_clutter;
  const HandGeometry g = PatientGeometry(patient_seed, side, config);
  Rng rng(image_seed);

  RenderedHand out;
  // Detected landmarks: rounded base positions plus a small integer offset.
  std::vector<Point> offsets;
  const int reach = static_cast<int>(std::floor(config.landmark_jitter_px / 2));
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      if (4.0 * (dx * dx + dy * dy) <= config.landmark_jitter_px * config.landmark_jitter_px) {
        offsets.push_back({dx, dy});
      }
    }
  }
  for (int j = 0; j < kNumJoints; ++j) {
    const Point o = offsets[rng() % offsets.size()];
    out.landmarks[j] = {std::clamp(static_cast<int>(std::lround(g.joints[j].x())) + o.x, 0, W - 1),
                        std::clamp(static_cast<int>(std::lround(g.joints[j].y())) + o.y, 0, H - 1)};
  }

  // Silhouette depth: smallest normalized distance to any hand part.
  std::vector<double> depth(static_cast<size_t>(W) * H, std::numeric_limits<double>::infinity());
  {
    const Ellipse& e = g.palm;
    const double c = std::cos(e.angle), s = std::sin(e.angle);
    const Box b = Bounds(e.c, std::max(e.ax, e.ay), W, H);
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        const double dx = x - e.c.x(), dy = y - e.c.y();
        const double u = (c * dx + s * dy) / e.ax, v = (-s * dx + c * dy) / e.ay;
        double& d = depth[static_cast<size_t>(y) * W + x];
        d = std::min(d, std::sqrt(u * u + v * v));
      }
    }
  }
  for (const Capsule& cap : g.capsules) {
    const Box b1 = Bounds(cap.a, cap.r, W, H), b2 = Bounds(cap.b, cap.r, W, H);
    const Box b{std::min(b1.x0, b2.x0), std::min(b1.y0, b2.y0), std::max(b1.x1, b2.x1), std::max(b1.y1, b2.y1)};
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        double& d = depth[static_cast<size_t>(y) * W + x];
        d = std::min(d, SegmentDistance(Vec2(x, y), cap.a, cap.b) / cap.r);
      }
    }
  }
  out.mask = Image(W, H, 1);
  for (size_t i = 0; i < depth.size(); ++i) out.mask.pixels[i] = depth[i] <= 1.0 ? 255 : 0;
  auto on_hand = [&](int x, int y) { return depth[static_cast<size_t>(y) * W + x] <= 1.0; };

  // Background: vertical gradient plus clutter blobs, hand on top.
  Canvas cv{W, H, std::vector<double>(static_cast<size_t>(3) * W * H)};
  const double bg_top[3] = {Uniform(rng, 35, 55), Uniform(rng, 40, 60), Uniform(rng, 50, 75)};
  const double bg_fall = Uniform(rng, 0.0, 25.0);
  for (int y = 0; y < H; ++y) {
    const double t = static_cast<double>(y) / H;
    for (int x = 0; x < W; ++x) {
      double* p = cv.px(x, y);
      for (int c = 0; c < 3; ++c) p[c] = bg_top[c] + bg_fall * t;
    }
  }
  const int n_blobs = static_cast<int>(std::floor(12 * clutter + Uniform01(rng)));
  for (int i = 0; i < n_blobs; ++i) {
    const Vec2 c(Uniform(rng, 0, W), Uniform(rng, 0, H));
    const double r = Uniform(rng, 0.02, 0.08) * std::min(W, H);
    const double col[3] = {Uniform(rng, 20, 230), Uniform(rng, 20, 230), Uniform(rng, 20, 230)};
    const Box b = Bounds(c, r, W, H);
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        if ((Vec2(x, y) - c).norm() > r || on_hand(x, y)) continue;
        double* p = cv.px(x, y);
        for (int ch = 0; ch < 3; ++ch) p[ch] = col[ch];
      }
    }
  }

  // Skin with cylinder-like shading toward the silhouette edge.
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double d = depth[static_cast<size_t>(y) * W + x];
      if (d > 1.0) continue;
      const double shade = 1.0 - 0.22 * d * d;
      double* p = cv.px(x, y);
      for (int c = 0; c < 3; ++c) p[c] = g.skin[c] * shade;
    }
  }
  for (const Nail& n : g.nails) {
    const Vec2 c = n.c - 0.55 * n.r * n.dir;
    const Vec2 perp(-n.dir.y(), n.dir.x());
    const Box b = Bounds(c, n.r, W, H);
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        const Vec2 q = Vec2(x, y) - c;
        const double a = q.dot(n.dir) / (0.75 * n.r), bb = q.dot(perp) / (0.6 * n.r);
        if (a * a + bb * bb > 1.0 || !on_hand(x, y)) continue;
        double* p = cv.px(x, y);
        p[0] += 28;
        p[1] += 32;
        p[2] += 34;
      }
    }
  }
  for (const Crease& cr : g.creases) {
    const Vec2 perp(-cr.dir.y(), cr.dir.x());
    const Box b = Bounds(cr.c, cr.half_width, W, H);
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        const Vec2 q = Vec2(x, y) - cr.c;
        if (std::abs(q.dot(cr.dir)) > 0.75 || std::abs(q.dot(perp)) > cr.half_width || !on_hand(x, y)) continue;
        double* p = cv.px(x, y);
        for (int c = 0; c < 3; ++c) p[c] *= 0.86;
      }
    }
  }

  // On-hand distractors, kept clear of every joint.
  const double r_marker = config.marker_radius_px;
  const int n_spots = static_cast<int>(std::floor(10 * clutter + Uniform01(rng)));
  for (int i = 0; i < n_spots; ++i) {
    const double kind = Uniform01(rng);
    const double radius = Uniform(rng, 0.6, 1.5) * r_marker;
    const double strength = Uniform(rng, 0.5, 1.2);
    Vec2 c(-1, -1);
    for (int attempt = 0; attempt < 30; ++attempt) {
      const Capsule& cap = g.capsules[rng() % g.capsules.size()];
      const Vec2 cand = cap.a + Uniform01(rng) * (cap.b - cap.a) +
                        Vec2(Uniform(rng, -0.6, 0.6), Uniform(rng, -0.6, 0.6)) * cap.r;
      bool clear = cand.x() >= 0 && cand.y() >= 0 && cand.x() < W && cand.y() < H;
      for (int j = 0; j < kNumJoints && clear; ++j) {
        clear = (cand - g.joints[j]).norm() >= 2 * r_marker + radius + 2;
      }
      if (clear) {
        c = cand;
        break;
      }
    }
    if (c.x() < 0) continue;
    const Box b = Bounds(c, radius, W, H);
    for (int y = b.y0; y <= b.y1; ++y) {
      for (int x = b.x0; x <= b.x1; ++x) {
        if ((Vec2(x, y) - c).norm() > radius || !on_hand(x, y)) continue;
        double* p = cv.px(x, y);
        if (kind < 0.5) {
          AddTint(p, strength * config.marker_intensity);
        } else if (kind < 0.8) {
          for (int ch = 0; ch < 3; ++ch) p[ch] *= 1.0 - 0.2 * strength;
        } else {
          for (int ch = 0; ch < 3; ++ch) p[ch] += 20 * strength;
        }
      }
    }
  }

  // Markers: flat disks at the detected landmarks of positive active joints.
  const std::vector<JointId> active = ActiveJoints(config.joint_exclusions);
  const int rr = config.marker_radius_px * config.marker_radius_px;
  for (JointId j : active) {
    if (labels[j.index()] != 1) continue;
    const Point c = out.landmarks[j.index()];
    for (int y = std::max(0, c.y - config.marker_radius_px); y <= std::min(H - 1, c.y + config.marker_radius_px); ++y) {
      for (int x = std::max(0, c.x - config.marker_radius_px); x <= std::min(W - 1, c.x + config.marker_radius_px);
           ++x) {
        if ((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= rr) AddTint(cv.px(x, y), config.marker_intensity);
      }
    }
  }

  // Illumination and sensor noise, then quantize.
  const double gain = 1.0 + clutter * Uniform(rng, -0.15, 0.15);
  const double sigma = 2.0 + 6.0 * clutter;
  out.image = Image(W, H, 3);
  for (size_t i = 0; i < cv.rgb.size(); ++i) {
    const double v = cv.rgb[i] * gain + sigma * Normal(rng);
    out.image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

SynthRecord RenderRecord(const SynthConfig& config, int index) {
  config.Validate();
  const int total = config.n_patients * config.images_per_patient;
  if (index < 0 || index >= total) throw ConfigError("synth record index out of range");
  const int patient = index / config.images_per_patient;
  const int k = index % config.images_per_patient;
  const std::uint64_t patient_seed = DeriveSeed(DeriveSeed(config.seed, "patient"), patient);
  const std::uint64_t record_seed = DeriveSeed(DeriveSeed(config.seed, "record"), index);

  const int digits = std::max(3, static_cast<int>(std::to_string(config.n_patients - 1).size()));
  std::string pid = std::to_string(patient);
  pid = "P" + std::string(digits - pid.size(), '0') + pid;

  SynthRecord rec;
  HandImageRecord& r = rec.record;
  r.patient_id = pid;
  r.hand_side = (k / 2) % 2 == 0 ? HandSide::kRight : HandSide::kLeft;
  r.capture_week = 12 * (k % 2) + 24 * (k / 4);
  const std::string week = (r.capture_week < 10 ? "0" : "") + std::to_string(r.capture_week);
  const std::string stem = pid + "_" + (r.hand_side == HandSide::kRight ? "right" : "left") + "_w" + week;
  r.image_path = "images/" + stem + ".png";
  r.mask_path = "masks/" + stem + ".png";

  Rng label_rng(DeriveSeed(record_seed, "labels"));
  const std::vector<JointId> active = ActiveJoints(config.joint_exclusions);
  for (JointId j : active) rec.truth[j.index()] = Bernoulli(label_rng, config.prevalence[j.index()]) ? 1 : 0;
  for (JointId j : active) {
    const bool withheld = Bernoulli(label_rng, config.unlabeled_fraction);
    if (!withheld) r.labels[j.index()] = rec.truth[j.index()];
  }

  rec.hand = RenderHand(patient_seed, DeriveSeed(record_seed, "render"), r.hand_side, rec.truth, config);
  r.landmarks = rec.hand.landmarks;
  return rec;
}

DatasetManifest GenerateDataset(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.Validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (!ec) std::filesystem::create_directories(out_dir / "masks", ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());

  DatasetManifest manifest;
  manifest.joint_exclusions = config.joint_exclusions;
  manifest.base_dir = out_dir;
  std::ofstream ledger(out_dir / "ledger.jsonl");
  if (!ledger) throw IoError("cannot write '" + (out_dir / "ledger.jsonl").string() + "'");
  ledger << nlohmann::json{{"format", "rahand-synth-ledger"},
                           {"seed", config.seed},
                           {"marker_radius_px", config.marker_radius_px},
                           {"marker_intensity", config.marker_intensity}}
                .dump()
         << "\n";

  const std::vector<JointId> active = ActiveJoints(config.joint_exclusions);
  const int total = config.n_patients * config.images_per_patient;
  for (int i = 0; i < total; ++i) {
    SynthRecord rec = RenderRecord(config, i);
    WritePng(out_dir / rec.record.image_path, rec.hand.image);
    WritePng(out_dir / *rec.record.mask_path, rec.hand.mask);
    nlohmann::json labels = nlohmann::json::array(), markers = nlohmann::json::array();
    for (JointId j : active) {
      labels.push_back({j.index(), rec.truth[j.index()]});
      if (rec.truth[j.index()] == 1) {
        const Point p = rec.record.landmarks[j.index()];
        markers.push_back({j.index(), p.x, p.y, config.marker_radius_px});
      }
    }
    ledger << nlohmann::json{{"image_path", rec.record.image_path}, {"labels", labels}, {"markers", markers}}.dump()
           << "\n";
    manifest.records.push_back(std::move(rec.record));
  }
  if (!ledger) throw IoError("short write on ledger");
  SaveManifest(out_dir / "manifest.jsonl", manifest);
  return manifest;
}

std::vector<Image> GenerateCorpus(const SynthConfig& config) {
  config.Validate();
  std::vector<Image> corpus;
  const int total = config.n_patients * config.images_per_patient;
  corpus.reserve(total);
  for (int i = 0; i < total; ++i) {
    const SynthRecord rec = RenderRecord(config, i);
    corpus.push_back(ApplyMask(rec.hand.image, rec.hand.mask));
  }
  return corpus;
}

double MarkerContrast(const Image& image, const Image& mask, Point center, int radius) {
  double disk = 0, ring = 0;
  int n_disk = 0, n_ring = 0;
  const int outer = 2 * radius;
  for (int y = std::max(0, center.y - outer); y <= std::min(image.height - 1, center.y + outer); ++y) {
    for (int x = std::max(0, center.x - outer); x <= std::min(image.width - 1, center.x + outer); ++x) {
      const int d2 = (x - center.x) * (x - center.x) + (y - center.y) * (y - center.y);
      const double redness = image.at(x, y, 0) - 0.5 * (image.at(x, y, 1) + image.at(x, y, 2));
      if (d2 <= radius * radius) {
        disk += redness;
        ++n_disk;
      } else if (d2 >= (radius + 1) * (radius + 1) && d2 <= outer * outer && mask.at(x, y, 0) > 0) {
        ring += redness;
        ++n_ring;
      }
    }
  }
  if (n_disk == 0) return 0.0;
  const double baseline = n_ring > 0 ? ring / n_ring : 0.0;
  return (disk / n_disk - baseline) / 255.0;
}

bool DetectMarker(const Image& image, const Image& mask, Point center, const SynthConfig& config) {
  return MarkerContrast(image, mask, center, config.marker_radius_px) >= config.marker_intensity / 2;
}

}  // namespace rahand
