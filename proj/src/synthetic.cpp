#include <cmath>
#include <cstdio>
#include <numbers>

#include "bioanon/dataset.hpp"
#include "bioanon/error.hpp"

namespace bioanon {

namespace fs = std::filesystem;

namespace {

enum class Segment { Head, Torso, Arm, Leg };

Segment segment_of(int point) {
  if (point < 5) return Segment::Head;
  if (point < 20) return Segment::Torso;
  if (point < 40) return Segment::Arm;
  return Segment::Leg;
}

// +1 for the left body side, -1 for the right, 0 on the midline.
int side_of(int point) {
  if (point >= 20 && point < 30) return 1;
  if (point >= 30 && point < 40) return -1;
  if (point >= 40 && point < 46) return 1;
  if (point >= 46) return -1;
  return 0;
}

std::array<Eigen::Vector3d, kGaitPoints> build_template() {
  std::array<Eigen::Vector3d, kGaitPoints> t;
  // Head cluster: x forward, y to the left, z up.
  t[0] = {0, 0, 1700};
  t[1] = {90, 60, 1620};
  t[2] = {90, -60, 1620};
  t[3] = {-90, 60, 1620};
  t[4] = {-90, -60, 1620};
  // Torso, spine and pelvis.
  const double torso[15][3] = {
      {-60, 0, 1450},  {-80, 0, 1200},  {40, 0, 1420},    {80, 0, 1250},    {0, 180, 1430},
      {0, -180, 1430}, {80, 120, 950},  {80, -120, 950},  {-80, 50, 980},   {-80, -50, 980},
      {100, 0, 1050},  {70, 100, 1300}, {70, -100, 1300}, {-70, 100, 1300}, {-70, -100, 1300}};
  for (int i = 0; i < 15; ++i) t[5 + i] = {torso[i][0], torso[i][1], torso[i][2]};
  // Arms: ten markers per side.
  const double arm[10][3] = {{0, 200, 1300}, {0, 220, 1130}, {0, 170, 1130}, {10, 215, 1000},
                             {20, 210, 880}, {20, 170, 880}, {30, 200, 800}, {40, 200, 720},
                             {-50, 170, 1400}, {50, 195, 1250}};
  for (int i = 0; i < 10; ++i) {
    t[20 + i] = {arm[i][0], arm[i][1], arm[i][2]};
    t[30 + i] = {arm[i][0], -arm[i][1], arm[i][2]};
  }
  // Legs: six markers per side.
  const double leg[6][3] = {{30, 130, 700}, {20, 140, 500}, {20, 70, 500},
                            {30, 110, 300}, {0, 110, 80},   {150, 110, 30}};
  for (int i = 0; i < 6; ++i) {
    t[40 + i] = {leg[i][0], leg[i][1], leg[i][2]};
    t[46 + i] = {leg[i][0], -leg[i][1], leg[i][2]};
  }
  return t;
}

struct WalkerIdentity {
  std::array<Eigen::Vector3d, kGaitPoints> base;
  std::array<Eigen::Vector3d, kGaitPoints> amplitude;
  std::array<Eigen::Vector3d, kGaitPoints> phase;
  std::array<Eigen::Vector3d, kGaitPoints> harmonic;  // second-harmonic amplitude
  std::array<Eigen::Vector3d, kGaitPoints> harmonic_phase;
  double frequency = 1.0;
};

WalkerIdentity draw_walker(Rng& rng, const GaitGeneratorParams& p) {
  WalkerIdentity w;
  const auto& tmpl = gait_template();
  w.frequency = rng.uniform(p.frequency_min, p.frequency_max);
  const double base_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int k = 0; k < kGaitPoints; ++k) {
    bool limb = segment_of(k) == Segment::Arm || segment_of(k) == Segment::Leg;
    // Legs and the opposite arm swing together.
    double side_phase = 0.0;
    if (side_of(k) != 0) {
      bool leg = segment_of(k) == Segment::Leg;
      bool in_phase = (side_of(k) > 0) == leg;
      side_phase = in_phase ? 0.0 : std::numbers::pi;
    }
    for (int a = 0; a < 3; ++a) {
      w.base[k][a] = tmpl[k][a] + rng.normal(0.0, p.identity_offset_mm);
      w.amplitude[k][a] = limb ? rng.uniform(p.limb_amplitude_min_mm, p.limb_amplitude_max_mm)
                               : rng.uniform(0.0, p.torso_amplitude_max_mm);
      w.phase[k][a] = base_phase + side_phase + rng.normal(0.0, 0.3);
      w.harmonic[k][a] = rng.uniform(0.0, limb ? p.harmonic_amplitude_max_mm
                                               : 0.1 * p.harmonic_amplitude_max_mm);
      w.harmonic_phase[k][a] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  return w;
}

// An identity is a draw from the walker distribution pulled toward one shared
// population walker: spread 1 keeps the draw, spread 0 makes everyone alike.
WalkerIdentity make_walker(Seed seed, int identity, const GaitGeneratorParams& p) {
  Rng pop_rng(derive_seed(seed, "gait-population"));
  const WalkerIdentity pop = draw_walker(pop_rng, p);
  Rng rng(derive_seed(seed, "gait-identity", {static_cast<std::uint64_t>(identity)}));
  WalkerIdentity w = draw_walker(rng, p);
  const double s = p.identity_spread;
  const double hs = p.harmonic_spread;
  auto blend = [s](double shared, double own) { return shared + s * (own - shared); };
  w.frequency = blend(pop.frequency, w.frequency);
  for (int k = 0; k < kGaitPoints; ++k) {
    for (int a = 0; a < 3; ++a) {
      w.base[k][a] = blend(pop.base[k][a], w.base[k][a]);
      w.amplitude[k][a] = blend(pop.amplitude[k][a], w.amplitude[k][a]);
      // Wrap the phase difference so blending takes the short way round.
      double d = std::remainder(w.phase[k][a] - pop.phase[k][a], 2.0 * std::numbers::pi);
      w.phase[k][a] = pop.phase[k][a] + s * d;
      w.harmonic[k][a] = pop.harmonic[k][a] + hs * (w.harmonic[k][a] - pop.harmonic[k][a]);
      d = std::remainder(w.harmonic_phase[k][a] - pop.harmonic_phase[k][a], 2.0 * std::numbers::pi);
      w.harmonic_phase[k][a] = pop.harmonic_phase[k][a] + hs * d;
    }
  }
  return w;
}

GaitSequence render_walk(const WalkerIdentity& w, Seed seed, int identity, int sequence,
                         const GaitGeneratorParams& p) {
  Rng rng(derive_seed(seed, "gait-sample",
                      {static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(sequence)}));
  const double phase_shift = rng.normal(0.0, p.phase_jitter_rad);
  const double amp_scale = 1.0 + rng.normal(0.0, p.amplitude_jitter);
  Eigen::Vector3d shift(rng.normal(0.0, p.translation_jitter_mm),
                        rng.normal(0.0, p.translation_jitter_mm), 0.0);
  // Marker placement differs a little from session to session.
  std::array<Eigen::Vector3d, kGaitPoints> placement;
  for (auto& m : placement)
    for (int a = 0; a < 3; ++a) m[a] = rng.normal(0.0, p.marker_jitter_mm);
  GaitSequence seq;
  for (int t = 0; t < kGaitFrames; ++t) {
    const double angle = 2.0 * std::numbers::pi * w.frequency * t / kGaitFrames + phase_shift;
    for (int k = 0; k < kGaitPoints; ++k) {
      for (int a = 0; a < 3; ++a) {
        double v = w.base[k][a] + placement[k][a] + shift[a] +
                   amp_scale * w.amplitude[k][a] * std::sin(angle + w.phase[k][a]) +
                   amp_scale * w.harmonic[k][a] * std::sin(2.0 * angle + w.harmonic_phase[k][a]) +
                   rng.normal(0.0, p.observation_noise_mm);
        // Stored at micrometer resolution so the CSV text stays short.
        seq.at(t, k, a) = std::round(v * 1000.0) / 1000.0;
      }
    }
  }
  return seq;
}

std::string padded(const char* prefix, int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, value);
  return buf;
}

void attach_metadata(IdentityRecord& rec, Seed seed, int identity) {
  Rng rng(derive_seed(seed, "metadata", {static_cast<std::uint64_t>(identity)}));
  rec.metadata["age"] = std::round(rng.uniform(18.0, 80.0));
  rec.metadata["sex"] = rng.bernoulli(0.5) ? 1.0 : 0.0;
}

// Procedural face: identity-specific layout and colors.
struct FaceIdentity {
  std::array<double, 3> bg_a, bg_b;
  double bg_angle;
  std::array<double, 3> skin;
  double face_cx, face_cy, face_rx, face_ry;
  double eye_dx, eye_y, eye_r;
  std::array<double, 3> eye_color;
  double nose_y, nose_w, nose_h;
  std::array<double, 3> nose_color;
  double mouth_y, mouth_w, mouth_h;
  std::array<double, 3> mouth_color;
};

std::array<double, 3> random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

FaceIdentity make_face(Seed seed, int identity) {
  Rng rng(derive_seed(seed, "face-identity", {static_cast<std::uint64_t>(identity)}));
  FaceIdentity f;
  f.bg_a = random_color(rng, 0, 255);
  f.bg_b = random_color(rng, 0, 255);
  f.bg_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  f.skin = random_color(rng, 90, 230);
  f.face_cx = 112 + rng.uniform(-8, 8);
  f.face_cy = 118 + rng.uniform(-8, 8);
  f.face_rx = rng.uniform(70, 92);
  f.face_ry = rng.uniform(90, 106);
  f.eye_dx = rng.uniform(26, 44);
  f.eye_y = rng.uniform(80, 100);  // around the 40% eye line
  f.eye_r = rng.uniform(8, 16);
  f.eye_color = random_color(rng, 0, 160);
  f.nose_y = rng.uniform(105, 125);
  f.nose_w = rng.uniform(10, 26);
  f.nose_h = rng.uniform(18, 34);
  f.nose_color = random_color(rng, 60, 200);
  f.mouth_y = rng.uniform(150, 172);
  f.mouth_w = rng.uniform(24, 60);
  f.mouth_h = rng.uniform(5, 14);
  f.mouth_color = random_color(rng, 40, 220);
  return f;
}

std::array<double, 3> face_color_at(const FaceIdentity& f, double x, double y) {
  const double s = kCanonicalFaceSize;
  double g = ((x - s / 2) * std::cos(f.bg_angle) + (y - s / 2) * std::sin(f.bg_angle)) / s + 0.5;
  g = std::clamp(g, 0.0, 1.0);
  std::array<double, 3> c;
  for (int i = 0; i < 3; ++i) c[i] = f.bg_a[i] * (1 - g) + f.bg_b[i] * g;

  auto sq = [](double v) { return v * v; };
  if (sq((x - f.face_cx) / f.face_rx) + sq((y - f.face_cy) / f.face_ry) <= 1.0) {
    // Skin with a gentle vertical shading gradient.
    double shade = 0.85 + 0.3 * (y - (f.face_cy - f.face_ry)) / (2 * f.face_ry);
    for (int i = 0; i < 3; ++i) c[i] = f.skin[i] * shade;
  }
  for (int side : {-1, 1}) {
    if (sq(x - (f.face_cx + side * f.eye_dx)) + sq(y - f.eye_y) <= sq(f.eye_r)) c = f.eye_color;
  }
  // Nose: downward-widening wedge.
  double dy = y - f.nose_y;
  if (dy >= 0 && dy <= f.nose_h && std::abs(x - f.face_cx) <= f.nose_w * dy / f.nose_h / 2)
    c = f.nose_color;
  if (std::abs(y - f.mouth_y) <= f.mouth_h / 2 && std::abs(x - f.face_cx) <= f.mouth_w / 2)
    c = f.mouth_color;
  return c;
}

FaceImage render_face(const FaceIdentity& f, Seed seed, int identity, int index,
                      const FaceGeneratorParams& p) {
  Rng rng(derive_seed(seed, "face-sample",
                      {static_cast<std::uint64_t>(identity), static_cast<std::uint64_t>(index)}));
  const auto span = static_cast<std::uint64_t>(2 * p.max_shift_px + 1);
  const int dx = static_cast<int>(rng.below(span)) - p.max_shift_px;
  const int dy = static_cast<int>(rng.below(span)) - p.max_shift_px;
  const double brightness = 1.0 + rng.uniform(-p.brightness_jitter, p.brightness_jitter);
  FaceImage img(kCanonicalFaceSize, kCanonicalFaceSize);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      auto c = face_color_at(f, x - dx + 0.5, y - dy + 0.5);
      for (int ch = 0; ch < 3; ++ch)
        img.at(x, y, ch) = clamp_to_byte(c[ch] * brightness + rng.normal(0.0, p.pixel_noise));
    }
  }
  return img;
}

void check_counts(int n_identities, int n_samples, int min_samples, int max_samples) {
  if (n_identities < 2) fail(ErrorKind::InvalidCount, "need at least 2 identities");
  if (n_samples < min_samples || n_samples > max_samples) {
    fail(ErrorKind::InvalidCount, "samples per identity must be in [" +
                                      std::to_string(min_samples) + ", " +
                                      std::to_string(max_samples) + "]");
  }
}

}  // namespace

const std::array<Eigen::Vector3d, kGaitPoints>& gait_template() {
  static const auto tmpl = build_template();
  return tmpl;
}

Dataset synthesize_gait(int n_identities, int n_sequences, Seed seed,
                        const GaitGeneratorParams& params) {
  check_counts(n_identities, n_sequences, 2, 1 << 20);
  Dataset ds;
  ds.manifest.modality = Modality::Gait;
  for (int i = 0; i < n_identities; ++i) {
    IdentityRecord rec;
    rec.id = padded("walker_", i, 3);
    attach_metadata(rec, seed, i);
    WalkerIdentity walker = make_walker(seed, i, params);
    auto& list = ds.samples.emplace_back();
    for (int j = 0; j < n_sequences; ++j) {
      rec.samples.push_back(rec.id + "/" + padded("seq_", j, 2) + ".csv");
      list.emplace_back(render_walk(walker, seed, i, j, params));
    }
    ds.manifest.identities.push_back(std::move(rec));
  }
  return ds;
}

Dataset synthesize_faces(int n_identities, int n_images, Seed seed,
                         const FaceGeneratorParams& params) {
  check_counts(n_identities, n_images, 8, 20);
  Dataset ds;
  ds.manifest.modality = Modality::Face;
  for (int i = 0; i < n_identities; ++i) {
    IdentityRecord rec;
    rec.id = padded("face_", i, 4);
    attach_metadata(rec, seed, i);
    FaceIdentity face = make_face(seed, i);
    auto& list = ds.samples.emplace_back();
    for (int j = 0; j < n_images; ++j) {
      rec.samples.push_back(rec.id + "/" + padded("img_", j, 2) + ".png");
      list.emplace_back(render_face(face, seed, i, j, params));
    }
    ds.manifest.identities.push_back(std::move(rec));
  }
  return ds;
}

DatasetManifest generate_synthetic_gait(int n_identities, int n_sequences, Seed seed,
                                        const fs::path& out_dir,
                                        const GaitGeneratorParams& params) {
  Dataset ds = synthesize_gait(n_identities, n_sequences, seed, params);
  write_dataset(out_dir, ds);
  return ds.manifest;
}

DatasetManifest generate_synthetic_faces(int n_identities, int n_images, Seed seed,
                                         const fs::path& out_dir,
                                         const FaceGeneratorParams& params) {
  Dataset ds = synthesize_faces(n_identities, n_images, seed, params);
  write_dataset(out_dir, ds);
  return ds.manifest;
}

}  // namespace bioanon
