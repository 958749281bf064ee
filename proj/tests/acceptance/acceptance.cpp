// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bioanon/anonymizer.hpp"
#include "bioanon/harness.hpp"
#include "bioanon/image_anon.hpp"
#include "bioanon/selection.hpp"

using namespace bioanon;
namespace fs = std::filesystem;

namespace {

constexpr int kIdentities = 57;
constexpr int kSequences = 20;
constexpr Seed kDatasetSeed = 42;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const Dataset& gait() {
  static const Dataset ds = synthesize_gait(kIdentities, kSequences, kDatasetSeed);
  return ds;
}

RunConfig base_config(Seed seed) {
  RunConfig c;
  c.seed = seed;
  c.jobs = 1;
  return c;
}

// Mean accuracy per (anonymizer, recognizer, protocol, selection, N).
using Table = std::map<std::tuple<std::string, std::string, std::string, std::string, std::size_t>,
                       SummaryRow>;

Table run(const RunConfig& config) {
  Experiment ex(config, gait());
  auto outcome = ex.run_grid();
  for (const auto& e : outcome.errors)
    std::fprintf(stderr, "  cell error: %s %s %s: %s\n", e.anonymizer.c_str(),
                 e.recognizer.c_str(), e.protocol.c_str(), e.message.c_str());
  Table t;
  for (const auto& row : aggregate(outcome.results))
    t[{row.anonymizer, row.recognizer, row.protocol, row.selection, row.n_identities}] = row;
  return t;
}

double mean_of(const Table& t, const std::string& a, const std::string& r, const std::string& p,
               std::size_t n, const std::string& s = "random") {
  auto it = t.find({a, r, p, s, n});
  return it == t.end() ? std::nan("") : it->second.mean_accuracy;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// 1. Clear SVM+flatten baseline.
Verdict clear_baseline() {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  RunConfig c = base_config(0);
  c.anonymizers = {anon::None{}};
  c.recognizers = {recognizer_from_json("svm+flatten")};
  c.protocols = {protocol_from_json("clear")};
  auto t = run(c);
  const double acc = mean_of(t, "None", "svm+flatten", "clear", kIdentities);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  v.require(acc >= 0.90, "accuracy " + fmt("%.3f", acc) + " >= 0.90");
  v.require(secs <= 300.0, "runtime " + fmt("%.1f", secs) + " s <= 300 s");
  return v;
}

// H1 and H2 share one grid per master seed.
struct H1Numbers {
  std::vector<double> gap;            // Noise(3) parrot - naive
  std::vector<double> naive100_excess;  // Noise(100) naive - chance
  std::vector<double> best_percent_gap;  // Noise(3) max %-parrot - naive
};

const H1Numbers& h1_numbers() {
  static const H1Numbers numbers = [] {
    H1Numbers out;
    for (Seed seed = 0; seed < 5; ++seed) {
      RunConfig c = base_config(seed);
      c.anonymizers = {anon::Noise{3}, anon::Noise{100}};
      c.recognizers = {recognizer_from_json("svm+simple")};
      for (const char* p : {"naive", "parrot", "parrot_25", "parrot_50", "parrot_75"})
        c.protocols.push_back(protocol_from_json(p));
      auto t = run(c);
      const std::string r = "svm+simple";
      const double naive3 = mean_of(t, "Noise(3)", r, "naive", kIdentities);
      out.gap.push_back(mean_of(t, "Noise(3)", r, "parrot", kIdentities) - naive3);
      double best = -1.0;
      for (const char* p : {"parrot_25", "parrot_50", "parrot_75"})
        best = std::max(best, mean_of(t, "Noise(3)", r, p, kIdentities) - naive3);
      out.best_percent_gap.push_back(best);
      out.naive100_excess.push_back(mean_of(t, "Noise(100)", r, "naive", kIdentities) -
                                    1.0 / kIdentities);
      std::printf("  seed %llu: Noise(3) naive %.3f parrot %.3f best %%-parrot %.3f | "
                  "Noise(100) naive %.3f\n",
                  static_cast<unsigned long long>(seed), naive3, naive3 + out.gap.back(),
                  naive3 + best, out.naive100_excess.back() + 1.0 / kIdentities);
    }
    return out;
  }();
  return numbers;
}

// 2. Parrot beats naive on Noise(3); naive Noise(100) at chance.
Verdict h1_trend() {
  Verdict v;
  const auto& n = h1_numbers();
  const double gap = median(n.gap), excess = median(n.naive100_excess);
  v.require(gap >= 0.20, "median Noise(3) parrot - naive " + fmt("%.3f", gap) + " >= 0.20");
  v.require(excess <= 0.05,
            "median Noise(100) naive - chance " + fmt("%.3f", excess) + " <= 0.05");
  return v;
}

// 3. Some %-parrot beats naive on Noise(3).
Verdict h2_trend() {
  Verdict v;
  const double gap = median(h1_numbers().best_percent_gap);
  v.require(gap >= 0.10, "median best %-parrot - naive " + fmt("%.3f", gap) + " >= 0.10");
  return v;
}

// 4. No single recognizer wins everywhere.
Verdict h3_property() {
  Verdict v;
  RunConfig c = base_config(0);
  c.anonymizers = {anon::Noise{10}, anon::Keep{BodyRegion::Legs}, anon::MotionExtraction{}};
  for (const char* r : {"svm+flatten", "svm+simple", "knn+flatten"})
    c.recognizers.push_back(recognizer_from_json(r));
  c.protocols = {protocol_from_json("parrot")};
  auto t = run(c);
  std::vector<std::string> winners;
  for (const auto& a : c.anonymizers) {
    std::string best;
    double best_acc = -1.0;
    std::string line = "  " + anonymizer_name(a) + ":";
    for (const auto& r : c.recognizers) {
      const double acc = mean_of(t, anonymizer_name(a), r.name(), "parrot", kIdentities);
      line += " " + r.name() + " " + fmt("%.3f", acc);
      if (acc > best_acc) best_acc = acc, best = r.name();
    }
    std::printf("%s\n", line.c_str());
    winners.push_back(best);
  }
  std::sort(winners.begin(), winners.end());
  const auto distinct = std::unique(winners.begin(), winners.end()) - winners.begin();
  v.require(distinct >= 2, std::to_string(distinct) + " distinct winning recognizers >= 2");
  return v;
}

// 5. Accuracy vs number of identities.
Verdict h4_trend() {
  Verdict v;
  RunConfig c = base_config(0);
  c.anonymizers = {anon::Keep{BodyRegion::Legs}, anon::Noise{100}};
  c.recognizers = {recognizer_from_json("svm+flatten")};
  c.protocols = {protocol_from_json("parrot")};
  c.n_identities = halving_grid(kIdentities);
  c.repeats = 10;
  Experiment ex(c, gait());
  auto outcome = ex.run_grid();
  auto rows = aggregate(outcome.results);
  v.require(outcome.errors.empty(), "no cell errors");

  bool chance_exact = true;
  for (const auto& r : outcome.results)
    chance_exact = chance_exact && r.chance_level == 1.0 / static_cast<double>(r.n_identities);
  v.require(chance_exact, "chance level is 1/N");

  std::vector<double> keep;
  bool noise_ok = true;
  double worst_noise = -1.0;
  for (const auto& r : rows) {
    std::printf("  %-11s N=%2zu mean %.3f std %.3f chance %.3f\n", r.anonymizer.c_str(),
                r.n_identities, r.mean_accuracy, r.std_accuracy, r.chance_level);
    if (r.anonymizer == "Keep(legs)") keep.push_back(r.mean_accuracy);
    if (r.anonymizer == "Noise(100)") {
      worst_noise = std::max(worst_noise, r.mean_accuracy - r.chance_level);
      noise_ok = noise_ok && r.mean_accuracy <= r.chance_level + 0.05;
    }
  }
  bool monotone = keep.size() == c.n_identities.size();
  for (std::size_t i = 1; i < keep.size(); ++i) monotone = monotone && keep[i] >= keep[i - 1] - 0.05;
  v.require(monotone, "Keep(legs) non-decreasing as N shrinks (tolerance 0.05)");
  v.require(noise_ok, "Noise(100) within chance + 0.05 (worst excess " + fmt("%.3f", worst_noise) + ")");
  return v;
}

// 6. Classification selection vs random selection.
Verdict h5_trend() {
  Verdict v;
  RunConfig c = base_config(0);
  c.anonymizers = {anon::Noise{10}, anon::Keep{BodyRegion::Legs}, anon::MotionExtraction{}};
  c.recognizers = {recognizer_from_json("svm+flatten")};
  c.protocols = {protocol_from_json("parrot")};
  c.selections = {SelectionStrategy::Random, SelectionStrategy::Classification};
  c.n_identities = {28, 14};
  c.repeats = 10;
  auto t = run(c);
  int wins = 0;
  for (const auto& a : c.anonymizers) {
    bool ok = true;
    for (std::size_t n : c.n_identities) {
      const double cls = mean_of(t, anonymizer_name(a), "svm+flatten", "parrot", n, "classification");
      const double rnd = mean_of(t, anonymizer_name(a), "svm+flatten", "parrot", n, "random");
      std::printf("  %-16s N=%2zu classification %.3f random mean %.3f\n",
                  anonymizer_name(a).c_str(), n, cls, rnd);
      ok = ok && cls >= rnd;
    }
    wins += ok;
  }
  v.require(wins >= 2, std::to_string(wins) + " of 3 anonymizers favour Classification at N 14 and 28");
  return v;
}

// 7. Selection oracles.
using Point = std::array<double, 2>;

std::vector<std::string> oracle_spread(const std::vector<std::string>& ids,
                                       const std::vector<Point>& pts, std::size_t n) {
  auto dist = [](Point a, Point b) { return std::hypot(a[0] - b[0], a[1] - b[1]); };
  std::size_t ba = 0, bb = 1;
  for (std::size_t a = 0; a < pts.size(); ++a)
    for (std::size_t b = a + 1; b < pts.size(); ++b)
      if (dist(pts[a], pts[b]) > dist(pts[ba], pts[bb])) ba = a, bb = b;
  std::vector<std::size_t> chosen{ba, bb};
  while (chosen.size() < n) {
    Point avg{0, 0};
    for (auto i : chosen) avg[0] += pts[i][0] / chosen.size(), avg[1] += pts[i][1] / chosen.size();
    std::size_t best = pts.size();
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      if (best == pts.size() || dist(pts[i], avg) > dist(pts[best], avg)) best = i;
    }
    chosen.push_back(best);
  }
  std::vector<std::string> out;
  for (auto i : chosen) out.push_back(ids[i]);
  return out;
}

FeatureVector vec2(double x, double y) {
  FeatureVector v(2);
  v << x, y;
  return v;
}

Verdict selection_oracles() {
  Verdict v;
  int center_mismatch = 0, metadata_mismatch = 0, instances = 0;
  for (Seed seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<std::string> ids;
    for (int i = 0; i < 6; ++i) ids.push_back("id" + std::to_string(i));

    IdentityFeatures f;
    std::vector<Point> means;
    DatasetManifest manifest;
    std::vector<Point> attrs;
    for (const auto& id : ids) {
      Point m{0, 0};
      for (int j = 0; j < 3; ++j) {
        Point p{rng.uniform(-5, 5), rng.uniform(-5, 5)};
        f[id].push_back(vec2(p[0], p[1]));
        m[0] += p[0] / 3, m[1] += p[1] / 3;
      }
      means.push_back(m);
      Point a{std::round(rng.uniform(18, 80)), rng.uniform(150, 200)};
      attrs.push_back(a);
      manifest.identities.push_back({id, {{"age", a[0]}, {"height", a[1]}}, {}});
    }
    Point lo = attrs[0], hi = attrs[0];
    for (auto a : attrs)
      for (int j = 0; j < 2; ++j) lo[j] = std::min(lo[j], a[j]), hi[j] = std::max(hi[j], a[j]);
    std::vector<Point> norm;
    for (auto a : attrs) norm.push_back({(a[0] - lo[0]) / (hi[0] - lo[0]), (a[1] - lo[1]) / (hi[1] - lo[1])});

    for (std::size_t n = 2; n <= 6; ++n) {
      ++instances;
      center_mismatch += select_center(f, n) != oracle_spread(ids, means, n);
      metadata_mismatch += select_metadata(manifest, n) != oracle_spread(ids, norm, n);
    }
  }
  v.require(center_mismatch == 0, "select_center matches oracle on " + std::to_string(instances) +
                                      " instances (" + std::to_string(center_mismatch) + " mismatches)");
  v.require(metadata_mismatch == 0, "select_metadata matches oracle (" +
                                        std::to_string(metadata_mismatch) + " mismatches)");

  IdentityFeatures toy;
  toy["A"] = {vec2(0, 0), vec2(0, 2)};
  toy["B"] = {vec2(3, 1)};
  auto scores = compute_identity_scores(toy);
  v.require(std::abs(scores["A"].genuine - 1.0) <= 1e-9, "genuine " + fmt("%.12f", scores["A"].genuine));
  v.require(std::abs(scores["A"].imposter - 3.0) <= 1e-9, "imposter " + fmt("%.12f", scores["A"].imposter));
  return v;
}

// 8. Mechanism invariants.
Verdict mechanism_invariants() {
  Verdict v;
  Dataset faces = synthesize_faces(12, 8, 3);
  const auto& face = std::get<FaceImage>(faces.samples[0][0]);

  double lo = 1.0, hi = 0.0;
  for (Seed s = 0; s < 100; ++s) {
    auto out = dp_snow(face, 0.01, s);
    std::size_t replaced = 0;
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x)
        if (out.at(x, y, 0) != face.at(x, y, 0) || out.at(x, y, 1) != face.at(x, y, 1) ||
            out.at(x, y, 2) != face.at(x, y, 2))
          ++replaced;
    const double frac = static_cast<double>(replaced) / (224.0 * 224.0);
    lo = std::min(lo, frac);
    hi = std::max(hi, frac);
  }
  // A mid-gray source pixel would hide its own replacement.
  std::size_t gray = 0;
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x)
      gray += face.at(x, y, 0) == 127 && face.at(x, y, 1) == 127 && face.at(x, y, 2) == 127;
  v.require(gray == 0 && lo >= 0.005 && hi <= 0.015,
            "DP-Snow fraction in [" + fmt("%.4f", lo) + ", " + fmt("%.4f", hi) + "] over 100 seeds");

  bool pix_ok = true;
  for (int b : {1, 8, 12, 16, 224}) {
    auto out = dp_pix(face, INFINITY, b, 16, 1);
    for (int y0 = 0; y0 < 224; y0 += b)
      for (int x0 = 0; x0 < 224; x0 += b)
        for (int c = 0; c < 3; ++c) {
          const int y1 = std::min(224, y0 + b), x1 = std::min(224, x0 + b);
          double sum = 0;
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) sum += face.at(x, y, c);
          const auto want = static_cast<std::uint8_t>(std::floor(sum / ((y1 - y0) * (x1 - x0)) + 0.5));
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) pix_ok = pix_ok && out.at(x, y, c) == want;
        }
  }
  v.require(pix_ok, "DP-Pix with infinite epsilon equals block-mean pixelation");

  // Coordinates on a 1/1024 mm grid and integer offsets keep every sum exact,
  // so the comparison can be bitwise.
  bool motion_ok = true;
  for (const auto& s : gait().samples[0]) {
    GaitSequence seq = std::get<GaitSequence>(s);
    seq.frames = (seq.frames.array() * 1024.0).round() / 1024.0;
    GaitSequence moved = seq;
    for (int t = 0; t < kGaitFrames; ++t)
      for (int p = 0; p < kGaitPoints; ++p) {
        moved.at(t, p, 0) += 1500.0;
        moved.at(t, p, 1) -= 320.0;
        moved.at(t, p, 2) += 7.0;
      }
    motion_ok = motion_ok && anonymize_motion_extraction(seq) == anonymize_motion_extraction(moved);
  }
  v.require(motion_ok, "MotionExtraction translation invariance is exact");

  AnonymizerContext ctx{std::make_shared<const KSameBackground>(KSameBackground::from_dataset(faces))};
  bool shape_ok = true;
  for (AnonymizerSpec spec : std::vector<AnonymizerSpec>{
           anon::EyeMask{}, anon::GaussianBlur{}, anon::Krtio{}, anon::DpPix{}, anon::DpSnow{},
           anon::DpSamp{}, anon::KSamePixel{}}) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& in = std::get<FaceImage>(faces.samples[1][j]);
      auto out = std::get<FaceImage>(apply_anonymizer(spec, in, 7 + j, ctx));
      // 8-bit storage bounds every value to [0, 255]; the shape is what can break.
      shape_ok = shape_ok && out.same_shape(in) && out.pixels.size() == in.pixels.size();
    }
  }
  for (AnonymizerSpec spec : std::vector<AnonymizerSpec>{anon::Noise{3}, anon::Noise{100},
                                                         anon::Keep{BodyRegion::Legs},
                                                         anon::Keep{BodyRegion::Head},
                                                         anon::MotionExtraction{}}) {
    const auto& in = std::get<GaitSequence>(gait().samples[2][0]);
    auto out = std::get<GaitSequence>(apply_anonymizer(spec, in, 3, ctx));
    shape_ok = shape_ok && out.frames.rows() == in.frames.rows() &&
               out.frames.cols() == in.frames.cols() && out.frames.allFinite();
  }
  v.require(shape_ok, "every anonymizer keeps input shape and [0, 255] range");
  return v;
}

// 9. Byte-identical reruns.
std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / "bioanon-acceptance-determinism";
  fs::remove_all(root);
  generate_synthetic_gait(12, 8, 5, root / "data");
  RunConfig c;
  c.dataset = root / "data" / "manifest.json";
  c.anonymizers = {anon::Noise{3}, anon::Keep{BodyRegion::Legs}};
  c.recognizers = {recognizer_from_json("svm+flatten"), recognizer_from_json("knn+simple")};
  c.protocols = {protocol_from_json("naive"), protocol_from_json("parrot_50")};
  c.selections = {SelectionStrategy::Random, SelectionStrategy::Center};
  c.n_identities = halving_grid(12);
  c.repeats = 2;
  c.seed = 11;
  c.output = root / "first";
  c.jobs = 2;
  run_experiment(c);
  c.output = root / "second";
  c.jobs = 1;
  run_experiment(c);
  const std::string a = slurp(root / "first" / "results.csv");
  const std::string b = slurp(root / "second" / "results.csv");
  v.require(!a.empty() && a == b, "results.csv identical across reruns (" +
                                      std::to_string(std::count(a.begin(), a.end(), '\n')) + " lines)");
  fs::remove_all(root);
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"1 clear baseline", clear_baseline},
      {"2 H1 parrot vs naive", h1_trend},
      {"3 H2 percent parrot", h2_trend},
      {"4 H3 no single best recognizer", h3_property},
      {"5 H4 identity count sweep", h4_trend},
      {"6 H5 classification selection", h5_trend},
      {"7 selection oracles", selection_oracles},
      {"8 mechanism invariants", mechanism_invariants},
      {"9 determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += !v.pass;
    std::printf("%s criterion %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed,
              criteria.size());
  return failed == 0 ? 0 : 1;
}
