#include "bioanon/gait_anon.hpp"

#include "bioanon/error.hpp"

namespace bioanon {

std::string to_string(BodyRegion region) { return region == BodyRegion::Legs ? "legs" : "head"; }

BodyRegion parse_region(const std::string& text) {
  if (text == "legs") return BodyRegion::Legs;
  if (text == "head") return BodyRegion::Head;
  fail(ErrorKind::UnknownRegion, "'" + text + "' (expected legs or head)");
}

const RegionTable& RegionTable::standard() {
  static const RegionTable table = [] {
    RegionTable t;
    for (int k = 0; k <= 4; ++k) t.head.push_back(k);
    for (int k = 40; k <= 51; ++k) t.legs.push_back(k);
    return t;
  }();
  return table;
}

GaitSequence anonymize_noise(const GaitSequence& seq, double scale, Seed seed) {
  if (!seq.frames.allFinite()) fail(ErrorKind::InvalidArgument, "non-finite input sequence");
  Rng rng(seed);
  GaitSequence out = seq;
  for (Eigen::Index r = 0; r < out.frames.rows(); ++r)
    for (Eigen::Index c = 0; c < out.frames.cols(); ++c) out.frames(r, c) += scale * rng.normal();
  return out;
}

GaitSequence anonymize_keep(const GaitSequence& seq, BodyRegion region, const RegionTable& table) {
  GaitSequence out;
  out.frames = PoseMatrix::Zero(seq.frames.rows(), seq.frames.cols());
  for (int point : table.points(region)) {
    if ((point + 1) * 3 > seq.frames.cols())
      fail(ErrorKind::InvalidArgument, "region table references marker " + std::to_string(point));
    out.frames.middleCols(point * 3, 3) = seq.frames.middleCols(point * 3, 3);
  }
  return out;
}

GaitSequence anonymize_motion_extraction(const GaitSequence& seq) {
  const Eigen::Index n = seq.frames.rows();
  if (n < 2) fail(ErrorKind::TooFewFrames, "motion extraction needs at least 2 frames");
  GaitSequence out;
  out.frames = PoseMatrix::Zero(n, seq.frames.cols());
  out.frames.topRows(n - 1) = seq.frames.bottomRows(n - 1) - seq.frames.topRows(n - 1);
  return out;
}

}  // namespace bioanon
