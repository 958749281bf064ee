#pragma once

#include <array>
#include <span>
#include <string>

#include "bioanon/dataset.hpp"

namespace bioanon {

enum class BodyRegion { Legs, Head };

std::string to_string(BodyRegion region);
BodyRegion parse_region(const std::string& text);  // throws UnknownRegion

/// Marker indices that belong to a region of the synthetic walker template.
/// Datasets with a different marker layout supply their own table.
struct RegionTable {
  std::vector<int> head;
  std::vector<int> legs;

  static const RegionTable& standard();  // head 0-4, legs 40-51
  const std::vector<int>& points(BodyRegion region) const {
    return region == BodyRegion::Head ? head : legs;
  }
};

/// Adds scale * N(0, 1) to every coordinate.
GaitSequence anonymize_noise(const GaitSequence& seq, double scale, Seed seed);

/// Zeroes every marker outside `region`.
GaitSequence anonymize_keep(const GaitSequence& seq, BodyRegion region,
                            const RegionTable& table = RegionTable::standard());

/// Frame-to-frame differences; row t holds frame[t + 1] - frame[t] and the last
/// row is zero so the result keeps the 100 x 156 shape.
GaitSequence anonymize_motion_extraction(const GaitSequence& seq);

}  // namespace bioanon
