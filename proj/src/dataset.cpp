#include "bioanon/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "bioanon/error.hpp"

namespace bioanon {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Modality modality) {
  return modality == Modality::Face ? "face" : "gait";
}

Modality parse_modality(const std::string& text) {
  if (text == "face") return Modality::Face;
  if (text == "gait") return Modality::Gait;
  fail(ErrorKind::ParseError, "unknown modality '" + text + "'");
}

const IdentityRecord& DatasetManifest::identity(const IdentityId& id) const {
  for (const auto& rec : identities)
    if (rec.id == id) return rec;
  fail(ErrorKind::UnknownIdentity, id);
}

std::vector<IdentityId> DatasetManifest::identity_ids() const {
  std::vector<IdentityId> ids;
  ids.reserve(identities.size());
  for (const auto& rec : identities) ids.push_back(rec.id);
  return ids;
}

std::size_t Dataset::identity_index(const IdentityId& id) const {
  for (std::size_t i = 0; i < manifest.identities.size(); ++i)
    if (manifest.identities[i].id == id) return i;
  fail(ErrorKind::UnknownIdentity, id);
}

std::size_t Dataset::total_samples() const {
  std::size_t n = 0;
  for (const auto& s : samples) n += s.size();
  return n;
}

// ---------------------------------------------------------------------------
// Gait CSV

void validate_gait(const GaitSequence& seq, const std::string& where) {
  if (seq.frames.rows() != kGaitFrames || seq.frames.cols() != kGaitColumns) {
    fail(ErrorKind::InvariantViolation,
         where + ": expected 100x156 frames, got " + std::to_string(seq.frames.rows()) + "x" +
             std::to_string(seq.frames.cols()));
  }
  if (!seq.frames.allFinite()) fail(ErrorKind::InvariantViolation, where + ": non-finite value");
}

GaitSequence read_gait_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  GaitSequence seq;
  const char* p = text.data();
  const char* end = p + text.size();
  auto where = [&](int row, int col) {
    return path.string() + ":" + std::to_string(row + 1) + ":" + std::to_string(col + 1);
  };
  for (int row = 0; row < kGaitFrames; ++row) {
    for (int col = 0; col < kGaitColumns; ++col) {
      double value = 0.0;
      auto [next, ec] = std::from_chars(p, end, value);
      if (ec != std::errc()) fail(ErrorKind::ParseError, where(row, col) + ": expected a number");
      p = next;
      seq.frames(row, col) = value;
      char expected = col + 1 < kGaitColumns ? ',' : '\n';
      if (p < end && *p == '\r' && expected == '\n') ++p;
      if (p == end && expected == '\n' && row + 1 == kGaitFrames) break;
      if (p == end || *p != expected)
        fail(ErrorKind::ParseError, where(row, col) + ": expected '" +
                                        (expected == ',' ? std::string(",") : "newline") + "'");
      ++p;
    }
  }
  while (p < end && (*p == '\n' || *p == '\r')) ++p;
  if (p != end) fail(ErrorKind::ParseError, path.string() + ": trailing data after 100 rows");
  validate_gait(seq, path.string());
  return seq;
}

void write_gait_csv(const fs::path& path, const GaitSequence& seq) {
  validate_gait(seq);
  std::string out;
  out.reserve(static_cast<std::size_t>(kGaitFrames) * kGaitColumns * 12);
  char buf[64];
  for (int row = 0; row < kGaitFrames; ++row) {
    for (int col = 0; col < kGaitColumns; ++col) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), seq.frames(row, col));
      out.append(buf, ptr);
      out.push_back(col + 1 < kGaitColumns ? ',' : '\n');
    }
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) fail(ErrorKind::IoError, "cannot write " + path.string());
  file << out;
}

// ---------------------------------------------------------------------------
// Manifest

json manifest_to_json(const DatasetManifest& manifest) {
  json ids = json::array();
  for (const auto& rec : manifest.identities) {
    json meta = json::object();
    for (const auto& [k, v] : rec.metadata) meta[k] = v;
    ids.push_back({{"id", rec.id}, {"metadata", meta}, {"samples", rec.samples}});
  }
  return {{"schema_version", manifest.schema_version},
          {"modality", to_string(manifest.modality)},
          {"identities", ids}};
}

namespace {

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) fail(ErrorKind::ParseError, where + ": missing field '" + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::ParseError, where + "." + key + ": " + e.what());
  }
}

}  // namespace

DatasetManifest manifest_from_json(const json& doc) {
  if (!doc.is_object()) fail(ErrorKind::ParseError, "manifest: expected an object");
  DatasetManifest m;
  m.schema_version = require<int>(doc, "schema_version", "manifest");
  if (m.schema_version != DatasetManifest::kSchemaVersion)
    fail(ErrorKind::ParseError,
         "manifest.schema_version: unsupported version " + std::to_string(m.schema_version));
  m.modality = parse_modality(require<std::string>(doc, "modality", "manifest"));
  auto ids = require<json>(doc, "identities", "manifest");
  if (!ids.is_array()) fail(ErrorKind::ParseError, "manifest.identities: expected an array");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::string where = "manifest.identities[" + std::to_string(i) + "]";
    const json& item = ids[i];
    if (!item.is_object()) fail(ErrorKind::ParseError, where + ": expected an object");
    IdentityRecord rec;
    rec.id = require<std::string>(item, "id", where);
    if (auto it = item.find("metadata"); it != item.end()) {
      if (!it->is_object()) fail(ErrorKind::ParseError, where + ".metadata: expected an object");
      for (const auto& [k, v] : it->items()) {
        if (!v.is_number()) fail(ErrorKind::ParseError, where + ".metadata." + k + ": not a number");
        rec.metadata[k] = v.get<double>();
      }
    }
    rec.samples = require<std::vector<std::string>>(item, "samples", where);
    m.identities.push_back(std::move(rec));
  }
  validate_manifest(m);
  return m;
}

void validate_manifest(const DatasetManifest& m) {
  std::set<IdentityId> seen;
  const std::map<std::string, double>* first_meta = nullptr;
  for (const auto& rec : m.identities) {
    auto violation = [&](const std::string& rule) {
      fail(ErrorKind::InvariantViolation, "identity '" + rec.id + "': " + rule);
    };
    if (!seen.insert(rec.id).second) violation("duplicate identity id");
    if (rec.samples.empty()) violation("sample list is empty");
    if (rec.samples.size() < 2) violation("min 2 samples");
    if (m.modality == Modality::Face) {
      if (rec.samples.size() < 8) violation("min 8 samples");
      if (rec.samples.size() > 20) violation("max 20 samples");
    }
    if (first_meta == nullptr) {
      first_meta = &rec.metadata;
    } else {
      bool same = first_meta->size() == rec.metadata.size() &&
                  std::equal(first_meta->begin(), first_meta->end(), rec.metadata.begin(),
                             [](const auto& a, const auto& b) { return a.first == b.first; });
      if (!same) violation("metadata keys differ from the first identity");
    }
  }
}

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::ParseError,
         path.string() + " at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

Sample read_sample(const fs::path& path, Modality modality) {
  if (!fs::exists(path)) fail(ErrorKind::MissingFile, path.string());
  if (modality == Modality::Gait) return read_gait_csv(path);
  Image img = read_png(path);
  if (img.width != kCanonicalFaceSize || img.height != kCanonicalFaceSize)
    fail(ErrorKind::InvariantViolation, path.string() + ": face images must be 224x224");
  return img;
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path) {
  DatasetManifest m = manifest_from_json(read_json_file(path));
  fs::path root = path.parent_path();
  for (const auto& rec : m.identities)
    for (const auto& rel : rec.samples) (void)read_sample(root / rel, m.modality);
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << manifest_to_json(manifest).dump(2) << '\n';
}

Dataset load_dataset(const fs::path& manifest_path) {
  Dataset ds;
  ds.manifest = manifest_from_json(read_json_file(manifest_path));
  fs::path root = manifest_path.parent_path();
  for (const auto& rec : ds.manifest.identities) {
    auto& list = ds.samples.emplace_back();
    for (const auto& rel : rec.samples) list.push_back(read_sample(root / rel, ds.modality()));
  }
  return ds;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  fs::create_directories(dir);
  const auto& ids = dataset.manifest.identities;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = 0; j < ids[i].samples.size(); ++j) {
      fs::path target = dir / ids[i].samples[j];
      fs::create_directories(target.parent_path());
      std::visit(
          [&](const auto& s) {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, GaitSequence>)
              write_gait_csv(target, s);
            else
              write_png(target, s);
          },
          dataset.samples[i][j]);
    }
  }
  write_manifest(dir / "manifest.json", dataset.manifest);
}

std::uint64_t dataset_hash(const Dataset& dataset) {
  std::uint64_t h = hash_tag(manifest_to_json(dataset.manifest).dump());
  auto feed = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& list : dataset.samples) {
    for (const auto& s : list) {
      if (const auto* g = std::get_if<GaitSequence>(&s))
        feed(g->frames.data(), sizeof(double) * static_cast<std::size_t>(g->frames.size()));
      else
        feed(std::get<FaceImage>(s).pixels.data(), std::get<FaceImage>(s).pixels.size());
    }
  }
  return mix64(h);
}

// ---------------------------------------------------------------------------
// Splitting

std::size_t train_count(std::size_t n, double train_fraction) {
  auto count = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 0.5));
  count = std::max<std::size_t>(count, 1);
  if (n >= 1) count = std::min(count, n - 1);
  return count;
}

SplitResult split(const DatasetManifest& manifest, const std::vector<IdentityId>& identity_ids,
                  double train_fraction, Seed seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorKind::InvalidArgument, "train_fraction must be in (0, 1)");
  SplitResult result;
  for (const auto& id : identity_ids) {
    const IdentityRecord& rec = manifest.identity(id);
    std::size_t n = rec.samples.size();
    if (n < 2)
      fail(ErrorKind::DegenerateSplit, "identity '" + id + "' has fewer than 2 samples");
    Rng rng(derive_seed(seed, "split", id));
    std::vector<std::size_t> order = rng.permutation(n);
    std::size_t n_train = train_count(n, train_fraction);
    for (std::size_t k = 0; k < n; ++k)
      (k < n_train ? result.train : result.test).push_back({id, order[k]});
  }
  return result;
}

}  // namespace bioanon
