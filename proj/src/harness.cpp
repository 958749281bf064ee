#include "bioanon/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace bioanon {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Protocols and recognizers

std::string ProtocolSpec::name() const {
  switch (kind) {
    case ProtocolKind::Clear: return "clear";
    case ProtocolKind::Naive: return "naive";
    case ProtocolKind::Parrot: return "parrot";
    case ProtocolKind::PercentParrot: {
      return "parrot_" + std::to_string(static_cast<int>(std::lround(anon_fraction * 100.0)));
    }
  }
  return "?";
}

void validate_protocol(const ProtocolSpec& spec) {
  const bool percent = spec.kind == ProtocolKind::PercentParrot;
  if (percent && !(spec.anon_fraction > 0.0 && spec.anon_fraction < 1.0))
    fail(ErrorKind::InvalidArgument, "percent-parrot fraction must be in (0, 1)");
  if (!percent && spec.anon_fraction != 0.0)
    fail(ErrorKind::InvalidArgument, "anon_fraction is only valid for percent-parrot");
}

ProtocolSpec protocol_from_json(const nlohmann::json& doc) {
  ProtocolSpec spec;
  try {
    std::string kind = doc.is_string() ? doc.get<std::string>() : doc.at("kind").get<std::string>();
    if (kind.rfind("parrot_", 0) == 0) {
      spec.kind = ProtocolKind::PercentParrot;
      spec.anon_fraction = std::stod(kind.substr(7)) / 100.0;
    } else if (kind == "clear") {
      spec.kind = ProtocolKind::Clear;
    } else if (kind == "naive") {
      spec.kind = ProtocolKind::Naive;
    } else if (kind == "parrot") {
      spec.kind = ProtocolKind::Parrot;
    } else if (kind == "percent_parrot") {
      spec.kind = ProtocolKind::PercentParrot;
    } else {
      fail(ErrorKind::ParseError, "unknown protocol '" + kind + "'");
    }
    if (doc.is_object()) {
      if (doc.contains("fraction")) spec.anon_fraction = doc.at("fraction").get<double>();
      if (doc.contains("pretrain_on_anonymized"))
        spec.pretrain_on_anonymized = doc.at("pretrain_on_anonymized").get<bool>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, "bad protocol " + doc.dump() + ": " + e.what());
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::ParseError, "bad protocol " + doc.dump());
  }
  validate_protocol(spec);
  return spec;
}

nlohmann::json protocol_to_json(const ProtocolSpec& spec) {
  nlohmann::json doc;
  switch (spec.kind) {
    case ProtocolKind::Clear: doc["kind"] = "clear"; break;
    case ProtocolKind::Naive: doc["kind"] = "naive"; break;
    case ProtocolKind::Parrot: doc["kind"] = "parrot"; break;
    case ProtocolKind::PercentParrot:
      doc["kind"] = "percent_parrot";
      doc["fraction"] = spec.anon_fraction;
      break;
  }
  doc["pretrain_on_anonymized"] = spec.pretrain_on_anonymized;
  return doc;
}

std::string to_string(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Flatten: return "flatten";
    case FeatureKind::Simple: return "simple";
    case FeatureKind::FacePca: return "pca";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& text) {
  if (text == "flatten") return FeatureKind::Flatten;
  if (text == "simple") return FeatureKind::Simple;
  if (text == "pca") return FeatureKind::FacePca;
  fail(ErrorKind::ParseError, "unknown feature kind '" + text + "'");
}

std::string RecognizerSpec::name() const { return to_string(classifier) + "+" + to_string(features); }

RecognizerSpec recognizer_from_json(const nlohmann::json& doc) {
  RecognizerSpec spec;
  try {
    if (doc.is_string()) {
      const auto text = doc.get<std::string>();
      const auto plus = text.find('+');
      if (plus == std::string::npos)
        fail(ErrorKind::ParseError, "recognizer must look like 'svm+flatten', got '" + text + "'");
      spec.classifier = parse_classifier(text.substr(0, plus));
      spec.features = parse_feature_kind(text.substr(plus + 1));
    } else {
      spec.classifier = parse_classifier(doc.at("classifier").get<std::string>());
      spec.features = parse_feature_kind(doc.at("features").get<std::string>());
      if (doc.contains("k")) spec.knn_k = doc.at("k").get<int>();
      if (doc.contains("n_trees")) spec.n_trees = doc.at("n_trees").get<int>();
      if (doc.contains("pca_components")) spec.pca_components = doc.at("pca_components").get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, "bad recognizer " + doc.dump() + ": " + e.what());
  }
  if (spec.knn_k < 1 || spec.n_trees < 1 || spec.pca_components < 0)
    fail(ErrorKind::InvalidArgument, "bad recognizer parameters in " + doc.dump());
  return spec;
}

nlohmann::json recognizer_to_json(const RecognizerSpec& spec) {
  nlohmann::json doc = {{"classifier", to_string(spec.classifier)},
                        {"features", to_string(spec.features)}};
  if (spec.classifier == ClassifierKind::Knn) doc["k"] = spec.knn_k;
  if (spec.classifier == ClassifierKind::RandomForest) doc["n_trees"] = spec.n_trees;
  if (spec.features == FeatureKind::FacePca) doc["pca_components"] = spec.pca_components;
  return doc;
}

std::vector<std::size_t> halving_grid(std::size_t n_identities) {
  std::vector<std::size_t> grid;
  if (n_identities < 3) {
    grid.push_back(n_identities);
    return grid;
  }
  for (std::size_t n = n_identities; n > 3; n /= 2) grid.push_back(n);
  grid.push_back(3);
  return grid;
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

const std::set<std::string> kConfigKeys = {
    "dataset",  "background", "anonymizers",    "recognizers",        "protocols",
    "selections", "n_identities", "repeats",    "seed",               "train_fraction",
    "selection_on_clear", "cache_anonymized", "output", "jobs"};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& doc, const fs::path& base_dir) {
  if (!doc.is_object()) fail(ErrorKind::ParseError, "configuration must be a JSON object");
  for (const auto& [key, value] : doc.items())
    if (!kConfigKeys.count(key)) fail(ErrorKind::ParseError, "unknown configuration key '" + key + "'");
  RunConfig c;
  try {
    if (!doc.contains("dataset")) fail(ErrorKind::ParseError, "configuration needs \"dataset\"");
    c.dataset = resolve(base_dir, doc.at("dataset").get<std::string>());
    if (doc.contains("background") && !doc.at("background").is_null())
      c.background = resolve(base_dir, doc.at("background").get<std::string>());
    for (const auto& a : doc.value("anonymizers", nlohmann::json::array()))
      c.anonymizers.push_back(anonymizer_from_json(a));
    for (const auto& r : doc.value("recognizers", nlohmann::json::array()))
      c.recognizers.push_back(recognizer_from_json(r));
    for (const auto& p : doc.value("protocols", nlohmann::json::array()))
      c.protocols.push_back(protocol_from_json(p));
    if (doc.contains("selections")) {
      c.selections.clear();
      for (const auto& s : doc.at("selections")) c.selections.push_back(parse_selection(s.get<std::string>()));
    }
    if (doc.contains("n_identities")) {
      const auto& n = doc.at("n_identities");
      if (n.is_string()) {
        const auto rule = n.get<std::string>();
        if (rule == "halving") {
          std::ifstream in(c.dataset);
          if (!in) fail(ErrorKind::MissingFile, c.dataset.string() + " not found");
          c.n_identities = halving_grid(manifest_from_json(nlohmann::json::parse(in)).identities.size());
        } else if (rule != "all") {
          fail(ErrorKind::ParseError, "n_identities must be a list, \"all\" or \"halving\"");
        }
      } else {
        c.n_identities = n.get<std::vector<std::size_t>>();
      }
    }
    c.repeats = doc.value("repeats", c.repeats);
    c.seed = doc.value("seed", c.seed);
    c.train_fraction = doc.value("train_fraction", c.train_fraction);
    c.selection_on_clear = doc.value("selection_on_clear", c.selection_on_clear);
    c.cache_anonymized = doc.value("cache_anonymized", c.cache_anonymized);
    if (doc.contains("output")) c.output = resolve(base_dir, doc.at("output").get<std::string>());
    c.jobs = doc.value("jobs", c.jobs);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, std::string("bad configuration: ") + e.what());
  }
  validate_config(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, path.string() + " not found");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::ParseError, path.string() + ": " + e.what());
  }
  return config_from_json(doc, path.parent_path());
}

nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json doc;
  doc["dataset"] = c.dataset.string();
  doc["background"] = c.background ? nlohmann::json(c.background->string()) : nlohmann::json();
  doc["anonymizers"] = nlohmann::json::array();
  for (const auto& a : c.anonymizers) doc["anonymizers"].push_back(anonymizer_to_json(a));
  doc["recognizers"] = nlohmann::json::array();
  for (const auto& r : c.recognizers) doc["recognizers"].push_back(recognizer_to_json(r));
  doc["protocols"] = nlohmann::json::array();
  for (const auto& p : c.protocols) doc["protocols"].push_back(protocol_to_json(p));
  doc["selections"] = nlohmann::json::array();
  for (auto s : c.selections) doc["selections"].push_back(to_string(s));
  doc["n_identities"] = c.n_identities.empty() ? nlohmann::json("all") : nlohmann::json(c.n_identities);
  doc["repeats"] = c.repeats;
  doc["seed"] = c.seed;
  doc["train_fraction"] = c.train_fraction;
  doc["selection_on_clear"] = c.selection_on_clear;
  doc["cache_anonymized"] = c.cache_anonymized;
  doc["output"] = c.output.string();
  doc["jobs"] = c.jobs;
  return doc;
}

void validate_config(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidArgument, "configuration: " + what);
  };
  require(!c.anonymizers.empty(), "no anonymizers");
  require(!c.recognizers.empty(), "no recognizers");
  require(!c.protocols.empty(), "no protocols");
  require(!c.selections.empty(), "no selection strategies");
  require(c.repeats >= 1, "repeats must be >= 1");
  require(c.train_fraction > 0.0 && c.train_fraction < 1.0, "train_fraction must be in (0, 1)");
  for (auto n : c.n_identities) require(n >= 2, "n_identities must be >= 2");
  for (const auto& a : c.anonymizers) validate_anonymizer(a);
  for (const auto& p : c.protocols) validate_protocol(p);
}

std::string run_id(const RunConfig& config) {
  nlohmann::json doc = config_to_json(config);
  doc.erase("output");
  doc.erase("jobs");
  // Paths differ between machines; the dataset content is what matters, and
  // the caller mixes its hash in when it is known.
  doc.erase("dataset");
  doc.erase("background");
  return hex(mix64(hash_tag(doc.dump())));
}

// ---------------------------------------------------------------------------
// Metrics and aggregation

double accuracy(const std::vector<PredictionRecord>& preds) {
  if (preds.empty()) fail(ErrorKind::EmptyPredictions, "no predictions");
  std::size_t correct = 0;
  for (const auto& p : preds) correct += p.predicted == p.true_label;
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

std::map<IdentityId, double> per_identity_accuracy(const std::vector<PredictionRecord>& preds) {
  if (preds.empty()) fail(ErrorKind::EmptyPredictions, "no predictions");
  std::map<IdentityId, std::pair<std::size_t, std::size_t>> counts;
  for (const auto& p : preds) {
    auto& [correct, total] = counts[p.true_label];
    correct += p.predicted == p.true_label;
    ++total;
  }
  std::map<IdentityId, double> out;
  for (const auto& [id, c] : counts)
    out[id] = static_cast<double>(c.first) / static_cast<double>(c.second);
  return out;
}

std::vector<SummaryRow> aggregate(const std::vector<EvaluationResult>& results) {
  using Key = std::tuple<std::string, Modality, std::string, std::string, std::string, std::string,
                         std::optional<double>, std::string, std::size_t>;
  std::map<Key, std::size_t> index;
  std::vector<SummaryRow> rows;
  std::vector<std::vector<double>> values;
  std::vector<std::set<std::size_t>> seen;
  for (const auto& r : results) {
    Key key{r.run_id,   r.modality,      r.anonymizer, r.anonymizer_params, r.recognizer,
            r.protocol, r.anon_fraction, r.selection,  r.n_identities};
    auto [it, fresh] = index.emplace(key, rows.size());
    if (fresh) {
      SummaryRow s;
      s.run_id = r.run_id;
      s.modality = r.modality;
      s.anonymizer = r.anonymizer;
      s.anonymizer_params = r.anonymizer_params;
      s.recognizer = r.recognizer;
      s.protocol = r.protocol;
      s.anon_fraction = r.anon_fraction;
      s.selection = r.selection;
      s.n_identities = r.n_identities;
      s.chance_level = r.chance_level;
      rows.push_back(s);
      values.emplace_back();
      seen.emplace_back();
    }
    const std::size_t g = it->second;
    if (!seen[g].insert(r.repeat).second || r.chance_level != rows[g].chance_level)
      fail(ErrorKind::MixedCoordinates,
           "results for " + r.anonymizer + "/" + r.recognizer + "/" + r.protocol + "/" +
               r.selection + "/N=" + std::to_string(r.n_identities) + " repeat " +
               std::to_string(r.repeat) + " conflict with another row");
    values[g].push_back(r.accuracy);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    const auto& v = values[g];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    rows[g].n_repeats = v.size();
    rows[g].mean_accuracy = mean;
    rows[g].std_accuracy = std::sqrt(var);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

const char* const kResultsHeader =
    "run_id,modality,anonymizer,anonymizer_params,recognizer,protocol,anon_fraction,selection,"
    "n_identities,repeat,seed,accuracy,chance_level,n_test_samples";
const char* const kSummaryHeader =
    "run_id,modality,anonymizer,anonymizer_params,recognizer,protocol,anon_fraction,selection,"
    "n_identities,chance_level,n_repeats,mean_accuracy,std_accuracy";

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

std::string fraction_field(const std::optional<double>& f) { return f ? num(*f) : std::string(); }

}  // namespace

std::string results_csv_row(const EvaluationResult& r) {
  std::ostringstream out;
  out << csv_field(r.run_id) << ',' << to_string(r.modality) << ',' << csv_field(r.anonymizer)
      << ',' << csv_field(r.anonymizer_params) << ',' << csv_field(r.recognizer) << ','
      << csv_field(r.protocol) << ',' << fraction_field(r.anon_fraction) << ','
      << csv_field(r.selection) << ',' << r.n_identities << ',' << r.repeat << ',' << r.seed << ','
      << num(r.accuracy) << ',' << num(r.chance_level) << ',' << r.n_test_samples;
  return out.str();
}

std::string summary_csv_row(const SummaryRow& r) {
  std::ostringstream out;
  out << csv_field(r.run_id) << ',' << to_string(r.modality) << ',' << csv_field(r.anonymizer)
      << ',' << csv_field(r.anonymizer_params) << ',' << csv_field(r.recognizer) << ','
      << csv_field(r.protocol) << ',' << fraction_field(r.anon_fraction) << ','
      << csv_field(r.selection) << ',' << r.n_identities << ',' << num(r.chance_level) << ','
      << r.n_repeats << ',' << num(r.mean_accuracy) << ',' << num(r.std_accuracy);
  return out.str();
}

void write_results_csv(const fs::path& path, const std::vector<EvaluationResult>& results) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << kResultsHeader << '\n';
  for (const auto& r : results) out << results_csv_row(r) << '\n';
}

void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << kSummaryHeader << '\n';
  for (const auto& r : rows) out << summary_csv_row(r) << '\n';
}

std::vector<EvaluationResult> read_results_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, path.string() + " not found");
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    fail(ErrorKind::ParseError, path.string() + ": unexpected header");
  std::vector<EvaluationResult> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 14)
      fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(row) + ": expected 14 fields");
    try {
      EvaluationResult r;
      r.run_id = f[0];
      r.modality = parse_modality(f[1]);
      r.anonymizer = f[2];
      r.anonymizer_params = f[3];
      r.recognizer = f[4];
      r.protocol = f[5];
      if (!f[6].empty()) r.anon_fraction = std::stod(f[6]);
      r.selection = f[7];
      r.n_identities = std::stoull(f[8]);
      r.repeat = std::stoull(f[9]);
      r.seed = std::stoull(f[10]);
      r.accuracy = std::stod(f[11]);
      r.chance_level = std::stod(f[12]);
      r.n_test_samples = std::stoull(f[13]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      fail(ErrorKind::ParseError, path.string() + ":" + std::to_string(row) + ": bad number");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training-set assembly

std::vector<bool> choose_anonymized(std::size_t count, double fraction, Seed seed) {
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 0.5));
  Rng rng(seed);
  const auto order = rng.permutation(count);
  std::vector<bool> out(count, false);
  for (std::size_t i = 0; i < std::min(k, count); ++i) out[order[i]] = true;
  return out;
}

AssembledData assemble_training_data(const SplitResult& split, const ProtocolSpec& protocol,
                                     Seed seed) {
  validate_protocol(protocol);
  AssembledData out;
  out.train.refs = split.train;
  out.test.refs = split.test;
  const bool test_anon = protocol.kind != ProtocolKind::Clear;
  out.test.anonymized.assign(split.test.size(), test_anon);
  switch (protocol.kind) {
    case ProtocolKind::Clear:
    case ProtocolKind::Naive: out.train.anonymized.assign(split.train.size(), false); break;
    case ProtocolKind::Parrot: out.train.anonymized.assign(split.train.size(), true); break;
    case ProtocolKind::PercentParrot: {
      out.train.anonymized.assign(split.train.size(), false);
      // Group the training samples of each identity, in split order.
      std::map<IdentityId, std::vector<std::size_t>> positions;
      for (std::size_t i = 0; i < split.train.size(); ++i)
        positions[split.train[i].identity].push_back(i);
      for (const auto& [id, pos] : positions) {
        const auto chosen =
            choose_anonymized(pos.size(), protocol.anon_fraction, derive_seed(seed, "percent", id));
        for (std::size_t j = 0; j < pos.size(); ++j) out.train.anonymized[pos[j]] = chosen[j];
      }
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

/// Computes each value once, even when several threads ask at the same time.
template <class K, class V>
class Memo {
 public:
  template <class F>
  std::shared_ptr<const V> get(const K& key, F&& make) {
    std::promise<std::shared_ptr<const V>> promise;
    std::shared_future<std::shared_ptr<const V>> future;
    bool owner = false;
    {
      std::lock_guard lock(mutex_);
      auto it = entries_.find(key);
      if (it == entries_.end()) {
        future = promise.get_future().share();
        entries_.emplace(key, future);
        owner = true;
      } else {
        future = it->second;
      }
    }
    if (owner) {
      try {
        promise.set_value(std::make_shared<const V>(make()));
      } catch (...) {
        promise.set_exception(std::current_exception());
      }
    }
    return future.get();
  }

 private:
  std::mutex mutex_;
  std::map<K, std::shared_future<std::shared_ptr<const V>>> entries_;
};

constexpr std::size_t kClear = static_cast<std::size_t>(-1);

using SampleFeatures = std::vector<std::vector<FeatureVector>>;

}  // namespace

struct Experiment::Impl {
  RunConfig config;
  std::shared_ptr<const Dataset> data;
  std::shared_ptr<const Dataset> background;
  std::shared_ptr<const KSameBackground> k_same;
  std::mutex k_same_mutex;
  std::string id;
  std::uint64_t data_hash = 0;

  Memo<std::size_t, Dataset> anonymized;
  Memo<std::size_t, Dataset> anonymized_background;
  Memo<std::size_t, SampleFeatures> simple_features;
  Memo<std::string, FeatureSpaceModel> face_spaces;
  Memo<std::size_t, IdentityFeatures> selection_features;
  Memo<std::pair<std::size_t, std::size_t>, std::map<IdentityId, double>> rankings;

  Impl(RunConfig c, Dataset d, std::optional<Dataset> bg) : config(std::move(c)) {
    validate_config(config);
    data = std::make_shared<const Dataset>(std::move(d));
    if (bg) {
      if (bg->modality() != data->modality())
        fail(ErrorKind::InvalidArgument, "background modality differs from the dataset");
      background = std::make_shared<const Dataset>(std::move(*bg));
    }
    const std::size_t total = data->manifest.identities.size();
    for (auto n : config.n_identities)
      if (n > total)
        fail(ErrorKind::NTooLarge, "n_identities " + std::to_string(n) + " exceeds the " +
                                       std::to_string(total) + " identities of the dataset");
    data_hash = dataset_hash(*data);
    std::uint64_t h = hash_tag(bioanon::run_id(config)) ^ mix64(data_hash);
    if (background) h ^= mix64(dataset_hash(*background) + 1);
    id = hex(mix64(h));
  }

  std::vector<std::size_t> n_grid() const {
    if (config.n_identities.empty()) return {data->manifest.identities.size()};
    return config.n_identities;
  }

  AnonymizerContext context() {
    AnonymizerContext ctx;
    if (background && background->modality() == Modality::Face) {
      std::lock_guard lock(k_same_mutex);
      if (!k_same) k_same = std::make_shared<const KSameBackground>(KSameBackground::from_dataset(*background));
      ctx.k_same_background = k_same;
    }
    return ctx;
  }

  bool needs_background(const AnonymizerSpec& spec) const {
    return std::holds_alternative<anon::KSamePixel>(spec);
  }

  fs::path cache_dir(std::size_t a) const {
    const std::string key = anonymizer_key(config.anonymizers[a]);
    return config.output / "anon" /
           hex(mix64(hash_tag(key) ^ mix64(data_hash) ^ mix64(config.seed + 0x9e37)));
  }

  std::shared_ptr<const Dataset> source(std::size_t a) {
    if (a == kClear) return data;
    return anonymized.get(a, [&] {
      const auto& spec = config.anonymizers[a];
      if (needs_background(spec) && !background)
        fail(ErrorKind::BackgroundTooSmall, anonymizer_name(spec) + " needs a background dataset");
      const bool disk = config.cache_anonymized && !config.output.empty();
      if (disk) {
        const fs::path dir = cache_dir(a);
        std::ifstream stamp(dir / "cache.json");
        if (stamp) {
          try {
            auto doc = nlohmann::json::parse(stamp);
            if (doc.at("anonymizer").get<std::string>() == anonymizer_key(spec) &&
                doc.at("dataset_hash").get<std::uint64_t>() == data_hash &&
                doc.at("seed").get<Seed>() == config.seed) {
              Dataset cached = load_dataset(dir / "manifest.json");
              if (cached.manifest == data->manifest) return cached;
            }
          } catch (const std::exception&) {
            // Unreadable cache: regenerate below.
          }
        }
      }
      Dataset out = anonymize_dataset(*data, spec, config.seed, context());
      if (disk) {
        const fs::path dir = cache_dir(a);
        fs::remove_all(dir);
        write_dataset(dir, out);
        std::ofstream stamp(dir / "cache.json");
        stamp << nlohmann::json{{"anonymizer", anonymizer_key(spec)},
                                {"dataset_hash", data_hash},
                                {"seed", config.seed}}
                     .dump(2)
              << '\n';
      }
      return out;
    });
  }

  std::shared_ptr<const Dataset> background_source(std::size_t a) {
    if (a == kClear) return background;
    return anonymized_background.get(a, [&] {
      // Background samples get seeds of their own: derived from a tagged master.
      return anonymize_dataset(*background, config.anonymizers[a],
                               derive_seed(config.seed, "background"), context());
    });
  }

  const Sample& sample(std::size_t source_id, const SampleRef& ref,
                       std::shared_ptr<const Dataset>& holder) {
    holder = source(source_id);
    return holder->samples[holder->identity_index(ref.identity)][ref.index];
  }

  std::shared_ptr<const SampleFeatures> simple(std::size_t a) {
    return simple_features.get(a, [&] {
      auto src = source(a);
      SampleFeatures out(src->samples.size());
      for (std::size_t i = 0; i < src->samples.size(); ++i)
        for (const auto& s : src->samples[i])
          out[i].push_back(gait_simple(std::get<GaitSequence>(s)).values);
      return out;
    });
  }

  // Feature space for faces, fit on the background set composed for the
  // protocol; without a background, the caller fits on its training images.
  std::shared_ptr<const FeatureSpaceModel> face_space(std::size_t a, const ProtocolSpec& protocol,
                                                      int components) {
    std::size_t bg_anon = kClear;
    double fraction = 1.0;
    const bool anon_pretrain = protocol.pretrain_on_anonymized &&
                               (protocol.kind == ProtocolKind::Parrot ||
                                protocol.kind == ProtocolKind::PercentParrot);
    if (anon_pretrain && !anonymizer_is_identity(config.anonymizers[a])) {
      bg_anon = a;
      if (protocol.kind == ProtocolKind::PercentParrot) fraction = protocol.anon_fraction;
    }
    const std::string key = (bg_anon == kClear ? std::string("clear") : std::to_string(a)) + "/" +
                            num(fraction) + "/" + std::to_string(components);
    return face_spaces.get(key, [&] {
      auto clear_bg = background;
      auto anon_bg = bg_anon == kClear ? background : background_source(bg_anon);
      std::vector<FaceImage> images;
      for (std::size_t i = 0; i < clear_bg->samples.size(); ++i) {
        const auto& id = clear_bg->manifest.identities[i].id;
        const std::size_t count = clear_bg->samples[i].size();
        const auto chosen =
            fraction >= 1.0 ? std::vector<bool>(count, true)
                            : choose_anonymized(count, fraction,
                                                derive_seed(config.seed, "background-percent", id));
        for (std::size_t j = 0; j < count; ++j)
          images.push_back(std::get<FaceImage>((chosen[j] ? anon_bg : clear_bg)->samples[i][j]));
      }
      const int p = components > 0 ? components : default_components(images.size());
      return fit_feature_space(images, p);
    });
  }

  // Feature rows for a set of samples; faces go through `space`.
  FeatureMatrix features(const AssembledSet& set, std::size_t a, const RecognizerSpec& rec,
                         const FeatureSpaceModel* space) {
    if (set.refs.empty()) return FeatureMatrix(0, 0);
    std::vector<FeatureVector> rows;
    rows.reserve(set.refs.size());
    std::shared_ptr<const SampleFeatures> simple_anon, simple_clear;
    std::shared_ptr<const Dataset> anon_src = nullptr;
    for (std::size_t i = 0; i < set.refs.size(); ++i) {
      const auto& ref = set.refs[i];
      const std::size_t src_id = set.anonymized[i] ? a : kClear;
      const std::size_t ident = data->identity_index(ref.identity);
      switch (rec.features) {
        case FeatureKind::Flatten: {
          std::shared_ptr<const Dataset> holder;
          rows.push_back(gait_flatten(std::get<GaitSequence>(sample(src_id, ref, holder))));
          break;
        }
        case FeatureKind::Simple: {
          auto& cache = set.anonymized[i] ? simple_anon : simple_clear;
          if (!cache) cache = simple(src_id);
          rows.push_back((*cache)[ident][ref.index]);
          break;
        }
        case FeatureKind::FacePca: {
          std::shared_ptr<const Dataset> holder;
          rows.push_back(project_face(std::get<FaceImage>(sample(src_id, ref, holder)), *space));
          break;
        }
      }
    }
    FeatureMatrix m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
  }

  void check_recognizer(const RecognizerSpec& rec) const {
    const bool face = data->modality() == Modality::Face;
    if (face != (rec.features == FeatureKind::FacePca))
      fail(ErrorKind::InvalidArgument, "recognizer " + rec.name() + " does not apply to " +
                                           to_string(data->modality()) + " data");
  }

  std::vector<PredictionRecord> evaluate(std::size_t a, const RecognizerSpec& rec,
                                         const ProtocolSpec& protocol,
                                         const std::vector<IdentityId>& ids, Seed seed) {
    check_recognizer(rec);
    if (!anonymizer_supports(config.anonymizers[a], data->modality()))
      fail(ErrorKind::InvalidArgument, anonymizer_name(config.anonymizers[a]) +
                                           " does not apply to " + to_string(data->modality()) +
                                           " data");
    const SplitResult sp =
        split(data->manifest, ids, config.train_fraction, derive_seed(seed, "split"));
    const AssembledData assembled =
        assemble_training_data(sp, protocol, derive_seed(seed, "assemble"));

    std::shared_ptr<const FeatureSpaceModel> space;
    if (rec.features == FeatureKind::FacePca) {
      if (background) {
        space = face_space(a, protocol, rec.pca_components);
      } else {
        std::vector<FaceImage> images;
        for (std::size_t i = 0; i < assembled.train.refs.size(); ++i) {
          std::shared_ptr<const Dataset> holder;
          images.push_back(std::get<FaceImage>(sample(
              assembled.train.anonymized[i] ? a : kClear, assembled.train.refs[i], holder)));
        }
        const int p = rec.pca_components > 0
                          ? std::min<int>(rec.pca_components, static_cast<int>(images.size()) - 1)
                          : default_components(images.size());
        space = std::make_shared<const FeatureSpaceModel>(fit_feature_space(images, p));
      }
    }

    const FeatureMatrix train = features(assembled.train, a, rec, space.get());
    std::vector<IdentityId> labels;
    for (const auto& r : assembled.train.refs) labels.push_back(r.identity);
    const Seed clf_seed = derive_seed(seed, "classifier");
    TrainedClassifier model = [&] {
      switch (rec.classifier) {
        case ClassifierKind::Svm: return fit_svm(train, labels, {.seed = clf_seed});
        case ClassifierKind::Knn: return fit_knn(train, labels, {.k = rec.knn_k});
        case ClassifierKind::RandomForest:
          return fit_forest(train, labels, {.n_trees = rec.n_trees, .seed = clf_seed});
      }
      fail(ErrorKind::InvalidArgument, "unknown classifier");
    }();
    const FeatureMatrix test = features(assembled.test, a, rec, space.get());
    return predict(model, test, assembled.test.refs);
  }

  std::shared_ptr<const IdentityFeatures> selection_vectors(std::size_t a) {
    const std::size_t src_id = config.selection_on_clear ? kClear : a;
    return selection_features.get(src_id, [&] {
      auto src = source(src_id);
      IdentityFeatures out;
      if (data->modality() == Modality::Gait) {
        FeatureMatrix rows(static_cast<Eigen::Index>(src->total_samples()), kFlattenDim);
        Eigen::Index r = 0;
        for (const auto& list : src->samples)
          for (const auto& s : list) rows.row(r++) = gait_flatten(std::get<GaitSequence>(s)).transpose();
        const FeatureSpaceModel pca = fit_feature_space(rows, 4, /*standardize=*/false);
        r = 0;
        for (std::size_t i = 0; i < src->samples.size(); ++i)
          for (std::size_t j = 0; j < src->samples[i].size(); ++j)
            out[src->manifest.identities[i].id].push_back(
                pca.project(FeatureVector(rows.row(r++).transpose())));
      } else {
        std::shared_ptr<const FeatureSpaceModel> space;
        if (background) {
          ProtocolSpec as_parrot{ProtocolKind::Parrot, 0.0, !config.selection_on_clear};
          space = face_space(src_id == kClear ? 0 : a, as_parrot, 0);
        } else {
          std::vector<FaceImage> images;
          for (const auto& list : src->samples)
            for (const auto& s : list) images.push_back(std::get<FaceImage>(s));
          space = std::make_shared<const FeatureSpaceModel>(
              fit_feature_space(images, default_components(images.size())));
        }
        for (std::size_t i = 0; i < src->samples.size(); ++i)
          for (const auto& s : src->samples[i])
            out[src->manifest.identities[i].id].push_back(project_face(std::get<FaceImage>(s), *space));
      }
      return out;
    });
  }

  std::shared_ptr<const std::map<IdentityId, double>> ranking(std::size_t a, std::size_t r) {
    return rankings.get({a, r}, [&] {
      ProtocolSpec protocol{config.selection_on_clear ? ProtocolKind::Clear : ProtocolKind::Parrot};
      const auto preds = evaluate(a, config.recognizers[r], protocol, data->manifest.identity_ids(),
                                  derive_seed(config.seed, "classification-selection"));
      return per_identity_accuracy(preds);
    });
  }
};

Experiment::Experiment(RunConfig config) {
  Dataset data = load_dataset(config.dataset);
  std::optional<Dataset> bg;
  if (config.background) bg = load_dataset(*config.background);
  impl_ = std::make_unique<Impl>(std::move(config), std::move(data), std::move(bg));
}

Experiment::Experiment(RunConfig config, Dataset dataset, std::optional<Dataset> background)
    : impl_(std::make_unique<Impl>(std::move(config), std::move(dataset), std::move(background))) {}

Experiment::~Experiment() = default;

const RunConfig& Experiment::config() const { return impl_->config; }
const Dataset& Experiment::dataset() const { return *impl_->data; }
const std::string& Experiment::id() const { return impl_->id; }

std::shared_ptr<const Dataset> Experiment::anonymized(std::size_t anonymizer) {
  return impl_->source(anonymizer);
}

std::vector<Cell> Experiment::cells() const {
  const auto& c = impl_->config;
  std::vector<Cell> out;
  for (std::size_t a = 0; a < c.anonymizers.size(); ++a)
    for (std::size_t r = 0; r < c.recognizers.size(); ++r)
      for (std::size_t p = 0; p < c.protocols.size(); ++p)
        for (std::size_t s = 0; s < c.selections.size(); ++s)
          for (std::size_t n : impl_->n_grid())
            for (std::size_t k = 0; k < c.repeats; ++k) out.push_back({a, r, p, s, n, k});
  return out;
}

Seed Experiment::cell_seed(const Cell& cell) const {
  const auto& c = impl_->config;
  return derive_seed(c.seed, "cell", to_string(c.selections.at(cell.selection)),
                     {static_cast<std::uint64_t>(cell.n_identities),
                      static_cast<std::uint64_t>(cell.repeat)});
}

std::vector<IdentityId> Experiment::select_classification(std::size_t anonymizer,
                                                          std::size_t recognizer, std::size_t n) {
  const auto ids = impl_->data->manifest.identity_ids();
  return select_top_accuracy(ids, *impl_->ranking(anonymizer, recognizer), n);
}

std::vector<IdentityId> Experiment::select(const Cell& cell) {
  const auto& c = impl_->config;
  const auto& manifest = impl_->data->manifest;
  std::vector<IdentityId> ids = manifest.identity_ids();
  std::sort(ids.begin(), ids.end());
  const std::size_t n = cell.n_identities;
  if (n > ids.size())
    fail(ErrorKind::NTooLarge, "cannot select " + std::to_string(n) + " of " +
                                   std::to_string(ids.size()) + " identities");
  std::vector<IdentityId> chosen;
  if (n == ids.size()) {
    chosen = ids;
  } else {
    switch (c.selections.at(cell.selection)) {
      case SelectionStrategy::Random:
        chosen = select_random(ids, n, cell.repeat, derive_seed(c.seed, "selection"));
        break;
      case SelectionStrategy::Classification:
        chosen = select_classification(cell.anonymizer, cell.recognizer, n);
        break;
      case SelectionStrategy::Metadata: chosen = select_metadata(manifest, n); break;
      case SelectionStrategy::Distinctive:
        chosen = select_distinctive(*impl_->selection_vectors(cell.anonymizer), n);
        break;
      case SelectionStrategy::Center:
        chosen = select_center(*impl_->selection_vectors(cell.anonymizer), n);
        break;
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

EvaluationResult Experiment::run_cell(const Cell& cell) {
  std::vector<PredictionRecord> preds;
  return run_cell(cell, preds);
}

EvaluationResult Experiment::run_cell(const Cell& cell, std::vector<PredictionRecord>& preds) {
  const auto& c = impl_->config;
  const auto& spec = c.anonymizers.at(cell.anonymizer);
  const auto& rec = c.recognizers.at(cell.recognizer);
  const auto& protocol = c.protocols.at(cell.protocol);
  const Seed seed = cell_seed(cell);

  const auto ids = select(cell);
  preds = impl_->evaluate(cell.anonymizer, rec, protocol, ids, seed);

  EvaluationResult r;
  r.run_id = impl_->id;
  r.modality = impl_->data->modality();
  r.anonymizer = anonymizer_name(spec);
  r.anonymizer_params = anonymizer_params(spec);
  r.recognizer = rec.name();
  r.protocol = protocol.name();
  if (protocol.kind == ProtocolKind::PercentParrot) r.anon_fraction = protocol.anon_fraction;
  r.selection = to_string(c.selections.at(cell.selection));
  r.n_identities = ids.size();
  r.repeat = cell.repeat;
  r.seed = seed;
  r.accuracy = accuracy(preds);
  r.chance_level = 1.0 / static_cast<double>(ids.size());
  r.n_test_samples = preds.size();
  return r;
}

namespace {

std::string errors_header() {
  return "run_id,anonymizer,recognizer,protocol,selection,n_identities,repeat,error,message";
}

}  // namespace

GridOutcome Experiment::run_grid(std::function<void(std::size_t, std::size_t)> progress) {
  const auto& c = impl_->config;
  const auto cells = this->cells();
  GridOutcome outcome;
  outcome.n_cells = cells.size();

  std::vector<std::optional<EvaluationResult>> done_results(cells.size());
  std::vector<std::optional<CellError>> done_errors(cells.size());
  std::vector<bool> finished(cells.size(), false);
  std::size_t next_flush = 0, n_finished = 0;
  std::mutex mutex;

  std::ofstream results_out, errors_out;
  const bool write = !c.output.empty();
  if (write) {
    fs::create_directories(c.output);
    results_out.open(c.output / "results.csv", std::ios::binary);
    if (!results_out) fail(ErrorKind::IoError, "cannot write " + (c.output / "results.csv").string());
    results_out << kResultsHeader << '\n';
    fs::remove(c.output / "errors.csv");
  }

  // Commits finished cells in canonical order; called with the mutex held.
  auto flush = [&] {
    while (next_flush < cells.size() && finished[next_flush]) {
      if (done_results[next_flush]) {
        outcome.results.push_back(*done_results[next_flush]);
        if (write) results_out << results_csv_row(*done_results[next_flush]) << '\n' << std::flush;
      } else {
        const CellError& e = *done_errors[next_flush];
        outcome.errors.push_back(e);
        if (write) {
          if (!errors_out.is_open()) {
            errors_out.open(c.output / "errors.csv", std::ios::binary);
            errors_out << errors_header() << '\n';
          }
          std::string msg = e.message;
          std::replace(msg.begin(), msg.end(), '\n', ' ');
          std::replace(msg.begin(), msg.end(), '"', '\'');
          errors_out << impl_->id << ',' << e.anonymizer << ',' << e.recognizer << ','
                     << e.protocol << ',' << e.selection << ',' << e.n_identities << ','
                     << e.repeat << ',' << to_string(e.kind) << ",\"" << msg << "\"\n"
                     << std::flush;
        }
      }
      done_results[next_flush].reset();
      ++next_flush;
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
      const Cell& cell = cells[i];
      std::optional<EvaluationResult> result;
      std::optional<CellError> error;
      auto record_error = [&](ErrorKind kind, const std::string& message) {
        CellError e;
        e.anonymizer = anonymizer_name(c.anonymizers[cell.anonymizer]);
        e.recognizer = c.recognizers[cell.recognizer].name();
        e.protocol = c.protocols[cell.protocol].name();
        e.selection = to_string(c.selections[cell.selection]);
        e.n_identities = cell.n_identities;
        e.repeat = cell.repeat;
        e.kind = kind;
        e.message = message;
        error = e;
      };
      try {
        result = run_cell(cell);
      } catch (const Error& e) {
        record_error(e.kind(), e.what());
      } catch (const std::exception& e) {
        record_error(ErrorKind::IoError, e.what());
      }
      std::lock_guard lock(mutex);
      done_results[i] = std::move(result);
      done_errors[i] = std::move(error);
      finished[i] = true;
      ++n_finished;
      flush();
      if (progress) progress(n_finished, cells.size());
    }
  };

  unsigned jobs = c.jobs > 0 ? c.jobs : std::max(1u, std::thread::hardware_concurrency());
  jobs = static_cast<unsigned>(std::min<std::size_t>(jobs, cells.size()));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return outcome;
}

GridOutcome run_experiment(const RunConfig& config,
                           std::function<void(std::size_t, std::size_t)> progress) {
  Experiment experiment(config);
  if (!config.output.empty()) {
    fs::create_directories(config.output);
    std::ofstream out(config.output / "resolved_config.json");
    if (!out) fail(ErrorKind::IoError, "cannot write resolved_config.json");
    out << config_to_json(config).dump(2) << '\n';
  }
  GridOutcome outcome = experiment.run_grid(std::move(progress));
  if (!config.output.empty()) write_summary_csv(config.output / "summary.csv", aggregate(outcome.results));
  return outcome;
}

}  // namespace bioanon
