// bioanon: generate datasets, anonymize them, select identity subsets, run
// evaluation grids and emit report tables.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bioanon/anonymizer.hpp"
#include "bioanon/error.hpp"
#include "bioanon/harness.hpp"
#include "bioanon/image_anon.hpp"

namespace fs = std::filesystem;
using namespace bioanon;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kPartial = 2;

// Raised for bad invocations and bad configuration files.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const char* const kConfigHelp = R"(Grid configuration (evaluate):
  {
    "dataset": "data/manifest.json",          required
    "background": "bg/manifest.json",         optional, disjoint identities
    "anonymizers": [{"kind": "noise", "scale": 3}, "motion_extraction", ...],
    "recognizers": ["svm+flatten", {"classifier": "knn", "features": "simple", "k": 1}],
    "protocols": ["clear", "naive", "parrot", "parrot_25", ...],
    "selections": ["random", "classification", "metadata", "distinctive", "center"],
    "n_identities": [57, 28] | "all" | "halving",
    "repeats": 1, "seed": 0, "train_fraction": 0.75,
    "selection_on_clear": false, "cache_anonymized": true,
    "output": "out", "jobs": 0
  }
Sweep configuration (sweep):
  {
    "dataset": ..., "background": ..., "seed": 0, "jobs": 0, "output": "out",
    "h1": true, "h2": {...}, "h3": true, "h4": {"repeats": 5}, "h5": false
  }
  A section set to true runs its built-in grid; an object overrides keys of it.
Anonymizer kinds: none noise keep motion_extraction eye_mask gaussian_blur krtio
  dp_pix dp_snow dp_samp k_same_pixel external
)";

fs::path output_root() {
  const char* env = std::getenv("BIOANON_OUT");
  return env && *env ? fs::path(env) : fs::path("bioanon-out");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(path.string() + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

AnonymizerSpec parse_anonymizer_arg(const std::string& text) {
  try {
    if (!text.empty() && text.front() == '{') return anonymizer_from_json(json::parse(text));
    return anonymizer_from_json(json(text));
  } catch (const json::exception& e) {
    throw UsageError("bad anonymizer '" + text + "': " + e.what());
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

Modality manifest_modality(const fs::path& manifest) {
  return manifest_from_json(read_json(manifest)).modality;
}

void print_progress(std::size_t done, std::size_t total) {
  const std::size_t step = std::max<std::size_t>(1, total / 20);
  if (done % step == 0 || done == total) std::fprintf(stderr, "[%zu/%zu] cells\n", done, total);
}

// Runs one grid and reports its cell failures. Returns the exit code.
int run_grid_config(const RunConfig& config) {
  std::fprintf(stderr, "writing %s\n", config.output.string().c_str());
  GridOutcome outcome = run_experiment(config, print_progress);
  for (const auto& e : outcome.errors)
    std::fprintf(stderr, "cell failed (%s, %s, %s, %s, N=%zu, repeat %zu): %s\n",
                 e.anonymizer.c_str(), e.recognizer.c_str(), e.protocol.c_str(),
                 e.selection.c_str(), e.n_identities, e.repeat, e.message.c_str());
  std::fprintf(stderr, "%zu of %zu cells succeeded\n", outcome.results.size(), outcome.n_cells);
  return outcome.errors.empty() ? kOk : kPartial;
}

struct Overrides {
  std::optional<Seed> seed;
  std::optional<unsigned> jobs;
  std::string out;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
  cmd->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)");
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
}

RunConfig parse_grid(const json& doc, const fs::path& base_dir) {
  try {
    return config_from_json(doc, base_dir);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

// ---------------------------------------------------------------------------
// sweep: built-in H1-H5 grids

json gait_anonymizers(bool with_none) {
  json list = json::array();
  if (with_none) list.push_back("none");
  for (double s : {3.0, 10.0, 100.0}) list.push_back({{"kind", "noise"}, {"scale", s}});
  list.push_back({{"kind", "keep"}, {"region", "legs"}});
  list.push_back({{"kind", "keep"}, {"region", "head"}});
  list.push_back("motion_extraction");
  return list;
}

json face_anonymizers(bool with_none, bool have_background) {
  json list = json::array();
  if (with_none) list.push_back("none");
  for (const char* k : {"eye_mask", "gaussian_blur", "krtio", "dp_pix", "dp_snow", "dp_samp"})
    list.push_back(k);
  if (have_background) list.push_back("k_same_pixel");
  return list;
}

json default_section(const std::string& name, Modality modality, bool have_background) {
  const bool gait = modality == Modality::Gait;
  const json main = gait ? "svm+flatten" : "svm+pca";
  json s;
  if (name == "h1") {
    s["anonymizers"] = gait ? gait_anonymizers(false) : face_anonymizers(false, have_background);
    s["recognizers"] = {gait ? json("svm+simple") : main};
    s["protocols"] = {"naive", "parrot"};
  } else if (name == "h2") {
    s["anonymizers"] = gait ? gait_anonymizers(false) : face_anonymizers(false, have_background);
    s["recognizers"] = {gait ? json("svm+simple") : main};
    s["protocols"] = {"parrot", "parrot_25", "parrot_50", "parrot_75"};
  } else if (name == "h3") {
    s["anonymizers"] = gait ? gait_anonymizers(true) : face_anonymizers(true, have_background);
    s["recognizers"] = gait ? json{"svm+flatten", "svm+simple", "knn+flatten"}
                            : json{"svm+pca", "knn+pca", "forest+pca"};
    s["protocols"] = {"parrot"};
  } else if (name == "h4") {
    s["anonymizers"] = gait ? gait_anonymizers(true) : face_anonymizers(true, have_background);
    s["recognizers"] = {main};
    s["protocols"] = {"parrot"};
    s["n_identities"] = "halving";
    s["repeats"] = 10;
  } else if (name == "h5") {
    s["anonymizers"] = gait ? json{{{"kind", "noise"}, {"scale", 10}},
                                   {{"kind", "noise"}, {"scale", 100}},
                                   {{"kind", "keep"}, {"region", "legs"}},
                                   "motion_extraction"}
                            : face_anonymizers(false, have_background);
    s["recognizers"] = {main};
    s["protocols"] = {"parrot"};
    s["selections"] = {"random", "classification", "metadata", "distinctive", "center"};
    s["n_identities"] = "halving";
    s["repeats"] = 10;
  }
  return s;
}

const std::vector<std::string> kSections = {"h1", "h2", "h3", "h4", "h5"};

int cmd_sweep(const std::string& config_path, const std::string& only, const Overrides& o) {
  const json doc = read_json(config_path);
  if (!doc.is_object()) throw UsageError("sweep configuration must be a JSON object");
  const std::set<std::string> top = {"dataset", "background", "seed", "jobs", "output",
                                     "h1",      "h2",         "h3",   "h4",   "h5"};
  for (const auto& [key, value] : doc.items())
    if (!top.count(key)) throw UsageError("unknown sweep key '" + key + "'");
  if (!doc.contains("dataset")) throw UsageError("sweep configuration needs \"dataset\"");

  const fs::path base = fs::path(config_path).parent_path();
  fs::path dataset = doc.at("dataset").get<std::string>();
  if (dataset.is_relative()) dataset = base / dataset;
  const bool have_background = doc.contains("background") && !doc.at("background").is_null();
  Modality modality;
  try {
    modality = manifest_modality(dataset);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }

  std::set<std::string> wanted;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) {
      if (std::find(kSections.begin(), kSections.end(), item) == kSections.end())
        throw UsageError("unknown section '" + item + "'");
      wanted.insert(item);
    }

  fs::path out = !o.out.empty()              ? fs::path(o.out)
                 : doc.contains("output")    ? base / doc.at("output").get<std::string>()
                                             : output_root() / "sweep";

  // Parse every section before running any, so a typo fails fast.
  std::vector<std::pair<std::string, RunConfig>> grids;
  for (const auto& name : kSections) {
    if (!doc.contains(name) || (!wanted.empty() && !wanted.count(name))) continue;
    const json& section = doc.at(name);
    if (section.is_boolean() && !section.get<bool>()) continue;
    if (!section.is_boolean() && !section.is_object())
      throw UsageError("section '" + name + "' must be true, false or an object");
    json grid = default_section(name, modality, have_background);
    if (section.is_object()) grid.update(section);
    for (const char* key : {"dataset", "background", "seed", "jobs"})
      if (doc.contains(key) && !grid.contains(key)) grid[key] = doc.at(key);
    RunConfig config = parse_grid(grid, base);
    if (o.seed) config.seed = *o.seed;
    if (o.jobs) config.jobs = *o.jobs;
    config.output = out / name;
    grids.emplace_back(name, std::move(config));
  }
  if (grids.empty()) throw UsageError("no sections selected");

  int code = kOk;
  for (const auto& [name, config] : grids) {
    std::fprintf(stderr, "== %s\n", name.c_str());
    code = std::max(code, run_grid_config(config));
  }
  return code;
}

// ---------------------------------------------------------------------------
// report

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_tables(const fs::path& results_csv, const fs::path& out_dir) {
  const auto rows = aggregate(read_results_csv(results_csv));
  fs::create_directories(out_dir);

  // Accuracy vs N, one line per grid point.
  {
    std::ofstream out(out_dir / "accuracy_by_n.csv");
    out << "anonymizer,recognizer,protocol,selection,n_identities,chance_level,n_repeats,"
           "mean_accuracy,std_accuracy\n";
    std::vector<SummaryRow> sorted = rows;
    std::stable_sort(sorted.begin(), sorted.end(), [](const SummaryRow& a, const SummaryRow& b) {
      return std::tie(a.anonymizer, a.recognizer, a.protocol, a.selection) <
                 std::tie(b.anonymizer, b.recognizer, b.protocol, b.selection) ||
             (std::tie(a.anonymizer, a.recognizer, a.protocol, a.selection) ==
                  std::tie(b.anonymizer, b.recognizer, b.protocol, b.selection) &&
              a.n_identities > b.n_identities);
    });
    for (const auto& r : sorted)
      out << r.anonymizer << ',' << r.recognizer << ',' << r.protocol << ',' << r.selection << ','
          << r.n_identities << ',' << num(r.chance_level) << ',' << r.n_repeats << ','
          << num(r.mean_accuracy) << ',' << num(r.std_accuracy) << '\n';
  }

  // Accuracy vs anonymizer at the largest N: rows are anonymizers, columns
  // recognizer/protocol pairs.
  {
    std::size_t full = 0;
    for (const auto& r : rows) full = std::max(full, r.n_identities);
    std::vector<std::string> anonymizers, columns;
    std::map<std::pair<std::string, std::string>, double> cells;
    double chance = 0.0;
    for (const auto& r : rows) {
      if (r.n_identities != full || r.selection != rows.front().selection) continue;
      const std::string col = r.recognizer + "/" + r.protocol;
      if (std::find(anonymizers.begin(), anonymizers.end(), r.anonymizer) == anonymizers.end())
        anonymizers.push_back(r.anonymizer);
      if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
      cells[{r.anonymizer, col}] = r.mean_accuracy;
      chance = r.chance_level;
    }
    std::ofstream out(out_dir / "accuracy_by_anonymizer.csv");
    out << "anonymizer,n_identities,chance_level";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    for (const auto& a : anonymizers) {
      out << a << ',' << full << ',' << num(chance);
      for (const auto& c : columns) {
        auto it = cells.find({a, c});
        out << ',' << (it == cells.end() ? std::string() : num(it->second));
      }
      out << '\n';
    }
  }
}

int cmd_report(const std::string& input, const std::string& out_arg) {
  const fs::path in(input);
  const fs::path out = out_arg.empty() ? in / "report" : fs::path(out_arg);
  int tables = 0;
  if (fs::is_regular_file(in)) {
    write_tables(in, out);
    ++tables;
  } else if (fs::is_directory(in)) {
    if (fs::exists(in / "results.csv")) {
      write_tables(in / "results.csv", out);
      ++tables;
    }
    std::vector<fs::path> subdirs;
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_directory() && fs::exists(e.path() / "results.csv")) subdirs.push_back(e.path());
    std::sort(subdirs.begin(), subdirs.end());
    for (const auto& d : subdirs) {
      write_tables(d / "results.csv", out / d.filename());
      ++tables;
    }
  }
  if (tables == 0) throw UsageError("no results.csv found under " + input);
  std::fprintf(stderr, "wrote %d report(s) to %s\n", tables, out.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evaluation framework for biometric anonymization"};
  app.require_subcommand(1);
  app.footer(kConfigHelp);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic gait or face dataset");
  std::string modality = "gait";
  int identities = 57, per_identity = 0;
  Seed gen_seed = 42;
  std::string gen_out;
  gen->add_option("--modality", modality, "gait or face")->check(CLI::IsMember({"gait", "face"}));
  gen->add_option("--identities", identities, "Number of identities")->check(CLI::PositiveNumber);
  gen->add_option("--sequences,--images", per_identity,
                  "Samples per identity (default 20 sequences or 8 images)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory");

  // anonymize
  auto* an = app.add_subcommand("anonymize", "Write an anonymized copy of a dataset");
  std::string an_dataset, an_spec, an_background, an_out;
  Seed an_seed = 0;
  an->add_option("--dataset", an_dataset, "manifest.json of the dataset")->required();
  an->add_option("--anonymizer", an_spec, "Kind name or JSON spec")->required();
  an->add_option("--background", an_background, "Background manifest (k-Same-Pixel)");
  an->add_option("--seed", an_seed, "Master seed");
  an->add_option("--out", an_out, "Output directory")->required();

  // select
  auto* sel = app.add_subcommand("select", "Write a selected identity list as JSON");
  std::string sel_dataset, sel_strategy = "random", sel_anon = "none", sel_recognizer,
                           sel_background, sel_out;
  std::size_t sel_n = 0, sel_repeat = 0;
  Seed sel_seed = 0;
  bool sel_clear = false;
  sel->add_option("--dataset", sel_dataset, "manifest.json of the dataset")->required();
  sel->add_option("--strategy", sel_strategy,
                  "random, classification, metadata, distinctive or center");
  sel->add_option("--n", sel_n, "Number of identities")->required();
  sel->add_option("--anonymizer", sel_anon, "Anonymizer the selection is computed for");
  sel->add_option("--recognizer", sel_recognizer, "Recognizer for classification selection");
  sel->add_option("--background", sel_background, "Background manifest");
  sel->add_option("--repeat", sel_repeat, "Repeat index (random selection)");
  sel->add_option("--seed", sel_seed, "Master seed");
  sel->add_flag("--on-clear", sel_clear, "Compute selection features on clear data");
  sel->add_option("--out", sel_out, "Output file (default: stdout)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run one evaluation grid");
  std::string ev_config;
  Overrides ev_over;
  ev->add_option("--config", ev_config, "Grid configuration JSON")->required();
  add_overrides(ev, ev_over);

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run the H1-H5 experiment grids");
  std::string sw_config, sw_only;
  Overrides sw_over;
  sw->add_option("--config", sw_config, "Sweep configuration JSON")->required();
  sw->add_option("--only", sw_only, "Comma-separated sections to run, e.g. h1,h4");
  add_overrides(sw, sw_over);

  // report
  auto* rep = app.add_subcommand("report", "Write CSV tables from results");
  std::string rep_input, rep_out;
  rep->add_option("--input", rep_input, "results.csv, a run directory or a sweep directory")
      ->required();
  rep->add_option("--out", rep_out, "Output directory (default: <input>/report)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) {
      const bool gait = modality == "gait";
      const int n = per_identity > 0 ? per_identity : (gait ? 20 : 8);
      fs::path out = gen_out.empty()
                         ? output_root() / (modality + "-" + std::to_string(identities) + "x" +
                                            std::to_string(n) + "-seed" + std::to_string(gen_seed))
                         : fs::path(gen_out);
      try {
        if (gait)
          generate_synthetic_gait(identities, n, gen_seed, out);
        else
          generate_synthetic_faces(identities, n, gen_seed, out);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidCount) throw UsageError(e.what());
        throw;
      }
      std::printf("%s\n", (out / "manifest.json").string().c_str());
      return kOk;
    }

    if (*an) {
      const AnonymizerSpec spec = parse_anonymizer_arg(an_spec);
      Dataset ds = load_dataset(an_dataset);
      AnonymizerContext ctx;
      if (!an_background.empty())
        ctx.k_same_background = std::make_shared<const KSameBackground>(
            KSameBackground::from_dataset(load_dataset(an_background)));
      write_dataset(an_out, anonymize_dataset(ds, spec, an_seed, ctx));
      std::printf("%s\n", (fs::path(an_out) / "manifest.json").string().c_str());
      return kOk;
    }

    if (*sel) {
      RunConfig c;
      c.dataset = sel_dataset;
      if (!sel_background.empty()) c.background = fs::path(sel_background);
      c.anonymizers = {parse_anonymizer_arg(sel_anon)};
      const Modality m = manifest_modality(sel_dataset);
      const std::string rec = !sel_recognizer.empty()     ? sel_recognizer
                              : m == Modality::Gait       ? "svm+flatten"
                                                          : "svm+pca";
      c.recognizers = {recognizer_from_json(json(rec))};
      c.protocols = {protocol_from_json("parrot")};
      c.selections = {parse_selection(sel_strategy)};
      c.n_identities = {sel_n};
      c.repeats = sel_repeat + 1;
      c.seed = sel_seed;
      c.selection_on_clear = sel_clear;
      c.cache_anonymized = false;
      c.jobs = 1;
      validate_config(c);
      Experiment ex(c);
      const auto cells = ex.cells();
      const auto ids = ex.select(cells.at(sel_repeat));
      if (sel_out.empty())
        std::printf("%s\n", selection_to_json(ids).dump(2).c_str());
      else
        write_selection(sel_out, ids);
      return kOk;
    }

    if (*ev) {
      const json doc = read_json(ev_config);
      RunConfig config = parse_grid(doc, fs::path(ev_config).parent_path());
      if (ev_over.seed) config.seed = *ev_over.seed;
      if (ev_over.jobs) config.jobs = *ev_over.jobs;
      if (!ev_over.out.empty())
        config.output = ev_over.out;
      else if (config.output.empty())
        config.output = output_root() / ("evaluate-" + run_id(config));
      return run_grid_config(config);
    }

    if (*sw) return cmd_sweep(sw_config, sw_only, sw_over);
    if (*rep) return cmd_report(rep_input, rep_out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n\n%s", e.what(), kConfigHelp);
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    const bool usage = e.kind() == ErrorKind::ParseError || e.kind() == ErrorKind::MissingFile ||
                       e.kind() == ErrorKind::InvalidArgument || e.kind() == ErrorKind::NTooLarge ||
                       e.kind() == ErrorKind::UnknownRegion || e.kind() == ErrorKind::EvenKernel;
    return usage ? kUsage : kPartial;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  }
  return kUsage;
}
