#include "hbt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "hbt/analysis.hpp"
#include "hbt/calibration.hpp"
#include "hbt/config.hpp"
#include "hbt/correlator.hpp"
#include "hbt/digest.hpp"
#include "hbt/errors.hpp"
#include "hbt/peakfit.hpp"
#include "hbt/svg.hpp"
#include "hbt/tag_io.hpp"
#include "hbt/thermal_sim.hpp"
#include "json.hpp"

namespace hbt {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

int default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string fmt(double v, int prec) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(prec) << v;
  return o.str();
}

// --- run manifest -----------------------------------------------------------

json file_entry(const std::string& path) {
  return {{"path", path}, {"sha256", sha256_file(path)}, {"bytes", file_size_bytes(path)}};
}

struct RunManifest {
  std::string subcommand;
  json config = json::object();
  std::vector<std::string> inputs, outputs;
  json stats = json::object();
  Clock::time_point start = Clock::now();

  double elapsed_s() const { return std::chrono::duration<double>(Clock::now() - start).count(); }

  void write(const std::string& path) const {
    json in = json::array(), out = json::array();
    for (const auto& p : inputs) in.push_back(file_entry(p));
    for (const auto& p : outputs) out.push_back(file_entry(p));
    json s = stats;
    s["wall_s"] = elapsed_s();
    json doc = {{"schema", "hbt.run/1"}, {"tool", "hbt"},       {"version", kToolVersion},
                {"subcommand", subcommand}, {"config", config}, {"inputs", in},
                {"outputs", out},           {"stats", s}};
    write_text_file(path, doc.dump(1) + "\n");
  }
};

/// Every option of a subcommand with its effective value.
json resolved_options(const CLI::App& sub) {
  json j = json::object();
  for (const auto* opt : sub.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string name = opt->get_lnames().front();
    if (name == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      if (opt->get_expected_max() > 1 || r.size() > 1) j[name] = r;
      else j[name] = r.empty() ? "" : r.front();
    } else {
      j[name] = opt->get_default_str();
    }
  }
  return j;
}

// --- shared helpers ---------------------------------------------------------

std::pair<int, int> parse_range(const std::string& s, const char* what) {
  const auto dash = s.find('-');
  try {
    if (dash == std::string::npos) {
      const int v = std::stoi(s);
      return {v, v};
    }
    return {std::stoi(s.substr(0, dash)), std::stoi(s.substr(dash + 1))};
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": expected FIRST-LAST, got '" + s + "'");
  }
}

ExclusionZone parse_zone(const std::string& s) {
  const auto colon = s.find(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument(s);
    return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw ConfigError("--exclude-raw: expected CENTER_PS:HALFWIDTH_PS, got '" + s + "'");
  }
}

/// Nominal raw peak position for a pair: from the offset table when given,
/// else a common delay.
struct Nominal {
  std::optional<OffsetTable> offsets;
  double delay_ps = 0.0;

  double raw(int a, int b) const { return offsets ? offsets->predicted(a, b) : delay_ps; }
};

Nominal load_nominal(const std::string& offsets_path, double delay, RunManifest& rm) {
  Nominal n;
  n.delay_ps = delay;
  if (!offsets_path.empty()) {
    n.offsets = OffsetTable::load_json(offsets_path);
    rm.inputs.push_back(offsets_path);
  }
  return n;
}

json fit_json(const PeakFitResult& f) {
  return {{"pixel_a", f.pixel_a},        {"pixel_b", f.pixel_b},         {"contrast", f.contrast},
          {"contrast_err", f.contrast_err}, {"mu_ps", f.mu_ps + f.shift_ps}, {"mu_err", f.mu_err},
          {"sigma_ps", f.sigma_ps},      {"sigma_err", f.sigma_err},     {"chi2_per_dof", f.chi2_per_dof},
          {"status", to_string(f.status)}, {"sigma_at_bound", f.sigma_at_bound}, {"message", f.message}};
}

// --- matrix stage (also used by report) ---------------------------------------

struct MatrixOptions {
  std::string out;       // matrix.json
  std::string plots_dir; // may be empty
  std::string hist_path; // may be empty
  int max_offset = 2;
  int overlays = 6;
  double exclusion_ps = 1000.0;
  double sum_sigma_min = 10.0, sum_sigma_max = 400.0;
  double sum_contrast_max = 0.5;
  double min_significance = 3.0;
};

struct MatrixResult {
  ContrastMatrix matrix;
  json doc;
  std::vector<std::string> plots; // file names relative to plots_dir
};

std::string diag_name(int k) { return k < 0 ? "m" + std::to_string(-k) : "p" + std::to_string(k); }

MatrixResult run_matrix_stage(const std::vector<PeakFitResult>& fits, const ChannelMap& map, const Nominal& nominal,
                              const MatrixOptions& o, RunManifest& rm) {
  MatrixResult res;
  res.matrix = build_matrix(fits, map);
  const auto& m = res.matrix;
  json doc = {{"schema", "hbt.matrix/1"}, {"rows", m.rows()},         {"cols", m.cols()},
              {"pixels_a", m.pixels_a},   {"pixels_b", m.pixels_b},   {"lambda_a_nm", m.lambda_a},
              {"lambda_b_nm", m.lambda_b}, {"spectrum_a", m.spectrum_a}, {"spectrum_b", m.spectrum_b}};
  json C = json::array(), E = json::array(), S = json::array();
  int significant_off = 0, off_cells = 0;
  for (int i = 0; i < m.rows(); ++i) {
    json cr = json::array(), er = json::array(), sr = json::array();
    for (int j = 0; j < m.cols(); ++j) {
      const auto* f = m.at(i, j);
      if (f && f->usable()) {
        cr.push_back(f->contrast);
        er.push_back(f->contrast_err);
        sr.push_back(to_string(f->status));
        if (std::abs(i - j) > 1) {
          ++off_cells;
          if (std::abs(f->significance()) > 3.0) ++significant_off;
        }
      } else {
        cr.push_back(nullptr);
        er.push_back(nullptr);
        sr.push_back(f ? to_string(f->status) : "absent");
      }
    }
    C.push_back(cr);
    E.push_back(er);
    S.push_back(sr);
  }
  doc["contrast"] = C;
  doc["contrast_err"] = E;
  doc["status"] = S;
  doc["localization"] = {{"off_band_cells", off_cells},
                         {"off_band_significant", significant_off},
                         {"fraction", off_cells > 0 ? static_cast<double>(significant_off) / off_cells : 0.0}};

  const fs::path out_path(o.out);
  const fs::path csv_dir = o.plots_dir.empty() ? out_path.parent_path() : fs::path(o.plots_dir);
  const std::string csv_prefix = o.plots_dir.empty() ? out_path.stem().string() + "." : "";
  if (!o.plots_dir.empty()) fs::create_directories(o.plots_dir);

  json diags = json::array();
  std::vector<ProfileSeries> series;
  for (int k = -o.max_offset; k <= o.max_offset; ++k) {
    if (std::abs(k) >= std::max(m.rows(), 1)) continue;
    const auto prof = diagonal_profile(m, k);
    const auto wm = weighted_mean(prof);
    json pts = json::array();
    std::ostringstream csv;
    csv << "bin,pixel_a,pixel_b,lambda_a_nm,lambda_b_nm,contrast,contrast_err,valid\n";
    csv << std::setprecision(10);
    for (const auto& p : prof) {
      const int j = p.bin + k;
      pts.push_back({{"bin", p.bin}, {"contrast", p.contrast}, {"contrast_err", p.contrast_err}, {"valid", p.valid}});
      csv << p.bin << ',' << m.pixels_a[p.bin] << ',' << m.pixels_b[j] << ',' << m.lambda_a[p.bin] << ','
          << m.lambda_b[j] << ',' << p.contrast << ',' << p.contrast_err << ',' << (p.valid ? 1 : 0) << "\n";
    }
    diags.push_back({{"offset", k},
                     {"weighted_mean", wm.mean},
                     {"weighted_mean_err", wm.err},
                     {"chi2_per_dof", wm.chi2_per_dof},
                     {"count", wm.count},
                     {"points", pts}});
    const fs::path csv_path = csv_dir / (csv_prefix + "diagonal_" + diag_name(k) + ".csv");
    write_text_file(csv_path.string(), csv.str());
    rm.outputs.push_back(csv_path.string());
    if (k == 0 || k == 2 || k == -2) series.push_back({"offset " + std::to_string(k), prof});
  }
  doc["diagonals"] = diags;

  if (!o.hist_path.empty()) {
    rm.inputs.push_back(o.hist_path);
    const auto hists = load_histograms(o.hist_path);
    std::map<std::pair<int, int>, const CoincidenceHistogram*> by_pair;
    for (const auto& h : hists) by_pair[{h.pixel_a, h.pixel_b}] = &h;
    std::vector<CoincidenceHistogram> matched;
    std::vector<double> nominal_mu;
    int overlays = 0;
    for (const auto& p : diagonal_profile(m, 0)) {
      const int a = m.pixels_a[p.bin], b = m.pixels_b[p.bin];
      const auto it = by_pair.find({a, b});
      if (it == by_pair.end() || it->second->missing) continue;
      const auto& h = *it->second;
      const double mu = nominal.raw(a, b) - static_cast<double>(h.shift_ps);
      matched.push_back(h);
      nominal_mu.push_back(mu);
      if (!o.plots_dir.empty() && overlays < o.overlays) {
        try {
          const auto nh = normalize_histogram(h, mu, o.exclusion_ps);
          const std::string name = "pair_" + std::to_string(a) + "_" + std::to_string(b) + ".svg";
          write_text_file((fs::path(o.plots_dir) / name).string(),
                          svg_histogram(nh, m.at(p.bin, p.bin),
                                        "pair A" + std::to_string(a) + " / B" + std::to_string(b) +
                                            " (shifted by " + std::to_string(h.shift_ps) + " ps)"));
          res.plots.push_back(name);
          rm.outputs.push_back((fs::path(o.plots_dir) / name).string());
          ++overlays;
        } catch (const DomainError&) {
          // too few sideband bins to normalize; no overlay for this pair
        }
      }
    }
    if (!matched.empty()) {
      const double ref = nominal_mu.front();
      const auto sum = sum_matched_histograms(matched, nominal_mu, ref);
      FitConstraints c;
      c.mu_nominal_ps = ref;
      c.sigma_min_ps = o.sum_sigma_min;
      c.sigma_max_ps = o.sum_sigma_max;
      c.sigma_seed_ps = std::sqrt(o.sum_sigma_min * o.sum_sigma_max);
      c.contrast_min = -o.sum_contrast_max;
      c.contrast_max = o.sum_contrast_max;
      const auto nh = normalize_histogram(sum.histogram, ref, o.exclusion_ps);
      auto f = fit_peak(nh, c);
      json sj = fit_json(f);
      sj["pairs_used"] = sum.used;
      sj["window_ps"] = sum.histogram.window_ps;
      doc["summed"] = sj;
      if (!o.plots_dir.empty()) {
        write_text_file((fs::path(o.plots_dir) / "summed.svg").string(),
                        svg_histogram(nh, &f, "sum of " + std::to_string(sum.used) + " matched pairs"));
        res.plots.push_back("summed.svg");
        rm.outputs.push_back((fs::path(o.plots_dir) / "summed.svg").string());
      }
    }
  }

  if (!o.plots_dir.empty()) {
    write_text_file((fs::path(o.plots_dir) / "matrix.svg").string(), svg_matrix(m, "contrast matrix"));
    write_text_file((fs::path(o.plots_dir) / "diagonals.svg").string(),
                    svg_profiles(series, "contrast along diagonals"));
    res.plots.insert(res.plots.begin(), {"matrix.svg", "diagonals.svg"});
    rm.outputs.push_back((fs::path(o.plots_dir) / "matrix.svg").string());
    rm.outputs.push_back((fs::path(o.plots_dir) / "diagonals.svg").string());
  }
  write_text_file(o.out, doc.dump(1) + "\n");
  rm.outputs.push_back(o.out);
  res.doc = std::move(doc);
  return res;
}

json sensitivity_json(const SensitivityReport& r) {
  json sel = json::array();
  for (const auto& s : r.selected)
    sel.push_back({{"pixel_a", s.pixel_a}, {"pixel_b", s.pixel_b}, {"visibility", s.visibility}, {"rate", s.rate}});
  const auto& ref = r.selected.at(static_cast<std::size_t>(r.reference));
  return {{"schema", "hbt.sensitivity/1"},
          {"gain", r.gain},
          {"reference", {{"index", r.reference}, {"pixel_a", ref.pixel_a}, {"pixel_b", ref.pixel_b}}},
          {"count", r.selected.size()},
          {"selected", sel}};
}

/// Diagonal-only selection when a matrix is available.
std::vector<SensitivityInput> select_inputs(const std::vector<PeakFitResult>& fits, const ContrastMatrix* m,
                                            double min_sig) {
  auto all = sensitivity_inputs(fits, min_sig);
  if (!m) return all;
  std::set<std::pair<int, int>> diag;
  for (int i = 0; i < std::min(m->rows(), m->cols()); ++i) diag.insert({m->pixels_a[i], m->pixels_b[i]});
  std::vector<SensitivityInput> out;
  for (const auto& s : all)
    if (diag.count({s.pixel_a, s.pixel_b})) out.push_back(s);
  return out;
}

// --- subcommand bodies --------------------------------------------------------

struct SimulateArgs {
  std::string config, preset, out, manifest, map_out;
  std::vector<std::string> sets;
};

int cmd_simulate(const SimulateArgs& a, RunManifest& rm, std::ostream& out) {
  KeyValueConfig kv;
  if (!a.config.empty()) {
    kv = KeyValueConfig::load(a.config);
    rm.inputs.push_back(a.config);
  }
  if (!a.preset.empty()) kv.set("preset", a.preset);
  for (const auto& s : a.sets) kv.apply_override(s);
  const SimConfig cfg = sim_config_from(kv);
  const std::string manifest = a.manifest.empty() ? a.out + ".truth.json" : a.manifest;
  const std::string map_out = a.map_out.empty() ? a.out + ".map" : a.map_out;
  const auto t0 = Clock::now();
  const auto summary = simulate_dataset(cfg, a.out, manifest);
  const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
  cfg.channel_map.save(map_out);
  rm.config = {{"keys", kv.values()}, {"resolved", json::parse(summary.manifest_json)}};
  rm.config["resolved"].erase("channels");
  rm.config["resolved"].erase("pixel_offsets");
  rm.config["resolved"].erase("counts");
  rm.outputs = {a.out, manifest, map_out};
  rm.stats = {{"records", summary.records}, {"records_per_s", dt > 0 ? summary.records / dt : 0.0}};
  out << "simulated " << summary.records << " tags on " << cfg.channel_map.pixel_count() << " pixels over "
      << cfg.duration_s << " s\n"
      << "tags: " << a.out << "\ntruth: " << manifest << "\nmap: " << map_out << "\n";
  return 0;
}

struct WavelengthArgs {
  std::string spectrum, spectrum_b, lines, lines_b, arm = "A", out, map_out, pixels_a, pixels_b;
  double sigma_nm = 0.04;
};

int cmd_calibrate_wavelength(const WavelengthArgs& a, RunManifest& rm, std::ostream& out) {
  // lines pair with centroids in pixel order, so a mirrored arm lists them reversed
  const auto lines = load_line_references(a.lines);
  const auto lines_b = a.lines_b.empty() ? lines : load_line_references(a.lines_b);
  rm.inputs = {a.lines, a.spectrum};
  if (!a.lines_b.empty()) rm.inputs.push_back(a.lines_b);
  struct ArmFit {
    WavelengthFit fit;
    std::vector<double> centroids;
  };
  auto run_arm = [&](const std::string& path, Arm arm, const std::vector<LineReference>& lines) {
    const auto counts = load_spectrum_csv(path);
    ArmFit r;
    r.centroids = find_line_centroids(counts, static_cast<int>(lines.size()));
    r.fit = fit_wavelength_map(r.centroids, lines, arm);
    return r;
  };
  if (a.arm != "A" && a.arm != "B") throw ConfigError("--arm must be A or B");
  std::vector<ArmFit> fits;
  fits.push_back(run_arm(a.spectrum, a.arm == "B" && a.spectrum_b.empty() ? Arm::B : Arm::A, lines));
  if (!a.spectrum_b.empty()) {
    rm.inputs.push_back(a.spectrum_b);
    fits.push_back(run_arm(a.spectrum_b, Arm::B, lines_b));
  }
  json arms = json::array();
  for (const auto& f : fits) {
    arms.push_back({{"arm", f.fit.arm == Arm::A ? "A" : "B"},
                    {"intercept_nm", f.fit.intercept_nm},
                    {"slope_nm_per_px", f.fit.slope_nm_per_px},
                    {"residual_rms_nm", f.fit.residual_rms_nm},
                    {"points", f.fit.points},
                    {"centroids_px", f.centroids}});
    out << "arm " << (f.fit.arm == Arm::A ? "A" : "B") << ": slope " << fmt(f.fit.slope_nm_per_px, 5)
        << " nm/px, intercept " << fmt(f.fit.intercept_nm, 4) << " nm, rms " << fmt(f.fit.residual_rms_nm, 5)
        << " nm\n";
  }
  json doc = {{"schema", "hbt.wavelength/1"}, {"arms", arms}};
  if (fits.size() == 2) {
    const bool opposite = fits[0].fit.slope_nm_per_px * fits[1].fit.slope_nm_per_px < 0;
    doc["opposite_slopes"] = opposite;
    out << "arms " << (opposite ? "run in opposite directions" : "run in the SAME direction") << "\n";
  }
  write_text_file(a.out, doc.dump(1) + "\n");
  rm.outputs.push_back(a.out);

  if (!a.map_out.empty()) {
    if (fits.size() != 2 || a.pixels_a.empty() || a.pixels_b.empty())
      throw ConfigError("--map-out needs --spectrum-b, --pixels-a and --pixels-b");
    auto channels = [&](const std::string& range, const WavelengthFit& f, Arm arm) {
      const auto [lo, hi] = parse_range(range, arm == Arm::A ? "--pixels-a" : "--pixels-b");
      std::vector<SpectralChannel> v;
      for (int p = lo; p <= hi; ++p) v.push_back({arm, static_cast<std::uint16_t>(p), f.lambda_at(p), a.sigma_nm});
      return v;
    };
    ChannelMap map(channels(a.pixels_a, fits[0].fit, Arm::A), channels(a.pixels_b, fits[1].fit, Arm::B));
    map.save(a.map_out);
    rm.outputs.push_back(a.map_out);
  }
  return 0;
}

struct OffsetArgs {
  std::string fits, out;
  int reference = -1;
  double min_significance = 3.0;
};

int cmd_calibrate_offsets(const OffsetArgs& a, RunManifest& rm, std::ostream& out) {
  const auto fits = load_fits_json(a.fits);
  rm.inputs = {a.fits};
  const auto meas = offset_inputs(fits, a.min_significance);
  if (meas.empty()) throw CalibrationError("no pair passed the significance cut; nothing to calibrate");
  int ref = a.reference;
  if (ref < 0) {
    ref = meas.front().pixel_a;
    for (const auto& m : meas) ref = std::min(ref, m.pixel_a);
  }
  const auto table = solve_offsets(meas, ref);
  table.save_json(a.out);
  rm.outputs = {a.out};
  rm.stats = {{"pairs_used", table.pairs_used}, {"chi2_per_dof", table.chi2_per_dof()}};
  out << "pairs used " << table.pairs_used << ", pixels " << table.offset_ps.size() << ", delay "
      << fmt(table.delay_ps, 1) << " +- " << fmt(table.delay_err_ps, 1) << " ps, chi2/dof "
      << fmt(table.chi2_per_dof(), 3) << "\n";
  return 0;
}

struct CorrelateArgs {
  std::string tags, map, offsets, out;
  double shift_ps = 0.0;
  long long window_ps = 20000, bin_ps = 20;
  int workers = 1;
  std::size_t chunk = 1 << 20;
};

int cmd_correlate(const CorrelateArgs& a, RunManifest& rm, std::ostream& out) {
  const auto map = ChannelMap::load(a.map);
  rm.inputs = {a.tags, a.map};
  const Nominal nominal = load_nominal(a.offsets, a.shift_ps, rm);
  TagReader reader(a.tags);
  if (reader.header().pixel_count < map.pixel_count())
    throw ConfigError("tag file has " + std::to_string(reader.header().pixel_count) + " pixels, map needs " +
                      std::to_string(map.pixel_count()));
  const auto t0 = Clock::now();
  const auto streams =
      split_by_pixel(reader, map, a.chunk);
  const auto t1 = Clock::now();
  CorrelationJob job;
  job.pairs = all_cross_pairs(map);
  for (auto& p : job.pairs) p.shift_ps = std::llround(nominal.raw(p.pixel_a, p.pixel_b));
  job.window_ps = a.window_ps;
  job.bin_width_ps = a.bin_ps;
  job.workers = a.workers;
  const auto hists = run_all_pairs(streams, job);
  const auto t2 = Clock::now();
  save_histograms(a.out, hists);
  rm.outputs = {a.out};
  const double read_s = std::chrono::duration<double>(t1 - t0).count();
  const double corr_s = std::chrono::duration<double>(t2 - t1).count();
  std::uint64_t coincidences = 0;
  for (const auto& h : hists) coincidences += h.total;
  rm.stats = {{"tags_read", streams.total()},
              {"tags_kept", streams.kept},
              {"tags_dropped_masked", streams.dropped_masked},
              {"tags_dropped_unmapped", streams.dropped_unmapped},
              {"pairs", hists.size()},
              {"coincidences", coincidences},
              {"read_s", read_s},
              {"correlate_s", corr_s},
              {"tags_per_s", corr_s > 0 ? streams.kept / corr_s : 0.0}};
  out << "read " << streams.total() << " tags (" << streams.dropped() << " dropped), " << hists.size()
      << " pairs, " << coincidences << " coincidences in " << fmt(corr_s, 2) << " s\n";
  return 0;
}

struct FitArgs {
  std::string hist, offsets, out;
  double delay_ps = 0.0;
  FitConstraints c;
  double exclusion_ps = 1000.0;
  std::vector<std::string> exclude_raw;
  int workers = 1;
};

int cmd_fit(const FitArgs& a, RunManifest& rm, std::ostream& out) {
  const auto hists = load_histograms(a.hist);
  rm.inputs = {a.hist};
  const Nominal nominal = load_nominal(a.offsets, a.delay_ps, rm);
  std::vector<FitConstraints> cs;
  for (const auto& h : hists) {
    FitConstraints c = a.c;
    c.mu_nominal_ps = nominal.raw(h.pixel_a, h.pixel_b) - static_cast<double>(h.shift_ps);
    cs.push_back(c);
  }
  BatchOptions opt;
  opt.exclusion_halfwidth_ps = a.exclusion_ps;
  opt.workers = a.workers;
  for (const auto& z : a.exclude_raw) opt.raw_zones.push_back(parse_zone(z));
  const auto fits = batch_fit(hists, cs, opt);
  json meta = {{"histograms", a.hist}, {"nominal", a.offsets.empty() ? "delay" : "offsets"}};
  save_fits_json(a.out, fits, meta.dump());
  rm.outputs = {a.out};
  int conv = 0, bound = 0, failed = 0;
  for (const auto& f : fits) {
    if (f.status == FitStatus::Converged) ++conv;
    else if (f.status == FitStatus::AtBound) ++bound;
    else ++failed;
  }
  rm.stats = {{"fits", fits.size()}, {"converged", conv}, {"at_bound", bound}, {"failed", failed}};
  out << fits.size() << " fits: " << conv << " converged, " << bound << " at bound, " << failed << " failed\n";
  return 0;
}

struct MatrixArgs {
  std::string fits, map, offsets;
  double delay_ps = 0.0;
  MatrixOptions o;
};

int cmd_matrix(const MatrixArgs& a, RunManifest& rm, std::ostream& out) {
  const auto fits = load_fits_json(a.fits);
  const auto map = ChannelMap::load(a.map);
  rm.inputs = {a.fits, a.map};
  const Nominal nominal = load_nominal(a.offsets, a.delay_ps, rm);
  const auto res = run_matrix_stage(fits, map, nominal, a.o, rm);
  for (const auto& d : res.doc["diagonals"])
    out << "diagonal " << std::showpos << d["offset"].get<int>() << std::noshowpos << ": mean contrast "
        << fmt(100 * d["weighted_mean"].get<double>(), 3) << " +- " << fmt(100 * d["weighted_mean_err"].get<double>(), 3)
        << " % over " << d["count"].get<int>() << " pairs\n";
  if (res.doc.contains("summed")) {
    const auto& s = res.doc["summed"];
    out << "summed matched pairs: contrast " << fmt(100 * s["contrast"].get<double>(), 3) << " +- "
        << fmt(100 * s["contrast_err"].get<double>(), 3) << " %, sigma " << fmt(s["sigma_ps"].get<double>(), 1)
        << " ps\n";
  }
  return 0;
}

struct BudgetArgs {
  double lambda_nm = 0, dlambda_nm = 0, dt_ps = 0;
  std::string out;
};

int cmd_hg_budget(const BudgetArgs& a, RunManifest& rm, std::ostream& out) {
  const auto b = hg_budget(a.lambda_nm, a.dlambda_nm, a.dt_ps);
  out << "delta_f " << std::scientific << std::setprecision(4) << b.delta_f_hz << std::defaultfloat << " Hz\n"
      << "product " << fmt(b.product, 4) << " (limit 1/(4 pi) = " << fmt(b.limit, 5) << ")\n"
      << "ratio " << fmt(b.ratio, 1) << "\n"
      << "max contrast " << fmt(100 * b.max_contrast, 1) << "%\n";
  if (!a.out.empty()) {
    json doc = {{"schema", "hbt.hg_budget/1"},  {"lambda_nm", b.lambda_nm}, {"sigma_lambda_nm", b.sigma_lambda_nm},
                {"sigma_t_ps", b.sigma_t_ps},  {"delta_f_hz", b.delta_f_hz}, {"product", b.product},
                {"limit", b.limit},            {"ratio", b.ratio},         {"max_contrast", b.max_contrast}};
    write_text_file(a.out, doc.dump(1) + "\n");
    rm.outputs = {a.out};
  }
  return 0;
}

struct SensitivityArgs {
  std::string fits, map, reference, out;
  double min_significance = 3.0;
  int equal_bins = 0;
};

int cmd_sensitivity(const SensitivityArgs& a, RunManifest& rm, std::ostream& out) {
  std::vector<SensitivityInput> inputs;
  if (a.equal_bins > 0) {
    if (!a.fits.empty()) throw ConfigError("--equal-bins and --fits are exclusive");
    for (int i = 0; i < a.equal_bins; ++i) inputs.push_back({1.0, 1.0, i, i});
  } else {
    if (a.fits.empty()) throw ConfigError("sensitivity needs --fits or --equal-bins");
    const auto fits = load_fits_json(a.fits);
    rm.inputs = {a.fits};
    std::optional<ContrastMatrix> m;
    if (!a.map.empty()) {
      m = build_matrix(fits, ChannelMap::load(a.map));
      rm.inputs.push_back(a.map);
    }
    inputs = select_inputs(fits, m ? &*m : nullptr, a.min_significance);
  }
  std::optional<int> ref;
  if (!a.reference.empty()) {
    const auto colon = a.reference.find(':');
    if (colon == std::string::npos) throw ConfigError("--reference expects PIXEL_A:PIXEL_B");
    const int pa = std::stoi(a.reference.substr(0, colon)), pb = std::stoi(a.reference.substr(colon + 1));
    for (std::size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].pixel_a == pa && inputs[i].pixel_b == pb) ref = static_cast<int>(i);
    if (!ref) throw ConfigError("reference pair " + a.reference + " is not among the selected pairs");
  }
  const auto r = sensitivity_gain(inputs, ref);
  out << "selected " << r.selected.size() << " pairs, gain " << fmt(r.gain, 2) << "\n";
  if (!a.out.empty()) {
    write_text_file(a.out, sensitivity_json(r).dump(1) + "\n");
    rm.outputs = {a.out};
  }
  return 0;
}

struct ReportArgs {
  std::string fits, map, offsets, out;
  double delay_ps = 0.0;
  double lambda_nm = 640, dlambda_nm = 0.04, dt_ps = 40;
  MatrixOptions o;
};

int cmd_report(ReportArgs a, RunManifest& rm, std::ostream& out) {
  fs::create_directories(a.out);
  const auto fits = load_fits_json(a.fits);
  const auto map = ChannelMap::load(a.map);
  rm.inputs = {a.fits, a.map};
  const Nominal nominal = load_nominal(a.offsets, a.delay_ps, rm);
  a.o.out = (fs::path(a.out) / "matrix.json").string();
  a.o.plots_dir = a.out;
  const auto res = run_matrix_stage(fits, map, nominal, a.o, rm);
  const auto b = hg_budget(a.lambda_nm, a.dlambda_nm, a.dt_ps);
  std::optional<SensitivityReport> sens;
  std::string sens_note;
  try {
    sens = sensitivity_gain(select_inputs(fits, &res.matrix, a.o.min_significance));
    write_text_file((fs::path(a.out) / "sensitivity.json").string(), sensitivity_json(*sens).dump(1) + "\n");
    rm.outputs.push_back((fs::path(a.out) / "sensitivity.json").string());
  } catch (const DomainError& e) {
    sens_note = e.what();
  }

  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>HBT analysis report</title>\n"
    << "<style>body{font-family:sans-serif;max-width:960px;margin:2em auto}table{border-collapse:collapse}"
       "td,th{border:1px solid #ccc;padding:3px 8px;text-align:right}</style></head><body>\n"
    << "<h1>HBT analysis report</h1>\n<p>fits: " << a.fits << "<br>map: " << a.map << "</p>\n"
    << "<h2>Contrast matrix</h2>\n<img src=\"matrix.svg\" alt=\"contrast matrix\">\n"
    << "<h2>Diagonals</h2>\n<img src=\"diagonals.svg\" alt=\"diagonal profiles\">\n"
    << "<table><tr><th>offset</th><th>mean contrast (%)</th><th>error (%)</th><th>pairs</th><th>chi2/dof</th></tr>\n";
  for (const auto& d : res.doc["diagonals"])
    h << "<tr><td>" << d["offset"].get<int>() << "</td><td>" << fmt(100 * d["weighted_mean"].get<double>(), 3)
      << "</td><td>" << fmt(100 * d["weighted_mean_err"].get<double>(), 3) << "</td><td>" << d["count"].get<int>()
      << "</td><td>" << fmt(d["chi2_per_dof"].get<double>(), 2) << "</td></tr>\n";
  h << "</table>\n";
  if (res.doc.contains("summed")) {
    const auto& s = res.doc["summed"];
    h << "<h2>Summed matched pairs</h2>\n<img src=\"summed.svg\" alt=\"summed histogram\">\n<p>contrast "
      << fmt(100 * s["contrast"].get<double>(), 3) << " &plusmn; " << fmt(100 * s["contrast_err"].get<double>(), 3)
      << " %, sigma " << fmt(s["sigma_ps"].get<double>(), 1) << " ps over " << s["pairs_used"].get<int>()
      << " pairs</p>\n";
  }
  h << "<h2>Heisenberg-Gabor budget</h2>\n<table>"
    << "<tr><th>lambda (nm)</th><td>" << b.lambda_nm << "</td></tr>"
    << "<tr><th>sigma_lambda (nm)</th><td>" << b.sigma_lambda_nm << "</td></tr>"
    << "<tr><th>sigma_t (ps)</th><td>" << b.sigma_t_ps << "</td></tr>"
    << "<tr><th>ratio to limit</th><td>" << fmt(b.ratio, 2) << "</td></tr>"
    << "<tr><th>max contrast</th><td>" << fmt(100 * b.max_contrast, 2) << " %</td></tr></table>\n";
  h << "<h2>Sensitivity</h2>\n";
  if (sens)
    h << "<p>" << sens->selected.size() << " diagonal pairs above " << a.o.min_significance
      << " sigma; gain over the best single pair: " << fmt(sens->gain, 2) << "</p>\n";
  else
    h << "<p>no pair selected (" << sens_note << ")</p>\n";
  std::vector<std::string> pairs;
  for (const auto& p : res.plots)
    if (p.rfind("pair_", 0) == 0) pairs.push_back(p);
  if (!pairs.empty()) {
    h << "<h2>Matched-pair histograms</h2>\n";
    for (const auto& p : pairs) h << "<img src=\"" << p << "\" alt=\"" << p << "\">\n";
  }
  h << "</body></html>\n";
  const std::string index = (fs::path(a.out) / "index.html").string();
  write_text_file(index, h.str());
  rm.outputs.push_back(index);
  out << "report written to " << index << "\n";
  return 0;
}

// --- argument plumbing --------------------------------------------------------

/// Pulls --config FILE out of args and appends its keys as --key=value for
/// every option not given on the command line.
std::vector<std::string> inject_config(std::vector<std::string> args, std::string& config_path) {
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (config_path.empty()) return rest;
  const auto kv = KeyValueConfig::load(config_path);
  for (const auto& [k, v] : kv.values()) {
    const std::string flag = "--" + k;
    const bool given = std::any_of(rest.begin(), rest.end(), [&](const std::string& s) {
      return s == flag || s.rfind(flag + "=", 0) == 0;
    });
    if (!given) rest.push_back(flag + "=" + v);
  }
  return rest;
}

void emit_error(std::ostream& err, const std::string& stage, const std::exception& e) {
  std::string type = "Error";
  if (dynamic_cast<const DomainError*>(&e)) type = "DomainError";
  else if (dynamic_cast<const ConfigError*>(&e)) type = "ConfigError";
  else if (dynamic_cast<const OrderingError*>(&e)) type = "OrderingError";
  else if (dynamic_cast<const FormatError*>(&e)) type = "FormatError";
  else if (dynamic_cast<const IoError*>(&e)) type = "IoError";
  else if (dynamic_cast<const CalibrationError*>(&e)) type = "CalibrationError";
  else if (!dynamic_cast<const Error*>(&e)) type = "InternalError";
  json j = {{"error", {{"stage", stage}, {"type", type}, {"message", e.what()}}}};
  err << j.dump() << "\n";
}

} // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spectrally resolved intensity interferometry toolkit", "hbt"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.footer("Exit codes: 0 success, 1 stage error, 2 usage error.\n"
             "Any subcommand except simulate accepts --config FILE with 'flag-name = value' lines;\n"
             "flags given on the command line take precedence.");

  const int workers_default = default_workers();

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Simulate a chaotic-light dataset into a tag file");
  s_sim->add_option("--config", sim.config, "Simulation config file (key = value)");
  s_sim->add_option("--preset", sim.preset, "Preset defaults: replication or smoke");
  s_sim->add_option("--set", sim.sets, "Override a config key, KEY=VALUE (repeatable)");
  s_sim->add_option("--out", sim.out, "Output tag file")->required();
  s_sim->add_option("--manifest", sim.manifest, "Truth manifest JSON (default OUT.truth.json)");
  s_sim->add_option("--map-out", sim.map_out, "Channel map used (default OUT.map)");

  WavelengthArgs wl;
  auto* s_wl = app.add_subcommand("calibrate-wavelength", "Fit pixel-to-wavelength maps from line spectra");
  s_wl->add_option("--spectrum", wl.spectrum, "Spectrum CSV (counts per pixel)")->required();
  s_wl->add_option("--spectrum-b", wl.spectrum_b, "Second arm's spectrum CSV; --spectrum is then arm A");
  s_wl->add_option("--lines", wl.lines, "Reference line file (wavelength_nm [label] per line)")->required();
  s_wl->add_option("--lines-b", wl.lines_b, "Line file for the second arm, in its pixel order (default --lines)");
  s_wl->add_option("--arm", wl.arm, "Arm of --spectrum when only one is given (A or B)");
  s_wl->add_option("--out", wl.out, "Output JSON")->required();
  s_wl->add_option("--map-out", wl.map_out, "Also write a channel map (needs both arms)");
  s_wl->add_option("--pixels-a", wl.pixels_a, "Arm-A pixel range for --map-out, FIRST-LAST");
  s_wl->add_option("--pixels-b", wl.pixels_b, "Arm-B pixel range for --map-out, FIRST-LAST");
  s_wl->add_option("--sigma-nm", wl.sigma_nm, "Spectral rms per channel for --map-out");

  OffsetArgs off;
  auto* s_off = app.add_subcommand("calibrate-offsets", "Solve per-pixel timing offsets from fitted peak positions");
  s_off->add_option("--fits", off.fits, "fits.json")->required();
  s_off->add_option("--out", off.out, "Output offsets JSON")->required();
  s_off->add_option("--reference", off.reference, "Reference pixel (offset 0); default lowest arm-A pixel");
  s_off->add_option("--min-significance", off.min_significance, "Minimum contrast/error for a pair to be used");

  CorrelateArgs cor;
  cor.workers = workers_default;
  auto* s_cor = app.add_subcommand("correlate", "Histogram cross-arm time differences for every pixel pair");
  s_cor->add_option("--tags", cor.tags, "Input tag file")->required();
  s_cor->add_option("--map", cor.map, "Channel map file")->required();
  s_cor->add_option("--offsets", cor.offsets, "Offsets JSON; centres every pair on its predicted peak");
  s_cor->add_option("--shift", cor.shift_ps, "Common shift in ps when no offsets are given");
  s_cor->add_option("--out", cor.out, "Output histogram file")->required();
  s_cor->add_option("--window", cor.window_ps, "Half-window W in ps")->check(CLI::PositiveNumber);
  s_cor->add_option("--bin-width", cor.bin_ps, "Bin width in ps (must divide 2W)")->check(CLI::PositiveNumber);
  s_cor->add_option("--workers", cor.workers, "Worker threads")->check(CLI::PositiveNumber);
  s_cor->add_option("--chunk", cor.chunk, "Reader chunk size in records")->check(CLI::PositiveNumber);

  FitArgs fit;
  fit.workers = workers_default;
  auto* s_fit = app.add_subcommand("fit", "Fit the bunching peak in every histogram");
  s_fit->add_option("--hist", fit.hist, "Histogram file")->required();
  s_fit->add_option("--out", fit.out, "Output fits.json")->required();
  s_fit->add_option("--offsets", fit.offsets, "Offsets JSON giving each pair's nominal peak");
  s_fit->add_option("--delay", fit.delay_ps, "Nominal raw peak position in ps when no offsets are given");
  s_fit->add_option("--mu-range", fit.c.mu_halfrange_ps, "Allowed |mu - nominal| in ps");
  s_fit->add_option("--sigma-min", fit.c.sigma_min_ps, "Lower sigma bound, ps");
  s_fit->add_option("--sigma-max", fit.c.sigma_max_ps, "Upper sigma bound, ps");
  s_fit->add_option("--sigma-seed", fit.c.sigma_seed_ps, "Starting sigma, ps");
  s_fit->add_option("--contrast-min", fit.c.contrast_min, "Lower contrast bound");
  s_fit->add_option("--contrast-max", fit.c.contrast_max, "Upper contrast bound");
  s_fit->add_flag("--sine", fit.c.sine_term, "Add a sinusoidal background term");
  s_fit->add_option("--period-min", fit.c.period_min_ps, "Lower sine period bound, ps");
  s_fit->add_option("--period-max", fit.c.period_max_ps, "Upper sine period bound, ps");
  s_fit->add_option("--fit-halfwidth", fit.c.fit_halfwidth_ps, "Fit only bins within this distance of nominal (0: all)");
  s_fit->add_option("--max-iterations", fit.c.max_iterations, "Iteration cap");
  s_fit->add_option("--exclusion", fit.exclusion_ps, "Half-width excluded from normalization around nominal, ps");
  s_fit->add_option("--exclude-raw", fit.exclude_raw, "Extra normalization exclusion CENTER:HALFWIDTH in raw ps");
  s_fit->add_option("--workers", fit.workers, "Worker threads")->check(CLI::PositiveNumber);

  auto add_matrix_opts = [](CLI::App* s, MatrixOptions& o) {
    s->add_option("--hist", o.hist_path, "Histogram file, for overlays and the summed matched histogram");
    s->add_option("--max-offset", o.max_offset, "Diagonals -K..K are extracted");
    s->add_option("--overlays", o.overlays, "Maximum number of per-pair overlay plots");
    s->add_option("--exclusion", o.exclusion_ps, "Normalization exclusion half-width, ps");
    s->add_option("--sum-sigma-min", o.sum_sigma_min, "Summed fit: lower sigma bound, ps");
    s->add_option("--sum-sigma-max", o.sum_sigma_max, "Summed fit: upper sigma bound, ps");
    s->add_option("--sum-contrast-max", o.sum_contrast_max, "Summed fit: |contrast| bound");
  };

  MatrixArgs mat;
  auto* s_mat = app.add_subcommand("matrix", "Build the contrast matrix, diagonals and plots");
  s_mat->add_option("--fits", mat.fits, "fits.json")->required();
  s_mat->add_option("--map", mat.map, "Channel map file")->required();
  s_mat->add_option("--out", mat.o.out, "Output matrix.json")->required();
  s_mat->add_option("--plots", mat.o.plots_dir, "Directory for SVG plots and diagonal CSVs");
  s_mat->add_option("--offsets", mat.offsets, "Offsets JSON (nominal peaks)");
  s_mat->add_option("--delay", mat.delay_ps, "Nominal raw peak position in ps when no offsets are given");
  add_matrix_opts(s_mat, mat.o);

  BudgetArgs hg;
  auto* s_hg = app.add_subcommand("hg-budget", "Time-frequency budget against the Heisenberg-Gabor limit");
  s_hg->add_option("--lambda", hg.lambda_nm, "Wavelength, nm")->required();
  s_hg->add_option("--dlambda", hg.dlambda_nm, "Spectral rms, nm")->required();
  s_hg->add_option("--dt", hg.dt_ps, "Timing rms, ps")->required();
  s_hg->add_option("--out", hg.out, "Optional JSON output");

  SensitivityArgs sen;
  auto* s_sen = app.add_subcommand("sensitivity", "Gain from combining spectral bins");
  s_sen->add_option("--fits", sen.fits, "fits.json");
  s_sen->add_option("--map", sen.map, "Channel map; restricts the selection to matched (diagonal) pairs");
  s_sen->add_option("--min-significance", sen.min_significance, "Minimum contrast/error for selection");
  s_sen->add_option("--reference", sen.reference, "Reference pair PIXEL_A:PIXEL_B (default: highest visibility)");
  s_sen->add_option("--equal-bins", sen.equal_bins, "Closed form for N identical bins instead of --fits");
  s_sen->add_option("--out", sen.out, "Optional JSON output");

  ReportArgs rep;
  auto* s_rep = app.add_subcommand("report", "Write a static report directory with index.html");
  s_rep->add_option("--fits", rep.fits, "fits.json")->required();
  s_rep->add_option("--map", rep.map, "Channel map file")->required();
  s_rep->add_option("--out", rep.out, "Output directory")->required();
  s_rep->add_option("--offsets", rep.offsets, "Offsets JSON (nominal peaks)");
  s_rep->add_option("--delay", rep.delay_ps, "Nominal raw peak position in ps when no offsets are given");
  s_rep->add_option("--lambda", rep.lambda_nm, "Budget wavelength, nm");
  s_rep->add_option("--dlambda", rep.dlambda_nm, "Budget spectral rms, nm");
  s_rep->add_option("--dt", rep.dt_ps, "Budget timing rms, ps");
  s_rep->add_option("--min-significance", rep.o.min_significance, "Selection cut for the sensitivity gain");
  add_matrix_opts(s_rep, rep.o);

  std::string config_path;
  std::vector<std::string> args;
  try {
    const bool is_sim = !raw_args.empty() && raw_args.front() == "simulate";
    args = is_sim ? raw_args : inject_config(raw_args, config_path);
  } catch (const std::exception& e) {
    emit_error(err, raw_args.empty() ? "" : raw_args.front(), e);
    return 1;
  }
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  RunManifest rm;
  rm.subcommand = sub->get_name();
  try {
    int rc = 0;
    std::string manifest_path;
    if (sub == s_sim) {
      rc = cmd_simulate(sim, rm, out);
      manifest_path = sim.out + ".run.json";
    } else {
      rm.config = resolved_options(*sub);
      if (!config_path.empty()) rm.config["config"] = config_path;
      if (sub == s_wl) {
        rc = cmd_calibrate_wavelength(wl, rm, out);
        manifest_path = wl.out + ".run.json";
      } else if (sub == s_off) {
        rc = cmd_calibrate_offsets(off, rm, out);
        manifest_path = off.out + ".run.json";
      } else if (sub == s_cor) {
        rc = cmd_correlate(cor, rm, out);
        manifest_path = cor.out + ".run.json";
      } else if (sub == s_fit) {
        rc = cmd_fit(fit, rm, out);
        manifest_path = fit.out + ".run.json";
      } else if (sub == s_mat) {
        rc = cmd_matrix(mat, rm, out);
        manifest_path = mat.o.out + ".run.json";
      } else if (sub == s_hg) {
        rc = cmd_hg_budget(hg, rm, out);
        if (!hg.out.empty()) manifest_path = hg.out + ".run.json";
      } else if (sub == s_sen) {
        rc = cmd_sensitivity(sen, rm, out);
        if (!sen.out.empty()) manifest_path = sen.out + ".run.json";
      } else if (sub == s_rep) {
        rc = cmd_report(rep, rm, out);
        manifest_path = (fs::path(rep.out) / "report.run.json").string();
      }
    }
    if (!config_path.empty()) rm.inputs.push_back(config_path);
    if (!manifest_path.empty()) rm.write(manifest_path);
    return rc;
  } catch (const std::exception& e) {
    emit_error(err, rm.subcommand, e);
    return 1;
  }
}

} // namespace hbt
