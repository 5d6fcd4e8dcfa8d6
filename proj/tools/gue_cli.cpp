// Command-line front end: confidence sets from CSV data, rate calibration,
// declarative experiments and the unit-dominance diagnostic.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 empty confidence set.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gue.hpp"

using namespace gue;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitEmpty = 3;

const char* kCsvHelp =
    "Data files are CSV. Scalar data: one number per line, no header.\n"
    "Labeled data (threshold, hinge_svm, quantile_regression): header x1,y.\n"
    "Vector data (kmeans, multivariate l2_mean): header x1,...,xd.\n";

struct LossFlags {
  std::string name = "l2_mean";
  double q = 0.5;
  std::size_t k = 3;
  std::size_t dim = 1;
  std::optional<double> lower, upper;

  void add(CLI::App* app) {
    app->add_option("--loss", name,
                    "l2_mean, l1_median, pinball, pinball_restricted, quantile_regression, zero_one_threshold, "
                    "hinge_svm, kmeans")
        ->capture_default_str();
    app->add_option("--q", q, "quantile level for pinball losses")->capture_default_str();
    app->add_option("--K", k, "number of clusters for kmeans")->capture_default_str();
    app->add_option("--dim", dim, "data dimension for l2_mean and kmeans")->capture_default_str();
    app->add_option("--lower", lower, "lower bound of the restricted parameter space");
    app->add_option("--upper", upper, "upper bound of the restricted parameter space");
  }

  LossSpec spec() const {
    LossSpec s;
    s.name = name;
    s.q = q;
    s.k = k;
    s.dim = dim;
    s.lower = lower;
    s.upper = upper;
    return s;
  }

  /// Takes the data dimension from the sample when the flag was left alone.
  LossModelPtr model_for(const Sample& data) const {
    LossSpec s = spec();
    if (!data.empty() && data.front().kind() == DatumKind::vector) s.dim = data.front().dim();
    return make_loss_model(s);
  }
};

struct RateFlags {
  std::optional<double> omega;
  std::string calibrate = "nonparam";
  std::size_t reps = 200;
  std::size_t recalibrate_every = 1;

  void add(CLI::App* app) {
    app->add_option("--omega", omega, "fixed learning rate (skips calibration)")->check(CLI::NonNegativeNumber);
    app->add_option("--calibrate", calibrate,
                    "rate source: nonparam, param:<normal|exponential|beta>, normal-l2, normal-l2-half, "
                    "berry-esseen")
        ->capture_default_str();
    app->add_option("--reps", reps, "bootstrap replicates for calibration and baselines")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
  }

  RateSource source() const {
    if (omega) {
      RateSource r;
      r.kind = RateSourceKind::fixed;
      r.omega = *omega;
      return r;
    }
    RateSource r = RateSource::parse(calibrate);
    r.bootstrap_reps = reps;
    return r;
  }
};

/// Writes `text` to `path`, or to stdout when the path is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path);
  out << text;
}

/// Human summary goes to stdout when the machine output went to a file.
std::ostream& summary_stream(const std::string& out_path) { return out_path.empty() ? std::cerr : std::cout; }

std::string json_text(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// ci

struct CiArgs {
  std::string data;
  LossFlags loss;
  RateFlags rate;
  std::string method = "gue_offline";
  double alpha = 0.05;
  double split_frac = 0.5;
  std::uint64_t seed = 0;
  std::size_t grid = 0;
  std::string out;
  std::string grid_csv;
};

/// Maximal runs of consecutive members on a 1-D grid.
Json segments(const ConfidenceSet& cs) {
  Json out = Json::array();
  std::optional<double> start;
  double last = 0.0;
  for (std::size_t i = 0; i < cs.grid.size(); ++i) {
    const double v = cs.grid[i][0];
    if (cs.members[i]) {
      if (!start) start = v;
      last = v;
    } else if (start) {
      out.push_back({*start, last});
      start.reset();
    }
  }
  if (start) out.push_back({*start, last});
  return out;
}

void write_grid_csv(const std::string& path, const ConfidenceSet& cs) {
  std::ostringstream os;
  os.precision(12);
  const std::size_t d = cs.grid.empty() ? 0 : cs.grid.front().size();
  for (std::size_t j = 0; j < d; ++j) os << "theta" << j + 1 << ',';
  os << "log_gue,member\n";
  for (std::size_t i = 0; i < cs.grid.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) os << cs.grid[i][j] << ',';
    os << cs.log_gue[i] << ',' << (cs.members[i] ? 1 : 0) << '\n';
  }
  emit(path, os.str());
}

int run_ci(const CiArgs& a) {
  const Sample data = load_csv_sample(a.data);
  const auto model = a.loss.model_for(data);
  check_sample(*model, data);
  const Method method = parse_method(a.method);
  log_threshold(a.alpha);
  const auto est = solve_erm(*model, data, derive_seed(a.seed, "erm"), false).theta;

  Json j;
  j["method"] = to_string(method);
  j["loss"] = model->name();
  j["alpha"] = a.alpha;
  j["n"] = data.size();
  j["seed"] = a.seed;
  j["estimate"] = est.to_vector();
  std::ostream& sum = summary_stream(a.out);
  sum << to_string(method) << " at alpha " << a.alpha << " on " << data.size() << " observations, loss "
      << model->name() << "\n";

  if (method == Method::gue_offline || method == Method::gue_online) {
    const RateSource src = a.rate.source();
    const std::size_t points = a.grid ? a.grid : (model->param_dim() == 1 ? 1000 : 200);
    const ParamGrid grid(model->bounding_box(data), points);
    const double alphas[1] = {a.alpha};
    ConfidenceSet cs;
    Json rate;
    rate["provenance"] = to_string(src.provenance());
    if (method == Method::gue_offline) {
      double w = 0.0;
      const std::uint64_t cseed = derive_seed(a.seed, "calibrate");
      if (src.kind == RateSourceKind::nonparam || src.kind == RateSourceKind::param) {
        CalibrationConfig cc;
        cc.alpha = a.alpha;
        cc.bootstrap_reps = src.bootstrap_reps;
        cc.mode = CalibrationMode::offline;
        cc.seed = cseed;
        cc.split_frac = a.split_frac;
        const auto res = src.kind == RateSourceKind::nonparam ? calibrate_nonparam(*model, data, cc)
                                                               : calibrate_param(src.family, *model, data, cc);
        w = res.chosen;
        rate["calibration"] = res.to_json();
      } else {
        w = rates_for_alphas(src, *model, data, alphas, CalibrationMode::offline, cseed, a.split_frac)[0];
      }
      rate["omega"] = w;
      const auto split = make_offline_split(*model, data, a.split_frac, w, derive_seed(a.seed, "split-erm"));
      const OfflineEvaluator eval(model, split);
      cs = confidence_set([&](const ParamPoint& t) { return eval(t); }, grid, a.alpha);
      j["split_frac"] = a.split_frac;
    } else {
      RecalibrationPlan plan;
      plan.every = a.rate.recalibrate_every;
      const auto rates = online_rate_schedule(src, *model, data, alphas, derive_seed(a.seed, "online-rate"), plan);
      const auto lagged = model->lagged_estimates(data, model->default_theta0(), derive_seed(a.seed, "lagged"));
      const auto trace = GueTrace::from_lagged(model, data, lagged, rates[0]);
      cs = confidence_set([&](const ParamPoint& t) { return trace.log_gue_at(t); }, grid, a.alpha);
      rate["per_step"] = rates[0];
      rate["final"] = rates[0].empty() ? 0.0 : rates[0].back();
    }
    j["rate"] = rate;
    Json set;
    set["grid_shape"] = grid.shape();
    set["box"] = {{"lo", grid.box().lo.to_vector()}, {"hi", grid.box().hi.to_vector()}};
    set["members"] = cs.member_count();
    set["empty"] = cs.empty();
    if (auto b = cs.bounding_box()) set["member_box"] = {{"lo", b->lo.to_vector()}, {"hi", b->hi.to_vector()}};
    if (model->param_dim() == 1) set["segments"] = segments(cs);
    j["set"] = set;
    if (!a.grid_csv.empty()) write_grid_csv(a.grid_csv, cs);
    emit(a.out, json_text(j));
    if (cs.empty()) {
      sum << "empty confidence set: no grid point is compatible with the data at this level; the model may be "
             "misspecified or the problem ill-posed\n";
      return kExitEmpty;
    }
    if (model->param_dim() == 1) {
      for (const auto& s : set["segments"]) sum << "  [" << s[0].get<double>() << ", " << s[1].get<double>() << "]\n";
    } else {
      sum << "  " << cs.member_count() << " of " << grid.size() << " grid points in the set\n";
    }
    return kExitOk;
  }

  // Baselines.
  const std::uint64_t bseed = derive_seed(a.seed, "baseline");
  Json set;
  bool empty = false;
  switch (method) {
    case Method::prpl_eb: {
      const auto iv = prpl_eb(scalar_values(data), a.alpha).interval(a.alpha);
      set = iv.to_json();
      empty = iv.lower > iv.upper;
      break;
    }
    case Method::classical_wald: {
      set = classical_wald_interval(*model, data, a.alpha, a.rate.reps, bseed).to_json();
      break;
    }
    case Method::bootstrap: {
      if (const auto* km = dynamic_cast<const KMeansLoss*>(model.get())) {
        set = kmeans_bootstrap_ellipse(data, km->clusters(), a.alpha, a.rate.reps, bseed).to_json();
      } else {
        Json ivs = Json::array();
        for (const auto& iv : bootstrap_percentile_ci(*model, data, a.alpha, a.rate.reps, bseed)) ivs.push_back(iv.to_json());
        set = {{"intervals", ivs}};
      }
      break;
    }
    default: break;
  }
  j["set"] = set;
  emit(a.out, json_text(j));
  if (empty) {
    sum << "empty interval\n";
    return kExitEmpty;
  }
  sum << "  " << set.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// calibrate

struct CalibrateArgs {
  std::string data;
  LossFlags loss;
  RateFlags rate;
  double alpha = 0.05;
  std::string mode = "offline";
  double split_frac = 0.5;
  std::uint64_t seed = 0;
  std::string out;
};

int run_calibrate(const CalibrateArgs& a) {
  const Sample data = load_csv_sample(a.data);
  const auto model = a.loss.model_for(data);
  check_sample(*model, data);
  const RateSource src = a.rate.source();
  const CalibrationMode mode = a.mode == "online" ? CalibrationMode::online : CalibrationMode::offline;
  Json j;
  if (src.kind == RateSourceKind::nonparam || src.kind == RateSourceKind::param) {
    CalibrationConfig cc;
    cc.alpha = a.alpha;
    cc.bootstrap_reps = src.bootstrap_reps;
    cc.mode = mode;
    cc.seed = a.seed;
    cc.split_frac = a.split_frac;
    const auto res = src.kind == RateSourceKind::nonparam ? calibrate_nonparam(*model, data, cc)
                                                          : calibrate_param(src.family, *model, data, cc);
    j = res.to_json();
  } else {
    const double alphas[1] = {a.alpha};
    j["chosen"] = rates_for_alphas(src, *model, data, alphas, mode, a.seed, a.split_frac)[0];
    j["alpha"] = a.alpha;
    j["mode"] = to_string(mode);
    j["seed"] = a.seed;
  }
  j["provenance"] = to_string(src.provenance());
  j["loss"] = model->name();
  j["n"] = data.size();
  emit(a.out, json_text(j));
  summary_stream(a.out) << "learning rate " << j["chosen"].get<double>() << " (" << j["provenance"].get<std::string>()
                        << ", " << to_string(mode) << ")\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// experiment

struct ExperimentArgs {
  std::string config;
  std::optional<std::size_t> reps;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
};

int run_experiment(const ExperimentArgs& a) {
  const ConfigFile c = ConfigFile::load(a.config);
  ExperimentConfig cfg = experiment_from_config(c);
  if (a.reps) cfg.reps = *a.reps;
  if (a.seed) cfg.seed = *a.seed;
  if (a.threads) cfg.threads = *a.threads;
  cfg.validate();
  const std::string mode = c.get_string("mode", "coverage");
  std::string csv;
  Json json;
  std::ostringstream table;
  if (mode == "coverage") {
    const auto rep = run_coverage(cfg);
    csv = rep.to_csv();
    json = rep.to_json();
    table << "method          alpha  nominal  observed  se      used\n";
    for (const auto& r : rep.rows) {
      char line[160];
      std::snprintf(line, sizeof line, "%-15s %-6.3g %-8.3g %-9.4f %-7.4f %zu\n", to_string(r.method), r.alpha,
                    r.nominal, r.observed, r.se, r.used);
      table << line;
    }
    table << rep.failures << " failed replications, " << rep.runtime_seconds << " s\n";
  } else if (mode == "power") {
    c.require({"power.n", "power.null", "power.alternatives"});
    std::vector<std::size_t> ns;
    for (double v : c.get_doubles("power.n")) {
      if (!(v >= 2.0) || v != std::floor(v)) throw Error(ErrorCode::config_error, "power.n must list integers ≥ 2");
      ns.push_back(static_cast<std::size_t>(v));
    }
    std::vector<GeneratorSpec> alts;
    for (const auto& s : c.get_list("power.alternatives")) alts.push_back(parse_generator_spec(s));
    const auto rep = run_power(cfg, alts, ns, c.get_double("power.null", 0.0));
    csv = rep.to_csv();
    json = rep.to_json();
    for (const auto& curve : rep.curves) {
      table << curve.alternative << ":";
      for (const auto& p : curve.points) table << "  n=" << p.n << " type2=" << p.type2;
      table << "\n";
    }
  } else {
    throw Error(ErrorCode::config_error, "mode must be coverage or power");
  }
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    emit(a.out + ".csv", csv);
    emit(a.out + ".json", json_text(json));
  }
  summary_stream(a.out) << table.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// diagnose

struct DiagnoseArgs {
  std::string generator;
  std::string data;
  LossFlags loss;
  RateFlags rate;
  std::size_t n_max = 100;
  std::size_t draws = 1000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::string out;
};

int run_diagnose(const DiagnoseArgs& a) {
  GeneratorPtr gen;
  if (!a.data.empty()) {
    gen = std::make_shared<EmpiricalGenerator>(load_csv_sample(a.data));
  } else {
    gen = make_generator(parse_generator_spec(a.generator));
  }
  const auto model = make_loss_model(a.loss.spec());
  RecalibrationPlan plan;
  plan.every = a.rate.recalibrate_every;
  const auto rep = unit_dominance_diagnostic(*gen, *model, a.rate.source(), a.n_max, a.draws, a.seed, a.alpha, 0.95,
                                             plan);
  emit(a.out, rep.to_csv());
  summary_stream(a.out) << (rep.violated() ? "unit dominance violated" : "no violation detected")
                        << ": max joint lower bound " << rep.max_lower() << "\n";
  return kExitOk;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::invalid_argument:
    case ErrorCode::config_error: return kExitUsage;
    default: return kExitData;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence sets and tests from generalized universal e-values"};
  app.footer(kCsvHelp);
  app.require_subcommand(1);

  CiArgs ci;
  auto* ci_cmd = app.add_subcommand("ci", "confidence set for the risk minimizer from CSV data");
  ci_cmd->add_option("data", ci.data, "CSV data file")->required();
  ci.loss.add(ci_cmd);
  ci.rate.add(ci_cmd);
  ci_cmd->add_option("--method", ci.method, "gue_offline, gue_online, bootstrap, classical_wald, prpl_eb")
      ->capture_default_str();
  ci_cmd->add_option("--alpha", ci.alpha, "error level")->capture_default_str();
  ci_cmd->add_option("--split-frac", ci.split_frac, "fraction of data used to fit the offline estimate")
      ->capture_default_str();
  ci_cmd->add_option("--recalibrate-every", ci.rate.recalibrate_every, "online recalibration stride")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  ci_cmd->add_option("--seed", ci.seed, "random seed")->capture_default_str();
  ci_cmd->add_option("--grid", ci.grid, "grid points per axis (default 1000 in 1-D, 200 otherwise)");
  ci_cmd->add_option("--grid-csv", ci.grid_csv, "write the membership grid as CSV");
  ci_cmd->add_option("--out", ci.out, "write JSON here instead of stdout");

  CalibrateArgs cal;
  auto* cal_cmd = app.add_subcommand("calibrate", "choose a learning rate for CSV data");
  cal_cmd->add_option("data", cal.data, "CSV data file")->required();
  cal.loss.add(cal_cmd);
  cal.rate.add(cal_cmd);
  cal_cmd->add_option("--alpha", cal.alpha, "error level")->capture_default_str();
  cal_cmd->add_option("--mode", cal.mode, "offline or online")
      ->capture_default_str()
      ->check(CLI::IsMember({"offline", "online"}));
  cal_cmd->add_option("--split-frac", cal.split_frac, "offline split fraction")->capture_default_str();
  cal_cmd->add_option("--seed", cal.seed, "random seed")->capture_default_str();
  cal_cmd->add_option("--out", cal.out, "write JSON here instead of stdout");

  ExperimentArgs ex;
  auto* ex_cmd = app.add_subcommand("experiment", "run a coverage or power study from a config file");
  ex_cmd->add_option("config", ex.config, "config file (key = value lines)")->required();
  ex_cmd->add_option("--reps", ex.reps, "override the replication count")->check(CLI::PositiveNumber);
  ex_cmd->add_option("--seed", ex.seed, "override the seed");
  ex_cmd->add_option("--threads", ex.threads, "worker threads")->check(CLI::PositiveNumber);
  ex_cmd->add_option("--out", ex.out, "write PREFIX.csv and PREFIX.json instead of CSV on stdout");

  DiagnoseArgs dg;
  auto* dg_cmd = app.add_subcommand("diagnose", "unit-dominance diagnostic along one path");
  auto* gen_opt = dg_cmd->add_option("--generator", dg.generator, "generator as name:p1:p2, e.g. exponential:1");
  auto* data_opt = dg_cmd->add_option("--data", dg.data, "CSV file to resample instead of a generator");
  gen_opt->excludes(data_opt);
  dg.loss.add(dg_cmd);
  dg.rate.add(dg_cmd);
  dg_cmd->add_option("--recalibrate-every", dg.rate.recalibrate_every, "online recalibration stride")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  dg_cmd->add_option("--n-max", dg.n_max, "path length")->capture_default_str()->check(CLI::PositiveNumber);
  dg_cmd->add_option("--draws", dg.draws, "fresh draws per step (M)")->capture_default_str();
  dg_cmd->add_option("--alpha", dg.alpha, "level used for calibration")->capture_default_str();
  dg_cmd->add_option("--seed", dg.seed, "random seed")->capture_default_str();
  dg_cmd->add_option("--out", dg.out, "write CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ci_cmd) return run_ci(ci);
    if (*cal_cmd) return run_calibrate(cal);
    if (*ex_cmd) return run_experiment(ex);
    if (dg.generator.empty() && dg.data.empty()) {
      std::cerr << "diagnose needs --generator or --data\n";
      return kExitUsage;
    }
    return run_diagnose(dg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
