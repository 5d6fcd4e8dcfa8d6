// Acceptance suite. Prints one PASS/FAIL line per criterion.
//
//   acceptance            run criteria 1-10
//   acceptance 4 7        run the listed criteria
//
// Exit status is 0 when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gue.hpp"

using namespace gue;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

LossModelPtr loss(const std::string& name, double q = 0.5) {
  LossSpec s;
  s.name = name;
  s.q = q;
  return make_loss_model(s);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

std::string row_text(const CoverageRow& r) {
  return std::string(to_string(r.method)) + "@" + fmt(r.alpha, 3) + "=" + fmt(r.observed) + "(se " + fmt(r.se, 2) +
         ", used " + std::to_string(r.used) + ")";
}

bool at_least_nominal(const CoverageRow& r) { return r.observed >= r.nominal - 3.0 * r.se; }
bool below_nominal(const CoverageRow& r) { return r.observed < r.nominal - 3.0 * r.se; }

// 1. Mean of the offline e-value at the truth.
Outcome criterion1() {
  const auto model = loss("l2_mean");
  const GaussianGenerator gen(0.0, 1.0);
  const std::size_t reps = 10000;
  std::vector<double> e(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    Rng rng = make_rng(101, "rep", r);
    const Sample s = gen.sample(20, rng);
    const auto split = make_offline_split(*model, s, 0.5, 0.25);
    e[r] = std::exp(offline_log_gue(*model, split, ParamPoint{0.0}));
  }
  const double m = stats::mean(e), se = stats::stddev(e) / std::sqrt(double(reps));
  return {m <= 1.0 + 3.0 * se, "mean e-value " + fmt(m, 5) + ", bound " + fmt(1.0 + 3.0 * se, 5)};
}

ExperimentConfig gaussian_config(RateSourceKind kind, std::size_t n, std::size_t reps, std::vector<double> alphas,
                                  std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.generator = {"gaussian", {0.0, 1.0}, {}, {}};
  cfg.methods = {Method::gue_offline};
  cfg.rate.kind = kind;
  cfg.rate.sigma2 = 1.0;
  cfg.stopping = StoppingRule::fixed(n);
  cfg.alphas = std::move(alphas);
  cfg.reps = reps;
  cfg.seed = seed;
  cfg.compute_width = false;
  return cfg;
}

// 2. Halved normal rate is valid at fixed n.
Outcome criterion2() {
  const auto rep = run_coverage(gaussian_config(RateSourceKind::normal_l2_half, 100, 500, {0.05, 0.1}, 202));
  Outcome o{rep.failures == 0, ""};
  for (const auto& r : rep.rows) {
    o.pass = o.pass && at_least_nominal(r);
    o.detail += row_text(r) + " ";
  }
  return o;
}

// 3. Unhalved normal rate is exact.
Outcome criterion3() {
  const auto rep = run_coverage(gaussian_config(RateSourceKind::normal_l2, 50, 2000, {0.05}, 303));
  const auto& r = rep.rows.front();
  return {rep.failures == 0 && std::abs(r.observed - 0.95) <= 0.02, row_text(r)};
}

ExperimentConfig mixture_config() {
  ExperimentConfig cfg;
  cfg.generator = {"labeled_threshold", {5.0, 10.0, 1e4}, {}, {}};
  cfg.loss.name = "zero_one_threshold";
  cfg.rate.kind = RateSourceKind::nonparam;
  cfg.alphas = {0.05, 0.1, 0.2};
  cfg.reps = 500;
  cfg.compute_width = false;
  // Recalibrate on a geometric schedule; per-step recalibration on paths of
  // up to 10³ points is out of reach for the runtime budget.
  cfg.recalibration.growth = 1.25;
  return cfg;
}

// 4. Optional stopping: collect until H₀: θ* = 0 is rejected.
Outcome criterion4() {
  auto cfg = mixture_config();
  cfg.methods = {Method::gue_online, Method::classical_wald};
  cfg.stopping = StoppingRule::until_reject(0.0, 10, 1000);
  cfg.seed = 404;
  const auto rep = run_coverage(cfg);
  bool gue_ok = true, wald_bad = false;
  std::string d;
  for (const auto& r : rep.rows) {
    if (r.method == Method::gue_online) gue_ok = gue_ok && at_least_nominal(r);
    if (r.method == Method::classical_wald) wald_bad = wald_bad || below_nominal(r);
    d += row_text(r) + " ";
  }
  d += "failures " + std::to_string(rep.failures);
  return {rep.failures == 0 && gue_ok && wald_bad, d};
}

// 5. Only data sets that falsely reject H₀: θ* ≥ −10 are kept.
Outcome criterion5() {
  auto cfg = mixture_config();
  cfg.methods = {Method::gue_online, Method::classical_wald};
  cfg.stopping = StoppingRule::fixed(100);
  cfg.filter.kind = SelectionFilter::Kind::false_rejections_only;
  cfg.filter.null_bound = -10.0;
  cfg.alphas = {0.1};
  cfg.seed = 505;
  const auto rep = run_coverage(cfg);
  const auto& g = rep.row(Method::gue_online, 0.1);
  const auto& w = rep.row(Method::classical_wald, 0.1);
  return {rep.failures == 0 && w.used > 0 && w.observed < 0.1 && at_least_nominal(g),
          row_text(w) + " " + row_text(g) + " failures " + std::to_string(rep.failures)};
}

// 6. PrPl-EB against offline GUe on Beta(5,2), n = 10.
Outcome criterion6() {
  const BetaGenerator gen(5.0, 2.0);
  std::size_t full_upper = 0;
  std::vector<double> lo, hi;
  for (std::size_t r = 0; r < 500; ++r) {
    Rng rng = make_rng(606, "prpl", r);
    const auto iv = prpl_eb(scalar_values(gen.sample(10, rng)), 0.05).interval(0.05);
    full_upper += iv.upper == 1.0 ? 1 : 0;
    lo.push_back(iv.lower);
    hi.push_back(iv.upper);
  }
  const double med_lo = stats::quantile(lo, 0.5), med_hi = stats::quantile(hi, 0.5);
  const bool prpl_ok = full_upper == 500 && med_lo == 0.0 && med_hi == 1.0;

  ExperimentConfig cfg;
  cfg.generator = {"beta", {5.0, 2.0}, {}, {}};
  cfg.methods = {Method::gue_offline};
  cfg.rate.kind = RateSourceKind::nonparam;
  cfg.stopping = StoppingRule::fixed(10);
  cfg.alphas = {0.05};
  cfg.reps = 500;
  cfg.seed = 607;
  const auto rep = run_coverage(cfg);
  const auto& g = rep.rows.front();
  const bool gue_ok = rep.failures == 0 && g.mean_width < 1.0 && at_least_nominal(g);
  return {prpl_ok && gue_ok, "PrPl-EB upper=1 in " + std::to_string(full_upper) + "/500, median [" + fmt(med_lo) +
                                 ", " + fmt(med_hi) + "]; " + row_text(g) + " width " + fmt(g.mean_width)};
}

// 7. Unit dominance along 20 exponential paths, L1 loss.
Outcome criterion7() {
  const ExponentialGenerator gen(1.0);
  const auto model = loss("l1_median");
  RateSource src;
  src.kind = RateSourceKind::nonparam;
  std::size_t violated = 0;
  double worst = -kInf;
  for (std::uint64_t p = 0; p < 20; ++p) {
    const auto rep = unit_dominance_diagnostic(gen, *model, src, 100, 1000, derive_seed(707, "path", p));
    violated += rep.violated() ? 1 : 0;
    worst = std::max(worst, rep.max_lower());
  }
  return {violated == 0, std::to_string(violated) + "/20 paths with a lower bound above 1, max lower " + fmt(worst)};
}

// 8. Power of the online test of H₀: median = log 2 against median 2.
Outcome criterion8() {
  ExperimentConfig cfg;
  cfg.generator = {"exponential", {1.0}, {}, {}};
  cfg.loss.name = "l1_median";
  cfg.methods = {Method::gue_online};
  cfg.rate.kind = RateSourceKind::nonparam;
  cfg.alphas = {0.05};
  cfg.reps = 500;
  cfg.seed = 808;
  cfg.recalibration.growth = 1.1;
  const auto rep = run_power(cfg, {{"exponential", {std::log(2.0) / 2.0}, {}, {}}}, {10, 20, 50, 100, 200},
                             std::log(2.0));
  const auto& pts = rep.curves.front().points;
  bool ok = rep.failures == 0;
  std::string d;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    d += "n=" + std::to_string(pts[k].n) + ":" + fmt(pts[k].type2, 3) + " ";
    if (k > 0) ok = ok && pts[k].type2 <= pts[k - 1].type2 + 3.0 * std::hypot(pts[k].se, pts[k - 1].se);
  }
  ok = ok && pts.back().type2 < 0.2;
  return {ok, d};
}

// 9. Property suite.
Outcome criterion9() {
  std::vector<std::string> bad;
  auto check = [&](bool cond, const std::string& what) {
    if (!cond) bad.push_back(what);
  };
  const auto l2 = loss("l2_mean");
  const GaussianGenerator gauss(0.0, 1.0);

  {  // Anytime p never increases as records are appended.
    GueTrace trace(l2, ParamPoint{0.0});
    Rng rng = make_rng(901);
    const double thetas[3] = {-0.5, 0.0, 0.4};
    double prev[3] = {0.0, 0.0, 0.0};
    for (int i = 0; i < 200; ++i) {
      trace.append(gauss.draw(rng), 0.3);
      for (int j = 0; j < 3; ++j) {
        const double lp = anytime_log_p(trace, ParamPoint{thetas[j]});
        check(lp <= prev[j], "anytime p increased at step " + std::to_string(i));
        prev[j] = lp;
      }
    }
  }
  {  // Sets shrink as α grows, offline and online.
    Rng rng = make_rng(902);
    const Sample s = gauss.sample(60, rng);
    const auto split = make_offline_split(*l2, s, 0.5, 0.4);
    const OfflineEvaluator off(l2, split);
    GueTrace on(l2, ParamPoint{0.0});
    for (const auto& z : s) on.append(z, 0.4);
    const auto grid = default_grid(*l2, s);
    for (const LogGueFn& f : {LogGueFn([&](const ParamPoint& t) { return off(t); }),
                             LogGueFn([&](const ParamPoint& t) { return on.log_gue_at(t); })}) {
      const auto wide = confidence_set(f, grid, 0.01);
      for (double a : {0.05, 0.1, 0.5}) {
        const auto narrow = wide.at_alpha(a);
        for (std::size_t i = 0; i < wide.members.size(); ++i) {
          check(!narrow.members[i] || wide.members[i], "nesting fails at alpha " + fmt(a));
        }
      }
    }
  }
  {  // Loss gap 10⁴ with ω = 1 stays finite in log space.
    const Sample s = scalar_sample({0.0, 0.0});
    const auto split = make_offline_split(*l2, s, 0.5, 1.0);
    const double lg = offline_log_gue(*l2, split, ParamPoint{100.0});
    check(std::isfinite(lg) && lg == 1e4, "offline overflow: " + fmt(lg));
    GueTrace trace(l2, ParamPoint{0.0});
    trace.append(scalar_sample({0.0})[0], 1.0);
    const double lp = anytime_log_p(trace, ParamPoint{100.0});
    check(std::isfinite(lp) && lp == -1e4, "online overflow: " + fmt(lp));
  }
  {  // One online record equals the offline split {Z₁} | {Z₂}.
    const Sample s = scalar_sample({0.7, -1.3});
    const auto split = make_offline_split(*l2, s, 0.5, 0.8);
    const ParamPoint lag[1] = {solve_erm(*l2, std::span<const Datum>(s).first(1)).theta};
    const double rate[1] = {0.8};
    const auto trace = GueTrace::from_lagged(l2, std::span<const Datum>(s).subspan(1), lag, rate);
    const auto grid = default_grid(*l2, s, 200);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double a = online_log_gue_at(trace, grid.point(i)), b = offline_log_gue(*l2, split, grid.point(i));
      check(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)), "online/offline disagree at grid point " +
                                                                        std::to_string(i));
    }
  }
  {  // Brute-force generator truths: ERM on 10⁶ draws within 3 SE.
    struct Case {
      GeneratorSpec gen;
      std::string loss;
      double q;
    };
    for (const auto& c : std::vector<Case>{{{"gaussian_mixture", {5.0, 10.0, 1e4}, {}, {}}, "l1_median", 0.5},
                                           {{"beta", {5.0, 2.0}, {}, {}}, "l2_mean", 0.5},
                                           {{"exponential", {1.0}, {}, {}}, "l1_median", 0.5},
                                           {{"gaussian", {-3.0, 9.0}, {}, {}}, "pinball", 0.84},
                                           {{"labeled_threshold", {5.0, 10.0, 1e4}, {}, {}}, "zero_one_threshold", 0.5}}) {
      const auto g = make_generator(c.gen);
      const auto m = loss(c.loss, c.q);
      std::vector<double> small;
      for (std::uint64_t k = 0; k < 10; ++k) {
        Rng rng = make_rng(903, c.gen.name + "small", k);
        small.push_back(solve_erm(*m, g->sample(100000, rng), 0, false).theta[0]);
      }
      Rng rng = make_rng(903, c.gen.name + "big");
      const double big = solve_erm(*m, g->sample(1000000, rng), 0, false).theta[0];
      const double truth = g->truth(*m)[0];
      check(std::abs(big - truth) <= 3.0 * stats::stddev(small) / std::sqrt(10.0),
            "truth of " + c.gen.name + ": " + fmt(big, 6) + " vs " + fmt(truth, 6));
    }
  }
  {  // Same config and seed give identical reports, across thread counts.
    ExperimentConfig cfg;
    cfg.generator = {"beta", {5.0, 2.0}, {}, {}};
    cfg.methods = {Method::gue_offline, Method::gue_online, Method::bootstrap, Method::prpl_eb};
    cfg.rate.kind = RateSourceKind::nonparam;
    cfg.rate.bootstrap_reps = 50;
    cfg.bootstrap_reps = 50;
    cfg.stopping = StoppingRule::fixed(15);
    cfg.reps = 20;
    cfg.seed = 904;
    const auto a = run_coverage(cfg);
    cfg.threads = 3;
    const auto b = run_coverage(cfg);
    check(a.to_csv() == b.to_csv() && a.config_hash != "", "reports differ between runs");
    Rng r1 = make_rng(905), r2 = make_rng(905);
    RateSource src;
    src.kind = RateSourceKind::nonparam;
    const Sample s = gauss.sample(30, r1);
    const double alphas[1] = {0.1};
    check(rates_for_alphas(src, *l2, s, alphas, CalibrationMode::offline, 7) ==
              rates_for_alphas(src, *l2, gauss.sample(30, r2), alphas, CalibrationMode::offline, 7),
          "calibration not deterministic");
  }
  std::string d = bad.empty() ? "all properties hold" : "";
  for (std::size_t i = 0; i < bad.size() && i < 5; ++i) d += bad[i] + "; ";
  return {bad.empty(), d};
}

// 10. Quantile at the boundary of the restricted parameter space.
Outcome criterion10() {
  ExperimentConfig cfg;
  cfg.generator = {"gaussian", {-3.0, 9.0}, {}, {}};
  cfg.loss.name = "pinball_restricted";
  cfg.loss.q = 0.84;
  cfg.methods = {Method::bootstrap, Method::gue_offline};
  cfg.rate.kind = RateSourceKind::nonparam;
  cfg.stopping = StoppingRule::fixed(50);
  cfg.alphas = {0.1};
  cfg.reps = 500;
  cfg.seed = 1010;
  cfg.compute_width = false;
  const auto rep = run_coverage(cfg);
  const auto& b = rep.row(Method::bootstrap, 0.1);
  const auto& g = rep.row(Method::gue_offline, 0.1);
  return {rep.failures == 0 && below_nominal(b) && at_least_nominal(g), row_text(b) + " " + row_text(g)};
}

struct Criterion {
  int id;
  double limit_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{{1, 60, criterion1},   {2, 300, criterion2}, {3, 300, criterion3},
                                   {4, 900, criterion4},  {5, 900, criterion5}, {6, 600, criterion6},
                                   {7, 600, criterion7},  {8, 600, criterion8}, {9, 120, criterion9},
                                   {10, 600, criterion10}};
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    try {
      wanted.push_back(std::stoi(argv[i]));
    } catch (const std::exception&) {
      std::cerr << "usage: acceptance [criterion ...]\n";
      return 2;
    }
  }
  bool all_pass = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && secs < c.limit_seconds;
    all_pass = all_pass && pass;
    std::printf("criterion %d %s (%.1fs, limit %.0fs): %s\n", c.id, pass ? "PASS" : "FAIL", secs, c.limit_seconds,
                o.detail.c_str());
    std::fflush(stdout);
  }
  return all_pass ? 0 : 1;
}
