// Command-line front end for the randomized splitting experiments.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "rbm/harness.hpp"

namespace fs = std::filesystem;
using namespace rbm;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> realizations;
  std::string out = "out";
  std::optional<std::size_t> threads;
};

struct Context {
  Json cfg = Json::object();
  fs::path base_dir;
  std::uint64_t seed = 1;
  std::size_t realizations = 25;
  std::size_t threads = 1;
  fs::path out;
};

Context make_context(const Globals& g, std::size_t default_realizations) {
  Context c;
  if (!g.config.empty()) {
    c.cfg = read_json_file(g.config);
    c.base_dir = fs::path(g.config).parent_path();
  }
  c.seed = g.seed ? *g.seed : c.cfg.value("seed", std::uint64_t{1});
  c.realizations = g.realizations ? *g.realizations : c.cfg.value("realizations", default_realizations);
  c.threads = g.threads ? *g.threads : c.cfg.value("threads", std::size_t{1});
  c.out = g.out;
  fs::create_directories(c.out);
  return c;
}

Model context_model(const Context& c, const std::string& spacing_override = {}) {
  Json m = c.cfg.value("model", Json::object());
  if (!spacing_override.empty()) m["spacing"] = spacing_override;
  return model_from_json(m, c.base_dir);
}

void write_meta(const Context& c, const std::string& command, const Json& extra = Json::object()) {
  Json meta;
  meta["command"] = command;
  meta["config"] = c.cfg;
  meta["seed"] = c.seed;
  meta["realizations"] = c.realizations;
  meta["threads"] = c.threads;
  meta["versions"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"compiler", __VERSION__},
                      {"rbm", "1.0.0"}};
  for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
  std::ofstream(c.out / "meta.json") << meta.dump(2) << '\n';
}

MinimizeOptions minimize_options(const Context& c) {
  MinimizeOptions o;
  o.tol = c.cfg.value("tol", 1e-6);
  o.max_iter = c.cfg.value("max_iter", std::size_t{10000});
  return o;
}

bool in_range(double v, double lo, double hi) { return v >= lo && v <= hi; }

int report(bool check, bool ok) {
  if (check && !ok) {
    std::cerr << "check failed\n";
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized time-splitting for linear-quadratic optimal control"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON experiment configuration");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--realizations", g.realizations, "random realizations per step size");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads");

  std::string spacing;
  bool check = false;

  auto* simulate = app.add_subcommand("simulate", "forward solve of the original and one randomized system");
  double sim_h = std::ldexp(1.0, -9);
  std::size_t sim_r = 0;
  simulate->add_option("--step", sim_h, "time step h")->capture_default_str();
  simulate->add_option("--realization", sim_r, "realization index")->capture_default_str();
  simulate->add_option("--spacing", spacing, "heat-1D grid spacing: domain or half_domain");

  auto* optimize = app.add_subcommand("optimize", "optimal control of the original and one randomized system");
  double opt_h = std::ldexp(1.0, -9);
  std::size_t opt_r = 0;
  optimize->add_option("--step", opt_h, "time step h")->capture_default_str();
  optimize->add_option("--realization", opt_r, "realization index")->capture_default_str();
  optimize->add_option("--spacing", spacing, "heat-1D grid spacing: domain or half_domain");

  auto* converge = app.add_subcommand("converge", "convergence sweep over h and realizations");
  std::vector<int> conv_exp;
  bool no_optimize = false;
  converge->add_option("--h-exponents", conv_exp, "h = 2^-e for each e (default 5 7 9 11 13)");
  converge->add_flag("--no-optimize", no_optimize, "forward error only");
  converge->add_option("--spacing", spacing, "heat-1D grid spacing: domain or half_domain");
  converge->add_flag("--check", check, "assert the expected rate ranges");

  auto* table1 = app.add_subcommand("table1", "variance of the four heat-1D splittings");
  double lambda = 0.1;
  table1->add_option("--lambda", lambda, "resolvent shift of W = (A - lambda I)^-1")->capture_default_str();
  table1->add_option("--spacing", spacing, "heat-1D grid spacing: domain or half_domain");
  table1->add_flag("--check", check, "compare against the reference values within 1%");

  auto* mesh = app.add_subcommand("mesh-study", "normalized errors for several heat-1D node counts");
  std::vector<std::size_t> mesh_N{31, 61, 121};
  int mesh_exp = 9;
  bool mesh_opt = false;
  mesh->add_option("--nodes", mesh_N, "node counts")->capture_default_str();
  mesh->add_option("--h-exponent", mesh_exp, "h = 2^-e")->capture_default_str();
  mesh->add_flag("--optimize", mesh_opt, "also report control errors");
  mesh->add_option("--spacing", spacing, "heat-1D grid spacing: domain or half_domain");
  mesh->add_flag("--check", check, "assert mesh independence of the weighted ratio");

  auto* timing = app.add_subcommand("timing", "wall-clock of original and randomized solves");
  std::vector<double> timing_h;
  bool timing_opt = false;
  timing->add_option("--step", timing_h, "time steps h (default 2^-10)");
  timing->add_flag("--optimize", timing_opt, "also time optimizations");
  timing->add_flag("--check", check, "assert randomized forward solves are faster");

  auto* comm = app.add_subcommand("commutative-check", "exact expectation bound for commuting parts");
  std::size_t comm_K = 4;
  double comm_T = 1.0;
  comm->add_option("--K", comm_K, "interval count")->capture_default_str();
  comm->add_option("--T", comm_T, "horizon")->capture_default_str();
  comm->add_flag("--check", check, "fail when a bound is violated");

  auto* particles = app.add_subcommand("particle-check", "batch partition mapping for interacting particles");
  std::vector<std::size_t> pairs{4, 2, 6, 2, 6, 3, 8, 4};
  particles->add_option("--pairs", pairs, "N P N P ... list")->capture_default_str();
  particles->add_flag("--check", check, "fail on any mismatch");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) {
      auto c = make_context(g, 1);
      const Model m = context_model(c, spacing);
      const double h = c.cfg.value("h", sim_h);
      const TimeGrid grid = uniform_grid(m.cost.T, intervals_for(m.cost.T, h));
      const ControlSignal zero = ControlSignal::zero(grid, m.sys.inputs());
      const Trajectory x = solve_forward(m.sys, zero, original_source(m.sys, grid));
      const Schedule s = draw_schedule(grid, m.table, realization_seed(c.seed, 0, sim_r));
      const auto ops = make_step_operators(m.sys, assemble_all(m.decomposition, m.table), grid);
      const Trajectory xh = solve_forward(m.sys, zero, scheduled_source(ops, s));
      write_csv(c.out / "trajectory_original.csv", x);
      write_csv(c.out / "trajectory_randomized.csv", xh);
      write_schedule_csv(c.out / "schedule.csv", s);
      const auto e = error_trajectory(xh, x);
      std::ofstream rec(c.out / "records.csv");
      rec << "k,t,error\n" << std::setprecision(17);
      for (Index k = 0; k < e.pointwise.size(); ++k)
        rec << k << ',' << grid.node(static_cast<std::size_t>(k)) << ',' << e.pointwise(k) << '\n';
      write_meta(c, "simulate", {{"h", h}, {"max_error", e.max}, {"relative_max_error", e.relative_max}});
      std::cout << "max error " << e.max << " (relative " << e.relative_max << ")\n";
      return 0;
    }
    if (*optimize) {
      auto c = make_context(g, 1);
      const Model m = context_model(c, spacing);
      const double h = c.cfg.value("h", opt_h);
      const TimeGrid grid = uniform_grid(m.cost.T, intervals_for(m.cost.T, h));
      const auto original = original_source(m.sys, grid);
      const auto ops = make_step_operators(m.sys, assemble_all(m.decomposition, m.table), grid);
      const Schedule s = draw_schedule(grid, m.table, realization_seed(c.seed, 0, opt_r));
      const auto src = scheduled_source(ops, s);
      const auto opts = minimize_options(c);
      const OptResult ref = minimize(m.sys, m.cost, original, std::nullopt, opts);
      const OptResult rnd = minimize(m.sys, m.cost, src, std::nullopt, opts);
      write_csv(c.out / "control_original.csv", ref.control);
      write_csv(c.out / "control_randomized.csv", rnd.control);
      write_history_csv(c.out / "history_original.csv", ref);
      write_history_csv(c.out / "history_randomized.csv", rnd);
      write_schedule_csv(c.out / "schedule.csv", s);
      const double J_of_rnd = cost(m.sys, m.cost, rnd.control, original);
      write_meta(c, "optimize",
                 {{"h", h}, {"J_original", ref.cost}, {"J_randomized", rnd.cost}, {"J_original_at_randomized", J_of_rnd},
                  {"iterations_original", ref.iterations}, {"iterations_randomized", rnd.iterations}});
      std::cout << std::setprecision(10) << "J(u*) = " << ref.cost << "  J_h(u*_h) = " << rnd.cost
                << "  J(u*_h) = " << J_of_rnd << '\n';
      return 0;
    }
    if (*converge) {
      auto c = make_context(g, 25);
      const Model m = context_model(c, spacing);
      ConvergenceConfig cc;
      cc.hs = conv_exp.empty() ? step_sizes_from_json(c.cfg, {0x1p-5, 0x1p-7, 0x1p-9, 0x1p-11, 0x1p-13}) : std::vector<double>{};
      for (int e : conv_exp) cc.hs.push_back(std::ldexp(1.0, -e));
      cc.realizations = c.realizations;
      cc.seed = c.seed;
      cc.threads = c.threads;
      cc.optimize = !no_optimize && c.cfg.value("optimize", true);
      cc.minimize = minimize_options(c);
      const auto res = run_convergence(m, cc);
      write_records_csv(c.out / "records.csv", res.records);
      write_durations_csv(c.out / "durations.csv", res.records);
      write_summary_csv(c.out / "summary.csv", res.summary);
      Json slopes = Json::object();
      bool ok = true;
      for (const auto& metric : metric_names()) {
        const auto s = res.slope(metric);
        if (!s) continue;
        slopes[metric] = *s;
        const bool in = metric == "suboptimality" ? in_range(*s, 0.8, 1.2) : in_range(*s, 0.35, 0.65);
        ok = ok && in;
        std::cout << metric << " slope " << *s << (in ? "" : "  (outside expected range)") << '\n';
      }
      if (cc.optimize)
        for (const auto& r : res.records)
          if (!(r.control_norm_sq <= r.coercivity_bound)) ok = false;
      write_meta(c, "converge", {{"slopes", slopes}});
      return report(check, ok);
    }
    if (*table1) {
      auto c = make_context(g, 1);
      Heat1dConfig base = heat1d_from_json(c.cfg.value("model", Json::object()));
      if (!spacing.empty()) base.spacing = heat1d_from_json(Json{{"spacing", spacing}}).spacing;
      const auto rows = run_table1(base, c.cfg.value("lambda", lambda));
      const double ref_var[4] = {4.16e7, 1.65e8, 3.68e8, 4.16e7};
      const double ref_w[4] = {57.32, 133.91, 246.54, 96.68};
      std::ofstream out(c.out / "summary.csv");
      out << "case,variance,weighted_variance\n" << std::setprecision(17);
      bool ok = true;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        out << to_string(rows[i].which) << ',' << rows[i].variance << ',' << rows[i].weighted_variance << '\n';
        std::cout << std::setprecision(6) << "case " << std::setw(3) << to_string(rows[i].which) << "  Var "
                  << rows[i].variance << "  Var_W " << rows[i].weighted_variance << '\n';
        ok = ok && std::abs(rows[i].variance / ref_var[i] - 1.0) <= 0.01 &&
             std::abs(rows[i].weighted_variance / ref_w[i] - 1.0) <= 0.01;
      }
      write_meta(c, "table1");
      return report(check, ok);
    }
    if (*mesh) {
      auto c = make_context(g, 25);
      Heat1dConfig base = heat1d_from_json(c.cfg.value("model", Json::object()));
      if (!spacing.empty()) base.spacing = heat1d_from_json(Json{{"spacing", spacing}}).spacing;
      ConvergenceConfig cc;
      cc.realizations = c.realizations;
      cc.seed = c.seed;
      cc.threads = c.threads;
      cc.optimize = mesh_opt;
      cc.minimize = minimize_options(c);
      const auto rows = run_mesh_study(base, mesh_N, std::ldexp(1.0, -mesh_exp), cc, c.cfg.value("lambda", 0.1));
      std::ofstream out(c.out / "summary.csv");
      out << "N,variance,weighted_variance,state_error_mean,state_error_sd,state_over_sqrt_var,state_over_sqrt_var_w,"
             "control_error_mean,control_over_sqrt_var,control_over_sqrt_var_w\n"
          << std::setprecision(17);
      double lo = INFINITY, hi = 0.0;
      bool nonincreasing = true;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        out << r.N << ',' << r.variance << ',' << r.weighted_variance << ',' << r.state_error.mean << ','
            << r.state_error.sd << ',' << r.state_over_sqrt_var << ',' << r.state_over_sqrt_var_w << ','
            << r.control_error.mean << ',' << r.control_over_sqrt_var << ',' << r.control_over_sqrt_var_w << '\n';
        std::cout << "N " << r.N << "  err/sqrt(Var) " << r.state_over_sqrt_var << "  err/sqrt(Var_W) "
                  << r.state_over_sqrt_var_w << '\n';
        lo = std::min(lo, r.state_over_sqrt_var_w);
        hi = std::max(hi, r.state_over_sqrt_var_w);
        if (i > 0 && r.state_over_sqrt_var > rows[i - 1].state_over_sqrt_var) nonincreasing = false;
      }
      write_meta(c, "mesh-study");
      return report(check, hi < 2.0 * lo && nonincreasing);
    }
    if (*timing) {
      auto c = make_context(g, 3);
      Json mj = c.cfg.value("model", Json{{"type", "block"}, {"N", 96}, {"P", 16}});
      const Model m = model_from_json(mj, c.base_dir);
      TimingConfig tc;
      tc.hs = timing_h.empty() ? step_sizes_from_json(c.cfg, {0x1p-10}) : timing_h;
      tc.realizations = c.realizations;
      tc.seed = c.seed;
      tc.optimize = timing_opt;
      tc.minimize = minimize_options(c);
      const auto rows = run_timing(m, tc);
      std::ofstream out(c.out / "records.csv");
      out << "h,K,realization,setup_original,setup_randomized,forward_original,forward_randomized,forward_ratio,"
             "optimize_original,optimize_randomized\n"
          << std::setprecision(6);
      bool ok = true;
      for (const auto& r : rows) {
        out << r.h << ',' << r.K << ',' << r.realization << ',' << r.setup_original << ',' << r.setup_randomized << ','
            << r.forward_original << ',' << r.forward_randomized << ',' << r.forward_ratio() << ','
            << r.optimize_original << ',' << r.optimize_randomized << '\n';
        std::cout << "h " << r.h << " K " << r.K << " r " << r.realization << "  forward ratio " << r.forward_ratio()
                  << '\n';
        ok = ok && r.forward_ratio() < 1.0;
      }
      write_meta(c, "timing");
      return report(check, ok);
    }
    if (*comm) {
      auto c = make_context(g, 1);
      Decomposition d;
      SubsetTable t;
      Vector x0;
      if (c.cfg.contains("splitting")) {
        std::tie(d, t) = load_splitting_json(c.base_dir / c.cfg["splitting"].get<std::string>());
        x0 = c.cfg.contains("x0") ? mm::read_vector(c.base_dir / c.cfg["x0"].get<std::string>()) : Vector(Vector::Ones(d.dim()));
      } else {
        Matrix a1 = Matrix::Zero(2, 2), a2 = Matrix::Zero(2, 2);
        a1(0, 0) = -1.0;
        a2(1, 1) = -2.0;
        d = make_decomposition({to_csr(a1), to_csr(a2)});
        t = uniform_singletons(2);
        x0 = Vector::Ones(2);
      }
      const auto rows = run_commutative_check(d, t, x0, c.cfg.value("T", comm_T), c.cfg.value("K", comm_K),
                                              {c.cfg.value("lambda", 0.1)});
      std::ofstream out(c.out / "summary.csv");
      out << "weight,expected_sq_error,euclidean_bound,commutative_bound,holds\n" << std::setprecision(17);
      bool ok = true;
      for (const auto& r : rows) {
        out << r.weight << ',' << r.expected_sq_error << ',' << r.euclidean_bound << ',' << r.commutative_bound << ','
            << (r.holds() ? 1 : 0) << '\n';
        std::cout << r.weight << "  E|e|^2 " << r.expected_sq_error << "  bounds " << r.euclidean_bound << ", "
                  << r.commutative_bound << (r.holds() ? "" : "  VIOLATED") << '\n';
        ok = ok && r.holds();
      }
      write_meta(c, "commutative-check");
      return report(check, ok);
    }
    if (*particles) {
      auto c = make_context(g, 1);
      if (pairs.size() % 2) throw Error("--pairs expects an even number of values");
      std::ofstream out(c.out / "summary.csv");
      out << "N,P,partitions,expected_partitions,inclusion_exact,operator_mismatch,passed\n";
      bool ok = true;
      for (std::size_t i = 0; i < pairs.size(); i += 2) {
        const auto rep = run_particle_check({pairs[i], pairs[i + 1], std::nullopt});
        out << rep.N << ',' << rep.P << ',' << rep.partitions << ',' << rep.expected_partitions << ','
            << rep.inclusion_exact << ',' << rep.operator_mismatch << ',' << rep.passed() << '\n';
        std::cout << "N " << rep.N << " P " << rep.P << "  partitions " << rep.partitions
                  << (rep.passed() ? "  ok" : "  MISMATCH") << '\n';
        ok = ok && rep.passed();
      }
      write_meta(c, "particle-check");
      return report(check, ok);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
