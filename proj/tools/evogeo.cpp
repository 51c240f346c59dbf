// evogeo: command-line front end.
//
//   evogeo geodesic --config configs/reference.cfg --out out/
//   evogeo sweep-targets --config configs/reference.cfg --out out/ --threads 4

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "evogeo/evogeo.hpp"

namespace fs = std::filesystem;
using namespace evogeo;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 42;
  bool seed_set = false;
  unsigned threads = 0;
  std::string strategy;
  std::string mode;
  double epsilon = 0.0;
  int stages = 0;
};

RunConfig load(const Common& o) {
  if (o.config.empty()) throw IoError("--config is required");
  RunConfig c = load_run_config(o.config);
  if (o.seed_set) c.seed = o.seed;
  c.search.threads = o.threads ? o.threads : default_threads();
  if (!o.strategy.empty()) c.search.pen_strategy = parse_pen_strategy(o.strategy);
  if (!o.mode.empty()) c.search.report_mode = parse_cost_mode(o.mode);
  if (o.epsilon > 0.0) c.search.epsilon = o.epsilon;
  if (o.stages > 0) c.search.stages_max = o.stages;
  c.search.validate();
  fs::create_directories(o.out);
  return c;
}

const Histogram& need(const std::optional<Histogram>& h, const char* key) {
  if (!h) throw IoError(std::string("config: key '") + key + "' is required by this command");
  return *h;
}

std::string path_in(const Common& o, const std::string& name) { return (fs::path(o.out) / name).string(); }

std::string sci(double v) {
  char b[64];
  std::snprintf(b, sizeof b, "%.6e", v);
  return b;
}

json breakdown_json(const CostBreakdown& b) {
  json j;
  j["total"] = b.total;
  j["mut_part"] = b.mut_part;
  j["kl_part"] = b.kl_part;
  j["converged"] = b.converged;
  j["iterations"] = b.iterations;
  std::vector<std::vector<double>> r;
  for (std::size_t i = 0; i < b.minimizer_r.size(); ++i) {
    r.emplace_back();
    for (std::size_t k = 0; k < b.minimizer_r.size(); ++k) r.back().push_back(b.minimizer_r(i, k));
  }
  j["minimizer_r"] = r;
  return j;
}

int cmd_mean_path(const Common& o) {
  const RunConfig c = load(o);
  const Histogram& H = need(c.H, "H");
  const MeanPath mp = mean_trajectory(H, c.model, c.search.mean_tol, c.search.mean_max_steps);
  export_trajectory(mp.path, path_in(o, "mean_path.csv"), c.model.g);
  const FixedPoint fp = terminal_fixed_point(mp.path.points.back(), c.model);
  const Histogram approx = terminal_fixed_point_expansion(H.support(), c.model);
  json j;
  j["steps"] = mp.path.points.size();
  j["converged"] = mp.converged;
  j["last_point"] = mp.path.points.back().vec();
  j["h_ter"] = fp.h_ter.vec();
  j["h_ter_converged"] = fp.converged;
  j["h_ter_first_order"] = approx.vec();
  write_text(path_in(o, "mean_path_summary.json"), j.dump(2) + "\n");
  std::cout << "mean path: " << mp.path.points.size() << " points, converged=" << (mp.converged ? "yes" : "no")
            << "\nh_ter:";
  for (double x : fp.h_ter.values()) std::cout << ' ' << sci(x);
  std::cout << "\n";
  return 0;
}

int cmd_cost(const Common& o) {
  const RunConfig c = load(o);
  const Histogram& H = need(c.H, "H");
  const Histogram& G = need(c.G, "G");
  json j;
  j["feasibility"] = to_string(feasibility(H, G, c.model));
  const auto ex = one_step_cost(H, G, c.model, CostMode::exact);
  const auto fo = one_step_cost(H, G, c.model, CostMode::first_order);
  j["exact"] = breakdown_json(ex);
  j["first_order"] = breakdown_json(fo);
  const auto grad = cost_gradient(std::nullopt, H, G, c.model);
  j["gradient_wrt_H"] = grad.wrt_y_next;
  j["h"] = grad.norm_h;
  write_text(path_in(o, "cost.json"), j.dump(2) + "\n");
  std::cout << "exact       total " << sci(ex.total) << "  mut " << sci(ex.mut_part) << "  kl " << sci(ex.kl_part)
            << (ex.converged ? "" : "  (NOT converged)") << "\n"
            << "first_order total " << sci(fo.total) << "  mut " << sci(fo.mut_part) << "  kl " << sci(fo.kl_part)
            << "\n";
  return ex.converged ? 0 : 3;
}

void print_path(const Trajectory& t) {
  for (std::size_t i = 0; i < t.points.size(); ++i) {
    std::cout << (i + 1);
    for (double x : t.points[i].values()) std::cout << "  " << sci(x);
    if (i < t.step_costs.size()) std::cout << "  " << sci(t.step_costs[i]);
    std::cout << "\n";
  }
}

int cmd_geodesic(const Common& o) {
  const RunConfig c = load(o);
  const Histogram& H = need(c.H, "H");
  const Histogram& G = need(c.G, "G");
  const GeodesicResult r = multi_stage_search(H, G, c.search, c.model);
  export_trajectory(r.path, path_in(o, "geodesic.csv"), c.model.g);
  write_text(path_in(o, "summary.json"), geodesic_summary_json(r, H, G).dump(2) + "\n");
  print_path(r.path);
  std::cout << "total cost " << sci(r.path.total_cost) << "  length " << r.path.points.size() << "  nu " << r.nu
            << "  kappa " << r.kappa << "  stage " << r.stage << "  " << (r.complete ? "complete" : "incomplete")
            << "\nstage-2 candidates " << r.stage2_candidates << "  wall " << r.wall_seconds << " s\n";
  return 0;
}

double min_coord_of(const Trajectory& t) {
  double b = 1.0;
  for (const auto& p : t.points) b = std::min(b, p.min_coord());
  return b;
}

int run_sweep(const Common& o, bool targets) {
  const RunConfig c = load(o);
  std::ostringstream csv;
  csv << (targets ? "w2" : "w1") << ",total_cost,length,nu,kappa,stage,status,min_coord,penultimate\n";
  const auto values = targets ? c.sweep_w2.values() : c.sweep_w1.values();
  const std::size_t g = c.model.g;
  for (double w : values) {
    std::vector<double> h(g), gg(g);
    Histogram H, G;
    if (targets) {
      H = need(c.H, "H");
      gg.assign(g, 0.0);
      gg[0] = c.sweep_g1;
      gg[1] = w;
      const double rest = 1.0 - c.sweep_g1 - w;
      for (std::size_t j = 2; j < g; ++j) gg[j] = rest / static_cast<double>(g - 2);
      G = validate_histogram(gg);
    } else {
      G = need(c.G, "G");
      h[0] = w;
      for (std::size_t j = 1; j < g; ++j) h[j] = (1.0 - w) / static_cast<double>(g - 1);
      H = validate_histogram(h);
    }
    const GeodesicResult r = multi_stage_search(H, G, c.search, c.model);
    char wb[32];
    std::snprintf(wb, sizeof wb, "%.4f", w);
    csv << wb << ',' << sci(r.path.total_cost) << ',' << r.path.points.size() << ',' << r.nu << ',' << r.kappa << ','
        << r.stage << ',' << (r.complete ? "complete" : "incomplete") << ',' << sci(min_coord_of(r.path)) << ',';
    for (std::size_t j = 0; j < g; ++j) csv << (j ? " " : "") << sci(r.penultimate[j]);
    csv << '\n';
    std::cout << wb << "  cost " << sci(r.path.total_cost) << "  length " << r.path.points.size() << "\n" << std::flush;
    export_trajectory(r.path, path_in(o, std::string(targets ? "target_w2_" : "initial_w1_") + wb + ".csv"), g);
  }
  write_text(path_in(o, targets ? "sweep_targets.csv" : "sweep_initials.csv"), csv.str());
  return 0;
}

int cmd_simulate(const Common& o) {
  const RunConfig c = load(o);
  const Histogram& H = need(c.H, "H");
  std::ostringstream csv;
  csv << "run,day";
  for (std::size_t j = 1; j <= c.model.g; ++j) csv << ",gen" << j;
  csv << "\n";
  for (int run = 0; run < c.runs; ++run) {
    RngStream rng(c.seed, static_cast<std::uint64_t>(run));
    const Trajectory t = run_chain(H, c.days, c.model, rng);
    for (std::size_t d = 0; d < t.points.size(); ++d) {
      csv << run << ',' << d + 1;
      for (double x : t.points[d].values()) csv << ',' << sci(x);
      csv << '\n';
    }
  }
  write_text(path_in(o, "simulate.csv"), csv.str());
  std::cout << "wrote " << c.runs << " runs x " << c.days + 1 << " days\n";
  return 0;
}

json report_json(const LdCheckReport& r) {
  json j;
  j["theory_value"] = r.theory_value;
  j["empirical_value"] = r.empirical_value;
  j["n_values"] = r.n_values;
  json emp = json::array(), gaps = json::array();
  for (double x : r.empirical) emp.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  for (double x : r.gaps) gaps.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  j["empirical"] = emp;
  j["gaps"] = gaps;
  j["envelopes"] = r.envelopes;
  j["hits"] = r.hits;
  j["regression_intercept"] = r.regression_intercept;
  j["regression_slope"] = r.regression_slope;
  j["rejection_rate"] = r.rejection_rate;
  j["pass"] = r.pass;
  j["note"] = r.note;
  return j;
}

int cmd_validate(const Common& o) {
  const RunConfig c = load(o);
  json j;
  const auto eb = elementary_bounds_check(1000);
  j["elementary"] = {{"checks", eb.checks}, {"violations", eb.violations}, {"pass", eb.pass()},
                     {"stirling_n1", {{"lhs", eb.stirling_n1_lhs}, {"rhs", eb.stirling_n1_rhs}, {"excluded", true}}}};
  const auto mn = multinomial_ld_check(Histogram::from({0.5, 0.5}), Histogram::from({0.6, 0.4}), {50, 100, 200, 400});
  j["multinomial"] = report_json(mn);
  bool ok = eb.pass() && mn.pass;
  if (c.H && c.G) {
    KernelCheckOptions opt;
    opt.trials = c.trials;
    opt.seed = c.seed;
    opt.threads = c.search.threads;
    const auto kr = kernel_ld_check(*c.H, *c.G, c.model, c.ld_n_values, opt);
    j["kernel"] = report_json(kr);
    ok = ok && kr.pass;
    std::cout << "kernel LD: theory " << sci(kr.theory_value) << "  slope " << kr.regression_slope << "  "
              << (kr.pass ? "PASS" : "FAIL") << "\n";
  }
  write_text(path_in(o, "validate.json"), j.dump(2) + "\n");
  std::cout << "elementary bounds: " << eb.checks << " checks, " << eb.violations.size() << " violations\n"
            << "multinomial LD: " << (mn.pass ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 4;
}

int cmd_pen_landscape(const Common& o) {
  const RunConfig c = load(o);
  const Histogram& G = need(c.G, "G");
  const Landscape L = pen_landscape(G, c.landscape_epsilon, c.search.effective_delta(c.model), c.model, c.search.threads);
  std::ostringstream csv;
  csv << "step";
  for (std::size_t j = 1; j <= L.g; ++j) csv << ",y" << j;
  csv << ",h\n";
  for (std::size_t i = 0; i < L.h.size(); ++i) {
    csv << i + 1;
    for (std::size_t j = 0; j < L.g; ++j) csv << ',' << sci(L.coords[i * L.g + j]);
    csv << ',' << sci(L.h[i]) << '\n';
  }
  write_text(path_in(o, "pen_landscape.csv"), csv.str());
  json j;
  j["G"] = G.vec();
  j["epsilon"] = c.landscape_epsilon;
  j["points"] = L.h.size();
  j["h_seed"] = L.h_seed;
  for (double q : c.quantiles) {
    const double cq = quantile_constant(L, q);
    j["c"][sci(q)] = cq;
    std::cout << "quantile " << q << ": c = " << sci(cq) << "\n";
  }
  write_text(path_in(o, "pen_landscape.json"), j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Large-deviations geodesics for genotype histograms"};
  app.require_subcommand(1);
  Common o;
  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "key = value configuration file")->required();
    s->add_option("--out", o.out, "output directory");
    s->add_option("--seed", o.seed, "random seed (default 42)")->each([&](const std::string&) { o.seed_set = true; });
    s->add_option("--threads", o.threads, "worker threads (default: hardware)");
    s->add_option("--strategy", o.strategy, "full_grid|quantile_pruned|seeded_ball");
    s->add_option("--mode", o.mode, "exact|first_order (reported costs)");
    s->add_option("--epsilon", o.epsilon, "override the PEN mesh");
    s->add_option("--stages", o.stages, "override stages_max");
  };
  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const Common&);
  };
  const Sub subs[] = {
      {"mean-path", "zero-cost flow and terminal fixed point", cmd_mean_path},
      {"cost", "one-step cost C(H,G), both modes", cmd_cost},
      {"geodesic", "multi-stage reverse-shooting search", cmd_geodesic},
      {"sweep-targets", "geodesics to G = (g1, w2, rest) over a w2 range",
       [](const Common& c) { return run_sweep(c, true); }},
      {"sweep-initials", "geodesics from H = (w1, (1-w1)/2, ...) over a w1 range",
       [](const Common& c) { return run_sweep(c, false); }},
      {"simulate", "Monte-Carlo runs of the daily cycle", cmd_simulate},
      {"validate", "large-deviations check suite", cmd_validate},
      {"pen-landscape", "gradient norms h(y,G) over the net and quantile constants", cmd_pen_landscape},
  };
  std::vector<std::pair<CLI::App*, const Sub*>> apps;
  for (const auto& s : subs) {
    auto* a = app.add_subcommand(s.name, s.help);
    add_common(a);
    apps.emplace_back(a, &s);
  }
  CLI11_PARSE(app, argc, argv);
  try {
    for (auto& [a, s] : apps)
      if (a->parsed()) return s->fn(o);
  } catch (const evogeo::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
