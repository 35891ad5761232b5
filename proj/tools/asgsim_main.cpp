// asgsim: scenario runner for the ASG fast-frequency response toolkit.
//
// Subcommands: simulate, prony, market, finance, fit, pipeline.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asgsim/common.hpp"
#include "asgsim/config.hpp"
#include "asgsim/csv.hpp"
#include "asgsim/fitting.hpp"
#include "asgsim/modal.hpp"
#include "asgsim/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
};

asgsim::cfg::ScenarioConfig load_config(const CommonOpts& o) {
  if (o.config_path.empty())
    throw asgsim::config_error("--config is required");
  auto c = asgsim::cfg::ScenarioConfig::load(o.config_path);
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  if (o.seed) c.seed = *o.seed;
  return c;
}

void guard_target(const fs::path& p, bool overwrite) {
  if (fs::exists(p) && !overwrite)
    throw asgsim::config_error(p.string() +
                               " already exists; pass --overwrite to replace");
}

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "scenario configuration file");
  cmd->add_option("--out", o.out_dir, "output directory (overrides config)");
  cmd->add_flag("--overwrite", o.overwrite, "replace existing outputs");
}

int run_simulate(const CommonOpts& o) {
  const auto c = load_config(o);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  guard_target(dir / "metrics.json", o.overwrite);
  const auto sims = asgsim::pipeline::run_simulate(c);
  asgsim::pipeline::write_sim_artifacts(sims, c, dir);
  asgsim::pipeline::write_modal_artifacts(asgsim::pipeline::run_modal(sims, c), dir);
  std::cout << "simulate: wrote " << (c.ratings_mw.size() + 1)
            << " scenario result sets to " << dir.string() << "\n";
  return 0;
}

int run_market_cmd(const CommonOpts& o) {
  const auto c = load_config(o);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  guard_target(dir / "monthly.json", o.overwrite);
  const auto mk = asgsim::pipeline::run_market(c);
  asgsim::pipeline::write_market_artifacts(mk, dir);
  for (const auto& e : mk.entries)
    if (e.result.skipped_empty_months > 0)
      std::cerr << "warning: " << e.result.skipped_empty_months
                << " month(s) without a complete window omitted (rating "
                << e.rating_mw << " MW)\n";
  std::cout << "market: wrote credits/monthly for " << mk.entries.size()
            << " rating(s) to " << dir.string() << "\n";
  return 0;
}

int run_finance_cmd(const CommonOpts& o, const std::string& from_monthly) {
  auto c = load_config(o);
  const fs::path dir = c.out_dir;
  fs::create_directories(dir);
  guard_target(dir / "npv_irr.json", o.overwrite);
  if (!from_monthly.empty()) {
    const json doc = json::parse(asgsim::pipeline::read_file(from_monthly));
    if (!doc.is_array() || doc.empty())
      throw asgsim::config_error("--from-monthly: unexpected document shape");
    const json* pick = nullptr;
    for (const auto& entry : doc)
      if (entry.at("rating_mw").get<double>() == c.fin.rating_mw) pick = &entry;
    if (pick == nullptr) pick = &doc.front();
    const double span_days = pick->at("span_days").get<double>();
    if (!(span_days > 0.0))
      throw asgsim::config_error("--from-monthly: empty backtest span");
    c.fin.rating_mw = pick->at("rating_mw").get<double>();
    c.fin.revenue0_per_mw =
        pick->at("total_per_mw").get<double>() * 365.0 / span_days;
  }
  const auto fo = asgsim::pipeline::run_finance(c.fin, c.cost_factors);
  asgsim::pipeline::write_finance_artifacts(fo, c.fin, dir);
  std::cout << "finance: npv " << fo.npv_at_discount << " $, irr " << fo.irr_value
            << ", artifacts in " << dir.string() << "\n";
  return 0;
}

int run_prony_cmd(const std::string& series_path, const std::string& column,
                  int order, double t_start, double t_end,
                  const std::string& out_path, bool overwrite) {
  if (series_path.empty())
    throw asgsim::config_error("prony: --series is required");
  const auto table = asgsim::csv::read(series_path);
  if (table.header.size() < 2)
    throw asgsim::config_error("prony: need a time column and a value column");
  const auto& t = table.columns[0];
  const auto& y = column.empty() ? table.columns[1] : table.column(column);
  if (t.size() < 3) throw asgsim::config_error("prony: series too short");
  const double dt = t[1] - t[0];
  for (std::size_t k = 1; k < t.size(); ++k)
    if (std::abs(t[k] - t[k - 1] - dt) > 1e-9)
      throw asgsim::config_error("prony: series is not uniformly sampled");

  std::size_t first = 0, last = y.size();
  if (t_start > 0.0)
    first = static_cast<std::size_t>(std::llround((t_start - t[0]) / dt));
  if (t_end > 0.0)
    last = std::min<std::size_t>(
        y.size(), static_cast<std::size_t>(std::llround((t_end - t[0]) / dt)));
  const auto w = asgsim::modal::make_window(y, dt, first, last);
  const auto modes = asgsim::modal::prony_fit(w, order);

  json doc;
  doc["series"] = series_path;
  doc["order"] = order;
  doc["dt_s"] = dt;
  doc["detrend_offset"] = w.detrend_offset;
  doc["residual_rms"] = asgsim::modal::fit_residual_rms(w, modes);
  doc["modes"] = asgsim::pipeline::modes_to_json(modes);
  if (!out_path.empty()) {
    guard_target(out_path, overwrite);
    asgsim::pipeline::write_json(out_path, doc);
  } else {
    std::cout << doc.dump(2) << "\n";
  }
  return 0;
}

int run_fit_cmd(const CommonOpts& o, const std::string& experiment_path,
                const std::string& out_path, double bound_lo, double bound_hi) {
  const auto c = load_config(o);
  if (experiment_path.empty())
    throw asgsim::config_error("fit: --experiment is required");
  const auto table = asgsim::csv::read(experiment_path);
  const auto& t = table.column("time_s");
  const auto& f_ref = table.column("f_lv_ref");
  const auto& f_mv = table.column("f_mv");
  const auto& p_meas = table.column("p_meas");
  if (t.size() < 3) throw asgsim::config_error("fit: experiment too short");
  const double dt = t[1] - t[0];

  asgsim::fitting::FitProblem prob;
  prob.reference = p_meas;
  const asgsim::control::AsgParams base = c.asg;
  prob.simulate = [&, base, dt](const asgsim::fitting::Theta& th) {
    asgsim::control::AsgParams p = base;
    p.kp_gov = th[0];
    p.ki_gov = th[1];
    p.ta = th[2];
    p.dp = th[3];
    p.kpf = th[4];
    return asgsim::control::run_asg(p, f_mv, f_ref, 1.0, dt).p_asg_pu;
  };
  const asgsim::fitting::Theta theta0 = {base.kp_gov, base.ki_gov, base.ta,
                                         base.dp, base.kpf};
  for (std::size_t i = 0; i < theta0.size(); ++i) {
    prob.lower[i] = theta0[i] * bound_lo;
    prob.upper[i] = theta0[i] * bound_hi;
  }
  const auto res = asgsim::fitting::fit_parameters(prob, theta0);

  json doc;
  doc["kpgov"] = res.theta[0];
  doc["kigov"] = res.theta[1];
  doc["ta"] = res.theta[2];
  doc["dp"] = res.theta[3];
  doc["kpf"] = res.theta[4];
  doc["rmsd"] = res.rmsd;
  doc["evaluations"] = res.evaluations;
  if (!out_path.empty()) {
    guard_target(out_path, o.overwrite);
    asgsim::pipeline::write_json(out_path, doc);
  } else {
    std::cout << doc.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ASG fast-frequency response toolkit"};
  app.require_subcommand(1);

  CommonOpts sim_o, mkt_o, fin_o, fit_o, pipe_o;
  std::string from_monthly;
  std::string prony_series, prony_column, prony_out;
  int prony_order = 2;
  double prony_t0 = -1.0, prony_t1 = -1.0;
  bool prony_overwrite = false;
  std::string fit_experiment, fit_out;
  double fit_lo = 0.2, fit_hi = 5.0;

  add_common(app.add_subcommand("simulate", "grid study: base + rating sweep"), sim_o);
  auto* prony = app.add_subcommand("prony", "modal analysis of a CSV series");
  prony->add_option("--series", prony_series, "CSV with time and value columns");
  prony->add_option("--column", prony_column, "value column name (default: second)");
  prony->add_option("--order", prony_order, "even model order (default 2)");
  prony->add_option("--window-start", prony_t0, "window start time (s)");
  prony->add_option("--window-end", prony_t1, "window end time (s)");
  prony->add_option("--out", prony_out, "output JSON path (default: stdout)");
  prony->add_flag("--overwrite", prony_overwrite, "replace existing output");
  add_common(app.add_subcommand("market", "RegD backtest"), mkt_o);
  app.get_subcommand("market")->add_option(
      "--seed", mkt_o.seed, "synthetic signal seed (overrides config)");
  auto* fin = app.add_subcommand("finance", "NPV/IRR forecast");
  add_common(fin, fin_o);
  fin->add_option("--from-monthly", from_monthly,
                  "derive first-year revenue from a monthly.json");
  auto* fit = app.add_subcommand("fit", "recover ASG parameters from a trace");
  add_common(fit, fit_o);
  fit->add_option("--experiment", fit_experiment,
                  "CSV with time_s,f_lv_ref,f_mv,p_meas");
  fit->add_option("--fit-out", fit_out, "output JSON path (default: stdout)");
  fit->add_option("--bound-lo", fit_lo, "lower bound factor (default 0.2)");
  fit->add_option("--bound-hi", fit_hi, "upper bound factor (default 5)");
  auto* pipe = app.add_subcommand("pipeline", "simulate + prony + market + finance");
  add_common(pipe, pipe_o);
  pipe->add_option("--seed", pipe_o.seed, "seed override");

  try {
    app.parse(argc, argv);
    if (app.get_subcommand("simulate")->parsed()) return run_simulate(sim_o);
    if (prony->parsed())
      return run_prony_cmd(prony_series, prony_column, prony_order, prony_t0,
                           prony_t1, prony_out, prony_overwrite);
    if (app.get_subcommand("market")->parsed()) return run_market_cmd(mkt_o);
    if (fin->parsed()) return run_finance_cmd(fin_o, from_monthly);
    if (fit->parsed())
      return run_fit_cmd(fit_o, fit_experiment, fit_out, fit_lo, fit_hi);
    if (pipe->parsed()) {
      const auto c = load_config(pipe_o);
      asgsim::pipeline::run_pipeline(c, c.out_dir, pipe_o.overwrite);
      std::cout << "pipeline: artifacts in " << c.out_dir << "\n";
      return 0;
    }
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const asgsim::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
}
