#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "asgsim/common.hpp"
#include "asgsim/config.hpp"
#include "asgsim/csv.hpp"
#include "asgsim/finance.hpp"
#include "asgsim/grid.hpp"
#include "asgsim/market.hpp"
#include "asgsim/modal.hpp"

// Scenario orchestration shared by the CLI subcommands: simulate the rating
// sweep, run the modal analysis per scenario, backtest the regulation market,
// evaluate the financial forecast, and emit CSV/JSON artifacts plus a hashed
// manifest. All outputs are deterministic for a fixed config and seed.

namespace asgsim::pipeline {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw config_error("cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw config_error("cannot write " + p.string());
  os << text;
}

inline void write_json(const fs::path& p, const json& j) {
  write_text(p, j.dump(2) + "\n");
}

inline std::string rating_label(double mw) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", mw);
  return std::string(buf) + "MW";
}

inline void ensure_out_dir(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir) && !fs::is_directory(dir))
    throw config_error("output path is not a directory: " + dir.string());
  if (fs::exists(dir) && !fs::is_empty(dir) && !overwrite)
    throw config_error("output directory " + dir.string() +
                       " is not empty; pass --overwrite to replace");
  fs::create_directories(dir);
}

struct ScenarioRun {
  double rating_mw = 0.0; // 0 = base case
  grid::SimResult sim;
  std::optional<grid::ResponseMetrics> metrics; // vs base, absent for base
};

struct SimulateOutput {
  std::vector<ScenarioRun> runs; // runs[0] is the base case
};

inline SimulateOutput run_simulate(const cfg::ScenarioConfig& c) {
  SimulateOutput out;
  const grid::GridModel model = c.make_grid();
  ScenarioRun base;
  base.rating_mw = 0.0;
  base.sim = grid::run(model, c.disturbance, std::nullopt, c.grid_dt, c.grid_horizon);
  if (base.sim.unstable)
    throw numeric_error("simulate: base case lost synchronism");
  out.runs.push_back(std::move(base));
  for (const double r : c.ratings_mw) {
    grid::AsgPlacement place;
    place.params = c.asg;
    place.params.p_rated_mw = r;
    place.bus = c.asg_bus;
    place.alpha = c.asg_alpha;
    place.filter_tc_s = c.asg_filter_tc;
    place.slew_pu_per_s = c.asg_slew_pu_s;
    place.washout_tc_s = c.asg_washout_tc;
    ScenarioRun run;
    run.rating_mw = r;
    run.sim = grid::run(model, c.disturbance, place, c.grid_dt, c.grid_horizon);
    run.metrics = grid::compute_metrics(run.sim, out.runs.front().sim, c.metrics_bus);
    out.runs.push_back(std::move(run));
  }
  return out;
}

inline void write_sim_artifacts(const SimulateOutput& sims,
                                const cfg::ScenarioConfig& c, const fs::path& dir) {
  for (const auto& run : sims.runs) {
    const std::string label =
        run.rating_mw == 0.0 ? "base" : rating_label(run.rating_mw);
    csv::Table freq;
    freq.header.push_back("time_s");
    freq.columns.push_back(run.sim.t);
    for (std::size_t b = 0; b < run.sim.bus_ids.size(); ++b) {
      freq.header.push_back("f_bus" + std::to_string(run.sim.bus_ids[b]) + "_hz");
      freq.columns.push_back(run.sim.bus_freq_hz[b]);
    }
    csv::write(dir / ("freq_" + label + ".csv"), freq);

    csv::Table power;
    power.header = {"time_s", "p_asg_mw"};
    power.columns = {run.sim.t, run.sim.asg_p_mw};
    csv::write(dir / ("asg_power_" + label + ".csv"), power);
  }

  json metrics = json::array();
  for (const auto& run : sims.runs) {
    if (!run.metrics) continue;
    json row;
    row["rating_mw"] = run.rating_mw;
    row["t_nadir_s"] = run.metrics->t_nadir_s;
    row["f_nadir_hz"] = run.metrics->f_nadir_hz;
    row["delta_t_nadir_s"] = run.metrics->delta_t_nadir_s;
    row["pct_change"] = run.metrics->pct_change;
    row["delta_e_kwh"] = run.metrics->delta_e_kwh;
    metrics.push_back(row);
  }
  json doc;
  doc["metrics_bus"] = c.metrics_bus;
  doc["disturbance_mw"] = c.disturbance.delta_p_mw;
  doc["cases"] = metrics;
  write_json(dir / "metrics.json", doc);
}

inline modal::RingdownWindow scenario_ringdown(const grid::SimResult& sim,
                                               const cfg::ScenarioConfig& c) {
  std::size_t bi = sim.bus_ids.size();
  for (std::size_t i = 0; i < sim.bus_ids.size(); ++i)
    if (sim.bus_ids[i] == c.metrics_bus) bi = i;
  if (bi == sim.bus_ids.size())
    throw config_error("prony: metrics bus not in simulation result");
  const auto& f = sim.bus_freq_hz[bi];
  const std::size_t stride = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(c.prony_decimate_dt / sim.dt)));
  std::vector<double> dec;
  for (std::size_t k = 0; k < f.size(); k += stride) dec.push_back(f[k]);
  const double dt = sim.dt * static_cast<double>(stride);
  const double t0 = sim.t_apply + c.prony_start_offset;
  const auto first = static_cast<std::size_t>(std::llround(t0 / dt));
  auto last = static_cast<std::size_t>(std::llround((t0 + c.prony_window) / dt));
  last = std::min(last, dec.size());
  return modal::make_window(dec, dt, first, last);
}

struct ModalOutput {
  struct Entry {
    double rating_mw = 0.0;
    std::vector<modal::ModalEstimate> modes;
    double residual_rms = 0.0;
  };
  std::vector<Entry> entries;
};

inline ModalOutput run_modal(const SimulateOutput& sims, const cfg::ScenarioConfig& c) {
  ModalOutput out;
  for (const auto& run : sims.runs) {
    ModalOutput::Entry e;
    e.rating_mw = run.rating_mw;
    const modal::RingdownWindow w = scenario_ringdown(run.sim, c);
    e.modes = modal::prony_fit(w, c.prony_order);
    e.residual_rms = modal::fit_residual_rms(w, e.modes);
    out.entries.push_back(std::move(e));
  }
  return out;
}

inline json modes_to_json(const std::vector<modal::ModalEstimate>& modes) {
  json arr = json::array();
  for (const auto& m : modes) {
    json row;
    row["amplitude"] = m.amplitude;
    row["sigma"] = m.sigma;
    row["omega"] = m.omega;
    row["phase"] = m.phase;
    row["f_hz"] = m.oscillatory || m.omega > 0.0 ? m.f_hz() : 0.0;
    row["zeta_pct"] =
        (m.sigma == 0.0 && m.omega == 0.0) ? 100.0 : m.zeta_pct();
    row["oscillatory"] = m.oscillatory;
    row["energy"] = m.energy;
    arr.push_back(row);
  }
  return arr;
}

inline void write_modal_artifacts(const ModalOutput& md, const fs::path& dir) {
  json doc = json::array();
  for (const auto& e : md.entries) {
    json row;
    row["rating_mw"] = e.rating_mw;
    row["residual_rms"] = e.residual_rms;
    row["modes"] = modes_to_json(e.modes);
    doc.push_back(row);
  }
  write_json(dir / "modes.json", doc);
}

struct MarketOutput {
  struct Entry {
    double rating_mw = 0.0;
    market::BacktestResult result;
  };
  market::RegSignalSeries signal;
  std::vector<Entry> entries;
};

inline market::RegSignalSeries load_regd_csv(const fs::path& path) {
  const csv::Table t = csv::read(path);
  market::RegSignalSeries s;
  const auto& epochs = t.column("epoch_s");
  if (epochs.size() < 2) throw config_error("regd csv: need at least 2 samples");
  s.t0_epoch_s = static_cast<std::int64_t>(epochs.front());
  for (std::size_t k = 1; k < epochs.size(); ++k)
    if (epochs[k] - epochs[k - 1] != market::kSignalDt)
      throw config_error("regd csv: gap or irregular spacing at row " +
                         std::to_string(k + 1) + " (no silent interpolation)");
  s.regd = t.column("regd");
  if (t.has_column("rega")) s.rega = t.column("rega");
  s.validate();
  return s;
}

/// Prices per window: each window takes the last price row at or before its
/// start, so per-window and per-month price files both work.
inline market::ClearingPrices align_prices(const csv::Table& t,
                                           const std::vector<std::int64_t>& starts) {
  const auto& ep = t.column("window_start");
  const auto& rccp = t.column("rccp");
  const auto& rpcp = t.column("rpcp");
  market::ClearingPrices out;
  for (const std::int64_t s : starts) {
    std::size_t pick = ep.size();
    for (std::size_t i = 0; i < ep.size(); ++i)
      if (ep[i] <= static_cast<double>(s)) pick = i;
    if (pick == ep.size())
      throw config_error("prices csv: no price at or before window start " +
                         std::to_string(s));
    out.rccp.push_back(rccp[pick]);
    out.rpcp.push_back(rpcp[pick]);
  }
  return out;
}

inline MarketOutput run_market(const cfg::ScenarioConfig& c) {
  MarketOutput out;
  if (c.market_mode == "synthetic") {
    const double dur =
        std::floor(c.market_days * 86400.0 / market::kSignalDt) * market::kSignalDt;
    out.signal = market::generate_synthetic_regd(c.seed, dur);
  } else {
    out.signal = load_regd_csv(c.regd_csv);
  }
  const auto starts = market::window_starts(out.signal);
  if (starts.empty())
    throw config_error("market: no complete 5-minute window in the signal");
  market::ClearingPrices prices;
  if (!c.prices_csv.empty())
    prices = align_prices(csv::read(c.prices_csv), starts);
  else
    prices = market::ClearingPrices::constant(c.rccp, c.rpcp, starts.size());

  for (const double r : c.ratings_mw) {
    if (r <= 0.0) continue; // base case has no market participation
    MarketOutput::Entry e;
    e.rating_mw = r;
    e.result = market::backtest(out.signal, prices, c.market_config(r), c.asg);
    out.entries.push_back(std::move(e));
  }
  if (out.entries.empty())
    throw config_error("market: ratings list has no positive rating");
  return out;
}

inline void write_market_artifacts(const MarketOutput& mk, const fs::path& dir) {
  json monthly = json::array();
  for (const auto& e : mk.entries) {
    const std::string label = rating_label(e.rating_mw);
    csv::Table t;
    t.header = {"window_start", "m_regd_mw", "beta", "credit"};
    t.columns.resize(4);
    for (const auto& w : e.result.windows) {
      t.columns[0].push_back(static_cast<double>(w.start_epoch_s));
      t.columns[1].push_back(w.m_regd_mw);
      t.columns[2].push_back(w.beta);
      t.columns[3].push_back(w.credit);
    }
    csv::write(dir / ("credits_" + label + ".csv"), t);

    json months = json::array();
    double total = 0.0;
    for (const auto& m : e.result.monthly) {
      json row;
      row["year"] = m.year;
      row["month"] = m.month;
      row["credit"] = m.credit;
      row["per_mw"] = m.per_mw;
      row["windows"] = m.windows;
      months.push_back(row);
      total += m.credit;
    }
    json entry;
    entry["rating_mw"] = e.rating_mw;
    entry["months"] = months;
    entry["total_credit"] = total;
    entry["total_per_mw"] = total / e.rating_mw;
    entry["span_days"] = static_cast<double>(e.result.windows.size()) *
                         market::kWindowSec / 86400.0;
    entry["skipped_empty_months"] = e.result.skipped_empty_months;
    monthly.push_back(entry);
  }
  write_json(dir / "monthly.json", monthly);
}

struct FinanceOutput {
  finance::CashFlowSchedule schedule;
  double npv_at_discount = 0.0;
  double irr_value = 0.0;
  int break_even = -1;
  std::vector<std::pair<double, double>> irr_curve;
};

inline FinanceOutput run_finance(const finance::FinanceAssumptions& a,
                                 const std::vector<double>& factors) {
  FinanceOutput out;
  out.schedule = finance::build_schedule(a);
  out.npv_at_discount = finance::npv(out.schedule, a.discount_rate);
  out.irr_value = finance::irr(out.schedule);
  out.break_even = finance::break_even_year(out.schedule);
  out.irr_curve = finance::irr_vs_capital_cost(a, factors);
  return out;
}

inline void write_finance_artifacts(const FinanceOutput& fo,
                                    const finance::FinanceAssumptions& a,
                                    const fs::path& dir) {
  csv::Table cfN;
  cfN.header = {"year", "cashflow", "cumulative"};
  cfN.columns.resize(3);
  const std::vector<double> cum = finance::cumulative_cashflow(fo.schedule);
  for (std::size_t t = 0; t < fo.schedule.cf.size(); ++t) {
    cfN.columns[0].push_back(static_cast<double>(t));
    cfN.columns[1].push_back(fo.schedule.cf[t]);
    cfN.columns[2].push_back(cum[t]);
  }
  csv::write(dir / "cashflow.csv", cfN);

  csv::Table curve;
  curve.header = {"cost_factor", "irr"};
  curve.columns.resize(2);
  for (const auto& [f, r] : fo.irr_curve) {
    curve.columns[0].push_back(f);
    curve.columns[1].push_back(r);
  }
  csv::write(dir / "irr_curve.csv", curve);

  json doc;
  doc["rating_mw"] = a.rating_mw;
  doc["revenue0_per_mw"] = a.revenue0_per_mw;
  doc["discount_rate"] = a.discount_rate;
  doc["npv"] = fo.npv_at_discount;
  doc["npv_per_mw"] = fo.npv_at_discount / a.rating_mw;
  doc["irr"] = fo.irr_value;
  doc["break_even_year"] = fo.break_even;
  const int last = a.horizon_years;
  doc["year_final_revenue_per_mw"] =
      a.revenue0_per_mw * std::pow(1.0 + a.growth, last - 1);
  write_json(dir / "npv_irr.json", doc);
}

inline void write_manifest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  json arr = json::array();
  for (const auto& f : files) {
    const std::string bytes = read_file(f);
    json row;
    row["file"] = f.filename().string();
    row["bytes"] = bytes.size();
    char hex[24];
    std::snprintf(hex, sizeof(hex), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    row["fnv1a64"] = hex;
    arr.push_back(row);
  }
  json doc;
  doc["hash"] = "fnv1a64";
  doc["files"] = arr;
  write_json(dir / "manifest.json", doc);
}

/// simulate -> prony -> market -> finance, fail-fast with stage labels.
inline void run_pipeline(const cfg::ScenarioConfig& c, const fs::path& dir,
                         bool overwrite) {
  ensure_out_dir(dir, overwrite);
  const auto stage = [](const char* name, auto&& fn) {
    try {
      fn();
    } catch (const config_error& e) {
      throw config_error(std::string("stage ") + name + ": " + e.what());
    } catch (const numeric_error& e) {
      throw numeric_error(std::string("stage ") + name + ": " + e.what());
    }
  };
  SimulateOutput sims;
  stage("simulate", [&] {
    sims = run_simulate(c);
    write_sim_artifacts(sims, c, dir);
  });
  stage("prony", [&] { write_modal_artifacts(run_modal(sims, c), dir); });
  stage("market", [&] { write_market_artifacts(run_market(c), dir); });
  stage("finance", [&] {
    write_finance_artifacts(run_finance(c.fin, c.cost_factors), c.fin, dir);
  });
  write_manifest(dir);
}

}  // namespace asgsim::pipeline
