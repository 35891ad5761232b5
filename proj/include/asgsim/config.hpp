#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "asgsim/common.hpp"
#include "asgsim/control.hpp"
#include "asgsim/finance.hpp"
#include "asgsim/grid.hpp"
#include "asgsim/market.hpp"

// Scenario configuration: sectioned key = value text, '#' comments.

namespace asgsim::cfg {

class Ini {
public:
  static Ini parse_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw config_error("config: cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
  }

  static Ini parse(const std::string& text, const std::string& origin = "<string>") {
    Ini ini;
    std::string section;
    std::size_t lineno = 0;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw config_error(origin + ":" + std::to_string(lineno) +
                             ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw config_error(origin + ":" + std::to_string(lineno) +
                           ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string val = trim(line.substr(eq + 1));
      if (key.empty())
        throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
      ini.values_[section + "." + key] = val;
    }
    return ini;
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.contains(section + "." + key);
  }

  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const {
    const auto it = values_.find(section + "." + key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_str(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end())
      throw config_error("config: missing required key [" + section + "] " + key);
    return it->second;
  }

  double get_num(const std::string& section, const std::string& key,
                 double fallback) const {
    if (!has(section, key)) return fallback;
    return to_num(section, key, values_.at(section + "." + key));
  }

  double require_num(const std::string& section, const std::string& key) const {
    return to_num(section, key, require_str(section, key));
  }

  std::vector<double> get_list(const std::string& section, const std::string& key,
                               const std::vector<double>& fallback) const {
    if (!has(section, key)) return fallback;
    std::vector<double> out;
    std::stringstream ss(values_.at(section + "." + key));
    std::string cell;
    while (std::getline(ss, cell, ','))
      out.push_back(to_num(section, key, trim(cell)));
    return out;
  }

private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  double to_num(const std::string& section, const std::string& key,
                const std::string& v) const {
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw config_error("config: [" + section + "] " + key +
                         " is not a number: '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

struct ScenarioConfig {
  // grid
  std::string grid_model = "ieee9"; // builtin name or a grid file path
  grid::DisturbanceSpec disturbance;
  double grid_dt = 0.005;
  double grid_horizon = 60.0;
  int metrics_bus = 6;

  // asg
  control::AsgParams asg;
  std::vector<double> ratings_mw = {2.0, 5.0, 10.0};
  int asg_bus = 5;
  double asg_alpha = 1.0;
  double asg_filter_tc = 0.05;
  double asg_slew_pu_s = 0.0;
  double asg_washout_tc = 5.0;

  // modal
  int prony_order = 2;
  double prony_start_offset = 0.5; // after the disturbance
  double prony_window = 40.0;
  double prony_decimate_dt = 0.1;

  // market
  std::string market_mode = "synthetic"; // or "csv"
  std::string regd_csv;
  std::string prices_csv;
  std::uint64_t seed = 42;
  double market_days = 3.0;
  double ramp_limit_mw_s = 0.05;
  double market_deadband_fraction = 0.2;
  double rho = 0.76;
  double f_shift_max_hz = 1.0;
  double rccp = 12.0; // constant prices when no prices csv is given
  double rpcp = 5.0;
  double market_sim_dt = 0.01;

  // finance
  finance::FinanceAssumptions fin;
  std::vector<double> cost_factors = {1.0, 2.0, 3.0, 4.0, 5.0};

  std::string out_dir = "out";

  static ScenarioConfig load(const std::filesystem::path& path) {
    return from_ini(Ini::parse_file(path));
  }

  static ScenarioConfig from_ini(const Ini& ini) {
    ScenarioConfig c;
    c.grid_model = ini.get_str("grid", "model", c.grid_model);
    c.disturbance.bus = static_cast<int>(ini.get_num("grid", "disturbance_bus", 6));
    c.disturbance.delta_p_mw = ini.get_num("grid", "delta_p_mw", 4.5);
    c.disturbance.t_apply_s = ini.get_num("grid", "t_apply", 1.0);
    c.grid_dt = ini.get_num("grid", "dt", c.grid_dt);
    c.grid_horizon = ini.get_num("grid", "horizon", c.grid_horizon);
    c.metrics_bus = static_cast<int>(ini.get_num("grid", "metrics_bus", 6));

    c.asg.droop_r = ini.get_num("asg", "r", c.asg.droop_r);
    c.asg.kp_gov = ini.get_num("asg", "kpgov", c.asg.kp_gov);
    c.asg.ki_gov = ini.get_num("asg", "kigov", c.asg.ki_gov);
    c.asg.ta = ini.get_num("asg", "ta", c.asg.ta);
    c.asg.dp = ini.get_num("asg", "dp", c.asg.dp);
    c.asg.kpf = ini.get_num("asg", "kpf", c.asg.kpf);
    c.asg.prop_gain = ini.get_num("asg", "prop_gain", c.asg.prop_gain);
    c.asg.p_lim = ini.get_num("asg", "plim", c.asg.p_lim);
    c.asg.deadband_hz = ini.get_num("asg", "deadband_hz", c.asg.deadband_hz);
    c.asg.f0_hz = ini.get_num("asg", "f0_hz", c.asg.f0_hz);
    c.asg.f_lv_hz = ini.get_num("asg", "f_lv_hz", c.asg.f_lv_hz);
    c.ratings_mw = ini.get_list("asg", "ratings_mw", c.ratings_mw);
    c.asg_bus = static_cast<int>(ini.get_num("asg", "bus", 5));
    c.asg_alpha = ini.get_num("asg", "alpha", 1.0);
    c.asg_filter_tc = ini.get_num("asg", "filter_tc", 0.05);
    c.asg_slew_pu_s = ini.get_num("asg", "slew_pu_per_s", 0.0);
    c.asg_washout_tc = ini.get_num("asg", "washout_tc", 5.0);

    c.prony_order = static_cast<int>(ini.get_num("modal", "order", 2));
    c.prony_start_offset = ini.get_num("modal", "window_start_offset", 0.5);
    c.prony_window = ini.get_num("modal", "window_length", 40.0);
    c.prony_decimate_dt = ini.get_num("modal", "decimate_dt", 0.1);

    c.market_mode = ini.get_str("market", "mode", c.market_mode);
    c.regd_csv = ini.get_str("market", "regd_csv", "");
    c.prices_csv = ini.get_str("market", "prices_csv", "");
    c.seed = static_cast<std::uint64_t>(ini.get_num("market", "seed", 42));
    c.market_days = ini.get_num("market", "days", c.market_days);
    c.ramp_limit_mw_s = ini.get_num("market", "ramp_limit_mw_s", c.ramp_limit_mw_s);
    c.market_deadband_fraction =
        ini.get_num("market", "deadband_fraction", c.market_deadband_fraction);
    c.rho = ini.get_num("market", "rho", c.rho);
    c.f_shift_max_hz = ini.get_num("market", "f_shift_max_hz", c.f_shift_max_hz);
    c.rccp = ini.get_num("market", "rccp", c.rccp);
    c.rpcp = ini.get_num("market", "rpcp", c.rpcp);
    c.market_sim_dt = ini.get_num("market", "sim_dt", c.market_sim_dt);

    c.fin.revenue0_per_mw = ini.get_num("finance", "revenue0_per_mw", c.fin.revenue0_per_mw);
    c.fin.growth = ini.get_num("finance", "growth", c.fin.growth);
    c.fin.om_rate = ini.get_num("finance", "om_rate", c.fin.om_rate);
    c.fin.inv_cost_per_mva = ini.get_num("finance", "inv_cost_per_mva", c.fin.inv_cost_per_mva);
    c.fin.horizon_years = static_cast<int>(ini.get_num("finance", "horizon_years", 15));
    c.fin.discount_rate = ini.get_num("finance", "discount_rate", 0.06);
    c.fin.rating_mw = ini.get_num("finance", "rating_mw", 2.0);
    c.cost_factors = ini.get_list("finance", "cost_factors", c.cost_factors);

    c.out_dir = ini.get_str("output", "dir", c.out_dir);
    c.validate();
    return c;
  }

  void validate() const {
    asg.validate();
    fin.validate();
    if (ratings_mw.empty())
      throw config_error("config: asg ratings list must not be empty");
    for (const double r : ratings_mw)
      if (r < 0.0) throw config_error("config: ratings must be >= 0");
    if (!(grid_dt > 0.0 && grid_dt <= 0.010))
      throw config_error("config: grid dt must be in (0, 10 ms]");
    if (!(grid_horizon > disturbance.t_apply_s))
      throw config_error("config: horizon must exceed the disturbance time");
    if (prony_order < 2 || prony_order % 2 != 0)
      throw config_error("config: prony order must be even and >= 2");
    if (market_mode != "synthetic" && market_mode != "csv")
      throw config_error("config: market mode must be synthetic or csv");
    if (market_mode == "csv" && regd_csv.empty())
      throw config_error("config: market mode csv requires regd_csv");
    if (!regd_csv.empty() && !std::filesystem::exists(regd_csv))
      throw config_error("config: regd_csv not found: " + regd_csv);
    if (!prices_csv.empty() && !std::filesystem::exists(prices_csv))
      throw config_error("config: prices_csv not found: " + prices_csv);
    if (grid_model != "ieee9" && !std::filesystem::exists(grid_model))
      throw config_error("config: grid model file not found: " + grid_model);
    if (!(market_days > 0.0))
      throw config_error("config: market days must be > 0");
    if (!(ramp_limit_mw_s > 0.0))
      throw config_error("config: ramp limit must be > 0");
  }

  grid::GridModel make_grid() const;

  market::RegulationConfig market_config(double rating_mw) const {
    market::RegulationConfig rc;
    rc.rating_mw = rating_mw;
    rc.ramp_limit_mw_s = ramp_limit_mw_s;
    rc.deadband_fraction = market_deadband_fraction;
    rc.rho = rho;
    rc.f_shift_max_hz = f_shift_max_hz;
    rc.sim_dt = market_sim_dt;
    return rc;
  }
};

/// Grid description file: [buses] / [branches] / [generators] / [loads]
/// sections with one whitespace-separated record per line.
inline grid::GridModel parse_grid_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw config_error("grid file: cannot open " + path.string());
  grid::GridModel m;
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::stringstream ss(line);
    std::string first;
    if (!(ss >> first)) continue;
    if (first.front() == '[') {
      section = first;
      continue;
    }
    std::stringstream row(line);
    const auto bad = [&](const char* what) {
      return config_error("grid file: bad " + std::string(what) + " record at " +
                          path.string() + ":" + std::to_string(lineno));
    };
    if (section == "[buses]") {
      grid::Bus b;
      if (!(row >> b.id >> b.base_kv)) throw bad("bus");
      m.buses.push_back(b);
    } else if (section == "[branches]") {
      grid::Branch b;
      if (!(row >> b.from >> b.to >> b.r >> b.x >> b.b_half)) throw bad("branch");
      m.branches.push_back(b);
    } else if (section == "[generators]") {
      grid::Generator g;
      int slack = 0;
      if (!(row >> g.bus >> g.p_mw >> g.v_set >> g.h_s >> g.d_pu >> g.xdp >>
            g.rg >> g.tt_s >> slack))
        throw bad("generator");
      g.slack = slack != 0;
      m.generators.push_back(g);
    } else if (section == "[loads]") {
      grid::Load l;
      if (!(row >> l.bus >> l.p_mw >> l.q_mvar)) throw bad("load");
      m.loads.push_back(l);
    } else {
      throw config_error("grid file: record outside a known section at " +
                         path.string() + ":" + std::to_string(lineno));
    }
  }
  m.validate();
  return m;
}

inline grid::GridModel ScenarioConfig::make_grid() const {
  if (grid_model == "ieee9") return grid::build_ieee9();
  return parse_grid_file(grid_model);
}

}  // namespace asgsim::cfg
