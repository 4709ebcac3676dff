// tsplab command-line front end: single runs, demand sweeps with reference
// comparison output, and a standalone Shapley solver.

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tsplab/controllers.hpp"
#include "tsplab/engine.hpp"
#include "tsplab/reference.hpp"
#include "tsplab/scenario.hpp"
#include "tsplab/shapley.hpp"

namespace {

namespace fs = std::filesystem;
using tsplab::sim::ConfigError;

std::string csv_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

std::string default_out_dir() {
  const char* env = std::getenv("TSPLAB_OUT");
  return env != nullptr && *env != '\0' ? env : ".";
}

struct RunRow {
  std::string scenario_id;
  std::string controller;
  double demand_vph = 0;
  double headway_min = 0;
  std::uint64_t seed = 0;
  tsplab::sim::MetricsRecord rec;
};

std::string metrics_header() {
  return "scenario_id,controller,demand_vph,headway_min,seed,"
         "avg_waiting,avg_travel_time_s,avg_bus_travel_time_s,"
         "stability,slope,stability_statistic,buses_completed,"
         "vehicles_exited";
}

std::string metrics_row(const RunRow& row) {
  std::ostringstream os;
  os << row.scenario_id << ',' << row.controller << ','
     << csv_double(row.demand_vph) << ',' << csv_double(row.headway_min) << ','
     << row.seed << ',' << csv_double(row.rec.avg_waiting_private_cars) << ','
     << csv_double(row.rec.avg_travel_time_s) << ','
     << (row.rec.avg_bus_travel_time_s.has_value()
             ? csv_double(*row.rec.avg_bus_travel_time_s)
             : std::string{})
     << ',' << (row.rec.stable ? "Stable" : "Unstable") << ','
     << csv_double(row.rec.trend_slope_vps) << ','
     << csv_double(row.rec.stability_statistic) << ','
     << row.rec.buses_completed << ','
     << csv_double(row.rec.vehicles_exited);
  return os.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

int run_simulate(const std::string& scenario_path,
                 const std::string& controller_override,
                 std::optional<std::uint64_t> seed_override,
                 const std::string& out_dir, const std::string& load_tables,
                 const std::string& save_tables) {
  auto cfg = tsplab::io::load_scenario(scenario_path);
  if (!controller_override.empty()) {
    const auto kind = tsplab::ctrl::parse_controller(controller_override);
    if (!kind.has_value())
      throw ConfigError("controller",
                        "unknown controller '" + controller_override + "'");
    cfg.controller = *kind;
  }
  if (seed_override.has_value()) cfg.seed = *seed_override;

  tsplab::sim::Engine engine(cfg);
  if (!load_tables.empty()) {
    std::ifstream in(load_tables);
    if (!in) throw ConfigError("load-tables", "cannot open file: " + load_tables);
    nlohmann::json j;
    in >> j;
    engine.restore_tables(j.get<std::vector<std::string>>());
  }
  engine.train();
  const auto rec = engine.evaluate();
  if (!save_tables.empty()) {
    nlohmann::json j = engine.snapshot_tables();
    write_file(save_tables, j.dump(1));
  }

  RunRow row;
  row.scenario_id = cfg.id;
  row.controller = tsplab::ctrl::controller_name(cfg.controller);
  row.demand_vph = cfg.demand_vph;
  row.headway_min = cfg.bus_headway_min;
  row.seed = cfg.seed;
  row.rec = rec;

  fs::create_directories(out_dir);
  write_file(fs::path(out_dir) / "metrics.csv",
             metrics_header() + "\n" + metrics_row(row) + "\n");

  std::ostringstream ts;
  ts << "t_s,waiting_private,private_count,bus_count\n";
  for (const auto& s : rec.series)
    ts << csv_double(s.t_s) << ',' << csv_double(s.waiting_private) << ','
       << csv_double(s.private_count) << ',' << csv_double(s.bus_count) << "\n";
  write_file(fs::path(out_dir) / "timeseries.csv", ts.str());

  std::cout << "wrote " << (fs::path(out_dir) / "metrics.csv").string()
            << " and timeseries.csv\n";
  return 0;
}

int run_sweep(const std::string& scenario_path, std::vector<double> demands,
              std::vector<double> headways, std::vector<std::string> controllers,
              std::vector<std::uint64_t> seeds, int jobs,
              const std::string& out_dir) {
  tsplab::sim::ScenarioConfig base;
  if (!scenario_path.empty()) base = tsplab::io::load_scenario(scenario_path);
  if (demands.empty())
    for (int d = 5000; d <= 13000; d += 1000) demands.push_back(d);
  if (headways.empty()) headways = {20.0, 30.0};
  if (controllers.empty())
    controllers = {"ft-notsp", "mb-tsp",     "mp-notsp",  "mp-tsp",
                   "asc-tsp",  "cbql-notsp", "cbql-tsp"};
  if (seeds.empty()) seeds = {1, 2, 3};
  if (jobs < 1) jobs = 1;

  std::vector<tsplab::sim::ScenarioConfig> cfgs;
  for (double demand : demands)
    for (double headway : headways)
      for (const auto& name : controllers)
        for (std::uint64_t seed : seeds) {
          const auto kind = tsplab::ctrl::parse_controller(name);
          if (!kind.has_value())
            throw ConfigError("controllers", "unknown controller '" + name + "'");
          auto cfg = base;
          cfg.controller = *kind;
          cfg.demand_vph = demand;
          cfg.bus_headway_min = headway;
          cfg.seed = seed;
          std::ostringstream id;
          id << base.id << "-d" << static_cast<long>(demand) << "-h"
             << static_cast<long>(headway) << "-" << name << "-s" << seed;
          cfg.id = id.str();
          cfg.validate();
          cfgs.push_back(std::move(cfg));
        }

  std::vector<RunRow> rows(cfgs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cfgs.size()) return;
      RunRow row;
      row.scenario_id = cfgs[i].id;
      row.controller = tsplab::ctrl::controller_name(cfgs[i].controller);
      row.demand_vph = cfgs[i].demand_vph;
      row.headway_min = cfgs[i].bus_headway_min;
      row.seed = cfgs[i].seed;
      row.rec = tsplab::sim::run(cfgs[i]);
      rows[i] = std::move(row);
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = std::min<std::size_t>(jobs, cfgs.size());
  pool.reserve(n_workers);
  for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  fs::create_directories(out_dir);
  std::ostringstream cmp;
  cmp << metrics_header() << "\n";
  for (const auto& row : rows) cmp << metrics_row(row) << "\n";
  write_file(fs::path(out_dir) / "comparison.csv", cmp.str());

  // Aggregate (mean over seeds, 30-minute headway) joined against the
  // published reference values.
  struct Agg {
    double tt_sum = 0;
    int tt_n = 0;
    double bus_sum = 0;
    int bus_n = 0;
  };
  std::map<std::pair<long, std::string>, Agg> agg;
  for (const auto& row : rows) {
    if (row.headway_min != 30.0) continue;
    auto& a = agg[{static_cast<long>(row.demand_vph), row.controller}];
    a.tt_sum += row.rec.avg_travel_time_s;
    ++a.tt_n;
    if (row.rec.avg_bus_travel_time_s.has_value()) {
      a.bus_sum += *row.rec.avg_bus_travel_time_s;
      ++a.bus_n;
    }
  }
  std::ostringstream ref;
  ref << "metric,demand_vph,controller,reference_s,simulated_s\n";
  for (const auto& [key, a] : agg) {
    const auto& [demand, controller] = key;
    if (const auto r = tsplab::bench::reference_travel_time(
            static_cast<int>(demand), controller);
        r.has_value() && a.tt_n > 0)
      ref << "avg_travel_time_s," << demand << ',' << controller << ',' << *r
          << ',' << csv_double(a.tt_sum / a.tt_n) << "\n";
    if (const auto r = tsplab::bench::reference_bus_travel_time(
            static_cast<int>(demand), controller);
        r.has_value() && a.bus_n > 0)
      ref << "avg_bus_travel_time_s," << demand << ',' << controller << ','
          << *r << ',' << csv_double(a.bus_sum / a.bus_n) << "\n";
  }
  write_file(fs::path(out_dir) / "vs_reference.csv", ref.str());

  std::cout << "wrote " << rows.size() << " rows to "
            << (fs::path(out_dir) / "comparison.csv").string()
            << " and vs_reference.csv\n";
  return 0;
}

int run_shapley(const std::string& input, const std::string& out_path) {
  const auto file = tsplab::io::load_charfn(input);
  const auto alloc = tsplab::game::solve_allocation(file.fn);
  std::ostringstream os;
  os << "agent,shapley_value,ratio\n";
  for (std::size_t i = 0; i < file.agent_ids.size(); ++i)
    os << file.agent_ids[i] << ',' << csv_double(alloc.values[i]) << ','
       << csv_double(alloc.ratios[i]) << "\n";
  if (out_path.empty()) {
    std::cout << os.str();
  } else {
    write_file(out_path, os.str());
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transit signal priority simulation toolkit"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "Run one scenario");
  std::string scenario_path, controller_override, out_dir = default_out_dir();
  std::string load_tables, save_tables;
  std::uint64_t seed_value = 0;
  bool seed_given = false;
  sim->add_option("--scenario", scenario_path, "Scenario JSON file")
      ->required();
  sim->add_option("--controller", controller_override,
                  "Override the scenario's controller");
  sim->add_option("--seed", seed_value, "Override the scenario's seed")
      ->each([&](const std::string&) { seed_given = true; });
  sim->add_option("--out", out_dir, "Output directory");
  sim->add_option("--load-tables", load_tables, "Controller checkpoint to load");
  sim->add_option("--save-tables", save_tables,
                  "Write controller checkpoint after the run");

  auto* sweep = app.add_subcommand("sweep", "Demand/controller comparison");
  std::string sweep_scenario, sweep_out = default_out_dir();
  std::vector<double> demands, headways;
  std::vector<std::string> controllers;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
  sweep->add_option("--scenario", sweep_scenario, "Base scenario JSON file");
  sweep->add_option("--demands", demands, "Demands in veh/h");
  sweep->add_option("--headways", headways, "Bus headways in minutes");
  sweep->add_option("--controllers", controllers, "Controller names");
  sweep->add_option("--seeds", seeds, "Seeds");
  sweep->add_option("--jobs", jobs, "Concurrent runs");
  sweep->add_option("--out", sweep_out, "Output directory");

  auto* shap = app.add_subcommand("shapley", "Solve a characteristic function");
  std::string charfn_path, shap_out;
  shap->add_option("--input", charfn_path, "Characteristic function file")
      ->required();
  shap->add_option("--out", shap_out, "Write CSV here instead of stdout");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return run_simulate(scenario_path, controller_override,
                          seed_given ? std::optional<std::uint64_t>(seed_value)
                                     : std::nullopt,
                          out_dir, load_tables, save_tables);
    if (sweep->parsed())
      return run_sweep(sweep_scenario, demands, headways, controllers, seeds,
                       jobs, sweep_out);
    if (shap->parsed()) return run_shapley(charfn_path, shap_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
