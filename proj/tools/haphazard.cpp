#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "haphazard/cells.hpp"
#include "haphazard/experiment.hpp"
#include "haphazard/gradcheck.hpp"
#include "haphazard/packet.hpp"

using namespace haphazard;

namespace {

RunConfig build_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& o : overrides) apply_override(cfg, o);
  return cfg;
}

void print_aggregate(const std::map<std::string, MeanStd>& agg, const char* prefix = "") {
  for (const char* key : {"balanced_accuracy", "accuracy", "auroc", "auprc", "errors", "seconds"}) {
    auto it = agg.find(key);
    if (it == agg.end()) continue;
    std::printf("%s%-18s %8.2f +- %.2f  (n=%zu)\n", prefix, key, it->second.mean, it->second.std,
                it->second.n);
  }
}

int cmd_run(const std::string& config, const std::vector<std::string>& sets, bool quiet) {
  const RunConfig cfg = build_config(config, sets);
  RunOptions opt;
  opt.log = quiet ? nullptr : &std::cerr;
  const auto out = run_experiment(cfg, opt);
  print_aggregate(out.aggregate);
  std::printf("outputs in %s\n", cfg.output_dir.string().c_str());
  for (const auto& s : out.seeds) {
    if (s.report.aborted) return 3;
  }
  return 0;
}

int cmd_scenario(const std::string& config, const std::vector<std::string>& sets, bool quiet) {
  const RunConfig cfg = build_config(config, sets);
  RunOptions opt;
  opt.log = quiet ? nullptr : &std::cerr;
  const auto out = run_scenario(cfg, opt);
  std::printf("%-10s %12s %12s\n", "interval", "persistent", "retrained");
  for (std::size_t k = 1; k <= cfg.schedule.intervals; ++k) {
    const std::string key = "interval_" + std::to_string(k) + "_balanced_accuracy";
    auto show = [&](const std::map<std::string, MeanStd>& agg) {
      auto it = agg.find(key);
      char buf[48];
      if (it == agg.end()) return std::string("missing");
      std::snprintf(buf, sizeof buf, "%.2f+-%.2f", it->second.mean, it->second.std);
      return std::string(buf);
    };
    std::printf("%-10zu %12s %12s\n", k, show(out.persistent_aggregate).c_str(),
                show(out.retrained_aggregate).c_str());
  }
  return 0;
}

int cmd_gradcheck(std::size_t draws, std::size_t packet_draws, std::uint64_t seed) {
  bool ok = true;
  auto report = [&](const GradCheckResult& r) {
    std::printf("%-8s %-32s draws=%-4zu coords=%-8zu worst_abs=%.3g%s%s\n",
                r.ok() ? "PASS" : "FAIL", r.label.c_str(), r.draws, r.coordinates,
                r.worst_abs_error, r.ok() ? "" : "  first: ", r.first_failure.c_str());
    ok &= r.ok();
  };
  for (CellKind kind : kAllCellKinds) report(check_cell_gradients(kind, draws, seed));
  for (CellKind kind : kAllCellKinds) {
    for (Aggregator agg : {Aggregator::Mean, Aggregator::Sum, Aggregator::Min, Aggregator::Max}) {
      for (FeatSpace space : {FeatSpace::Current, FeatSpace::Universal}) {
        report(check_packet_gradients(kind, agg, space, packet_draws, seed + 1));
      }
    }
  }
  std::printf("%s\n", ok ? "gradcheck: all passed" : "gradcheck: FAILURES");
  return ok ? 0 : 1;
}

int cmd_paramcount(std::size_t hidden, std::size_t features, const std::string& concat) {
  PacketConfig cfg;
  cfg.hidden = hidden;
  auto mode = parse_concat_mode(concat);
  if (!mode) throw ConfigError("concat: invalid value '" + concat + "'");
  cfg.concat = *mode;
  std::printf("hidden size s = %zu, input width 1\n", hidden);
  for (CellKind kind : kAllCellKinds) {
    std::printf("  %-12s %8zu\n", std::string(cell_kind_name(kind)).c_str(),
                cell_param_count(kind, hidden));
  }
  std::printf("head (%s, 2 classes): %zu\n", concat.c_str(), cfg.head_shape().count());
  std::printf("timelstm3 packet with %zu features: %zu\n", features,
              packet_param_count(cfg, features));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online learning on streams with a varying feature space"};
  app.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Prequential runs over every configured seed");
  run->add_option("-c,--config", config, "key = value config file");
  run->add_option("-s,--set", sets, "override, key=value (repeatable)");
  run->add_flag("-q,--quiet", quiet, "no progress on stderr");

  auto* scen = app.add_subcommand("scenario", "Persistent vs per-interval retrained model");
  scen->add_option("-c,--config", config, "key = value config file");
  scen->add_option("-s,--set", sets, "override, key=value (repeatable)");
  scen->add_flag("-q,--quiet", quiet, "no progress on stderr");

  std::size_t draws = 100, packet_draws = 3;
  std::uint64_t seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of cells and packets");
  gc->add_option("--draws", draws, "random draws per cell kind")->capture_default_str();
  gc->add_option("--packet-draws", packet_draws, "draws per packet configuration")
      ->capture_default_str();
  gc->add_option("--seed", seed)->capture_default_str();

  std::size_t hidden = 64, features = 10;
  std::string concat = "both";
  auto* pc = app.add_subcommand("paramcount", "Learnable parameter census");
  pc->add_option("--hidden", hidden)->capture_default_str();
  pc->add_option("--features", features)->capture_default_str();
  pc->add_option("--concat", concat)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config, sets, quiet);
    if (*scen) return cmd_scenario(config, sets, quiet);
    if (*gc) return cmd_gradcheck(draws, packet_draws, seed);
    if (*pc) return cmd_paramcount(hidden, features, concat);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
