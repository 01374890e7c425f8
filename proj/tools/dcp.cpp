// Command line front end: run experiments, re-aggregate output directories
// and check config files.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dcp.hpp"
#include "json.hpp"

namespace {

int fail(const std::string& kind, const std::string& message, const std::string& key = {}) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << '\n';
  return 1;
}

void print_summary(const dcp::RunArtifacts& art) {
  for (const auto& rec : art.runs)
    for (const auto& m : rec.models) {
      std::cout << dcp::run_dir_name(rec.index) << ' ' << m.label << ' ';
      if (!m.ok) {
        std::cout << "FAILED " << m.failure << '\n';
        continue;
      }
      const auto& r = *m.report;
      std::printf("rmse=%.4f r2=%.4f alpha@%.2f=%.4f\n", r.rmse, r.curve.r_squared.value_or(dcp::kNaN), r.default_cl,
                  r.alpha_default_cl);
    }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dropout conformal predictors and random forest cross-conformal baseline"};
  app.require_subcommand(1);

  std::string config_path, out_dir, in_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers, only_run;
  bool no_plots = false;

  auto* run = app.add_subcommand("run", "Run an experiment and write its reports");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run->add_option("--seed", seed, "Root seed (overrides seed)");
  run->add_option("--workers", workers, "Concurrent runs (overrides workers)");
  run->add_option("--only-run", only_run, "Run a single repetition by index");
  run->add_flag("--no-plots", no_plots, "Skip SVG output");

  auto* report = app.add_subcommand("report", "Re-aggregate an output directory");
  report->add_option("--in", in_dir, "Output directory of a previous run")->required();

  auto* validate = app.add_subcommand("validate-config", "Parse and validate a config file");
  validate->add_option("--config", config_path, "Config file")->required();

  std::size_t synth_n = 1000, synth_d = 8;
  double synth_noise = 0.3;
  std::string synth_model = "heteroscedastic", synth_out;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("make-synthetic", "Write a synthetic regression table as CSV");
  synth->add_option("--n", synth_n, "Rows");
  synth->add_option("--d", synth_d, "Features");
  synth->add_option("--noise", synth_noise, "Noise scale");
  synth->add_option("--noise-model", synth_model, "homoscedastic or heteroscedastic")
      ->check(CLI::IsMember({"homoscedastic", "heteroscedastic"}));
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_option("--out", synth_out, "Output CSV")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (*run) {
      auto c = dcp::parse_config(config_path);
      if (seed) c.seed = *seed;
      if (workers) {
        if (*workers < 1) return fail("config", "workers: must be >= 1", "workers");
        c.workers = *workers;
      }
      if (!out_dir.empty()) c.output_dir = out_dir;
      if (no_plots) c.emit_plots = false;
      const auto art = dcp::run_experiment(c, only_run);
      const auto manifest = dcp::emit_reports(art, c.output_dir, dcp::emit_options(c));
      print_summary(art);
      std::cout << "wrote " << manifest.size() << " files to " << c.output_dir.string() << '\n';
    } else if (*report) {
      dcp::write_summary(in_dir);
      const auto manifest = dcp::write_manifest(in_dir);
      std::cout << "re-aggregated " << in_dir << " (" << manifest.size() << " files)\n";
    } else if (*validate) {
      const auto c = dcp::parse_config(config_path);
      std::cout << dcp::detail::config_json(c).dump(2) << '\n';
    } else if (*synth) {
      const auto kind =
          synth_model == "homoscedastic" ? dcp::NoiseKind::homoscedastic : dcp::NoiseKind::heteroscedastic;
      dcp::write_table(dcp::make_synthetic(synth_n, synth_d, {kind, synth_noise}, synth_seed), synth_out);
    }
  } catch (const dcp::ConfigError& e) {
    return fail("config", e.what(), e.key());
  } catch (const dcp::ParseError& e) {
    return fail("parse", e.what());
  } catch (const dcp::IoError& e) {
    return fail("io", e.what());
  } catch (const dcp::InvalidArgument& e) {
    return fail("invalid_argument", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
