#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mofelab/baselines.hpp"
#include "mofelab/error.hpp"
#include "mofelab/harness.hpp"

namespace {

struct CliOptions {
  std::string config_path;
  std::string data_prefix;
  std::string out_dir;
  std::string checkpoint;
  std::string lambdas;
  std::string variant;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

mofelab::ExperimentConfig resolve_config(const CliOptions& opt) {
  mofelab::ExperimentConfig cfg;
  if (!opt.config_path.empty()) {
    cfg = mofelab::parse_config_file(opt.config_path);
  }
  if (opt.seed_given) {
    cfg.data.seed = opt.seed;
    cfg.train.seed = opt.seed;
  }
  if (!opt.variant.empty()) {
    cfg.variant = mofelab::parse_variant(opt.variant);
  }
  if (!opt.out_dir.empty()) {
    cfg.out_dir = opt.out_dir;
  }
  return cfg;
}

int dispatch(const std::string& command, const CliOptions& opt) {
  mofelab::ExperimentConfig cfg = resolve_config(opt);
  const std::filesystem::path out = cfg.out_dir;

  if (command == "gen") {
    for (const auto& path : mofelab::cmd_gen(cfg, out)) {
      std::cout << path.string() << "\n";
    }
    return 0;
  }
  if (command == "train") {
    const auto artifacts = mofelab::cmd_train(cfg, opt.data_prefix, out);
    std::cout << artifacts.checkpoint.string() << "\n"
              << artifacts.trainlog.string() << "\n";
    return 0;
  }
  if (command == "eval") {
    const auto report =
        mofelab::cmd_eval(cfg, opt.checkpoint, opt.data_prefix, out);
    std::cout << report.string() << "\n";
    return 0;
  }
  if (command == "sweep") {
    const std::vector<double> lambdas =
        opt.lambdas.empty() ? mofelab::default_sweep_lambdas()
                            : mofelab::parse_lambda_list(opt.lambdas);
    const auto sweep = mofelab::cmd_sweep(cfg, lambdas, opt.data_prefix, out);
    std::cout << sweep.string() << "\n";
    return 0;
  }
  if (command == "gradcheck") {
    // A failed numerical check is a numeric failure, not a usage problem.
    return mofelab::run_gradcheck(cfg.train.seed, std::cout) == 0 ? 0 : 3;
  }
  throw mofelab::ConfigError("unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Dynamic mixture of modality experts on synthetic multimodal tasks"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config_path,
                    "key = value experiment config file");
    sub->add_option("--out", opt.out_dir,
                    "output directory (default: out_dir from the config)");
    auto* seed =
        sub->add_option("--seed", opt.seed, "override the config seed");
    sub->parse_complete_callback(
        [&opt, seed] { opt.seed_given = seed->count() > 0; });
    return sub;
  };

  add_common(app.add_subcommand("gen", "generate the three dataset splits"));

  auto* train = add_common(
      app.add_subcommand("train", "two-stage training to a checkpoint"));
  train->add_option("--data", opt.data_prefix,
                    "dataset prefix (expects <prefix>train.mmds etc.); "
                    "omit to generate from the config");
  train->add_option("--variant", opt.variant,
                    "simmlm | no_mofe | conf_hinge | static_mean");

  auto* eval = add_common(
      app.add_subcommand("eval", "evaluate a checkpoint on every mask"));
  eval->add_option("--ckpt", opt.checkpoint, "checkpoint file")->required();
  eval->add_option("--data", opt.data_prefix,
                   "dataset prefix; omit to generate from the config");
  eval->add_option("--variant", opt.variant,
                   "recorded in the manifest alongside the results");

  auto* sweep = add_common(app.add_subcommand(
      "sweep", "train and evaluate once per ranking coefficient"));
  sweep->add_option("--data", opt.data_prefix,
                    "dataset prefix; omit to generate from the config");
  sweep->add_option("--lambdas", opt.lambdas,
                    "comma-separated coefficients (default 0,0.01,0.05,0.1,"
                    "0.2,0.5,1)");

  add_common(app.add_subcommand(
      "gradcheck", "compare analytic gradients against finite differences"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    return dispatch(app.get_subcommands().front()->get_name(), opt);
  } catch (const mofelab::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const mofelab::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const mofelab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
