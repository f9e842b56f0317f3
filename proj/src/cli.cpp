#include "s3pet/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>

#include "s3pet/pipeline.hpp"

namespace s3pet {

namespace {

std::string config_key_help() {
  std::string s = "Config keys (key = value, '#' comments, later keys override):\n";
  for (const auto& k : Config::known_keys()) {
    s += "  " + k.name;
    if (!k.default_value.empty()) s += " [" + k.default_value + "]";
    s += " - " + k.doc + "\n";
  }
  return s;
}

struct CommonArgs {
  std::string config_path;
  std::string in_path;
  std::string out_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_in, bool with_out) {
  cmd->add_option("--config", args.config_path, "config file path");
  if (with_in) cmd->add_option("--in", args.in_path, "input path")->required();
  if (with_out) cmd->add_option("--out", args.out_path, "output path")->required();
  cmd->add_option("--seed", args.seed, "run seed (overrides train.seed)")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"s3pet: two-stage semi-supervised low-dose PET reconstruction"};
  app.require_subcommand(1);
  app.footer(config_key_help());

  CommonArgs args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate phantom volumes and splits");
  add_common(gen, args, false, true);
  CLI::App* pre = app.add_subcommand("pretrain", "Stage-I DsMAE pretraining");
  add_common(pre, args, true, true);
  CLI::App* fin = app.add_subcommand("finetune", "Stage-II paired fine-tuning");
  add_common(fin, args, true, true);
  CLI::App* inf = app.add_subcommand("infer", "reconstruct RPET from an LPET volume");
  add_common(inf, args, true, true);
  CLI::App* ev = app.add_subcommand("eval", "metrics CSV for a prediction volume");
  add_common(ev, args, true, true);
  CLI::App* abl = app.add_subcommand("ablate", "run the four progressive variants");
  add_common(abl, args, true, true);
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(gc, args, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const Config cfg = args.config_path.empty() ? Config::defaults()
                                                : Config::parse_file(args.config_path);
    const std::uint64_t seed =
        args.seed_given ? args.seed
                        : static_cast<std::uint64_t>(cfg.get_int("train.seed"));
    if (gen->parsed()) {
      cmd_gen_data(cfg, args.out_path, seed);
    } else if (pre->parsed()) {
      cmd_pretrain(cfg, args.in_path, args.out_path, seed);
    } else if (fin->parsed()) {
      cmd_finetune(cfg, args.in_path, args.out_path, seed);
    } else if (inf->parsed()) {
      cmd_infer(cfg, args.in_path, args.out_path);
    } else if (ev->parsed()) {
      cmd_eval(cfg, args.in_path, args.out_path);
    } else if (abl->parsed()) {
      cmd_ablate(cfg, args.in_path, args.out_path, seed);
    } else if (gc->parsed()) {
      const GradCheckReport report = cmd_gradcheck(seed);
      std::printf("gradcheck: stage1 max rel err %.3e over %d params\n",
                  report.max_rel_err_stage1, report.checked_stage1);
      std::printf("gradcheck: stage2 max rel err %.3e over %d params\n",
                  report.max_rel_err_stage2, report.checked_stage2);
      for (const auto& w : report.worst) {
        std::printf("  %-32s (%d,%d) analytic %.6e numeric %.6e rel %.3e\n",
                    w.param.c_str(), w.row, w.col, w.analytic, w.numeric, w.rel_err);
      }
      const bool ok = report.max_rel_err() < 1e-5;
      std::printf("gradcheck: %s (threshold 1e-5)\n", ok ? "PASS" : "FAIL");
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace s3pet
