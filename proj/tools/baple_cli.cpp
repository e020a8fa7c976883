#include <CLI11.hpp>

#include "baple/baple.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Backdoor prompt-learning lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string from, report_out;
  std::vector<std::string> bundles;
  bool print_config = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config file");
    sub->add_option("--set", overrides, "override a config key, e.g. --set attack.epochs=10")->take_all();
    sub->add_flag("--print-config", print_config, "print the effective config before running");
  };

  std::vector<std::pair<CLI::App*, baple::Stage>> stages;
  auto add = [&](const char* name, const char* help, baple::Stage s) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    stages.emplace_back(sub, s);
    return sub;
  };
  add("pretrain", "pretrain the toy dual encoder and save a checkpoint", baple::Stage::pretrain);
  add("attack", "run one attack mode and write its bundle", baple::Stage::attack);
  add("eval", "re-evaluate a finished run", baple::Stage::eval)->add_option("--from", from, "run directory")->required();
  add("ablate", "run the configured ablation grid", baple::Stage::ablate);
  add("sweep-targets", "attack every target class and average", baple::Stage::sweep_targets);
  add("export-features", "write clean and triggered features", baple::Stage::export_features)
      ->add_option("--from", from, "run directory (otherwise the configured attack is run first)");
  auto* rep = add("report", "render comparison tables from bundles", baple::Stage::report);
  rep->add_option("bundles", bundles, "run or table directories")->required();
  rep->add_option("-o,--out", report_out, "destination directory");

  CLI11_PARSE(app, argc, argv);

  baple::StageRequest req;
  for (auto& [sub, s] : stages)
    if (sub->parsed()) req.stage = s;
  try {
    req.config = baple::load_config(config_path, overrides);
    req.from = from;
    req.report_out = report_out;
    for (const auto& b : bundles) req.bundles.emplace_back(b);
    if (print_config) std::cout << baple::effective_config_text(req.config);
    const auto out = baple::run_experiment(req);
    std::cout << out.string() << '\n';
    return 0;
  } catch (const baple::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const baple::StageError& e) {
    std::cerr << "stage " << baple::stage_name(e.stage()) << " failed: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "stage " << baple::stage_name(req.stage) << " failed: " << e.what() << '\n';
    return 1;
  }
}
