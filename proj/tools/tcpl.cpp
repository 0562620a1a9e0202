// tcpl: generate | train | evaluate | sweep
//
// Exit codes: 0 success, 1 configuration error, 2 runtime or numeric error.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "tcpl/tcpl.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string axis;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
};

std::size_t thread_budget() {
  const char* env = std::getenv("TCPL_THREADS");
  if (env == nullptr || *env == '\0') return std::max(1u, std::thread::hardware_concurrency());
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw tcpl::Error(tcpl::ErrorCode::ConfigError, "TCPL_THREADS: expected an integer >= 1");
  return static_cast<std::size_t>(n);
}

tcpl::ExperimentConfig resolve(const Options& o, const std::string& verb) {
  tcpl::ExperimentConfig cfg = o.config.empty() ? tcpl::parse_config_text("{}") : tcpl::load_config(o.config);
  if (!o.out.empty()) cfg.out = o.out;
  if (!o.variant.empty()) {
    try {
      cfg.train.loss.variant = tcpl::loss_variant_from_string(o.variant);
    } catch (const tcpl::Error&) {
      throw tcpl::Error(tcpl::ErrorCode::ConfigError, "--variant: unknown variant '" + o.variant + "'");
    }
  }
  if (o.seed) {
    if (verb == "generate" || verb == "evaluate") cfg.corpus.seed = *o.seed;
    else if (verb == "sweep") cfg.sweep.seeds = {*o.seed};
    else cfg.train.seed = *o.seed;
  }
  if (!o.axis.empty()) cfg.sweep.axis = tcpl::sweep_axis_from_string(o.axis);
  if (!o.values.empty()) cfg.sweep.values = o.values;
  if (!o.seeds.empty()) cfg.sweep.seeds = o.seeds;
  tcpl::validate(cfg);
  return cfg;
}

int run(const std::string& verb, const Options& o) {
  const auto cfg = resolve(o, verb);
  if (verb == "generate") {
    std::cout << tcpl::cmd_generate(cfg).to_string() << '\n';
  } else if (verb == "train") {
    const auto result = tcpl::cmd_train(cfg, &std::cout);
    const auto& best = result.best();
    std::cout << "best step " << best.step + 1 << ": rank1=" << tcpl::format_double(best.eval.rank1)
              << " rank5=" << tcpl::format_double(best.eval.rank5) << " rank20=" << tcpl::format_double(best.eval.rank20)
              << " map=" << tcpl::format_double(best.eval.map) << '\n';
  } else if (verb == "evaluate") {
    const auto r = tcpl::cmd_evaluate(cfg);
    std::cout << "rank1=" << tcpl::format_double(r.rank1) << " rank5=" << tcpl::format_double(r.rank5)
              << " rank20=" << tcpl::format_double(r.rank20) << " map=" << tcpl::format_double(r.map) << '\n';
  } else {
    const auto result = tcpl::cmd_sweep(cfg, thread_budget(), &std::cout);
    std::cout << result.runs.size() - result.failures << '/' << result.runs.size() << " runs succeeded\n";
    if (result.failures == result.runs.size()) return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal-consistency progressive learning for one-shot re-identification"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--variant", o.variant, "loss variant")
        ->check(CLI::IsMember({"full", "intra", "inter", "ce-only", "exclusive"}));
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic corpus and evaluation split");
  auto* train = app.add_subcommand("train", "run progressive self-training");
  auto* eval = app.add_subcommand("evaluate", "score a checkpoint on the probe/gallery split");
  auto* sweep = app.add_subcommand("sweep", "train over an axis of values and seeds");
  for (auto* sub : {gen, train, eval, sweep}) add_common(sub);
  sweep->add_option("--axis", o.axis, "p, lambda or r")->check(CLI::IsMember({"p", "lambda", "r"}));
  sweep->add_option("--values", o.values, "axis values")->delimiter(',');
  sweep->add_option("--seeds", o.seeds, "seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  std::string verb;
  for (auto* sub : {gen, train, eval, sweep})
    if (sub->parsed()) {
      verb = sub->get_name();
      if (sub->count("--seed") > 0) o.seed = seed;
    }

  try {
    return run(verb, o);
  } catch (const tcpl::Error& e) {
    std::cerr << "tcpl " << verb << ": " << e.what() << '\n';
    const bool config = e.code() == tcpl::ErrorCode::ConfigError || e.code() == tcpl::ErrorCode::InvalidConfig;
    return config ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "tcpl " << verb << ": " << e.what() << '\n';
    return kExitRuntime;
  }
}
