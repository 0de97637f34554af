// Command-line front end for the sampling pipeline.
//
//   nlme_imh simulate  --out DIR [--config FILE] [--seed N]
//   nlme_imh map       --data CSV --out DIR [--config FILE]
//   nlme_imh propose   --data CSV --out DIR [--config FILE]
//   nlme_imh sample    --data CSV --out DIR [--kernel K[,K...]] [--iters N] [--individual ID]
//   nlme_imh compare   --data CSV --out DIR [--runs N] [--iters N] [--individual ID] [--burn-in N]
//   nlme_imh reference --data CSV --out DIR [--kernel K] [--iters N] [--burn-in N]
//   nlme_imh check-eq6 --data CSV --out DIR [--individual ID]

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "nlme/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Independent Metropolis-Hastings sampling of individual parameters in nonlinear mixed effects models"};
  app.require_subcommand(1);

  nlme::RunSpec spec;
  std::string data, config, out, kernel, individual;
  std::uint64_t seed = 0;
  long long iters = 0, runs = 0, burn_in = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--data", data, "dataset CSV (id,time,observation,dose)");
    sub->add_option("--config", config, "INI configuration file");
    sub->add_option("--out", out, "output directory")->required();
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--kernel", kernel,
                    "prior-imh, rwm-componentwise, rwm-blockwise, mala or nlme-imh (comma-separated list allowed)");
    sub->add_option("--iters", iters, "iterations per chain")->check(CLI::PositiveNumber);
    sub->add_option("--runs", runs, "replicate runs for compare")->check(CLI::PositiveNumber);
    sub->add_option("--individual", individual, "id of the individual to sample");
    sub->add_option("--burn-in", burn_in, "burn-in iterations")->check(CLI::NonNegativeNumber);
  };

  for (const char* name : {"simulate", "map", "propose", "sample", "compare", "reference", "check-eq6"}) {
    add_common(app.add_subcommand(name));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  CLI::App* sub = app.get_subcommands().front();
  spec.command = sub->get_name();
  spec.data = data;
  spec.config = config;
  spec.out = out;
  if (sub->count("--seed")) spec.seed = seed;
  if (sub->count("--kernel")) spec.kernel = kernel;
  if (sub->count("--iters")) spec.iters = iters;
  if (sub->count("--runs")) spec.runs = runs;
  if (sub->count("--individual")) spec.individual = individual;
  if (sub->count("--burn-in")) spec.burn_in = burn_in;

  try {
    nlme::run(spec);
  } catch (const nlme::InputError& e) {
    std::cerr << "error: input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
