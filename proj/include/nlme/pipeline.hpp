#ifndef NLME_PIPELINE_HPP
#define NLME_PIPELINE_HPP

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "nlme/datagen.hpp"
#include "nlme/diagnostics.hpp"
#include "nlme/errors.hpp"
#include "nlme/io.hpp"
#include "nlme/map_solver.hpp"
#include "nlme/model.hpp"
#include "nlme/proposal.hpp"
#include "nlme/samplers.hpp"
#include "nlme/structural.hpp"

namespace nlme {

inline constexpr std::uint64_t kDefaultSeed = 1234;

/// Everything a pipeline command can be configured with. Serialized as an INI
/// document with sections model, theta, simulate, map, kernel, run,
/// reference and eq6.
struct PipelineConfig {
  std::string model = "pk1_oral";
  Vector psi_pop;
  Matrix omega;
  double sigma2 = 0.5;
  std::vector<Transform> transform;

  Index n_individuals = 32;
  Vector times = default_time_grid();
  double dose_per_kg = 1.5;
  double weight = 70.0;

  MapOptions map;

  double rwm_scale = 0.4;
  double block_scale = 0.0;  // 0 selects 2.4 / sqrt(p)
  double mala_gamma = 1e-2;
  bool mala_tune = false;  // true: compare picks gamma from the ladder first
  Index mala_tune_iters = 2000;
  std::string proposal = "linearized";
  bool allow_unconverged = false;

  std::uint64_t seed = kDefaultSeed;
  Index iters = 500;
  Index runs = 100;
  Index burn_in = 0;
  Index trace_iters = 20000;
  std::vector<Index> thresholds;  // empty: iters/10, iters/2, iters

  Index reference_iters = 100000;
  Index reference_burn_in = 10000;

  Index eq6_sims = 10000;

  static PipelineConfig defaults() {
    PipelineConfig c;
    const PopulationParams th = warfarin_theta();
    c.psi_pop = th.psi_pop();
    c.omega = th.omega();
    c.sigma2 = th.sigma2();
    c.transform = th.transform();
    return c;
  }

  PopulationParams theta() const { return PopulationParams(psi_pop, omega, sigma2, transform); }

  std::vector<Index> effective_thresholds() const {
    if (!thresholds.empty()) return thresholds;
    std::vector<Index> t{std::max<Index>(1, iters / 10), std::max<Index>(1, iters / 2), iters};
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
  }

  double effective_block_scale() const {
    return block_scale > 0.0 ? block_scale : 2.4 / std::sqrt(static_cast<double>(psi_pop.size()));
  }
};

namespace detail {

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

inline bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw InputError(what + ": expected true or false, got '" + s + "'");
}

inline Index parse_index(const std::string& s, const std::string& what) {
  const double v = io::to_double(s, what);
  if (v < 0 || v != std::floor(v)) throw InputError(what + ": expected a non-negative integer");
  return static_cast<Index>(v);
}

inline std::uint64_t parse_seed(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto t = io::trim(s);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw InputError(what + ": expected an unsigned integer seed");
  }
  return v;
}

}  // namespace detail

inline PipelineConfig load_config(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw InputError("config " + path.string() + ": " + e.message(), e.line());
  }
  static const std::map<std::string, std::vector<std::string>> known = {
      {"model", {"name"}},
      {"theta", {"psi_pop", "omega", "sigma2", "transform"}},
      {"simulate", {"n_individuals", "times", "dose_per_kg", "weight"}},
      {"map", {"gtol", "max_iter", "initial_step", "backtrack"}},
      {"kernel", {"rwm_scale", "block_scale", "mala_gamma", "mala_tune", "mala_tune_iters", "proposal",
                  "allow_unconverged"}},
      {"run", {"seed", "iters", "runs", "burn_in", "trace_iters", "thresholds"}},
      {"reference", {"iters", "burn_in"}},
      {"eq6", {"n_sims"}}};
  for (const auto& [section, body] : tree) {
    auto it = known.find(section);
    if (it == known.end()) throw InputError("config: unknown section [" + section + "]");
    for (const auto& [key, _] : body) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end()) {
        throw InputError("config: unknown key " + section + "." + key);
      }
    }
  }

  PipelineConfig c = PipelineConfig::defaults();
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto v = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (v) return std::string(io::trim(*v));
    return std::nullopt;
  };
  if (auto v = get("model.name")) c.model = *v;
  if (auto v = get("theta.psi_pop")) c.psi_pop = io::parse_vector(*v, "theta.psi_pop");
  if (auto v = get("theta.omega")) c.omega = io::parse_matrix(*v, "theta.omega");
  if (auto v = get("theta.sigma2")) c.sigma2 = io::to_double(*v, "theta.sigma2");
  if (auto v = get("theta.transform")) c.transform = io::parse_transforms(*v);
  if (auto v = get("simulate.n_individuals")) c.n_individuals = detail::parse_index(*v, "simulate.n_individuals");
  if (auto v = get("simulate.times")) c.times = io::parse_vector(*v, "simulate.times");
  if (auto v = get("simulate.dose_per_kg")) c.dose_per_kg = io::to_double(*v, "simulate.dose_per_kg");
  if (auto v = get("simulate.weight")) c.weight = io::to_double(*v, "simulate.weight");
  if (auto v = get("map.gtol")) c.map.gtol = io::to_double(*v, "map.gtol");
  if (auto v = get("map.max_iter")) c.map.max_iter = static_cast<int>(detail::parse_index(*v, "map.max_iter"));
  if (auto v = get("map.initial_step")) c.map.initial_step = io::to_double(*v, "map.initial_step");
  if (auto v = get("map.backtrack")) c.map.backtrack = io::to_double(*v, "map.backtrack");
  if (auto v = get("kernel.rwm_scale")) c.rwm_scale = io::to_double(*v, "kernel.rwm_scale");
  if (auto v = get("kernel.block_scale")) c.block_scale = io::to_double(*v, "kernel.block_scale");
  if (auto v = get("kernel.mala_gamma")) c.mala_gamma = io::to_double(*v, "kernel.mala_gamma");
  if (auto v = get("kernel.mala_tune")) c.mala_tune = detail::parse_bool(*v, "kernel.mala_tune");
  if (auto v = get("kernel.mala_tune_iters")) c.mala_tune_iters = detail::parse_index(*v, "kernel.mala_tune_iters");
  if (auto v = get("kernel.proposal")) c.proposal = *v;
  if (auto v = get("kernel.allow_unconverged")) c.allow_unconverged = detail::parse_bool(*v, "kernel.allow_unconverged");
  if (auto v = get("run.seed")) c.seed = detail::parse_seed(*v, "run.seed");
  if (auto v = get("run.iters")) c.iters = detail::parse_index(*v, "run.iters");
  if (auto v = get("run.runs")) c.runs = detail::parse_index(*v, "run.runs");
  if (auto v = get("run.burn_in")) c.burn_in = detail::parse_index(*v, "run.burn_in");
  if (auto v = get("run.trace_iters")) c.trace_iters = detail::parse_index(*v, "run.trace_iters");
  if (auto v = get("run.thresholds")) {
    c.thresholds.clear();
    const Vector t = io::parse_vector(*v, "run.thresholds");
    for (Index i = 0; i < t.size(); ++i) c.thresholds.push_back(static_cast<Index>(t(i)));
  }
  if (auto v = get("reference.iters")) c.reference_iters = detail::parse_index(*v, "reference.iters");
  if (auto v = get("reference.burn_in")) c.reference_burn_in = detail::parse_index(*v, "reference.burn_in");
  if (auto v = get("eq6.n_sims")) c.eq6_sims = detail::parse_index(*v, "eq6.n_sims");
  if (c.proposal != "linearized" && c.proposal != "laplace") {
    throw InputError("config: kernel.proposal must be linearized or laplace");
  }
  c.theta();  // validates theta
  return c;
}

inline void save_config(const std::filesystem::path& path, const PipelineConfig& c) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  auto put = [&](const std::string& key, const std::string& value) {
    tree.put(pt::ptree::path_type(key, '.'), value);
  };
  auto num = [](double v) { return fmt::format("{}", v); };
  put("model.name", c.model);
  put("theta.psi_pop", io::format_vector(c.psi_pop));
  put("theta.omega", io::format_matrix(c.omega));
  put("theta.sigma2", num(c.sigma2));
  put("theta.transform", io::format_transforms(c.transform));
  put("simulate.n_individuals", std::to_string(c.n_individuals));
  put("simulate.times", io::format_vector(c.times));
  put("simulate.dose_per_kg", num(c.dose_per_kg));
  put("simulate.weight", num(c.weight));
  put("map.gtol", num(c.map.gtol));
  put("map.max_iter", std::to_string(c.map.max_iter));
  put("map.initial_step", num(c.map.initial_step));
  put("map.backtrack", num(c.map.backtrack));
  put("kernel.rwm_scale", num(c.rwm_scale));
  put("kernel.block_scale", num(c.block_scale));
  put("kernel.mala_gamma", num(c.mala_gamma));
  put("kernel.mala_tune", detail::bool_str(c.mala_tune));
  put("kernel.mala_tune_iters", std::to_string(c.mala_tune_iters));
  put("kernel.proposal", c.proposal);
  put("kernel.allow_unconverged", detail::bool_str(c.allow_unconverged));
  put("run.seed", std::to_string(c.seed));
  put("run.iters", std::to_string(c.iters));
  put("run.runs", std::to_string(c.runs));
  put("run.burn_in", std::to_string(c.burn_in));
  put("run.trace_iters", std::to_string(c.trace_iters));
  std::string th;
  for (Index t : c.thresholds) th += (th.empty() ? "" : " ") + std::to_string(t);
  put("run.thresholds", th);
  put("reference.iters", std::to_string(c.reference_iters));
  put("reference.burn_in", std::to_string(c.reference_burn_in));
  put("eq6.n_sims", std::to_string(c.eq6_sims));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  pt::write_ini(path.string(), tree);
}

/// A parsed command line.
struct RunSpec {
  std::string command;
  std::filesystem::path data;
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> kernel;
  std::optional<Index> iters;
  std::optional<Index> runs;
  std::optional<std::string> individual;
  std::optional<Index> burn_in;
};

/// Seed streams used by the pipeline. Each purpose gets its own branch of the
/// master seed so adding runs never perturbs other streams.
namespace streams {
inline constexpr std::uint64_t tune = 1;
inline constexpr std::uint64_t trace = 2;
inline constexpr std::uint64_t replicate = 3;
inline constexpr std::uint64_t reference = 4;
inline constexpr std::uint64_t eq6 = 5;
inline constexpr std::uint64_t sample = 6;

inline std::uint64_t seed(std::uint64_t master, std::uint64_t purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
  return derive_seed(derive_seed(derive_seed(master, purpose), a), b);
}
}  // namespace streams

/// Calls fn(i) for i in [0, n) on up to hardware_concurrency threads.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

/// Per-individual setup shared by the sampling commands.
struct IndividualSetup {
  Posterior posterior;
  MapResult map;
  std::optional<GaussianProposal> proposal;
};

inline IndividualSetup setup_individual(const IndividualRecord& rec, const PipelineConfig& cfg,
                                        const StructuralModel& model) {
  Posterior post(rec, cfg.theta(), model);
  MapResult map = find_map(post, cfg.map);
  std::optional<GaussianProposal> prop;
  if (map.converged || cfg.allow_unconverged) {
    prop = cfg.proposal == "laplace" ? laplace_proposal(post, map, cfg.allow_unconverged)
                                     : linearized_proposal(post, map, cfg.allow_unconverged);
  }
  return {std::move(post), std::move(map), std::move(prop)};
}

inline KernelConfig make_kernel(KernelKind kind, const PipelineConfig& cfg, const IndividualSetup& s,
                                std::optional<double> gamma = std::nullopt) {
  const PopulationParams& theta = s.posterior.theta();
  switch (kind) {
    case KernelKind::prior_imh: return KernelConfig::prior_imh();
    case KernelKind::rwm_componentwise: return KernelConfig::rwm_componentwise(theta, cfg.rwm_scale);
    case KernelKind::rwm_blockwise: return KernelConfig::rwm_blockwise(cfg.effective_block_scale());
    case KernelKind::mala: return KernelConfig::mala(gamma.value_or(cfg.mala_gamma));
    case KernelKind::nlme_imh:
      if (!s.proposal) {
        throw Error("nlme-imh needs a converged MAP for individual " + s.posterior.record().id() +
                    " (set kernel.allow_unconverged to override)");
      }
      return KernelConfig::nlme_imh(*s.proposal);
  }
  throw InputError("unknown kernel");
}

inline std::vector<KernelKind> parse_kernel_list(const std::string& s) {
  std::vector<KernelKind> out;
  for (const std::string& tok : io::split(s, ',')) {
    if (!tok.empty()) out.push_back(parse_kernel_kind(tok));
  }
  if (out.empty()) throw InputError("empty kernel list");
  return out;
}

namespace detail {

inline const IndividualRecord& pick_individual(const std::vector<IndividualRecord>& data,
                                               const std::optional<std::string>& id) {
  if (!id) return data.front();
  for (const IndividualRecord& r : data) {
    if (r.id() == *id) return r;
  }
  throw InputError("individual '" + *id + "' not found in data");
}

inline std::string chain_file(KernelKind k, const std::string& id) {
  return std::string(to_string(k)) + "-" + id + ".csv";
}

}  // namespace detail

/// Executes one pipeline command. Throws nlme::Error on failure.
inline void run(const RunSpec& spec, const ModelRegistry& registry = ModelRegistry::builtin()) {
  static const std::vector<std::string> commands = {"simulate", "map",     "propose",  "sample",
                                                    "compare",  "reference", "check-eq6"};
  if (std::find(commands.begin(), commands.end(), spec.command) == commands.end()) {
    throw InputError("unknown command '" + spec.command + "'");
  }
  if (spec.out.empty()) throw InputError("--out is required");
  if (!spec.config.empty() && !std::filesystem::exists(spec.config)) {
    throw InputError("config file " + spec.config.string() + " does not exist");
  }

  PipelineConfig cfg = spec.config.empty() ? PipelineConfig::defaults() : load_config(spec.config);
  if (spec.seed) cfg.seed = *spec.seed;
  if (spec.iters) cfg.iters = *spec.iters;
  if (spec.runs) cfg.runs = *spec.runs;
  if (spec.burn_in) cfg.burn_in = *spec.burn_in;
  const StructuralModel& model = registry.get(cfg.model);
  const PopulationParams theta = cfg.theta();
  const std::vector<std::string>& names = model.param_names;
  const std::filesystem::path& out = spec.out;

  if (spec.command == "simulate") {
    SimConfig sc;
    sc.n_individuals = cfg.n_individuals;
    sc.times = cfg.times;
    sc.psi_pop = cfg.psi_pop;
    sc.omega = cfg.omega;
    sc.sigma2 = cfg.sigma2;
    sc.transform = cfg.transform;
    sc.dose_per_kg = cfg.dose_per_kg;
    sc.weights = {cfg.weight};
    sc.seed = cfg.seed;
    const SimulatedData data = simulate(sc, model);
    io::write_dataset_csv(out / "data.csv", data.records);
    io::write_truth_csv(out / "truth.csv", data.records, data.truth, theta, names);
    save_config(out / "config-echo.ini", cfg);
    return;
  }

  if (spec.data.empty()) throw InputError("--data is required for " + spec.command);
  if (!std::filesystem::exists(spec.data)) throw InputError("data file " + spec.data.string() + " does not exist");
  const std::vector<IndividualRecord> data = io::read_dataset_csv(spec.data);
  save_config(out / "config-echo.ini", cfg);

  if (spec.command == "map" || spec.command == "propose") {
    std::vector<nlohmann::json> entries(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
      const Posterior post(data[i], theta, model);
      const MapResult map = find_map(post, cfg.map);
      nlohmann::json j = io::map_to_json(data[i].id(), map, theta);
      if (spec.command == "propose") {
        j = nlohmann::json{{"id", data[i].id()}, {"map", j}};
        if (map.converged || cfg.allow_unconverged) {
          j["linearized"] = io::proposal_to_json(linearized_proposal(post, map, cfg.allow_unconverged));
          j["laplace"] = io::proposal_to_json(laplace_proposal(post, map, cfg.allow_unconverged));
        } else {
          j["error"] = "MAP did not converge";
        }
      }
      entries[i] = std::move(j);
    });
    Index converged = 0;
    for (const auto& e : entries) {
      converged += (spec.command == "map" ? e["converged"] : e["map"]["converged"]).get<bool>() ? 1 : 0;
    }
    nlohmann::json doc{{"parameters", names},
                       {"converged", converged},
                       {"individuals", static_cast<Index>(entries.size())},
                       {"results", entries}};
    io::write_json(out / "summaries" / (spec.command == "map" ? "map.json" : "proposals.json"), doc);
    return;
  }

  const IndividualRecord& rec = detail::pick_individual(data, spec.individual);

  if (spec.command == "check-eq6") {
    const Posterior post(rec, theta, model);
    const MapResult map = find_map(post, cfg.map);
    if (!map.converged && !cfg.allow_unconverged) throw Error("MAP did not converge for individual " + rec.id());
    const Matrix lin = linearized_proposal(post, map, true).cov();
    Matrix zero_resid_cov;
    {
      // Same individual with observations replaced by the MAP prediction.
      const Vector f = model.predict(rec.times(), theta.to_psi(map.phi_hat), rec.dose());
      const Posterior fitted(IndividualRecord(rec.id(), rec.times(), f, rec.dose()), theta, model);
      zero_resid_cov = laplace_proposal(fitted, map, true).cov();
    }
    const InfoGapReport gap = expected_info_gap_report(post, map, cfg.eq6_sims, streams::seed(cfg.seed, streams::eq6));
    nlohmann::json doc{{"id", rec.id()},
                       {"parameters", names},
                       {"n_sims", gap.n_sims},
                       {"gap", gap.gap},
                       {"std_error", gap.std_error},
                       {"gap_over_std_error", gap.gap / gap.std_error},
                       {"expected_information", io::to_json(gap.expected)},
                       {"mean_observed_information", io::to_json(gap.mean_observed)},
                       {"zero_residual_cov_rel_diff", (zero_resid_cov - lin).norm() / lin.norm()}};
    io::write_json(out / "summaries" / "eq6.json", doc);
    return;
  }

  const IndividualSetup setup = setup_individual(rec, cfg, model);

  if (spec.command == "sample") {
    const std::vector<KernelKind> kinds = parse_kernel_list(spec.kernel.value_or("nlme-imh"));
    nlohmann::json doc{{"id", rec.id()}, {"parameters", names}};
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      const KernelConfig kernel = make_kernel(kinds[k], cfg, setup);
      const Chain chain = run_chain(default_init(kernel, theta), kernel, setup.posterior, cfg.iters,
                                    streams::seed(cfg.seed, streams::sample, static_cast<std::uint64_t>(kinds[k])));
      io::write_chain_csv(out / "chains" / detail::chain_file(kinds[k], rec.id()), chain, theta, names);
      const Index burn = std::min(cfg.burn_in, chain.length() - 10);
      doc["kernels"][to_string(kinds[k])] = {{"acceptance_rate", acceptance_rate(chain)},
                                             {"ess", io::to_json(ess(chain, std::max<Index>(0, burn)))},
                                             {"moves_proposed", chain.moves_proposed},
                                             {"moves_accepted", chain.moves_accepted},
                                             {"gradient_failures", chain.gradient_failures},
                                             {"seed", chain.seed}};
    }
    io::write_json(out / "summaries" / "sample.json", doc);
    return;
  }

  auto reference_chain = [&]() {
    const KernelKind kind = parse_kernel_kind(spec.command == "reference" ? spec.kernel.value_or("nlme-imh")
                                                                          : std::string("nlme-imh"));
    const KernelConfig kernel = make_kernel(kind, cfg, setup);
    const Index n = spec.command == "reference" && spec.iters ? *spec.iters : cfg.reference_iters;
    return run_chain(default_init(kernel, theta), kernel, setup.posterior, n,
                     streams::seed(cfg.seed, streams::reference));
  };

  if (spec.command == "reference") {
    const Chain ref = reference_chain();
    const Index burn = spec.burn_in ? *spec.burn_in : cfg.reference_burn_in;
    if (burn >= ref.length()) throw InputError("reference burn-in exceeds the chain length");
    io::write_chain_csv(out / "chains" / ("reference-" + rec.id() + ".csv"), ref, theta, names);
    nlohmann::json stats = nlohmann::json::object();
    for (Index l = 0; l < ref.dim(); ++l) {
      std::vector<double> col;
      for (Index k = burn; k < ref.length(); ++k) col.push_back(ref.states(l, k));
      stats[names[static_cast<std::size_t>(l)]] =
          io::stats_to_json(to_psi(coordinate_stats(std::move(col)), theta.transform()[static_cast<std::size_t>(l)]));
    }
    nlohmann::json doc{{"id", rec.id()},
                       {"kernel", to_string(ref.kernel.kind)},
                       {"iterations", ref.length() - 1},
                       {"burn_in", burn},
                       {"acceptance_rate", acceptance_rate(ref)},
                       {"ess", io::to_json(ess(ref, burn))},
                       {"stats", stats}};
    io::write_json(out / "summaries" / "reference.json", doc);
    return;
  }

  // compare
  const std::vector<KernelKind> kinds =
      parse_kernel_list(spec.kernel.value_or("rwm-componentwise,rwm-blockwise,mala,nlme-imh"));
  double gamma = cfg.mala_gamma;
  nlohmann::json ladder_json = nlohmann::json::array();
  if (cfg.mala_tune && std::find(kinds.begin(), kinds.end(), KernelKind::mala) != kinds.end()) {
    // Tune inside the posterior bulk; from the prior mode large steps can stall.
    const LatentPoint tune_init = setup.map.converged ? setup.map.phi_hat : theta.prior_mean();
    const auto ladder = tune_mala(setup.posterior, tune_init, default_mala_ladder(), cfg.mala_tune_iters,
                                  streams::seed(cfg.seed, streams::tune));
    gamma = closest_rung(ladder).gamma;
    for (const LadderPoint& r : ladder) ladder_json.push_back({{"gamma", r.gamma}, {"acceptance", r.acceptance}});
  }

  const Chain ref = reference_chain();
  if (cfg.reference_burn_in >= ref.length()) throw InputError("reference burn-in exceeds the chain length");
  const std::vector<Index> thresholds = cfg.effective_thresholds();

  nlohmann::json doc{{"id", rec.id()},
                     {"parameters", names},
                     {"runs", cfg.runs},
                     {"iters", cfg.iters},
                     {"trace_iters", cfg.trace_iters},
                     {"burn_in", cfg.burn_in},
                     {"mala_gamma", gamma},
                     {"mala_ladder", ladder_json},
                     {"map", io::map_to_json(rec.id(), setup.map, theta)}};
  for (std::size_t k = 0; k < kinds.size(); ++k) {
    const KernelKind kind = kinds[k];
    const KernelConfig kernel = make_kernel(kind, cfg, setup, gamma);
    const LatentPoint init = default_init(kernel, theta);
    const auto kid = static_cast<std::uint64_t>(kind);

    const Chain trace = run_chain(init, kernel, setup.posterior, cfg.trace_iters,
                                  streams::seed(cfg.seed, streams::trace, kid));
    const QuantileTrace qt = running_quantiles(trace, {0.1, 0.5, 0.9}, std::min(cfg.burn_in, trace.length() - 1));
    io::write_quantile_csv(out / "summaries" / ("quantiles-" + std::string(to_string(kind)) + ".csv"), qt, theta,
                           names);

    std::vector<Chain> reps(static_cast<std::size_t>(cfg.runs));
    parallel_for(reps.size(), [&](std::size_t r) {
      reps[r] = run_chain(init, kernel, setup.posterior, cfg.iters,
                          streams::seed(cfg.seed, streams::replicate, kid, r));
    });
    const ReplicateSummary rs = replicate_summary(reps, thresholds, ref, cfg.reference_burn_in);
    double acc = 0.0;
    for (const Chain& c : reps) acc += acceptance_rate(c);
    nlohmann::json kj = io::replicate_summary_to_json(rs, theta, names);
    kj["kernel"] = to_string(kind);
    kj["mean_acceptance_rate"] = acc / static_cast<double>(reps.size());
    kj["trace_acceptance_rate"] = acceptance_rate(trace);
    io::write_json(out / "summaries" / ("replicates-" + std::string(to_string(kind)) + ".json"), kj);
    doc["kernels"].push_back({{"kernel", to_string(kind)},
                              {"mean_acceptance_rate", kj["mean_acceptance_rate"]},
                              {"trace_acceptance_rate", kj["trace_acceptance_rate"]},
                              {"summary", "replicates-" + std::string(to_string(kind)) + ".json"},
                              {"quantiles", "quantiles-" + std::string(to_string(kind)) + ".csv"}});
  }
  io::write_chain_csv(out / "chains" / ("reference-" + rec.id() + ".csv"), ref, theta, names);
  io::write_json(out / "summaries" / "compare.json", doc);
}

}  // namespace nlme

#endif  // NLME_PIPELINE_HPP
