#ifndef NLME_IO_HPP
#define NLME_IO_HPP

#include <fmt/format.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nlme/datagen.hpp"
#include "nlme/diagnostics.hpp"
#include "nlme/errors.hpp"
#include "nlme/map_solver.hpp"
#include "nlme/model.hpp"
#include "nlme/proposal.hpp"
#include "nlme/samplers.hpp"

namespace nlme::io {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Text helpers

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

inline double to_double(std::string_view s, const std::string& what) {
  double v = 0.0;
  if (!parse_double(s, v)) throw InputError(what + ": '" + std::string(s) + "' is not a number");
  return v;
}

/// Whitespace-separated list of numbers.
inline Vector parse_vector(const std::string& s, const std::string& what) {
  std::istringstream in(s);
  std::vector<double> vals;
  std::string tok;
  while (in >> tok) vals.push_back(to_double(tok, what));
  return Eigen::Map<Vector>(vals.data(), static_cast<Index>(vals.size()));
}

inline std::string format_vector(const Vector& v) {
  std::string out;
  for (Index i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += fmt::format("{}", v(i));
  }
  return out;
}

/// Rows separated by commas, entries by whitespace.
inline Matrix parse_matrix(const std::string& s, const std::string& what) {
  std::vector<Vector> rows;
  for (const std::string& r : split(s, ',')) rows.push_back(parse_vector(r, what));
  const Index n = static_cast<Index>(rows.size());
  Matrix m(n, n);
  for (Index i = 0; i < n; ++i) {
    if (rows[static_cast<std::size_t>(i)].size() != n) throw InputError(what + ": matrix must be square");
    m.row(i) = rows[static_cast<std::size_t>(i)].transpose();
  }
  return m;
}

inline std::string format_matrix(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    if (i) out += ", ";
    out += format_vector(m.row(i).transpose());
  }
  return out;
}

inline std::vector<Transform> parse_transforms(const std::string& s) {
  std::istringstream in(s);
  std::vector<Transform> out;
  std::string tok;
  while (in >> tok) {
    if (tok == "log") {
      out.push_back(Transform::log);
    } else if (tok == "identity") {
      out.push_back(Transform::identity);
    } else {
      throw InputError("unknown transform '" + tok + "'");
    }
  }
  return out;
}

inline std::string format_transforms(const std::vector<Transform>& t) {
  std::string out;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i) out += ' ';
    out += to_string(t[i]);
  }
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  return out;
}

// ---------------------------------------------------------------------------
// Dataset CSV: id,time,observation,dose

inline void write_dataset_csv(const std::filesystem::path& path, const std::vector<IndividualRecord>& records) {
  std::ofstream out = open_out(path);
  out << "id,time,observation,dose\n";
  for (const IndividualRecord& r : records) {
    for (Index j = 0; j < r.size(); ++j) {
      out << fmt::format("{},{},{},{}\n", r.id(), r.times()(j), r.observations()(j), r.dose());
    }
  }
}

/// Reads the dataset CSV. Rows are grouped by id in order of first
/// appearance. Errors name the offending line.
inline std::vector<IndividualRecord> read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open data file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw InputError("data file is empty", 1);
  ++lineno;
  if (trim(line) != "id,time,observation,dose") {
    throw InputError("line 1: expected header 'id,time,observation,dose'", 1);
  }

  struct Rows {
    std::size_t first_line;
    std::vector<double> t, y;
    double dose;
  };
  std::vector<std::string> order;
  std::map<std::string, Rows> groups;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    const std::string where = "line " + std::to_string(lineno);
    if (f.size() != 4) throw InputError(where + ": expected 4 fields, found " + std::to_string(f.size()), lineno);
    if (f[0].empty()) throw InputError(where + ": empty id", lineno);
    double t = 0, y = 0, d = 0;
    if (!parse_double(f[1], t)) throw InputError(where + ": bad time '" + f[1] + "'", lineno);
    if (!parse_double(f[2], y)) throw InputError(where + ": bad observation '" + f[2] + "'", lineno);
    if (!parse_double(f[3], d)) throw InputError(where + ": bad dose '" + f[3] + "'", lineno);
    auto it = groups.find(f[0]);
    if (it == groups.end()) {
      order.push_back(f[0]);
      it = groups.emplace(f[0], Rows{lineno, {}, {}, d}).first;
    } else if (it->second.dose != d) {
      throw InputError(where + ": dose differs from earlier rows of id " + f[0], lineno);
    }
    it->second.t.push_back(t);
    it->second.y.push_back(y);
  }
  if (order.empty()) throw InputError("data file has no rows", lineno);

  std::vector<IndividualRecord> out;
  for (const std::string& id : order) {
    Rows& r = groups.at(id);
    const Index n = static_cast<Index>(r.t.size());
    try {
      out.emplace_back(id, Eigen::Map<Vector>(r.t.data(), n), Eigen::Map<Vector>(r.y.data(), n), r.dose);
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(r.first_line) + ": " + e.what(), r.first_line);
    }
  }
  return out;
}

/// Truth CSV: id,coordinate,true_value (psi scale).
inline void write_truth_csv(const std::filesystem::path& path, const std::vector<IndividualRecord>& records,
                            const std::vector<LatentPoint>& truth, const PopulationParams& theta,
                            const std::vector<std::string>& names) {
  std::ofstream out = open_out(path);
  out << "id,coordinate,true_value\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Vector psi = theta.to_psi(truth[i]);
    for (Index l = 0; l < psi.size(); ++l) {
      out << fmt::format("{},{},{}\n", records[i].id(), names[static_cast<std::size_t>(l)], psi(l));
    }
  }
}

/// Chain CSV: iteration, phi_<name>..., <name>..., logpost, accepted.
inline void write_chain_csv(const std::filesystem::path& path, const Chain& chain, const PopulationParams& theta,
                            const std::vector<std::string>& names) {
  std::ofstream out = open_out(path);
  out << "iteration";
  for (const auto& n : names) out << ",phi_" << n;
  for (const auto& n : names) out << ',' << n;
  out << ",logpost,accepted\n";
  std::string row;
  for (Index k = 0; k < chain.length(); ++k) {
    const LatentPoint phi = chain.state(k);
    const Vector psi = theta.to_psi(phi);
    row = fmt::format("{}", k);
    for (Index l = 0; l < phi.size(); ++l) row += fmt::format(",{}", phi(l));
    for (Index l = 0; l < psi.size(); ++l) row += fmt::format(",{}", psi(l));
    row += fmt::format(",{},{}\n", chain.logpost[static_cast<std::size_t>(k)],
                       static_cast<int>(chain.accepted[static_cast<std::size_t>(k)]));
    out << row;
  }
}

/// Tidy quantile CSV: iteration,coordinate,order,value (psi scale).
inline void write_quantile_csv(const std::filesystem::path& path, const QuantileTrace& tr,
                               const PopulationParams& theta, const std::vector<std::string>& names) {
  std::ofstream out = open_out(path);
  out << "iteration,coordinate,order,value\n";
  for (Index k = tr.burn_in; k < tr.burn_in + tr.count; ++k) {
    for (Index l = 0; l < tr.dim; ++l) {
      for (std::size_t o = 0; o < tr.orders.size(); ++o) {
        double v = tr.at(k, o, l);
        if (theta.transform()[static_cast<std::size_t>(l)] == Transform::log) v = std::exp(v);
        out << fmt::format("{},{},{},{}\n", k, names[static_cast<std::size_t>(l)], tr.orders[o], v);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline json map_to_json(const std::string& id, const MapResult& r, const PopulationParams& theta) {
  return json{{"id", id},
              {"phi_hat", to_json(r.phi_hat)},
              {"psi_hat", to_json(theta.to_psi(r.phi_hat))},
              {"objective", r.objective},
              {"grad_norm", r.grad_norm},
              {"iterations", r.iterations},
              {"converged", r.converged}};
}

inline json proposal_to_json(const GaussianProposal& p) {
  return json{{"kind", to_string(p.kind())},
              {"mean", to_json(p.mean())},
              {"cov", to_json(p.cov())},
              {"chol", to_json(p.chol())},
              {"logdet", p.logdet()},
              {"jitter", p.jitter()}};
}

inline json stats_to_json(const CoordinateStats& s) {
  return json{{"min", s.min}, {"q25", s.q25}, {"median", s.median}, {"q75", s.q75}, {"max", s.max}};
}

/// Replicate summary with statistics reported on the psi scale.
inline json replicate_summary_to_json(const ReplicateSummary& s, const PopulationParams& theta,
                                      const std::vector<std::string>& names) {
  json j;
  json ref = json::object();
  for (std::size_t l = 0; l < names.size(); ++l) ref[names[l]] = stats_to_json(to_psi(s.reference[l], theta.transform()[l]));
  j["reference"] = ref;
  j["reference_burn_in"] = s.reference_burn_in;
  json ths = json::array();
  for (const ThresholdSummary& t : s.thresholds) {
    json tj;
    tj["iteration"] = t.iteration;
    json stats = json::object();
    json states = json::object();
    for (std::size_t l = 0; l < names.size(); ++l) {
      stats[names[l]] = stats_to_json(to_psi(t.stats[l], theta.transform()[l]));
      json col = json::array();
      for (Index r = 0; r < t.states.rows(); ++r) {
        double v = t.states(r, static_cast<Index>(l));
        if (theta.transform()[l] == Transform::log) v = std::exp(v);
        col.push_back(v);
      }
      states[names[l]] = col;
    }
    tj["stats"] = stats;
    tj["states"] = states;
    ths.push_back(tj);
  }
  j["thresholds"] = ths;
  return j;
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
}

}  // namespace nlme::io

#endif  // NLME_IO_HPP
