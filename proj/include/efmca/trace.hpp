#ifndef EFMCA_TRACE_HPP
#define EFMCA_TRACE_HPP

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "efmca/numeric.hpp"

namespace efmca {

inline constexpr std::string_view kVersion = "0.1.0";

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string hash_vector(const Eigen::VectorXd& v) {
  return hex64(fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double)));
}

struct IterationRecord {
  std::size_t iter = 0;
  double lower_bound = 0.0;
  std::optional<double> exact_loglik;
  double wall_time = 0.0;  // seconds since the run started
  std::string pi_hash;
  bool decreased = false;  // lower bound fell below the previous record
};

/// Per-iteration history of one training run.
struct RunTrace {
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<IterationRecord> records;
  bool converged = false;

  double final_lower_bound() const { return records.empty() ? 0.0 : records.back().lower_bound; }

  nlohmann::json header_json() const {
    return {{"record", "run"},
            {"seed", seed},
            {"version", std::string(kVersion)},
            {"config", config}};
  }

  static nlohmann::json record_json(const IterationRecord& r, bool with_timing) {
    nlohmann::json j = {{"record", "iteration"},
                        {"iter", r.iter},
                        {"lower_bound", r.lower_bound},
                        {"pi_hash", r.pi_hash}};
    if (r.exact_loglik) j["exact_loglik"] = *r.exact_loglik;
    if (r.decreased) j["decreased"] = true;
    if (with_timing) j["wall_time"] = r.wall_time;
    return j;
  }

  /// Newline-delimited JSON: one header record, then one record per
  /// iteration. Wall-clock times are omitted unless requested so that
  /// repeated runs produce identical files.
  void write_ndjson(std::ostream& os, bool with_timing = false) const {
    os << header_json().dump() << '\n';
    for (const auto& r : records) os << record_json(r, with_timing).dump() << '\n';
  }

  /// Tidy CSV for plotting: iteration,lower_bound,exact_loglik.
  void write_series_csv(std::ostream& os) const {
    os << "iteration,lower_bound,exact_loglik\n";
    for (const auto& r : records) {
      os << r.iter << ',' << format_double(r.lower_bound) << ','
         << (r.exact_loglik ? format_double(*r.exact_loglik) : std::string()) << '\n';
    }
  }
};

}  // namespace efmca

#endif  // EFMCA_TRACE_HPP
