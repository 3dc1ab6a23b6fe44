#ifndef EFMCA_PARAMS_HPP
#define EFMCA_PARAMS_HPP

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "efmca/errors.hpp"
#include "efmca/expfam.hpp"

namespace efmca {

/// N x D observations, one datapoint per row.
using Dataset = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// How the winning cause of an observable is chosen among active units.
enum class LinkMode { Max, MaxMagnitude };

inline std::string_view to_string(LinkMode m) {
  return m == LinkMode::Max ? "max" : "max_magnitude";
}

inline std::optional<LinkMode> parse_link_mode(std::string_view s) {
  if (s == "max") return LinkMode::Max;
  if (s == "max_magnitude") return LinkMode::MaxMagnitude;
  return std::nullopt;
}

/// Prior probabilities pi (H) and L dictionaries W[l] (D x H) holding the
/// mean-value parameters of every (observable, cause) pair.
struct ModelParams {
  DistKind distribution = DistKind::Gaussian;
  LinkMode link_mode = LinkMode::Max;
  Eigen::VectorXd pi;
  std::vector<Eigen::MatrixXd> W;

  std::size_t H() const { return static_cast<std::size_t>(pi.size()); }
  std::size_t D() const { return W.empty() ? 0 : static_cast<std::size_t>(W[0].rows()); }
  std::size_t L() const { return W.size(); }

  static ModelParams zeros(DistKind dist, std::size_t D, std::size_t H,
                           LinkMode mode = LinkMode::Max) {
    ModelParams p;
    p.distribution = dist;
    p.link_mode = mode;
    p.pi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(H), 0.5);
    p.W.assign(describe(dist).L, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(D),
                                                       static_cast<Eigen::Index>(H)));
    return p;
  }

  template <ExponentialFamily Dist>
  MeanParams<Dist::L> column(std::size_t d, std::size_t h) const {
    MeanParams<Dist::L> w;
    for (std::size_t l = 0; l < Dist::L; ++l)
      w[l] = W[l](static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h));
    return w;
  }

  template <ExponentialFamily Dist>
  void set_column(std::size_t d, std::size_t h, const MeanParams<Dist::L>& w) {
    for (std::size_t l = 0; l < Dist::L; ++l)
      W[l](static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) = w[l];
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.distribution != b.distribution || a.link_mode != b.link_mode) return false;
    if (a.pi.size() != b.pi.size() || a.pi != b.pi || a.W.size() != b.W.size()) return false;
    for (std::size_t l = 0; l < a.W.size(); ++l) {
      if (a.W[l].rows() != b.W[l].rows() || a.W[l].cols() != b.W[l].cols()) return false;
      if (a.W[l] != b.W[l]) return false;
    }
    return true;
  }
};

/// Throws ParameterError unless every ModelParams invariant holds.
inline void validate(const ModelParams& p) {
  const auto spec = describe(p.distribution);
  if (p.H() == 0) throw ParameterError("ModelParams: H must be positive");
  if (p.W.size() != spec.L)
    throw ParameterError("ModelParams: expected " + std::to_string(spec.L) +
                         " dictionaries for " + std::string(spec.name));
  const auto D = p.D();
  if (D == 0) throw ParameterError("ModelParams: D must be positive");
  for (const auto& w : p.W) {
    if (static_cast<std::size_t>(w.rows()) != D || static_cast<std::size_t>(w.cols()) != p.H())
      throw ParameterError("ModelParams: dictionary shapes disagree");
  }
  for (Eigen::Index h = 0; h < p.pi.size(); ++h) {
    if (!(p.pi[h] > 0.0 && p.pi[h] < 1.0))
      throw ParameterError("ModelParams: pi[" + std::to_string(h) + "] outside (0,1)");
  }
  if (p.link_mode == LinkMode::MaxMagnitude && spec.support != Support::Real)
    throw ParameterError("ModelParams: max_magnitude link requires a real-valued distribution");
  visit_distribution(p.distribution, [&]<class Dist>(std::type_identity<Dist>) {
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < p.H(); ++h)
        if (!Dist::valid_mean(p.column<Dist>(d, h)))
          throw ParameterError("ModelParams: column (d=" + std::to_string(d) +
                               ", h=" + std::to_string(h) + ") is not a valid mean parameter");
  });
}

inline nlohmann::json to_json(const ModelParams& p) {
  nlohmann::json j;
  j["distribution"] = std::string(to_string(p.distribution));
  j["link_mode"] = std::string(to_string(p.link_mode));
  j["H"] = p.H();
  j["D"] = p.D();
  j["L"] = p.L();
  j["pi"] = std::vector<double>(p.pi.data(), p.pi.data() + p.pi.size());
  auto& W = j["W"] = nlohmann::json::array();
  for (const auto& m : p.W) {
    auto rows = nlohmann::json::array();
    for (Eigen::Index d = 0; d < m.rows(); ++d) {
      std::vector<double> row(static_cast<std::size_t>(m.cols()));
      for (Eigen::Index h = 0; h < m.cols(); ++h) row[static_cast<std::size_t>(h)] = m(d, h);
      rows.push_back(std::move(row));
    }
    W.push_back(std::move(rows));
  }
  return j;
}

/// Parses and validates the ModelParams JSON document. An optional "meta"
/// object is ignored.
inline ModelParams params_from_json(const nlohmann::json& j) {
  try {
    for (const auto& [key, _] : j.items()) {
      static constexpr std::string_view kKeys[] = {"distribution", "link_mode", "H", "D",
                                                   "L",            "pi",        "W", "meta"};
      if (std::find(std::begin(kKeys), std::end(kKeys), key) == std::end(kKeys))
        throw ParameterError("ModelParams: unknown key '" + key + "'");
    }
    ModelParams p;
    const auto dist = parse_dist_kind(j.at("distribution").get<std::string>());
    if (!dist) throw ParameterError("ModelParams: unknown distribution");
    p.distribution = *dist;
    const auto mode = parse_link_mode(j.value("link_mode", std::string("max")));
    if (!mode) throw ParameterError("ModelParams: unknown link_mode");
    p.link_mode = *mode;
    const auto H = j.at("H").get<std::size_t>();
    const auto D = j.at("D").get<std::size_t>();
    const auto L = j.at("L").get<std::size_t>();
    const auto pi = j.at("pi").get<std::vector<double>>();
    if (pi.size() != H) throw ParameterError("ModelParams: pi length differs from H");
    p.pi = Eigen::Map<const Eigen::VectorXd>(pi.data(), static_cast<Eigen::Index>(H));
    const auto& W = j.at("W");
    if (W.size() != L) throw ParameterError("ModelParams: W length differs from L");
    for (const auto& rows : W) {
      if (rows.size() != D) throw ParameterError("ModelParams: W rows differ from D");
      Eigen::MatrixXd m(static_cast<Eigen::Index>(D), static_cast<Eigen::Index>(H));
      for (std::size_t d = 0; d < D; ++d) {
        const auto row = rows[d].get<std::vector<double>>();
        if (row.size() != H) throw ParameterError("ModelParams: W columns differ from H");
        for (std::size_t h = 0; h < H; ++h)
          m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(h)) = row[h];
      }
      p.W.push_back(std::move(m));
    }
    validate(p);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("ModelParams: malformed JSON: ") + e.what());
  }
}

}  // namespace efmca

#endif  // EFMCA_PARAMS_HPP
