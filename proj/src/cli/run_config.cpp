#include "cli/run_config.hpp"

#include <fstream>

namespace efmca::cli {

namespace {

const nlohmann::json& schema() {
  static const nlohmann::json s = {
      {"profile", "string"},
      {"command", "string"},
      {"distribution", "string"},
      {"link_mode", "string"},
      {"H", "uint"},
      {"S", "uint"},
      {"iterations", "uint"},
      {"seed", "uint"},
      {"exact", "bool"},
      {"tol", "number"},
      {"fixed_point_passes", "uint"},
      {"max_exact_H", "uint"},
      {"record_exact_loglik", "bool"},
      {"restarts", "uint"},
      {"candidates", "string[]"},
      {"gamma_warm_start", "bool"},
      {"init", {{"pi", "number"}, {"jitter", "number[]"}}},
      {"evo",
       {{"parents_per_gen", "uint"},
        {"children_per_parent", "uint"},
        {"generations", "uint"},
        {"bitflip_p", "number"},
        {"crossover_p", "number"}}},
      {"bars",
       {{"R", "uint"},
        {"N", "uint"},
        {"pi_gen", "number"},
        {"bar_value", "number"},
        {"background_value", "number"},
        {"second_low", "number"},
        {"second_high", "number"}}},
      {"denoise",
       {{"patch_side", "uint"},
        {"stride", "uint"},
        {"peak", "number"},
        {"noise", "string"},
        {"crop", "uint[]"},
        {"anscombe", "bool"},
        {"gaussian_variance", "number"},
        {"gamma_shape", "number"}}},
      {"paths",
       {{"data", "string"},
        {"out", "string"},
        {"truth", "string"},
        {"params", "string"},
        {"warm_start", "string"},
        {"image", "string"},
        {"resume_K", "string"}}}};
  return s;
}

bool type_matches(const nlohmann::json& v, const std::string& type) {
  if (type == "string") return v.is_string();
  if (type == "uint") return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (type == "number") return v.is_number();
  if (type == "bool") return v.is_boolean();
  if (type.ends_with("[]")) {
    if (!v.is_array()) return false;
    const auto elem = type.substr(0, type.size() - 2);
    for (const auto& e : v)
      if (!type_matches(e, elem)) return false;
    return true;
  }
  return false;
}

void check_against(const nlohmann::json& j, const nlohmann::json& s, const std::string& where,
                   const std::string& prefix) {
  if (!j.is_object()) throw UsageError(where + ": " + (prefix.empty() ? "config" : prefix) + " must be an object");
  for (const auto& [key, v] : j.items()) {
    const std::string path = prefix + "/" + key;
    if (!s.contains(key)) throw UsageError(where + ": unknown key '" + path + "'");
    const auto& t = s.at(key);
    if (t.is_object()) {
      check_against(v, t, where, path);
    } else if (!type_matches(v, t.get<std::string>())) {
      throw UsageError(where + ": '" + path + "' must be " + t.get<std::string>());
    }
  }
}

}  // namespace

std::filesystem::path config_dir() {
  if (const char* env = std::getenv("EFMCA_CONFIG_DIR")) return env;
#ifdef EFMCA_CONFIG_DIR
  return EFMCA_CONFIG_DIR;
#else
  return "configs";
#endif
}

void RunConfig::check(const nlohmann::json& j, const std::string& where) { check_against(j, schema(), where, ""); }

void RunConfig::merge(const nlohmann::json& layer, const std::string& where) {
  check(layer, where);
  j_.merge_patch(layer);
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw UsageError(path.string() + ": cannot open config");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  merge(j, path.string());
}

void RunConfig::merge_profile(const std::string& name) {
  std::filesystem::path p = name;
  if (!std::filesystem::exists(p)) p = config_dir() / (name + ".json");
  if (!std::filesystem::exists(p)) throw UsageError("unknown profile '" + name + "'");
  merge_file(p);
  if (!j_.contains("profile")) j_["profile"] = name;
}

std::optional<double> RunConfig::opt_num(const std::string& ptr) const {
  const nlohmann::json::json_pointer p(ptr);
  if (!j_.contains(p)) return std::nullopt;
  return j_.at(p).get<double>();
}

DistKind RunConfig::distribution(const std::string& ptr) const {
  const auto name = str(ptr);
  if (name.empty()) throw UsageError("missing distribution (" + ptr.substr(1) + ")");
  const auto k = parse_dist_kind(name);
  if (!k) throw UsageError("unknown distribution '" + name + "'");
  return *k;
}

LinkMode RunConfig::link_mode() const {
  const auto m = parse_link_mode(str("/link_mode", "max"));
  if (!m) throw UsageError("unknown link_mode '" + str("/link_mode") + "'");
  return *m;
}

InitConfig RunConfig::init() const {
  InitConfig c;
  c.pi = opt_num("/init/pi");
  if (has("/init/jitter")) {
    const auto v = j_.at(nlohmann::json::json_pointer("/init/jitter")).get<std::vector<double>>();
    if (v.size() != 2 || !(v[0] > 0.0 && v[0] <= v[1])) throw UsageError("init/jitter must be [low, high] with 0 < low <= high");
    c.jitter_low = v[0];
    c.jitter_high = v[1];
  }
  return c;
}

EvoConfig RunConfig::evo() const {
  EvoConfig e;
  e.S = size("/S", e.S);
  e.parents_per_gen = size("/evo/parents_per_gen", e.parents_per_gen);
  e.children_per_parent = size("/evo/children_per_parent", e.children_per_parent);
  e.generations = size("/evo/generations", e.generations);
  e.bitflip_p = num("/evo/bitflip_p", e.bitflip_p);
  e.crossover_p = num("/evo/crossover_p", e.crossover_p);
  try {
    e.validate();
  } catch (const ParameterError& err) {
    throw UsageError(err.what());
  }
  return e;
}

nlohmann::json RunConfig::echo() const {
  auto j = j_;
  if (j.contains("paths")) {
    j["paths"].erase("out");
    if (j["paths"].empty()) j.erase("paths");
  }
  return j;
}

std::string RunConfig::hash() const {
  const auto s = echo().dump();
  return hex64(fnv1a(s.data(), s.size()));
}

nlohmann::json RunConfig::meta() const {
  return {{"seed", seed()}, {"config_hash", hash()}, {"version", std::string(kVersion)}, {"config", echo()}};
}

}  // namespace efmca::cli
