#include "cli/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

namespace efmca::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f697365;  // "noise"
constexpr std::uint64_t kBarsStream = 0x62617273;     // "bars"

fs::path out_dir(const RunConfig& cfg) {
  fs::path dir = cfg.str("/paths/out", ".");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(dir.string() + ": cannot create output directory: " + ec.message());
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  os << j.dump(2) << '\n';
  if (!os) throw DataError(path.string() + ": write failed");
}

/// Writes to paths.out when given, else to `out`.
void emit_report(const RunConfig& cfg, const json& report, std::ostream& out) {
  if (cfg.has("/paths/out")) {
    const fs::path p = cfg.str("/paths/out");
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_json(p, report);
  } else {
    out << report.dump(2) << '\n';
  }
}

std::vector<std::string> csv_comments(const RunConfig& cfg) {
  return {"efmca " + std::string(kVersion) + " seed=" + std::to_string(cfg.seed()) +
              " config_hash=" + cfg.hash(),
          "config " + cfg.echo().dump()};
}

Dataset load_dataset(const std::string& path) {
  if (path.empty()) throw UsageError("missing dataset path (--data)");
  try {
    return read_dataset_csv(path);
  } catch (const IoError& e) {
    throw DataError(e.what());
  }
}

ModelParams load_params(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError(path + ": cannot open for reading");
  try {
    return params_from_json(json::parse(is));
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  } catch (const ParameterError& e) {
    throw DataError(path + ": " + e.what());
  }
}

json params_document(const ModelParams& p, const RunConfig& cfg) {
  json j = to_json(p);
  j["meta"] = cfg.meta();
  return j;
}

void require_domain(const Dataset& Y, DistKind dist, const std::string& path) {
  visit_distribution(dist, [&]<class Dist>(std::type_identity<Dist>) {
    const auto msg = tasks::detail::domain_violation<Dist>(Y);
    if (!msg.empty()) throw DataError(path + ": " + msg);
  });
}

void write_trace(const fs::path& dir, const RunTrace& trace, const RunConfig& cfg, const Runtime& rt) {
  std::ofstream os(dir / "trace.ndjson");
  if (!os) throw DataError((dir / "trace.ndjson").string() + ": cannot open for writing");
  json header = trace.header_json();
  header["config_hash"] = cfg.hash();
  header["run_config"] = cfg.echo();
  os << header.dump() << '\n';
  for (const auto& r : trace.records) os << RunTrace::record_json(r, rt.timing).dump() << '\n';
  std::ofstream csv(dir / "series.csv");
  for (const auto& c : csv_comments(cfg)) csv << "# " << c << '\n';
  trace.write_series_csv(csv);
}

tasks::BarsConfig bars_config(const RunConfig& cfg) {
  auto b = tasks::bars_defaults(cfg.distribution());
  b.R = cfg.size("/bars/R", b.R);
  b.N = cfg.size("/bars/N", b.N);
  b.pi_gen = cfg.num("/bars/pi_gen", b.pi_gen);
  b.bar_value = cfg.num("/bars/bar_value", b.bar_value);
  b.background_value = cfg.num("/bars/background_value", b.background_value);
  b.second_low = cfg.num("/bars/second_low", b.second_low);
  b.second_high = cfg.num("/bars/second_high", b.second_high);
  try {
    b.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  return b;
}

TvemConfig tvem_config(const RunConfig& cfg, const Runtime& rt) {
  TvemConfig c;
  c.H = cfg.size("/H", c.H);
  c.iterations = cfg.size("/iterations", c.iterations);
  c.seed = cfg.seed();
  c.link_mode = cfg.link_mode();
  c.init = cfg.init();
  c.evo = cfg.evo();
  c.fixed_point_passes = cfg.size("/fixed_point_passes", c.fixed_point_passes);
  c.tol = cfg.num("/tol", c.tol);
  c.record_exact_loglik = cfg.flag("/record_exact_loglik");
  c.max_exact_H = cfg.size("/max_exact_H", c.max_exact_H);
  c.workers = rt.workers;
  return c;
}

EmConfig em_config(const RunConfig& cfg, const Runtime& rt) {
  EmConfig c;
  c.H = cfg.size("/H", c.H);
  c.iterations = cfg.size("/iterations", c.iterations);
  c.seed = cfg.seed();
  c.link_mode = cfg.link_mode();
  c.init = cfg.init();
  c.fixed_point_passes = cfg.size("/fixed_point_passes", c.fixed_point_passes);
  c.tol = cfg.num("/tol", c.tol);
  c.record_exact_loglik = cfg.flag("/record_exact_loglik");
  c.max_exact_H = cfg.size("/max_exact_H", c.max_exact_H);
  c.workers = rt.workers;
  return c;
}

}  // namespace

void cmd_gen_bars(const RunConfig& cfg, const Runtime&, std::ostream& out) {
  const auto b = bars_config(cfg);
  std::mt19937_64 rng(derive_seed(cfg.seed(), kBarsStream));
  const auto data = tasks::gen_bars(b, rng);
  const auto dir = out_dir(cfg);

  auto comments = csv_comments(cfg);
  comments.push_back("bars " + to_json(b).dump());
  write_dataset_csv((dir / "data.csv").string(), data.Y, comments);

  Dataset S(static_cast<Eigen::Index>(data.latents.size()), static_cast<Eigen::Index>(b.H()));
  for (std::size_t n = 0; n < data.latents.size(); ++n)
    for (std::size_t h = 0; h < b.H(); ++h)
      S(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h)) = data.latents[n].test(h) ? 1.0 : 0.0;
  write_dataset_csv((dir / "latents.csv").string(), S, comments);

  json truth = params_document(data.truth, cfg);
  truth["meta"]["bars"] = to_json(b);
  write_json(dir / "truth.json", truth);

  out << json{{"data", (dir / "data.csv").string()},
              {"truth", (dir / "truth.json").string()},
              {"latents", (dir / "latents.csv").string()},
              {"bars", to_json(b)},
              {"seed", cfg.seed()},
              {"config_hash", cfg.hash()}}
             .dump()
      << '\n';
}

void cmd_train(const RunConfig& cfg, const Runtime& rt, std::ostream& out) {
  const auto dist = cfg.distribution();
  const auto data_path = cfg.str("/paths/data");
  const Dataset Y = load_dataset(data_path);
  require_domain(Y, dist, data_path);

  std::optional<ModelParams> warm;
  if (cfg.has("/paths/warm_start")) warm = load_params(cfg.str("/paths/warm_start"));

  const std::size_t H = cfg.size("/H", 10);
  const std::size_t max_exact = cfg.size("/max_exact_H", kDefaultMaxExactH);
  const bool exact = cfg.has("/exact") ? cfg.flag("/exact") : H <= max_exact;
  const auto dir = out_dir(cfg);

  ModelParams params;
  RunTrace trace;
  if (exact) {
    if (cfg.has("/paths/resume_K")) throw UsageError("--resume-K applies to the truncated E-step only");
    auto c = em_config(cfg, rt);
    c.init.warm_start = warm;
    auto r = run_em(Y, dist, c);
    params = std::move(r.params);
    trace = std::move(r.trace);
  } else {
    auto c = tvem_config(cfg, rt);
    c.init.warm_start = warm;
    if (cfg.has("/paths/resume_K")) {
      const auto p = cfg.str("/paths/resume_K");
      std::ifstream is(p, std::ios::binary);
      if (!is) throw DataError(p + ": cannot open for reading");
      try {
        c.resume_K = read_K(is);
      } catch (const ParameterError& e) {
        throw DataError(p + ": " + e.what());
      }
    }
    auto r = run_tvem(Y, dist, c);
    std::ofstream ks(dir / "K.bin", std::ios::binary);
    write_K(ks, r.checkpoint());
    params = std::move(r.params);
    trace = std::move(r.trace);
  }

  write_json(dir / "params.json", params_document(params, cfg));
  write_trace(dir, trace, cfg, rt);
  out << json{{"mode", exact ? "exact" : "tvem"},
              {"distribution", std::string(to_string(dist))},
              {"iterations", trace.records.empty() ? 0 : trace.records.back().iter},
              {"converged", trace.converged},
              {"final_lower_bound", trace.final_lower_bound()},
              {"params", (dir / "params.json").string()},
              {"seed", cfg.seed()},
              {"config_hash", cfg.hash()}}
             .dump()
      << '\n';
}

void cmd_eval_bars(const RunConfig& cfg, const Runtime&, std::ostream& out) {
  if (!cfg.has("/paths/params") || !cfg.has("/paths/truth"))
    throw UsageError("eval-bars needs TRAINED.json and TRUTH.json");
  const auto trained = load_params(cfg.str("/paths/params"));
  const auto truth = load_params(cfg.str("/paths/truth"));
  std::optional<Dataset> Y;
  if (cfg.has("/paths/data")) Y = load_dataset(cfg.str("/paths/data"));
  tasks::BarsReport r;
  try {
    r = tasks::evaluate_bars_run(trained, truth, Y ? &*Y : nullptr,
                                 cfg.size("/max_exact_H", kDefaultMaxExactH));
  } catch (const ParameterError& e) {
    throw DataError(e.what());
  }
  json report = to_json(r);
  report["meta"] = cfg.meta();
  emit_report(cfg, report, out);
}

void cmd_denoise(const RunConfig& cfg, const Runtime& rt, std::ostream& out) {
  const auto image_path = cfg.str("/paths/image");
  if (image_path.empty()) throw UsageError("denoise needs an input image");
  tasks::ImageTensor clean;
  try {
    clean = tasks::read_pgm(image_path);
  } catch (const IoError& e) {
    throw DataError(e.what());
  }
  if (cfg.has("/denoise/crop")) {
    const auto c = cfg.json().at(json::json_pointer("/denoise/crop")).get<std::vector<std::size_t>>();
    if (c.size() != 4) throw UsageError("denoise/crop must be [row, col, height, width]");
    try {
      clean = tasks::crop(clean, c[0], c[1], c[2], c[3]);
    } catch (const ParameterError& e) {
      throw DataError(image_path + ": " + e.what());
    }
  }
  const auto noise = cfg.distribution("/denoise/noise");
  const auto model = cfg.has("/distribution") ? cfg.distribution() : noise;
  const double peak = cfg.num("/denoise/peak", clean.px.maxCoeff());
  clean = tasks::rescale_to_peak(clean, peak);

  tasks::NoiseConfig nc;
  nc.gaussian_variance = cfg.num("/denoise/gaussian_variance", nc.gaussian_variance);
  nc.gamma_shape = cfg.num("/denoise/gamma_shape", nc.gamma_shape);
  std::mt19937_64 rng(derive_seed(cfg.seed(), kNoiseStream));
  const auto noisy = tasks::add_noise(clean, noise, rng, nc);

  tasks::DenoiseConfig dc;
  dc.patch_side = cfg.size("/denoise/patch_side", dc.patch_side);
  dc.stride = cfg.size("/denoise/stride", dc.stride);
  dc.anscombe = cfg.flag("/denoise/anscombe");
  dc.model = tvem_config(cfg, rt);
  const auto result = tasks::denoise(noisy, model, dc);

  const auto dir = out_dir(cfg);
  const double to_byte = 255.0 / peak;
  const auto scaled = [&](const tasks::ImageTensor& img) {
    return tasks::ImageTensor{img.px * to_byte, 255.0};
  };
  tasks::write_pgm((dir / "clean.pgm").string(), scaled(clean));
  tasks::write_pgm((dir / "noisy.pgm").string(), scaled(noisy));
  tasks::write_pgm((dir / "denoised.pgm").string(), scaled(result.estimate));
  write_trace(dir, result.run.trace, cfg, rt);

  const double noisy_psnr = tasks::psnr(clean, noisy);
  const double denoised_psnr = tasks::psnr(clean, result.estimate);
  json report = {{"image", image_path},
                 {"noise", std::string(to_string(noise))},
                 {"model", std::string(to_string(model))},
                 {"peak", peak},
                 {"width", clean.width()},
                 {"height", clean.height()},
                 {"patches", result.patches},
                 {"noisy_psnr", noisy_psnr},
                 {"denoised_psnr", denoised_psnr},
                 {"psnr_gain", denoised_psnr - noisy_psnr},
                 {"final_lower_bound", result.run.trace.final_lower_bound()},
                 {"meta", cfg.meta()}};
  write_json(dir / "report.json", report);
  out << report.dump() << '\n';
}

void cmd_select_noise(const RunConfig& cfg, const Runtime& rt, std::ostream& out) {
  const auto data_path = cfg.str("/paths/data");
  const Dataset Y = load_dataset(data_path);
  std::vector<DistKind> candidates;
  const auto names = cfg.has("/candidates")
                         ? cfg.json().at("candidates").get<std::vector<std::string>>()
                         : std::vector<std::string>{"gaussian", "gamma"};
  for (const auto& n : names) {
    const auto k = parse_dist_kind(n);
    if (!k) throw UsageError("unknown candidate distribution '" + n + "'");
    candidates.push_back(*k);
  }
  tasks::NoiseSelectConfig c;
  c.H = cfg.size("/H", c.H);
  c.restarts = cfg.size("/restarts", c.restarts);
  c.iterations = cfg.size("/iterations", c.iterations);
  c.seed = cfg.seed();
  c.max_exact_H = cfg.size("/max_exact_H", c.max_exact_H);
  c.evo = cfg.evo();
  c.gamma_warm_start = cfg.flag("/gamma_warm_start");
  c.workers = rt.workers;
  json report = to_json(tasks::select_noise_model(Y, candidates, c));
  report["data"] = data_path;
  report["N"] = Y.rows();
  report["meta"] = cfg.meta();
  emit_report(cfg, report, out);
}

// ---------------------------------------------------------------------------

namespace {

/// Collects flags that were actually given into a JSON config layer.
class FlagLayer {
 public:
  explicit FlagLayer(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* option(const std::string& names, const std::string& ptr, const std::string& help) {
    auto v = std::make_shared<T>();
    auto* o = app_->add_option(names, *v, help);
    binds_.push_back([o, v, ptr](json& j) {
      if (o->count()) j[json::json_pointer(ptr)] = *v;
    });
    return o;
  }

  CLI::Option* flag(const std::string& names, const std::string& ptr, bool value, const std::string& help) {
    auto* o = app_->add_flag(names, help);
    binds_.push_back([o, ptr, value](json& j) {
      if (o->count()) j[json::json_pointer(ptr)] = value;
    });
    return o;
  }

  json collect() const {
    json j = json::object();
    for (const auto& b : binds_) b(j);
    return j;
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(json&)>> binds_;
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<FlagLayer> flags;
  std::function<void(const RunConfig&, const Runtime&, std::ostream&)> fn;
  std::string default_profile;
};

struct Common {
  std::string profile;
  std::string config;
};

void add_model_flags(FlagLayer& f) {
  f.option<std::string>("--dist", "/distribution", "bernoulli|poisson|exponential|gaussian|gamma");
  f.option<std::string>("--link", "/link_mode", "max|max_magnitude");
  f.option<std::size_t>("--H", "/H", "number of latent causes");
  f.option<std::size_t>("--iterations", "/iterations", "EM iterations");
  f.option<double>("--init-pi", "/init/pi", "initial prior activation");
  f.option<double>("--tol", "/tol", "relative lower-bound change for early stopping; 0 disables");
  f.option<std::size_t>("--fixed-point-passes", "/fixed_point_passes", "M-step passes per iteration");
  f.option<std::size_t>("--max-exact-H", "/max_exact_H", "largest H enumerated exactly");
}

void add_tvem_flags(FlagLayer& f) {
  f.option<std::size_t>("--S", "/S", "variational states per datapoint");
  f.option<std::size_t>("--generations", "/evo/generations", "evolutionary generations per E-step");
  f.option<std::size_t>("--parents", "/evo/parents_per_gen", "parents per generation");
  f.option<std::size_t>("--children", "/evo/children_per_parent", "children per parent");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Exponential-family Maximal Causes Analysis", "efmca"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  Common common;
  Runtime rt;
  std::vector<Command> commands;

  const auto add_command = [&](const std::string& name, const std::string& help, auto fn,
                               std::string default_profile = {}) -> Command& {
    Command c;
    c.app = app.add_subcommand(name, help);
    c.flags = std::make_unique<FlagLayer>(c.app);
    c.fn = fn;
    c.default_profile = std::move(default_profile);
    c.app->add_option("--profile", common.profile, "named profile (configs/<name>.json) or path");
    c.app->add_option("--config", common.config, "JSON run config");
    c.flags->option<std::uint64_t>("--seed", "/seed", "random seed");
    c.app->add_option("--workers", rt.workers, "data-parallel workers (default: EFMCA_WORKERS or 1)");
    c.app->add_flag("--timing", rt.timing, "include wall-clock times in traces");
    commands.push_back(std::move(c));
    return commands.back();
  };

  {
    auto& c = add_command("gen-bars", "generate a bars-test dataset", cmd_gen_bars);
    auto& f = *c.flags;
    f.option<std::string>("--dist", "/distribution", "noise distribution");
    f.option<std::size_t>("--R", "/bars/R", "grid side; 2R bars");
    f.option<std::size_t>("--N", "/bars/N", "number of datapoints");
    f.option<double>("--pi-gen", "/bars/pi_gen", "generating activation probability");
    f.option<double>("--bar-value", "/bars/bar_value", "mean on bar pixels");
    f.option<double>("--background-value", "/bars/background_value", "mean off bars");
    f.option<std::string>("--out", "/paths/out", "output directory");
  }
  {
    auto& c = add_command("train", "train an ef-MCA model", cmd_train);
    auto& f = *c.flags;
    f.option<std::string>("data,--data", "/paths/data", "dataset CSV");
    add_model_flags(f);
    add_tvem_flags(f);
    auto* ex = f.flag("--exact", "/exact", true, "exact E-step over all states");
    auto* tv = f.flag("--tvem", "/exact", false, "truncated variational E-step");
    ex->excludes(tv);
    f.flag("--exact-loglik", "/record_exact_loglik", true, "record the exact log-likelihood per iteration");
    f.option<std::string>("--warm-start", "/paths/warm_start", "initialize from a params JSON");
    f.option<std::string>("--resume-K", "/paths/resume_K", "resume variational states from a K checkpoint");
    f.option<std::string>("--out", "/paths/out", "output directory");
  }
  {
    auto& c = add_command("eval-bars", "score trained parameters against bars ground truth", cmd_eval_bars);
    auto& f = *c.flags;
    f.option<std::string>("trained", "/paths/params", "trained params JSON")->required();
    f.option<std::string>("truth", "/paths/truth", "ground-truth params JSON")->required();
    f.option<std::string>("data", "/paths/data", "dataset CSV for the log-likelihood gap");
    f.option<std::size_t>("--max-exact-H", "/max_exact_H", "largest H enumerated exactly");
    f.option<std::string>("--out", "/paths/out", "report file (default: stdout)");
  }
  {
    auto& c = add_command("denoise", "add noise to an image and denoise it", cmd_denoise, "b6-desk");
    auto& f = *c.flags;
    f.option<std::string>("image,--image", "/paths/image", "input PGM");
    f.option<std::string>("--noise", "/denoise/noise", "noise distribution");
    f.option<double>("--peak", "/denoise/peak", "rescale the clean image to this maximum");
    f.option<std::vector<std::size_t>>("--crop", "/denoise/crop", "row col height width")->expected(4);
    f.option<std::size_t>("--patch", "/denoise/patch_side", "patch side");
    f.option<std::size_t>("--stride", "/denoise/stride", "patch stride");
    f.flag("--anscombe", "/denoise/anscombe", true, "train a Gaussian model on the Anscombe transform");
    add_model_flags(f);
    add_tvem_flags(f);
    f.option<std::string>("--out", "/paths/out", "output directory");
  }
  {
    auto& c = add_command("select-noise", "compare noise models by free energy", cmd_select_noise);
    auto& f = *c.flags;
    f.option<std::string>("data,--data", "/paths/data", "dataset CSV");
    f.option<std::vector<std::string>>("--candidates", "/candidates", "comma-separated distributions")
        ->delimiter(',');
    f.option<std::size_t>("--H", "/H", "number of latent causes");
    f.option<std::size_t>("--iterations", "/iterations", "EM iterations per restart");
    f.option<std::size_t>("--restarts", "/restarts", "restarts per candidate");
    f.option<std::size_t>("--max-exact-H", "/max_exact_H", "largest H enumerated exactly");
    f.flag("--gamma-warm-start", "/gamma_warm_start", true, "initialize Gamma from the Gaussian run");
    add_tvem_flags(f);
    f.option<std::string>("--out", "/paths/out", "report file (default: stdout)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    err << "efmca: " << e.what() << '\n';
    return kExitUsage;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    try {
      RunConfig cfg;
      const auto profile = common.profile.empty() ? c.default_profile : common.profile;
      if (!profile.empty()) cfg.merge_profile(profile);
      if (!common.config.empty()) cfg.merge_file(common.config);
      cfg.merge(c.flags->collect(), "command line");
      cfg.set(json::json_pointer("/command"), c.app->get_name());
      const auto t0 = std::chrono::steady_clock::now();
      c.fn(cfg, rt, out);
      if (rt.timing)
        err << "elapsed " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
            << " s\n";
      return kExitOk;
    } catch (const UsageError& e) {
      err << "efmca: usage: " << e.what() << '\n';
      return kExitUsage;
    } catch (const CapacityError& e) {
      err << "efmca: capacity: " << e.what() << '\n';
      return kExitCapacity;
    } catch (const DataError& e) {
      err << "efmca: data: " << e.what() << '\n';
      return kExitData;
    } catch (const DomainError& e) {
      err << "efmca: domain: " << e.what() << '\n';
      return kExitData;
    } catch (const IoError& e) {
      err << "efmca: io: " << e.what() << '\n';
      return kExitData;
    } catch (const ParameterError& e) {
      err << "efmca: usage: " << e.what() << '\n';
      return kExitUsage;
    } catch (const DegenerateStateError& e) {
      err << "efmca: data: " << e.what() << '\n';
      return kExitData;
    }
  }
  return kExitUsage;
}

}  // namespace efmca::cli
