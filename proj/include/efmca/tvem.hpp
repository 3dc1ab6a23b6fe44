#ifndef EFMCA_TVEM_HPP
#define EFMCA_TVEM_HPP

// Truncated variational EM. Each datapoint keeps a set K of S nonzero latent
// states; its posterior is the exact joint renormalized over K. The sets are
// improved by a small evolutionary search whose fitness is the log joint and
// persist from one EM iteration to the next.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "efmca/em.hpp"

namespace efmca {

struct EvoConfig {
  std::size_t S = 60;
  std::size_t parents_per_gen = 5;
  std::size_t children_per_parent = 4;
  std::size_t generations = 2;
  double bitflip_p = 0.5;  // flips per child ~ 1 + Geometric(bitflip_p)
  double crossover_p = 0.5;

  void validate() const {
    if (S == 0 || parents_per_gen == 0 || children_per_parent == 0)
      throw ParameterError("EvoConfig: S, parents_per_gen and children_per_parent must be positive");
    if (!(bitflip_p > 0.0 && bitflip_p <= 1.0)) throw ParameterError("EvoConfig: bitflip_p outside (0,1]");
    if (!(crossover_p >= 0.0 && crossover_p <= 1.0))
      throw ParameterError("EvoConfig: crossover_p outside [0,1]");
  }
};

inline nlohmann::json to_json(const EvoConfig& c) {
  return {{"S", c.S},
          {"parents_per_gen", c.parents_per_gen},
          {"children_per_parent", c.children_per_parent},
          {"generations", c.generations},
          {"bitflip_p", c.bitflip_p},
          {"crossover_p", c.crossover_p}};
}

using StateSet = std::vector<LatentState>;

/// Number of states in K for a given H: S, capped at 2^H - 1.
inline std::size_t effective_S(std::size_t H, std::size_t S) {
  if (H < 63) return std::min<std::size_t>(S, (std::size_t{1} << H) - 1);
  return S;
}

/// q(s) = p(s, y) / sum_{s' in K} p(s', y) for every s in K.
template <ExponentialFamily Dist>
Posterior truncated_weights(std::span<const double> y, const StateSet& K, const ModelParams& p) {
  if (K.empty()) throw ParameterError("truncated_weights: empty state set");
  if (y.size() != p.D()) throw ParameterError("truncated_weights: observation length differs from D");
  const ModelTables<Dist> t(p);
  const DatumStats<Dist> ds(y);
  Posterior q;
  q.states = K;
  q.log_weights.reserve(K.size());
  for (const auto& s : K) {
    if (s.size() != p.H()) throw ParameterError("truncated_weights: state length differs from H");
    if (s.none()) throw DegenerateStateError("truncated_weights: all-zero state in K");
    q.log_weights.push_back(t.log_joint(s.active(), ds));
  }
  const double lse = log_sum_exp(q.log_weights);
  for (auto& lw : q.log_weights) lw -= lse;
  return q;
}

namespace detail {

struct Member {
  LatentState s;
  double lj;
};

inline bool fitter(const Member& a, const Member& b) {
  if (a.lj != b.lj) return a.lj > b.lj;
  return a.s < b.s;
}

template <ExponentialFamily Dist>
double member_joint(const ModelTables<Dist>& t, const DatumStats<Dist>& ds, const LatentState& s) {
  return t.log_joint(s.active(), ds);
}

/// One E-step search over K. `pop` holds S members; on return it holds the
/// S fittest of the old members and all new offspring, sorted by fitness.
template <ExponentialFamily Dist, class Rng>
void evolve(const ModelTables<Dist>& t, const DatumStats<Dist>& ds, std::vector<Member>& pop,
            const EvoConfig& cfg, Rng& rng) {
  const std::size_t H = t.H();
  const std::size_t S = pop.size();
  std::sort(pop.begin(), pop.end(), fitter);
  std::unordered_set<LatentState, LatentStateHash> seen;
  for (const auto& m : pop) seen.insert(m.s);

  std::uniform_int_distribution<std::size_t> unit(0, H - 1);
  std::geometric_distribution<int> extra(cfg.bitflip_p);
  std::bernoulli_distribution cross(cfg.crossover_p);
  std::bernoulli_distribution coin(0.5);

  for (std::size_t g = 0; g < cfg.generations; ++g) {
    // Rank-proportional parent selection: weight S - rank.
    std::vector<double> rank_w(pop.size());
    for (std::size_t i = 0; i < pop.size(); ++i) rank_w[i] = static_cast<double>(pop.size() - i);
    std::discrete_distribution<std::size_t> pick(rank_w.begin(), rank_w.end());
    std::vector<std::size_t> parents(cfg.parents_per_gen);
    for (auto& p : parents) p = pick(rng);

    std::vector<Member> children;
    for (std::size_t pi = 0; pi < parents.size(); ++pi) {
      for (std::size_t c = 0; c < cfg.children_per_parent; ++c) {
        LatentState child = pop[parents[pi]].s;
        if (parents.size() > 1 && cross(rng)) {
          std::uniform_int_distribution<std::size_t> other(0, parents.size() - 2);
          std::size_t o = other(rng);
          if (o >= pi) ++o;
          const LatentState& mate = pop[parents[o]].s;
          for (std::size_t h = 0; h < H; ++h)
            if (coin(rng)) child.set(h, mate.test(h));
        }
        const int flips = 1 + extra(rng);
        for (int f = 0; f < flips; ++f) child.flip(unit(rng));
        if (child.none() || !seen.insert(child).second) continue;
        const double lj = member_joint(t, ds, child);
        children.push_back({std::move(child), lj});
      }
    }
    if (children.empty()) continue;
    for (auto& c : children) pop.push_back(std::move(c));
    std::sort(pop.begin(), pop.end(), fitter);
    for (std::size_t i = S; i < pop.size(); ++i) seen.erase(pop[i].s);
    pop.resize(S);
  }
}

/// Initial K: singletons ranked by joint, padded with random sparse states.
/// When S covers the whole latent space K is that space in mask order.
template <ExponentialFamily Dist, class Rng>
std::vector<Member> initial_members(const ModelTables<Dist>& t, const DatumStats<Dist>& ds,
                                    std::size_t S, Rng& rng) {
  const std::size_t H = t.H();
  S = effective_S(H, S);
  std::vector<Member> pop;
  pop.reserve(S);
  if (H < 63 && S == (std::size_t{1} << H) - 1) {
    for (std::size_t m = 1; m <= S; ++m) {
      auto s = LatentState::from_mask(m, H);
      const double lj = member_joint(t, ds, s);
      pop.push_back({std::move(s), lj});
    }
    return pop;
  }
  for (std::size_t h = 0; h < H; ++h) {
    LatentState s(H);
    s.set(h);
    const double lj = member_joint(t, ds, s);
    pop.push_back({std::move(s), lj});
  }
  std::sort(pop.begin(), pop.end(), fitter);
  if (pop.size() > S) pop.resize(S);

  std::unordered_set<LatentState, LatentStateHash> seen;
  for (const auto& m : pop) seen.insert(m.s);
  const double dense = (H < 63 && (std::size_t{1} << H) - 1 < 4 * S) ? 0.5 : 0.0;
  std::bernoulli_distribution on(std::max(dense, std::min(0.5, 2.0 / static_cast<double>(H))));
  while (pop.size() < S) {
    LatentState s(H);
    for (std::size_t h = 0; h < H; ++h) s.set(h, on(rng));
    if (s.none() || !seen.insert(s).second) continue;
    const double lj = member_joint(t, ds, s);
    pop.push_back({std::move(s), lj});
  }
  return pop;
}

/// Retained member of a scored population and its posterior weight.
struct WeightedIndex {
  std::size_t index;
  double weight;
};

/// Normalized truncated posterior of a scored population, in population
/// order. States trailing the best by more than kPruneLogGap are left out of
/// the normalizer and of `retained`, exactly as in the exact E-step. Adds the
/// datapoint's free-energy contribution to `F_total`.
inline Posterior members_posterior(const std::vector<Member>& pop, std::vector<WeightedIndex>& retained,
                                   double& F_total) {
  Posterior q;
  q.states.reserve(pop.size());
  q.log_weights.reserve(pop.size());
  double m = -std::numeric_limits<double>::infinity();
  for (const auto& x : pop) m = std::max(m, x.lj);
  const double cut = m - kPruneLogGap;
  double sum = 0.0;
  retained.clear();
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (pop[i].lj < cut) continue;
    const double e = std::exp(pop[i].lj - m);
    sum += e;
    retained.push_back({i, e});
  }
  const double log_sum = std::log(sum);
  for (const auto& x : pop) {
    q.states.push_back(x.s);
    q.log_weights.push_back((x.lj - m) - log_sum);
  }
  double F = 0.0;
  for (auto& [i, w] : retained) {
    w /= sum;
    F += w * (pop[i].lj - q.log_weights[i]);
  }
  F_total += F;
  return q;
}

/// M-step sums of one datapoint; selections are taken under `t`.
template <ExponentialFamily Dist>
void accumulate_truncated(const ModelTables<Dist>& t, const std::vector<Member>& pop,
                          const std::vector<WeightedIndex>& retained, const DatumStats<Dist>& ds,
                          std::vector<std::vector<std::size_t>>& actives, std::vector<double>& loc,
                          std::vector<double>& s_loc, MStepAccumulator& acc) {
  const std::size_t D = t.D(), H = t.H();
  actives.resize(retained.size());
  for (std::size_t i = 0; i < retained.size(); ++i) {
    actives[i].clear();
    pop[retained[i].index].s.for_each_active([&](std::size_t h) { actives[i].push_back(h); });
  }
  loc.assign(D * H, 0.0);
  s_loc.assign(H, 0.0);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t i = 0; i < retained.size(); ++i) loc[d + t.select(d, actives[i]) * D] += retained[i].weight;
  for (std::size_t i = 0; i < retained.size(); ++i)
    for (auto h : actives[i]) s_loc[h] += retained[i].weight;
  add_expectations(loc, s_loc, ds, acc);
}

}  // namespace detail

/// Public form of one evolutionary update of K for a single datapoint.
template <ExponentialFamily Dist, class Rng>
StateSet evolve_K(std::span<const double> y, const StateSet& K, const ModelParams& p,
                  const EvoConfig& cfg, Rng& rng) {
  cfg.validate();
  if (K.empty()) throw ParameterError("evolve_K: empty state set");
  const ModelTables<Dist> t(p);
  const DatumStats<Dist> ds(y);
  std::vector<detail::Member> pop;
  pop.reserve(K.size());
  for (const auto& s : K) {
    if (s.none()) throw DegenerateStateError("evolve_K: all-zero state in K");
    pop.push_back({s, detail::member_joint(t, ds, s)});
  }
  detail::evolve(t, ds, pop, cfg, rng);
  StateSet out;
  out.reserve(pop.size());
  for (auto& m : pop) out.push_back(std::move(m.s));
  return out;
}

template <ExponentialFamily Dist, class Rng>
StateSet init_K(std::span<const double> y, const ModelParams& p, std::size_t S, Rng& rng) {
  const ModelTables<Dist> t(p);
  const DatumStats<Dist> ds(y);
  auto pop = detail::initial_members(t, ds, S, rng);
  StateSet out;
  for (auto& m : pop) out.push_back(std::move(m.s));
  return out;
}

// ---------------------------------------------------------------------------
// K checkpoints: "EFMK", then u32 version, H, S, N, then N*S states of
// ceil(H/64) little-endian u64 words each.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct KCheckpoint {
  std::size_t H = 0;
  std::size_t S = 0;
  std::vector<StateSet> K;
};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_le(std::istream& is, int n) {
  unsigned char b[8] = {};
  if (!is.read(reinterpret_cast<char*>(b), n)) throw ParameterError("K checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint64_t{b[i]} << (8 * i);
  return v;
}
}  // namespace detail

inline void write_K(std::ostream& os, const KCheckpoint& ck) {
  os.write("EFMK", 4);
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.H));
  detail::put_u32(os, static_cast<std::uint32_t>(ck.S));
  detail::put_u32(os, static_cast<std::uint32_t>(ck.K.size()));
  for (const auto& K : ck.K) {
    if (K.size() != ck.S) throw ParameterError("K checkpoint: ragged state sets");
    for (const auto& s : K)
      for (auto w : s.words()) detail::put_u64(os, w);
  }
}

inline KCheckpoint read_K(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "EFMK")
    throw ParameterError("K checkpoint: bad magic");
  const auto version = detail::get_le(is, 4);
  if (version != kCheckpointVersion)
    throw ParameterError("K checkpoint: unsupported version " + std::to_string(version));
  KCheckpoint ck;
  ck.H = detail::get_le(is, 4);
  ck.S = detail::get_le(is, 4);
  const auto N = detail::get_le(is, 4);
  if (ck.H == 0) throw ParameterError("K checkpoint: H = 0");
  ck.K.resize(N);
  for (auto& K : ck.K) {
    K.reserve(ck.S);
    for (std::size_t i = 0; i < ck.S; ++i) {
      LatentState s(ck.H);
      for (auto& w : s.words()) w = detail::get_le(is, 8);
      if (ck.H % 64 && (s.words().back() >> (ck.H % 64)))
        throw ParameterError("K checkpoint: state bits beyond H");
      if (s.none()) throw ParameterError("K checkpoint: all-zero state");
      K.push_back(std::move(s));
    }
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Driver

struct TvemConfig {
  std::size_t H = 10;
  std::size_t iterations = 50;
  std::uint64_t seed = 0;
  LinkMode link_mode = LinkMode::Max;
  InitConfig init;
  EvoConfig evo;
  std::size_t fixed_point_passes = 1;
  double tol = 1e-8;
  std::size_t patience = 5;
  bool record_exact_loglik = false;  // only honoured for H <= max_exact_H
  std::size_t max_exact_H = kDefaultMaxExactH;
  unsigned workers = 0;
  std::optional<KCheckpoint> resume_K;
  std::function<void(const IterationRecord&)> on_iteration;
};

inline nlohmann::json to_json(const TvemConfig& c) {
  return {{"mode", "tvem"},
          {"H", c.H},
          {"iterations", c.iterations},
          {"seed", c.seed},
          {"link_mode", std::string(to_string(c.link_mode))},
          {"init", to_json(c.init)},
          {"evo", to_json(c.evo)},
          {"fixed_point_passes", c.fixed_point_passes},
          {"tol", c.tol},
          {"patience", c.patience},
          {"resumed", c.resume_K.has_value()}};
}

struct TvemResult {
  ModelParams params;
  RunTrace trace;
  /// Truncated posteriors of the final E-step (under `params`).
  std::vector<Posterior> posteriors;
  KCheckpoint checkpoint() const {
    KCheckpoint ck;
    ck.H = params.H();
    ck.S = posteriors.empty() ? 0 : posteriors.front().size();
    for (const auto& q : posteriors) ck.K.push_back(q.states);
    return ck;
  }
};

template <ExponentialFamily Dist>
TvemResult run_tvem(const Dataset& Y, const TvemConfig& cfg) {
  if (Y.rows() == 0) throw ParameterError("run_tvem: empty dataset");
  if (cfg.H == 0) throw ParameterError("run_tvem: H must be positive");
  if (cfg.fixed_point_passes == 0) throw ParameterError("run_tvem: fixed_point_passes must be >= 1");
  cfg.evo.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const auto stats = dataset_stats<Dist>(Y);
  const unsigned workers = resolve_workers(cfg.workers);
  const std::size_t N = stats.size();
  const std::size_t S = effective_S(cfg.H, cfg.evo.S);
  const bool full_space = cfg.H < 63 && S == (std::size_t{1} << cfg.H) - 1;

  std::mt19937_64 rng(derive_seed(cfg.seed, 0x696e6974));
  ModelParams params = initialize_params<Dist>(Y, cfg.H, cfg.init, cfg.link_mode, rng);

  if (cfg.resume_K) {
    const auto& ck = *cfg.resume_K;
    if (ck.H != cfg.H || ck.K.size() != N || ck.S != S)
      throw ParameterError("resume checkpoint shape (H=" + std::to_string(ck.H) + ", S=" +
                           std::to_string(ck.S) + ", N=" + std::to_string(ck.K.size()) +
                           ") does not match the run");
  }

  TvemResult result;
  result.trace.seed = cfg.seed;
  result.trace.config = to_json(cfg);
  result.trace.config["distribution"] = std::string(Dist::name);
  result.posteriors.resize(N);

  const ChunkPlan plan(N);
  std::vector<std::vector<detail::Member>> pops(N);
  std::vector<std::vector<detail::WeightedIndex>> retained(N);
  detail::ConvergenceMonitor monitor(cfg.tol, cfg.patience);
  const bool want_loglik = cfg.record_exact_loglik && cfg.H <= std::min(cfg.max_exact_H, kMaxEnumerableH);

  for (std::size_t it = 0;; ++it) {
    const ModelTables<Dist> tables(params);
    std::vector<double> chunk_F(plan.chunks, 0.0);
    parallel_for(plan.chunks, workers, [&](std::size_t c) {
      double F = 0.0;
      for (std::size_t n = plan.begin(c); n < plan.end(c); ++n) {
        auto& pop = pops[n];
        if (it == 0) {
          std::mt19937_64 r(derive_seed(cfg.seed ^ 0x4b696e6974ULL, n));
          if (cfg.resume_K) {
            for (const auto& s : cfg.resume_K->K[n])
              pop.push_back({s, detail::member_joint(tables, stats[n], s)});
          } else {
            pop = detail::initial_members(tables, stats[n], S, r);
          }
        } else {
          for (auto& m : pop) m.lj = detail::member_joint(tables, stats[n], m.s);
        }
        if (!full_space && cfg.evo.generations > 0) {
          std::mt19937_64 r(derive_seed(cfg.seed, n, it + 1));
          detail::evolve(tables, stats[n], pop, cfg.evo, r);
        }
        result.posteriors[n] = detail::members_posterior(pop, retained[n], F);
      }
      chunk_F[c] = F;
    });

    IterationRecord rec;
    rec.iter = it;
    rec.lower_bound = std::accumulate(chunk_F.begin(), chunk_F.end(), 0.0);
    if (want_loglik) rec.exact_loglik = exact_loglik<Dist>(Y, params, cfg.max_exact_H, workers);
    rec.pi_hash = hash_vector(params.pi);
    if (!result.trace.records.empty())
      rec.decreased = rec.lower_bound < result.trace.records.back().lower_bound;
    rec.wall_time = detail::seconds_since(t0);
    result.trace.records.push_back(rec);
    if (cfg.on_iteration) cfg.on_iteration(rec);

    if (monitor.update(rec.lower_bound)) {
      result.trace.converged = true;
      break;
    }
    if (it >= cfg.iterations) break;

    for (std::size_t pass = 0; pass < cfg.fixed_point_passes; ++pass) {
      std::optional<ModelTables<Dist>> pass_tables;
      if (pass > 0) pass_tables.emplace(params);
      const auto& sel = pass > 0 ? *pass_tables : tables;
      std::vector<MStepAccumulator> chunk_acc(plan.chunks,
                                              MStepAccumulator(Dist::L, params.D(), params.H()));
      parallel_for(plan.chunks, workers, [&](std::size_t c) {
        std::vector<std::vector<std::size_t>> actives;
        std::vector<double> loc, s_loc;
        for (std::size_t n = plan.begin(c); n < plan.end(c); ++n)
          detail::accumulate_truncated(sel, pops[n], retained[n], stats[n], actives, loc, s_loc,
                                       chunk_acc[c]);
      });
      MStepAccumulator acc(Dist::L, params.D(), params.H());
      for (const auto& a : chunk_acc) acc.merge(a);
      params = m_step<Dist>(acc, params);
    }
  }
  result.params = std::move(params);
  return result;
}

inline TvemResult run_tvem(const Dataset& Y, DistKind dist, const TvemConfig& cfg) {
  return visit_distribution(dist, [&]<class Dist>(std::type_identity<Dist>) {
    return run_tvem<Dist>(Y, cfg);
  });
}

}  // namespace efmca

#endif  // EFMCA_TVEM_HPP
