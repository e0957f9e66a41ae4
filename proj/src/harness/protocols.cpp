#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "hppo/errors.hpp"
#include "hppo/harness/harness.hpp"

namespace hppo::harness {

namespace fs = std::filesystem;
using agent::Agent;
using agent::Observation;

TrainResult train(const RunConfig& cfg, agent::Variant variant, std::uint64_t master_seed,
                  const forecast::Predictor* predictor, int episodes, const Progress& progress) {
  cfg.validate();
  if (agent::uses_prediction(variant) && predictor == nullptr) {
    throw ConfigError("training '" + agent::to_string(variant) + "' needs a predictor checkpoint or a trained predictor");
  }
  Agent ag(variant, cfg.agent, cfg.encoder(), agent_seed(master_seed));
  TrainResult res;
  int episode = 0;
  const DecisionSink sink = [&](const Observation& s, const Agent::Act& act, const pilot::ManeuverResult& m,
                                const Observation& next, bool done) {
    agent::Transition t;
    t.state = s;
    t.action = act.sample.action;
    t.reward = m.reward.total;
    t.next_state = next;
    t.done = done;
    t.log_prob = act.sample.log_prob;
    t.value = act.output.value;
    if (auto d = ag.record(std::move(t))) res.updates.push_back({ag.updates(), ag.decisions(), episode, *d});
  };
  for (episode = 0; episode < episodes; ++episode) {
    EpisodeLog log = run_episode(
        cfg, variant, predictor, train_episode_seed(master_seed, episode), episode,
        [&](const Observation& o) { return ag.act(o, false); }, sink);
    if (progress) {
      std::ostringstream os;
      os << agent::to_string(variant) << " seed " << master_seed << " episode " << episode + 1 << "/" << episodes
         << ' ' << sim::to_string(log.status) << " reward " << std::fixed << std::setprecision(1)
         << log.cumulative_reward << " distance " << log.distance;
      progress(os.str());
    }
    res.episodes.push_back(std::move(log));
  }
  res.policy = ag.net();
  res.decisions = ag.decisions();
  res.update_calls = ag.updates();
  return res;
}

EvalResult evaluate(const agent::ActorCritic& policy, const RunConfig& cfg, std::uint64_t master_seed,
                    const forecast::Predictor* predictor, int episodes, bool greedy, int threads) {
  if (episodes < 1) throw ContractError("evaluate needs at least one episode");
  if (policy.variant() != cfg.variant) {
    throw ConfigError("checkpoint holds a '" + agent::to_string(policy.variant()) + "' policy but the run is configured for '" +
                      agent::to_string(cfg.variant) + "'");
  }
  if (agent::uses_prediction(cfg.variant) && predictor == nullptr) {
    throw ConfigError("evaluating '" + agent::to_string(cfg.variant) + "' needs a predictor");
  }
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  threads = std::min(threads, episodes);

  std::vector<EpisodeLog> logs(static_cast<std::size_t>(episodes));
  // Each episode owns its world and RNG; the policy and predictor are only read.
  auto run_one = [&](int i) {
    const std::uint64_t seed = eval_episode_seed(master_seed, i);
    Rng rng(derive_seed(seed, 0x5a));
    logs[static_cast<std::size_t>(i)] = run_episode(cfg, cfg.variant, predictor, seed, i, [&](const Observation& o) {
      Agent::Act a;
      a.output = policy.evaluate(o);
      a.sample = agent::sample_action(a.output.probs, rng, greedy);
      return a;
    });
  };
  if (threads == 1) {
    for (int i = 0; i < episodes; ++i) run_one(i);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (int i = t; i < episodes; i += threads) run_one(i);
        } catch (...) {
          errors[static_cast<std::size_t>(t)] = std::current_exception();
        }
      });
    }
    for (std::thread& th : pool) th.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  EvalResult r;
  r.row = tally(cfg.variant, master_seed, logs);
  r.episodes = std::move(logs);
  return r;
}

forecast::Predictor train_run_predictor(const RunConfig& cfg, std::uint64_t master_seed, forecast::TrainReport* report) {
  const std::uint64_t seed = predictor_seed(master_seed);
  const auto dataset = forecast::collect_dataset(cfg.scenario, seed, cfg.collect.vehicles, cfg.collect.rate_hz,
                                                 cfg.collect.steps);
  Rng rng(seed);
  forecast::Predictor model(cfg.predictor, rng);
  forecast::PredictorHyper hyper = cfg.predictor_train;
  hyper.seed = seed;
  const forecast::TrainReport rep = forecast::train_predictor(model, dataset, hyper);
  if (report) *report = rep;
  return model;
}

void write_diagnostics_csv(const std::string& path, const std::vector<UpdateRecord>& updates) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write diagnostics '" + path + "'");
  out << "update,decision,episode,surrogate,value_loss,entropy,clip_fraction,approx_kl,grad_norm\n"
      << std::setprecision(10);
  for (const UpdateRecord& u : updates) {
    out << u.update << ',' << u.decision << ',' << u.episode << ',' << u.diag.surrogate << ',' << u.diag.value_loss
        << ',' << u.diag.entropy << ',' << u.diag.clip_fraction << ',' << u.diag.approx_kl << ',' << u.diag.grad_norm
        << '\n';
  }
}

std::string run_dir_name(agent::Variant variant, std::uint64_t seed) {
  return agent::to_string(variant) + "_seed" + std::to_string(seed);
}

std::vector<MetricsRow> ablate(const RunConfig& base, const std::string& out_dir, const Progress& progress) {
  base.validate();
  fs::create_directories(out_dir);
  {
    std::ofstream cfg_out(fs::path(out_dir) / "config.txt", std::ios::binary);
    cfg_out << format_config(base);
  }
  std::vector<MetricsRow> rows;
  for (std::uint64_t seed : base.run.seeds) {
    forecast::Predictor predictor;
    if (!base.run.predictor_checkpoint.empty()) {
      predictor = forecast::load_predictor(base.run.predictor_checkpoint);
    } else {
      forecast::TrainReport rep;
      predictor = train_run_predictor(base, seed, &rep);
      forecast::save_predictor((fs::path(out_dir) / ("predictor_seed" + std::to_string(seed) + ".ckpt")).string(),
                               predictor);
      if (progress) {
        std::ostringstream os;
        os << "predictor seed " << seed << ": best validation MAD " << rep.best.mad << " FAD " << rep.best.fad
           << " (epoch " << rep.best_epoch + 1 << ")";
        progress(os.str());
      }
    }
    std::vector<std::uint64_t> seeds;
    for (int e = 0; e < base.run.train_episodes; ++e) seeds.push_back(train_episode_seed(seed, e));
    const std::uint64_t hash = seed_stream_hash(seeds);

    for (agent::Variant v : agent::kVariants) {
      RunConfig cfg = base;
      cfg.variant = v;
      const forecast::Predictor* pred = agent::uses_prediction(v) ? &predictor : nullptr;
      TrainResult t = train(cfg, v, seed, pred, cfg.run.train_episodes, progress);
      const fs::path dir = fs::path(out_dir) / run_dir_name(v, seed);
      fs::create_directories(dir);
      agent::save_policy((dir / "policy.ckpt").string(), t.policy);
      write_episode_log((dir / "train_episodes.jsonl").string(), {"train", v, seed, hash, cfg.run.train_episodes},
                        t.episodes);
      write_diagnostics_csv((dir / "diagnostics.csv").string(), t.updates);
      const EvalResult e = evaluate(t.policy, cfg, seed, pred, cfg.run.eval_episodes, true, cfg.run.threads);
      std::vector<std::uint64_t> eval_seeds;
      for (int i = 0; i < cfg.run.eval_episodes; ++i) eval_seeds.push_back(eval_episode_seed(seed, i));
      write_episode_log((dir / "eval_episodes.jsonl").string(),
                        {"eval", v, seed, seed_stream_hash(eval_seeds), cfg.run.eval_episodes}, e.episodes);
      rows.push_back(e.row);
      write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), rows);
      if (progress) progress("eval " + run_dir_name(v, seed) + ": " + format_table_row(e.row));
    }
  }
  emit_report(out_dir);
  return rows;
}

}  // namespace hppo::harness
