// Command-line front end: dataset collection, predictor and policy training,
// evaluation, the four-variant ablation, reporting and grid dumps.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "hppo/errors.hpp"
#include "hppo/harness/harness.hpp"
#include "hppo/sim/world.hpp"

namespace fs = std::filesystem;
using namespace hppo;
using harness::RunConfig;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string variant;
  std::string out = "runs/default";
  std::optional<int> episodes;
  bool greedy = false;
};

void add_common(CLI::App* cmd, Common& c, bool variant, bool episodes) {
  cmd->add_option("--config", c.config, "config file of 'section.key = value' lines");
  cmd->add_option("--seed", c.seed, "master seed (default: first of run.seeds)");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  if (variant) cmd->add_option("--variant", c.variant, "pure|image|prediction|hybrid");
  if (episodes) cmd->add_option("--episodes", c.episodes, "episode count");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : harness::load_config(c.config);
  if (!c.variant.empty()) cfg.variant = agent::parse_variant(c.variant);
  if (c.seed) cfg.run.seeds = {*c.seed};
  cfg.validate();
  return cfg;
}

void progress(const std::string& line) { std::cerr << line << '\n'; }

void write_config(const RunConfig& cfg, const fs::path& out) {
  fs::create_directories(out);
  std::ofstream(out / "config.txt", std::ios::binary) << harness::format_config(cfg);
}

fs::path predictor_path(const fs::path& out, std::uint64_t seed) {
  return out / ("predictor_seed" + std::to_string(seed) + ".ckpt");
}

/// The configured checkpoint, else one trained earlier into `out`, else a
/// freshly trained one when `train_missing`.
std::optional<forecast::Predictor> obtain_predictor(const RunConfig& cfg, const fs::path& out, std::uint64_t seed,
                                                    bool train_missing) {
  if (!agent::uses_prediction(cfg.variant)) return std::nullopt;
  if (!cfg.run.predictor_checkpoint.empty()) return forecast::load_predictor(cfg.run.predictor_checkpoint);
  if (fs::exists(predictor_path(out, seed))) return forecast::load_predictor(predictor_path(out, seed).string());
  if (!train_missing) {
    throw ConfigError("variant '" + agent::to_string(cfg.variant) +
                      "' needs a predictor: set run.predictor_checkpoint or run train-predictor first");
  }
  forecast::TrainReport rep;
  forecast::Predictor p = harness::train_run_predictor(cfg, seed, &rep);
  fs::create_directories(out);
  forecast::save_predictor(predictor_path(out, seed).string(), p);
  std::cerr << "predictor: best validation MAD " << rep.best.mad << " m, FAD " << rep.best.fad << " m\n";
  return p;
}

int cmd_collect(const Common& c) {
  const RunConfig cfg = resolve(c);
  const std::uint64_t seed = cfg.run.seeds.front();
  const auto data = forecast::collect_dataset(cfg.scenario, harness::predictor_seed(seed), cfg.collect.vehicles,
                                              cfg.collect.rate_hz, cfg.collect.steps);
  fs::create_directories(c.out);
  const fs::path path = fs::path(c.out) / "trajectories.jsonl";
  std::ofstream out(path, std::ios::binary);
  forecast::write_dataset(out, data);
  std::cout << data.size() << " samples -> " << path.string() << '\n';
  return 0;
}

int cmd_train_predictor(const Common& c, const std::string& dataset_path) {
  const RunConfig cfg = resolve(c);
  const std::uint64_t seed = cfg.run.seeds.front();
  std::vector<forecast::TrajectorySample> data;
  if (!dataset_path.empty()) {
    std::ifstream in(dataset_path);
    if (!in) throw IoError("cannot open dataset '" + dataset_path + "'");
    data = forecast::read_dataset(in);
  } else {
    data = forecast::collect_dataset(cfg.scenario, harness::predictor_seed(seed), cfg.collect.vehicles,
                                     cfg.collect.rate_hz, cfg.collect.steps);
  }
  Rng rng(harness::predictor_seed(seed));
  forecast::Predictor model(cfg.predictor, rng);
  forecast::PredictorHyper hyper = cfg.predictor_train;
  hyper.seed = harness::predictor_seed(seed);
  const forecast::TrainReport rep = forecast::train_predictor(model, data, hyper);
  const fs::path out(c.out);
  fs::create_directories(out);
  forecast::save_predictor(predictor_path(out, seed).string(), model);
  std::ofstream csv(out / ("predictor_seed" + std::to_string(seed) + ".csv"), std::ios::binary);
  csv << "epoch,train_loss,val_mad,val_fad\n";
  for (const auto& e : rep.epochs) {
    csv << e.epoch + 1 << ',' << e.train_loss << ',' << e.validation.mad << ',' << e.validation.fad << '\n';
  }
  std::cout << "best epoch " << rep.best_epoch + 1 << ": MAD " << rep.best.mad << " m, FAD " << rep.best.fad
            << " m -> " << predictor_path(out, seed).string() << '\n';
  return 0;
}

int cmd_train(const Common& c) {
  RunConfig cfg = resolve(c);
  if (c.episodes) cfg.run.train_episodes = *c.episodes;
  const std::uint64_t seed = cfg.run.seeds.front();
  const fs::path out(c.out);
  write_config(cfg, out);
  const auto predictor = obtain_predictor(cfg, out, seed, true);
  auto result = harness::train(cfg, cfg.variant, seed, predictor ? &*predictor : nullptr,
                                     cfg.run.train_episodes, progress);
  const fs::path dir = out / harness::run_dir_name(cfg.variant, seed);
  fs::create_directories(dir);
  agent::save_policy((dir / "policy.ckpt").string(), result.policy);
  std::vector<std::uint64_t> seeds;
  for (int e = 0; e < cfg.run.train_episodes; ++e) seeds.push_back(harness::train_episode_seed(seed, e));
  harness::write_episode_log((dir / "train_episodes.jsonl").string(),
                             {"train", cfg.variant, seed, harness::seed_stream_hash(seeds), cfg.run.train_episodes},
                             result.episodes);
  harness::write_diagnostics_csv((dir / "diagnostics.csv").string(), result.updates);
  harness::emit_report(out.string());
  std::cout << result.decisions << " decisions, " << result.update_calls << " updates -> " << dir.string() << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
  RunConfig cfg = resolve(c);
  if (c.episodes) cfg.run.eval_episodes = *c.episodes;
  const std::uint64_t seed = cfg.run.seeds.front();
  const fs::path out(c.out);
  const fs::path ckpt = checkpoint.empty() ? out / harness::run_dir_name(cfg.variant, seed) / "policy.ckpt"
                                           : fs::path(checkpoint);
  const agent::ActorCritic policy = agent::load_policy(ckpt.string());
  if (c.variant.empty()) cfg.variant = policy.variant();
  const auto predictor = obtain_predictor(cfg, out, seed, false);
  const auto r = harness::evaluate(policy, cfg, seed, predictor ? &*predictor : nullptr, cfg.run.eval_episodes,
                                   c.greedy, cfg.run.threads);
  const fs::path dir = out / harness::run_dir_name(cfg.variant, seed);
  fs::create_directories(dir);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < cfg.run.eval_episodes; ++i) seeds.push_back(harness::eval_episode_seed(seed, i));
  harness::write_episode_log((dir / "eval_episodes.jsonl").string(),
                             {"eval", cfg.variant, seed, harness::seed_stream_hash(seeds), cfg.run.eval_episodes},
                             r.episodes);
  harness::write_metrics_csv((dir / "metrics.csv").string(), {r.row});
  std::cout << "Method Success Collision Time-out\n" << harness::format_table_row(r.row) << '\n';
  return 0;
}

int cmd_ablate(const Common& c) {
  RunConfig cfg = resolve(c);
  if (c.episodes) cfg.run.train_episodes = *c.episodes;
  const auto rows = harness::ablate(cfg, c.out, progress);
  std::cout << "Method Success Collision Time-out\n";
  for (const auto& r : rows) std::cout << harness::format_table_row(r) << "  (seed " << r.seed << ")\n";
  std::cout << "summary: " << (fs::path(c.out) / "summary.txt").string() << '\n';
  return 0;
}

int cmd_sim_dump(const Common& c, int steps) {
  const RunConfig cfg = resolve(c);
  sim::WorldState world = sim::reset(cfg.scenario, cfg.run.seeds.front());
  while (world.time_step < steps && !sim::is_terminal(world.status)) {
    const int before = world.time_step;
    pilot::execute_decision(world, pilot::Decision::keep, cfg.pilot, {}, false);
    if (world.time_step == before) break;
  }
  fs::create_directories(c.out);
  const auto grid = percept::render_semantic_grid(world, cfg.grid);
  std::ofstream pgm(fs::path(c.out) / "grid.pgm", std::ios::binary);
  grid.write_pgm(pgm);
  std::ofstream(fs::path(c.out) / "world.json", std::ios::binary) << sim::to_json(world).dump(2) << '\n';
  std::cout << "t=" << world.time_step << " -> " << (fs::path(c.out) / "grid.pgm").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid-PPO lane-change decision stack"};
  app.require_subcommand(1);
  Common c;
  std::string dataset, checkpoint;
  int dump_steps = 0;

  auto* collect = app.add_subcommand("collect", "collect a trajectory dataset");
  add_common(collect, c, false, false);
  auto* trainp = app.add_subcommand("train-predictor", "train the trajectory predictor");
  add_common(trainp, c, false, false);
  trainp->add_option("--dataset", dataset, "dataset from 'collect' (default: collect afresh)");
  auto* train = app.add_subcommand("train", "train one policy variant");
  add_common(train, c, true, true);
  auto* eval = app.add_subcommand("eval", "evaluate a trained policy");
  add_common(eval, c, true, true);
  eval->add_flag("--greedy", c.greedy, "take the most probable decision instead of sampling");
  eval->add_option("--checkpoint", checkpoint, "policy checkpoint (default: <out>/<variant>_seed<seed>/policy.ckpt)");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate all four variants");
  add_common(ablate, c, false, true);
  auto* report = app.add_subcommand("report", "render plots and summary for a run directory");
  report->add_option("--out", c.out, "run directory")->required();
  auto* dump = app.add_subcommand("sim-dump", "render one semantic grid to a graymap");
  add_common(dump, c, false, false);
  dump->add_option("--steps", dump_steps, "simulator steps to advance before rendering");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*collect) return cmd_collect(c);
    if (*trainp) return cmd_train_predictor(c, dataset);
    if (*train) return cmd_train(c);
    if (*eval) return cmd_eval(c, checkpoint);
    if (*ablate) return cmd_ablate(c);
    if (*report) {
      harness::emit_report(c.out);
      std::cout << (fs::path(c.out) / "summary.txt").string() << '\n';
      return 0;
    }
    if (*dump) return cmd_sim_dump(c, dump_steps);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
