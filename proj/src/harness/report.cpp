#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "hppo/errors.hpp"
#include "hppo/harness/harness.hpp"

namespace hppo::harness {

namespace fs = std::filesystem;
using agent::Variant;

namespace {

struct RunLogs {
  std::uint64_t seed = 0;
  std::uint64_t train_hash = 0;
  std::vector<EpisodeLog> train;
  std::vector<EpisodeLog> eval;
  bool has_train = false;
  bool has_eval = false;
  std::int64_t updates = -1;  ///< rows in diagnostics.csv, -1 when absent
};

using Series = std::pair<std::string, std::vector<double>>;

constexpr int kSmoothing = 10;

std::string color_of(Variant v) {
  switch (v) {
    case Variant::pure: return "#7f7f7f";
    case Variant::image: return "#1f77b4";
    case Variant::prediction: return "#2ca02c";
    case Variant::hybrid: return "#d62728";
  }
  return "#000000";
}

std::string num(double v, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::int64_t count_rows(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) return -1;
  std::string line;
  std::int64_t n = -1;  // header
  while (std::getline(in, line)) {
    if (!line.empty()) ++n;
  }
  return std::max<std::int64_t>(n, 0);
}

/// Seed-averaged, trailing-window-smoothed curve of `field` over episodes.
std::vector<double> mean_curve(const std::vector<RunLogs>& runs, double EpisodeLog::*field) {
  std::size_t len = 0;
  for (const RunLogs& r : runs) len = std::max(len, r.train.size());
  std::vector<double> raw(len, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    int n = 0;
    for (const RunLogs& r : runs) {
      if (i < r.train.size()) {
        raw[i] += r.train[i].*field;
        ++n;
      }
    }
    raw[i] /= std::max(n, 1);
  }
  std::vector<double> smooth(len);
  for (std::size_t i = 0; i < len; ++i) {
    const std::size_t b = i + 1 >= kSmoothing ? i + 1 - kSmoothing : 0;
    double s = 0.0;
    for (std::size_t k = b; k <= i; ++k) s += raw[k];
    smooth[i] = s / static_cast<double>(i - b + 1);
  }
  return smooth;
}

void write_svg(const fs::path& path, const std::string& title, const std::string& y_label,
               const std::vector<std::pair<Variant, std::vector<double>>>& series) {
  const double w = 760, h = 440, left = 80, right = 170, top = 40, bottom = 60;
  const double pw = w - left - right, ph = h - top - bottom;
  std::size_t len = 1;
  double lo = 0.0, hi = 0.0;
  bool first = true;
  for (const auto& [v, ys] : series) {
    len = std::max(len, ys.size());
    for (double y : ys) {
      lo = first ? y : std::min(lo, y);
      hi = first ? y : std::max(hi, y);
      first = false;
    }
  }
  if (hi - lo < 1e-9) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const double x_max = len > 1 ? static_cast<double>(len) : 2.0;
  auto px = [&](double episode) { return left + pw * (episode - 1.0) / (x_max - 1.0); };
  auto py = [&](double y) { return top + ph * (1.0 - (y - lo) / (hi - lo)); };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write plot '" + path.string() + "'");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << left + pw / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = lo + (hi - lo) * t / 4.0;
    const double xv = 1.0 + (x_max - 1.0) * t / 4.0;
    out << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << num(py(yv)) << "\" y2=\"" << num(py(yv))
        << "\" stroke=\"#dddddd\"/>\n"
        << "<text x=\"" << left - 6 << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">" << num(yv, 0) << "</text>\n"
        << "<text x=\"" << num(px(xv)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << num(xv, 0)
        << "</text>\n";
  }
  out << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 18 << "\" text-anchor=\"middle\">training episode</text>\n"
      << "<text transform=\"translate(20," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
      << "</text>\n";
  int row = 0;
  for (const auto& [v, ys] : series) {
    const std::string c = color_of(v);
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.8\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) out << (i ? " " : "") << num(px(i + 1.0)) << ',' << num(py(ys[i]));
    out << "\"/>\n";
    if (ys.size() == 1) out << "<circle cx=\"" << num(px(1.0)) << "\" cy=\"" << num(py(ys[0])) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    const double ly = top + 14 + 20 * row++;
    out << "<line x1=\"" << left + pw + 14 << "\" x2=\"" << left + pw + 40 << "\" y1=\"" << ly << "\" y2=\"" << ly
        << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n"
        << "<text x=\"" << left + pw + 46 << "\" y=\"" << ly + 4 << "\">" << agent::display_name(v) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace

void emit_report(const std::string& dir_str) {
  const fs::path dir(dir_str);
  if (!fs::is_directory(dir)) throw IoError("empty run: '" + dir_str + "' is not a directory");
  std::vector<fs::path> candidates{dir};
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) candidates.push_back(entry.path());
  }
  std::sort(candidates.begin() + 1, candidates.end());

  std::map<Variant, std::vector<RunLogs>> runs;
  for (const fs::path& p : candidates) {
    const fs::path train = p / "train_episodes.jsonl", eval = p / "eval_episodes.jsonl";
    if (!fs::exists(train) && !fs::exists(eval)) continue;
    RunLogs r;
    Variant v = Variant::hybrid;
    if (fs::exists(train)) {
      auto [h, logs] = read_episode_log(train.string());
      v = h.variant;
      r.seed = h.master_seed;
      r.train_hash = h.seed_hash;
      r.train = std::move(logs);
      r.has_train = true;
    }
    if (fs::exists(eval)) {
      auto [h, logs] = read_episode_log(eval.string());
      v = h.variant;
      r.seed = h.master_seed;
      r.eval = std::move(logs);
      r.has_eval = true;
    }
    r.updates = count_rows(p / "diagnostics.csv");
    runs[v].push_back(std::move(r));
  }
  std::size_t total = 0;
  for (const auto& [v, rs] : runs) {
    for (const RunLogs& r : rs) total += r.train.size() + r.eval.size();
  }
  if (total == 0) throw IoError("empty run: no episode logs under '" + dir_str + "'");
  for (auto& [v, rs] : runs) {
    std::stable_sort(rs.begin(), rs.end(), [](const RunLogs& a, const RunLogs& b) { return a.seed < b.seed; });
  }

  std::vector<std::pair<Variant, std::vector<double>>> reward, distance;
  for (Variant v : agent::kVariants) {
    const auto it = runs.find(v);
    if (it == runs.end()) continue;
    const std::vector<double> rc = mean_curve(it->second, &EpisodeLog::cumulative_reward);
    if (rc.empty()) continue;
    reward.emplace_back(v, rc);
    distance.emplace_back(v, mean_curve(it->second, &EpisodeLog::distance));
  }
  if (!reward.empty()) {
    write_svg(dir / "reward_curve.svg", "Total reward per training episode (10-episode mean)", "cumulative reward", reward);
    write_svg(dir / "distance_curve.svg", "Safe forward distance per training episode (10-episode mean)",
              "distance before episode end (m)", distance);
  }

  RunConfig cfg;
  bool have_cfg = false;
  if (fs::exists(dir / "config.txt")) {
    cfg = load_config((dir / "config.txt").string());
    have_cfg = true;
  }

  std::ostringstream s;
  s << "Lane-change decision ablation, desk scale\n\n";
  s << "Setup\n";
  if (have_cfg) {
    s << "  scenario: " << cfg.scenario.lanes.lane_count << " lanes x " << num(cfg.scenario.lanes.lane_width, 1)
      << " m, route " << num(cfg.scenario.lanes.road_length, 0) << " m, " << cfg.scenario.npc_count
      << " surrounding vehicles at " << num(cfg.scenario.cycle_speed * 3.6, 0) << " km/h, ego target "
      << num(cfg.scenario.ego_target_speed * 3.6, 0) << " km/h, at most " << cfg.scenario.max_episode_steps
      << " steps of " << num(cfg.scenario.dt, 2) << " s\n";
  } else {
    s << "  scenario: config.txt not found in the run directory\n";
  }
  std::size_t train_eps = 0, eval_eps = 0;
  std::vector<std::uint64_t> seeds;
  for (const auto& [v, rs] : runs) {
    for (const RunLogs& r : rs) {
      train_eps = std::max(train_eps, r.train.size());
      eval_eps = std::max(eval_eps, r.eval.size());
      if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
    }
  }
  std::sort(seeds.begin(), seeds.end());
  s << "  training: " << train_eps << " episodes per variant and seed; evaluation: " << eval_eps
    << " episodes per variant and seed\n  master seeds:";
  for (std::uint64_t sd : seeds) s << ' ' << sd;
  s << "\n  Desk-scale substitutes: road size, traffic density, episode counts, seed counts and evaluation counts are\n"
       "  sized for a desktop CPU budget rather than a large simulated town with about 100 vehicles, so absolute\n"
       "  rates are not comparable with large-scale results.\n"
       "  Milestone rewards are an interpretation: +100, +150, +200 on first crossing 25%, 50%, 75% of the route\n"
       "  and +1000 at the destination. Off-road terminals count as collisions.\n\n";

  const bool any_eval = std::any_of(runs.begin(), runs.end(), [](const auto& kv) {
    return std::any_of(kv.second.begin(), kv.second.end(), [](const RunLogs& r) { return r.has_eval; });
  });
  s << (any_eval ? "Evaluation, all seeds pooled\n" : "Training episodes, all seeds pooled (no evaluation logs)\n");
  s << "Method Success Collision Time-out\n";
  std::map<Variant, std::map<std::uint64_t, double>> per_seed;
  for (Variant v : agent::kVariants) {
    const auto it = runs.find(v);
    if (it == runs.end()) continue;
    std::vector<EpisodeLog> pooled;
    for (const RunLogs& r : it->second) {
      const auto& src = any_eval ? r.eval : r.train;
      pooled.insert(pooled.end(), src.begin(), src.end());
      if (!src.empty()) per_seed[v][r.seed] = tally(v, r.seed, src).success_rate();
    }
    if (pooled.empty()) continue;
    s << format_table_row(tally(v, 0, pooled)) << '\n';
  }

  s << "\nPer-seed success rate\nseed";
  for (const auto& [v, m] : per_seed) s << " | " << agent::display_name(v);
  s << '\n';
  for (std::uint64_t sd : seeds) {
    s << sd;
    for (const auto& [v, m] : per_seed) {
      const auto f = m.find(sd);
      s << " | " << (f == m.end() ? std::string("-") : num(100.0 * f->second, 1) + "%");
    }
    s << '\n';
  }

  if (per_seed.count(Variant::hybrid) && per_seed.count(Variant::pure)) {
    const auto& hy = per_seed[Variant::hybrid];
    const auto& pu = per_seed[Variant::pure];
    int common = 0, ahead = 0;
    double mh = 0.0, mp = 0.0;
    for (const auto& [sd, rate] : hy) {
      const auto f = pu.find(sd);
      if (f == pu.end()) continue;
      ++common;
      mh += rate;
      mp += f->second;
      if (rate > f->second) ++ahead;
    }
    if (common > 0) {
      s << "\nHybrid-PPO vs Pure PPO: mean success " << num(100.0 * mh / common, 1) << "% vs "
        << num(100.0 * mp / common, 1) << "%; Hybrid-PPO ahead in " << ahead << " of " << common << " seeds\n";
    }
  }

  // Fairness: every variant trained on the same scenario seed stream per master seed.
  std::map<std::uint64_t, std::vector<std::uint64_t>> hashes;
  for (const auto& [v, rs] : runs) {
    for (const RunLogs& r : rs) {
      if (r.has_train) hashes[r.seed].push_back(r.train_hash);
    }
  }
  bool fair = true;
  for (const auto& [sd, hs] : hashes) fair = fair && std::all_of(hs.begin(), hs.end(), [&](auto x) { return x == hs[0]; });
  s << "\nScenario seed streams identical across variants: " << (fair ? "yes" : "NO") << '\n';

  std::int64_t decisions = 0, updates = 0;
  bool cadence_known = true;
  int period = have_cfg ? cfg.agent.update_period : agent::AgentConfig{}.update_period;
  bool cadence_ok = true;
  for (const auto& [v, rs] : runs) {
    for (const RunLogs& r : rs) {
      if (!r.has_train) continue;
      std::int64_t d = 0;
      for (const EpisodeLog& l : r.train) d += static_cast<std::int64_t>(l.decisions.size());
      decisions += d;
      if (r.updates < 0) {
        cadence_known = false;
      } else {
        updates += r.updates;
        cadence_ok = cadence_ok && r.updates == d / period;
      }
    }
  }
  if (cadence_known && decisions > 0) {
    s << "Policy updates: " << updates << " over " << decisions << " training decisions (one per " << period
      << " decisions per run: " << (cadence_ok ? "consistent" : "INCONSISTENT") << ")\n";
  }

  std::ofstream out(dir / "summary.txt", std::ios::binary);
  if (!out) throw IoError("cannot write summary in '" + dir_str + "'");
  out << s.str();
}

}  // namespace hppo::harness
