#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "hppo/agent/agent.hpp"
#include "hppo/errors.hpp"
#include "hppo/forecast/forecast.hpp"
#include "hppo/harness/config.hpp"
#include "hppo/harness/harness.hpp"
#include "hppo/percept/percept.hpp"
#include "hppo/pilot/pilot.hpp"
#include "hppo/sim/world.hpp"

namespace py = pybind11;
using namespace hppo;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

py::dict reward_dict(const sim::RewardBreakdown& r) {
  py::dict d;
  d["collide"] = r.r_collide;
  d["out_road"] = r.r_out_road;
  d["go_forward"] = r.r_go_forward;
  d["success"] = r.r_success;
  d["total"] = r.total;
  return d;
}

py::dict metrics_dict(const harness::MetricsRow& r) {
  py::dict d;
  d["variant"] = agent::to_string(r.variant);
  d["seed"] = r.seed;
  d["episodes"] = r.episodes;
  d["successes"] = r.successes;
  d["collisions"] = r.collisions;
  d["off_road"] = r.off_road;
  d["timeouts"] = r.timeouts;
  d["success_rate"] = r.success_rate();
  d["collision_rate"] = r.collision_rate();
  d["timeout_rate"] = r.timeout_rate();
  d["mean_reward"] = r.mean_reward;
  d["mean_distance"] = r.mean_distance;
  d["row"] = harness::format_table_row(r);
  return d;
}

std::string config_value(const harness::RunConfig& cfg, const std::string& key) {
  std::istringstream in(harness::format_config(cfg));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos && line.substr(0, eq) == key) return line.substr(eq + 3);
  }
  throw ConfigError("unknown key '" + key + "'");
}

std::optional<forecast::Predictor> maybe_predictor(const std::optional<std::string>& path) {
  if (!path) return std::nullopt;
  return forecast::load_predictor(*path);
}

/// One episode world driven step by step or decision by decision.
class Simulator {
 public:
  Simulator(const harness::RunConfig& cfg, std::uint64_t seed)
      : cfg_(cfg), world_(sim::reset(cfg.scenario, seed)) {}

  py::dict step(double throttle, double brake, double steer) {
    const sim::WorldState prev = world_;
    const sim::StepEvents ev = sim::step(world_, {throttle, brake, steer});
    py::dict d;
    d["events"] = ev.names();
    d["reward"] = reward_dict(sim::compute_reward(prev, world_, ev));
    d["status"] = std::string(sim::to_string(world_.status));
    return d;
  }

  py::dict execute(int decision) {
    if (decision < 0 || decision >= pilot::kDecisions) throw ContractError("decision must be 0, 1 or 2");
    const auto r = pilot::execute_decision(world_, static_cast<pilot::Decision>(decision), cfg_.pilot, {}, false);
    py::dict d;
    d["reward"] = reward_dict(r.reward);
    d["steps"] = r.steps;
    d["arrived"] = r.arrived;
    d["status"] = std::string(sim::to_string(world_.status));
    return d;
  }

  std::string status() const { return std::string(sim::to_string(world_.status)); }
  int time_step() const { return world_.time_step; }
  py::object state() const { return to_py(sim::to_json(world_)); }

  std::vector<std::vector<double>> sensors() const {
    const auto m = percept::sensor_rows(world_, percept::nearest_neighbors(world_));
    std::vector<std::vector<double>> out;
    for (const auto& row : m.rows) out.emplace_back(row.begin(), row.end());
    return out;
  }

  py::tuple grid() const {
    const percept::SemanticGrid g = percept::render_semantic_grid(world_, cfg_.grid);
    return py::make_tuple(g.spec.rows, g.spec.cols,
                          py::bytes(reinterpret_cast<const char*>(g.cells.data()), g.cells.size()));
  }

  void write_pgm(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    percept::render_semantic_grid(world_, cfg_.grid).write_pgm(out);
  }

 private:
  harness::RunConfig cfg_;
  sim::WorldState world_;
};

/// A finished training run: the policy plus its logs.
struct TrainRun {
  std::shared_ptr<harness::TrainResult> result;
  agent::Variant variant;

  void save_policy(const std::string& path) { agent::save_policy(path, result->policy); }
  py::list episodes() const {
    py::list out;
    for (const auto& e : result->episodes) out.append(to_py(harness::to_json(e)));
    return out;
  }
  py::list updates() const {
    py::list out;
    for (const auto& u : result->updates) {
      py::dict d;
      d["update"] = u.update;
      d["decision"] = u.decision;
      d["episode"] = u.episode;
      d["surrogate"] = u.diag.surrogate;
      d["value_loss"] = u.diag.value_loss;
      d["entropy"] = u.diag.entropy;
      d["clip_fraction"] = u.diag.clip_fraction;
      d["approx_kl"] = u.diag.approx_kl;
      d["grad_norm"] = u.diag.grad_norm;
      out.append(d);
    }
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hybrid-state PPO lane-change stack";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);

  m.attr("VARIANTS") = std::vector<std::string>{"pure", "image", "prediction", "hybrid"};

  py::class_<harness::RunConfig>(m, "Config")
      .def(py::init<>())
      .def_static("load", &harness::load_config, py::arg("path"))
      .def_static(
          "parse",
          [](const std::string& text) {
            std::istringstream in(text);
            return harness::parse_config(in, "<string>");
          },
          py::arg("text"))
      .def_static("keys", &harness::config_keys)
      .def("set",
           [](harness::RunConfig& c, const std::string& key, const py::object& value) {
             const std::string v = py::isinstance<py::bool_>(value) ? (value.cast<bool>() ? "true" : "false")
                                                                     : py::str(value).cast<std::string>();
             harness::apply_setting(c, key, v);
             c.validate();
           })
      .def("get", &config_value, py::arg("key"))
      .def("__str__", &harness::format_config)
      .def_property(
          "variant", [](const harness::RunConfig& c) { return agent::to_string(c.variant); },
          [](harness::RunConfig& c, const std::string& v) { c.variant = agent::parse_variant(v); });

  py::class_<Simulator>(m, "Simulator")
      .def(py::init<const harness::RunConfig&, std::uint64_t>(), py::arg("config"), py::arg("seed"))
      .def("step", &Simulator::step, py::arg("throttle") = 0.0, py::arg("brake") = 0.0, py::arg("steer") = 0.0)
      .def("execute", &Simulator::execute, py::arg("decision"),
           "Run one lane-change decision (0 right, 1 keep, 2 left) under PID control.")
      .def_property_readonly("status", &Simulator::status)
      .def_property_readonly("time_step", &Simulator::time_step)
      .def("state", &Simulator::state)
      .def("sensors", &Simulator::sensors)
      .def("grid", &Simulator::grid, "(rows, cols, class bytes) of the ego-centered semantic grid")
      .def("write_pgm", &Simulator::write_pgm, py::arg("path"));

  py::class_<TrainRun>(m, "TrainRun")
      .def_property_readonly("variant", [](const TrainRun& r) { return agent::to_string(r.variant); })
      .def_property_readonly("decisions", [](const TrainRun& r) { return r.result->decisions; })
      .def_property_readonly("update_calls", [](const TrainRun& r) { return r.result->update_calls; })
      .def("episodes", &TrainRun::episodes)
      .def("updates", &TrainRun::updates)
      .def("save_policy", &TrainRun::save_policy, py::arg("path"));

  m.def("mad_fad",
        [](const std::vector<double>& pred, const std::vector<double>& truth) {
          const auto r = forecast::mad_fad(pred, truth);
          return py::make_tuple(r.mad, r.fad);
        },
        py::arg("pred"), py::arg("truth"), "Mean and final displacement of flattened (x, y) sequences.");
  m.def("clipped_surrogate", &agent::clipped_surrogate, py::arg("ratio"), py::arg("advantage"), py::arg("clip") = 0.2);
  m.def(
      "gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, const std::vector<bool>& done,
         double bootstrap, double gamma, double lam) {
        const std::vector<std::uint8_t> d(done.begin(), done.end());
        const auto a = agent::gae_advantages(rewards, values, d, bootstrap, gamma, lam);
        py::dict out;
        out["advantages"] = a.raw;
        out["normalized"] = a.normalized;
        out["returns"] = a.returns;
        return out;
      },
      py::arg("rewards"), py::arg("values"), py::arg("done"), py::arg("bootstrap"), py::arg("gamma") = 0.99,
      py::arg("lam") = 0.95);

  m.def(
      "train_predictor",
      [](const harness::RunConfig& cfg, std::uint64_t seed, const std::string& path) {
        forecast::TrainReport report;
        {
          py::gil_scoped_release release;
          forecast::Predictor p = harness::train_run_predictor(cfg, seed, &report);
          forecast::save_predictor(path, p);
        }
        py::dict d;
        d["best_epoch"] = report.best_epoch;
        d["mad"] = report.best.mad;
        d["fad"] = report.best.fad;
        return d;
      },
      py::arg("config"), py::arg("seed"), py::arg("path"),
      "Collect trajectories, train a predictor and save it; returns validation MAD/FAD.");

  m.def(
      "train",
      [](const harness::RunConfig& cfg, const std::string& variant, std::uint64_t seed, int episodes,
         const std::optional<std::string>& predictor_path) {
        const agent::Variant v = agent::parse_variant(variant);
        const auto pred = maybe_predictor(predictor_path);
        TrainRun run{nullptr, v};
        py::gil_scoped_release release;
        run.result = std::make_shared<harness::TrainResult>(
            harness::train(cfg, v, seed, pred ? &*pred : nullptr, episodes));
        return run;
      },
      py::arg("config"), py::arg("variant"), py::arg("seed"), py::arg("episodes"), py::arg("predictor") = py::none());

  m.def(
      "evaluate",
      [](const std::string& policy_path, harness::RunConfig cfg, std::uint64_t seed, int episodes, bool greedy,
         const std::optional<std::string>& predictor_path) {
        const agent::ActorCritic policy = agent::load_policy(policy_path);
        cfg.variant = policy.variant();
        const auto pred = maybe_predictor(predictor_path);
        harness::EvalResult r;
        {
          py::gil_scoped_release release;
          r = harness::evaluate(policy, cfg, seed, pred ? &*pred : nullptr, episodes, greedy, 1);
        }
        return metrics_dict(r.row);
      },
      py::arg("policy"), py::arg("config"), py::arg("seed"), py::arg("episodes"), py::arg("greedy") = true,
      py::arg("predictor") = py::none());

  m.def(
      "ablate",
      [](const harness::RunConfig& cfg, const std::string& out_dir) {
        std::vector<harness::MetricsRow> rows;
        {
          py::gil_scoped_release release;
          rows = harness::ablate(cfg, out_dir);
        }
        py::list out;
        for (const auto& r : rows) out.append(metrics_dict(r));
        return out;
      },
      py::arg("config"), py::arg("out_dir"));

  m.def("emit_report", &harness::emit_report, py::arg("run_dir"));
  m.def(
      "read_metrics",
      [](const std::string& path) {
        py::list out;
        for (const auto& r : harness::read_metrics_csv(path)) out.append(metrics_dict(r));
        return out;
      },
      py::arg("path"));
}
