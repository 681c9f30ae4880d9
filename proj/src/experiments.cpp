#include "gupg/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gupg/environments.hpp"
#include "gupg/estimation.hpp"
#include "gupg/parallel.hpp"

namespace gupg {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config reading

/// Line number of the last segment of a dotted path, found by scanning for
/// the quoted keys in order. 0 when the key cannot be located.
int line_of(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::size_t start = 0;
  bool found = false;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    const std::size_t hit = text.find('"' + key + '"', pos);
    if (hit == std::string::npos) break;
    pos = hit;
    found = true;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

std::string line_text(const std::string& text, int line) {
  std::istringstream in(text);
  std::string current;
  for (int i = 1; std::getline(in, current); ++i) {
    if (i == line) return current;
  }
  return {};
}

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& path, const std::string& message) const {
    std::string where;
    if (const int line = line_of(text_, path); line > 0) {
      std::string shown = line_text(text_, line);
      shown.erase(0, shown.find_first_not_of(" \t"));
      where = " (line " + std::to_string(line) + ": " + shown + ")";
    }
    throw ConfigError("config: " + path + ": " + message + where);
  }

  void only_keys(const json& obj, const std::string& path,
                 std::initializer_list<const char*> allowed) const {
    if (!obj.is_object()) fail(path, "expected an object");
    for (const auto& [key, value] : obj.items()) {
      bool known = false;
      for (const char* a : allowed) known = known || key == a;
      if (!known) fail(path.empty() ? key : path + "." + key, "unknown field");
    }
  }

  void number(const json& obj, const std::string& path, const char* key, double& out) const {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_number()) fail(join(path, key), "expected a number");
    out = v.get<double>();
  }

  template <class Int>
  void integer(const json& obj, const std::string& path, const char* key, Int& out) const {
    if (!obj.contains(key)) return;
    out = to_integer<Int>(obj.at(key), join(path, key));
  }

  void boolean(const json& obj, const std::string& path, const char* key, bool& out) const {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_boolean()) fail(join(path, key), "expected true or false");
    out = v.get<bool>();
  }

  void string(const json& obj, const std::string& path, const char* key, std::string& out,
              std::initializer_list<const char*> choices = {}) const {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_string()) fail(join(path, key), "expected a string");
    out = v.get<std::string>();
    if (choices.size() == 0) return;
    std::string listed;
    for (const char* c : choices) {
      if (out == c) return;
      listed += listed.empty() ? c : std::string(", ") + c;
    }
    fail(join(path, key), "unknown value '" + out + "' (expected one of " + listed + ")");
  }

  void numbers(const json& obj, const std::string& path, const char* key,
               std::vector<double>& out) const {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_array()) fail(join(path, key), "expected an array of numbers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number()) fail(join(path, key), "expected an array of numbers");
      out.push_back(e.get<double>());
    }
  }

  template <class Int>
  void integers(const json& obj, const std::string& path, const char* key,
                std::vector<Int>& out) const {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_array()) fail(join(path, key), "expected an array of integers");
    out.clear();
    for (const auto& e : v) out.push_back(to_integer<Int>(e, join(path, key)));
  }

  void matrix(const json& obj, const std::string& path, const char* key,
              std::vector<std::vector<double>>& out) const {
    if (!obj.contains(key)) return;
    const json& v = obj.at(key);
    if (!v.is_array()) fail(join(path, key), "expected an array of rows");
    out.clear();
    for (const auto& row : v) {
      if (!row.is_array()) fail(join(path, key), "expected an array of rows");
      std::vector<double> r;
      for (const auto& e : row) {
        if (!e.is_number()) fail(join(path, key), "expected numeric rows");
        r.push_back(e.get<double>());
      }
      out.push_back(std::move(r));
    }
  }

  static std::string join(const std::string& path, const char* key) {
    return path.empty() ? std::string(key) : path + "." + key;
  }

 private:
  template <class Int>
  Int to_integer(const json& v, const std::string& path) const {
    if (v.is_number_unsigned()) {
      const auto u = v.get<std::uint64_t>();
      if constexpr (std::is_signed_v<Int>) {
        if (u > static_cast<std::uint64_t>(std::numeric_limits<Int>::max())) {
          fail(path, "integer out of range");
        }
      }
      return static_cast<Int>(u);
    }
    if (v.is_number_integer()) {
      const auto i = v.get<std::int64_t>();
      if constexpr (std::is_unsigned_v<Int>) {
        if (i < 0) fail(path, "expected a non-negative integer");
      } else {
        if (i < std::numeric_limits<Int>::min() || i > std::numeric_limits<Int>::max()) {
          fail(path, "integer out of range");
        }
      }
      return static_cast<Int>(i);
    }
    fail(path, "expected an integer");
  }

  const std::string& text_;
};

const json& section(const json& root, const char* key) {
  static const json kEmpty = json::object();
  return root.contains(key) ? root.at(key) : kEmpty;
}

ExperimentConfig from_json(const json& root, const std::string& text) {
  const Reader rd(text);
  ExperimentConfig c;
  rd.only_keys(root, "", {"seed", "output_dir", "environment", "utility", "policy", "estimator",
                          "train", "mse", "rate", "sweep"});
  rd.integer(root, "", "seed", c.seed);
  rd.string(root, "", "output_dir", c.output_dir);

  {
    const json& o = section(root, "environment");
    const std::string p = "environment";
    auto& e = c.environment;
    rd.only_keys(o, p, {"type", "layout", "slippery", "reward_goal", "cost_at_c", "reward_at_c",
                        "start_mix", "discount", "states", "actions", "mdp_seed",
                        "dirichlet_alpha"});
    rd.string(o, p, "type", e.type, {"gridworld", "random"});
    rd.string(o, p, "layout", e.layout);
    rd.boolean(o, p, "slippery", e.slippery);
    rd.number(o, p, "reward_goal", e.reward_goal);
    rd.number(o, p, "cost_at_c", e.cost_at_c);
    rd.number(o, p, "reward_at_c", e.reward_at_c);
    rd.number(o, p, "start_mix", e.start_mix);
    rd.number(o, p, "discount", e.discount);
    rd.integer(o, p, "states", e.states);
    rd.integer(o, p, "actions", e.actions);
    rd.integer(o, p, "mdp_seed", e.mdp_seed);
    rd.number(o, p, "dirichlet_alpha", e.dirichlet_alpha);

    if (!(e.discount > 0.0 && e.discount < 1.0)) rd.fail(p + ".discount", "must lie in (0, 1)");
    if (!(e.start_mix >= 0.0 && e.start_mix <= 1.0)) {
      rd.fail(p + ".start_mix", "must lie in [0, 1]");
    }
    if (e.type == "gridworld") {
      GridSpec spec;
      spec.layout = GridSpec::parse_layout(e.layout);
      try {
        validate_grid(spec);
      } catch (const std::invalid_argument& err) {
        rd.fail(p + ".layout", err.what());
      }
    } else {
      if (e.states < 1) rd.fail(p + ".states", "must be at least 1");
      if (e.actions < 1) rd.fail(p + ".actions", "must be at least 1");
      if (!(e.dirichlet_alpha > 0.0)) rd.fail(p + ".dirichlet_alpha", "must be positive");
    }
  }

  {
    const json& o = section(root, "utility");
    const std::string p = "utility";
    auto& u = c.utility;
    rd.only_keys(o, p, {"name", "budget", "beta", "prior", "prior_seed", "strong_concavity",
                        "features", "feature_dim", "feature_seed"});
    rd.string(o, p, "name", u.name, {"linear", "entropy", "kl", "min_eigenvalue", "log_barrier"});
    rd.number(o, p, "budget", u.budget);
    rd.number(o, p, "beta", u.beta);
    rd.numbers(o, p, "prior", u.prior);
    rd.integer(o, p, "prior_seed", u.prior_seed);
    rd.number(o, p, "strong_concavity", u.strong_concavity);
    rd.matrix(o, p, "features", u.features);
    rd.integer(o, p, "feature_dim", u.feature_dim);
    rd.integer(o, p, "feature_seed", u.feature_seed);
    if (!(u.beta >= 0.0)) rd.fail(p + ".beta", "must be non-negative");
    if (!std::isfinite(u.budget)) rd.fail(p + ".budget", "must be finite");
    if (u.strong_concavity < 0.0) rd.fail(p + ".strong_concavity", "must be non-negative");
    if (u.feature_dim < 1) rd.fail(p + ".feature_dim", "must be at least 1");
  }

  {
    const json& o = section(root, "policy");
    const std::string p = "policy";
    auto& q = c.policy;
    rd.only_keys(o, p, {"parameterization", "init", "init_scale", "init_seed", "table"});
    rd.string(o, p, "parameterization", q.parameterization, {"tabular", "softmax"});
    rd.string(o, p, "init", q.init, {"uniform", "random", "table"});
    rd.number(o, p, "init_scale", q.init_scale);
    rd.integer(o, p, "init_seed", q.init_seed);
    rd.matrix(o, p, "table", q.table);
    if (q.init == "table" && q.table.empty()) rd.fail(p + ".table", "required when init is table");
  }

  {
    const json& o = section(root, "estimator");
    const std::string p = "estimator";
    auto& e = c.estimator;
    rd.only_keys(o, p, {"mode", "episodes", "horizon", "iterations", "alpha", "beta_step",
                        "alpha_schedule", "beta_schedule", "q_source", "rollout_horizon",
                        "checkpoints"});
    rd.string(o, p, "mode", e.mode, {"exact", "variational", "composite"});
    rd.integer(o, p, "episodes", e.episodes);
    rd.integer(o, p, "horizon", e.horizon);
    rd.integer(o, p, "iterations", e.iterations);
    rd.number(o, p, "alpha", e.alpha);
    rd.number(o, p, "beta_step", e.beta_step);
    rd.string(o, p, "alpha_schedule", e.alpha_schedule, {"constant", "robbins_monro"});
    rd.string(o, p, "beta_schedule", e.beta_schedule, {"constant", "robbins_monro", "averaging"});
    rd.string(o, p, "q_source", e.q_source, {"exact", "rollout"});
    rd.integer(o, p, "rollout_horizon", e.rollout_horizon);
    rd.integer(o, p, "checkpoints", e.checkpoints);
    if (e.episodes < 1) rd.fail(p + ".episodes", "must be at least 1");
    if (e.horizon < 0) rd.fail(p + ".horizon", "must be non-negative (0 = default)");
    if (e.iterations < 0) rd.fail(p + ".iterations", "must be non-negative");
    if (!(e.alpha > 0.0)) rd.fail(p + ".alpha", "must be positive");
    if (!(e.beta_step > 0.0 && e.beta_step <= 1.0)) rd.fail(p + ".beta_step", "must lie in (0, 1]");
    if (e.rollout_horizon < 0) rd.fail(p + ".rollout_horizon", "must be non-negative");
    if (e.checkpoints < 1) rd.fail(p + ".checkpoints", "must be at least 1");
  }

  {
    const json& o = section(root, "train");
    const std::string p = "train";
    auto& t = c.train;
    rd.only_keys(o, p, {"step", "iterations", "eval_episodes", "eval_every", "smoothness_samples",
                        "oracle"});
    rd.number(o, p, "step", t.step);
    rd.integer(o, p, "iterations", t.iterations);
    rd.integer(o, p, "eval_episodes", t.eval_episodes);
    rd.integer(o, p, "eval_every", t.eval_every);
    rd.integer(o, p, "smoothness_samples", t.smoothness_samples);
    rd.boolean(o, p, "oracle", t.oracle);
    if (!(t.step >= 0.0)) rd.fail(p + ".step", "must be non-negative (0 = 1/L estimate)");
    if (t.iterations < 0) rd.fail(p + ".iterations", "must be non-negative");
    if (t.eval_episodes < 0) rd.fail(p + ".eval_episodes", "must be non-negative");
    if (t.eval_every < 1) rd.fail(p + ".eval_every", "must be at least 1");
    if (t.smoothness_samples < 2) rd.fail(p + ".smoothness_samples", "must be at least 2");
  }

  {
    const json& o = section(root, "mse");
    const std::string p = "mse";
    auto& m = c.mse;
    rd.only_keys(o, p, {"episode_counts", "repeats", "iterations_per_episode"});
    rd.integers(o, p, "episode_counts", m.episode_counts);
    rd.integer(o, p, "repeats", m.repeats);
    rd.number(o, p, "iterations_per_episode", m.iterations_per_episode);
    if (m.episode_counts.empty()) rd.fail(p + ".episode_counts", "must not be empty");
    for (int n : m.episode_counts) {
      if (n < 1) rd.fail(p + ".episode_counts", "entries must be at least 1");
    }
    if (m.repeats < 1) rd.fail(p + ".repeats", "must be at least 1");
    if (!(m.iterations_per_episode >= 0.0)) {
      rd.fail(p + ".iterations_per_episode", "must be non-negative");
    }
  }

  {
    const json& o = section(root, "rate");
    const std::string p = "rate";
    auto& r = c.rate;
    rd.only_keys(o, p, {"model", "first_k", "last_k", "floor", "analytic_smoothness",
                        "fw_iterations", "fw_tolerance", "fw_step"});
    rd.string(o, p, "model", r.model, {"sublinear", "linear"});
    rd.integer(o, p, "first_k", r.first_k);
    rd.integer(o, p, "last_k", r.last_k);
    rd.number(o, p, "floor", r.floor);
    rd.boolean(o, p, "analytic_smoothness", r.analytic_smoothness);
    rd.integer(o, p, "fw_iterations", r.fw_iterations);
    rd.number(o, p, "fw_tolerance", r.fw_tolerance);
    rd.string(o, p, "fw_step", r.fw_step, {"open_loop", "line_search"});
    if (r.first_k < 0) rd.fail(p + ".first_k", "must be non-negative");
    if (r.fw_iterations < 0) rd.fail(p + ".fw_iterations", "must be non-negative");
    if (!(r.fw_tolerance >= 0.0)) rd.fail(p + ".fw_tolerance", "must be non-negative");
  }

  {
    const json& o = section(root, "sweep");
    const std::string p = "sweep";
    auto& s = c.sweep;
    rd.only_keys(o, p, {"parameter", "values", "seeds"});
    rd.string(o, p, "parameter", s.parameter);
    rd.numbers(o, p, "values", s.values);
    rd.integers(o, p, "seeds", s.seeds);
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& e = c.environment;
  const auto& u = c.utility;
  const auto& q = c.policy;
  const auto& est = c.estimator;
  const auto& t = c.train;
  const auto& m = c.mse;
  const auto& r = c.rate;
  const auto& s = c.sweep;
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["environment"] = {{"type", e.type},
                      {"layout", e.layout},
                      {"slippery", e.slippery},
                      {"reward_goal", e.reward_goal},
                      {"cost_at_c", e.cost_at_c},
                      {"reward_at_c", e.reward_at_c},
                      {"start_mix", e.start_mix},
                      {"discount", e.discount},
                      {"states", e.states},
                      {"actions", e.actions},
                      {"mdp_seed", e.mdp_seed},
                      {"dirichlet_alpha", e.dirichlet_alpha}};
  j["utility"] = {{"name", u.name},
                  {"budget", u.budget},
                  {"beta", u.beta},
                  {"prior", u.prior},
                  {"prior_seed", u.prior_seed},
                  {"strong_concavity", u.strong_concavity},
                  {"features", u.features},
                  {"feature_dim", u.feature_dim},
                  {"feature_seed", u.feature_seed}};
  j["policy"] = {{"parameterization", q.parameterization},
                 {"init", q.init},
                 {"init_scale", q.init_scale},
                 {"init_seed", q.init_seed},
                 {"table", q.table}};
  j["estimator"] = {{"mode", est.mode},
                    {"episodes", est.episodes},
                    {"horizon", est.horizon},
                    {"iterations", est.iterations},
                    {"alpha", est.alpha},
                    {"beta_step", est.beta_step},
                    {"alpha_schedule", est.alpha_schedule},
                    {"beta_schedule", est.beta_schedule},
                    {"q_source", est.q_source},
                    {"rollout_horizon", est.rollout_horizon},
                    {"checkpoints", est.checkpoints}};
  j["train"] = {{"step", t.step},
                {"iterations", t.iterations},
                {"eval_episodes", t.eval_episodes},
                {"eval_every", t.eval_every},
                {"smoothness_samples", t.smoothness_samples},
                {"oracle", t.oracle}};
  j["mse"] = {{"episode_counts", m.episode_counts},
              {"repeats", m.repeats},
              {"iterations_per_episode", m.iterations_per_episode}};
  j["rate"] = {{"model", r.model},
               {"first_k", r.first_k},
               {"last_k", r.last_k},
               {"floor", r.floor},
               {"analytic_smoothness", r.analytic_smoothness},
               {"fw_iterations", r.fw_iterations},
               {"fw_tolerance", r.fw_tolerance},
               {"fw_step", r.fw_step}};
  j["sweep"] = {{"parameter", s.parameter}, {"values", s.values}, {"seeds", s.seeds}};
  return j;
}

// ---------------------------------------------------------------------------
// Output helpers

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      out_ << (i ? "," : "") << format_double(values[i]);
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json fit_json(const RateFit& f) {
  return {{"slope", f.slope},          {"slope_low", f.slope_low},
          {"slope_high", f.slope_high}, {"rho", f.rho},
          {"residual_rms", f.residual_rms}, {"first_k", f.first_k},
          {"last_k", f.last_k},        {"early_convergence", f.early_convergence}};
}

fs::path prepare_output(const ExperimentConfig& config) {
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  std::ofstream(dir / "config.json") << serialize_config(config) << '\n';
  return dir;
}

int worker_count() {
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("GUPG_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) threads = static_cast<int>(std::min<long>(threads, cap));
  }
  return threads;
}

Parameterization parameterization_of(const ExperimentConfig& c) {
  return c.policy.parameterization == "tabular" ? Parameterization::tabular
                                                : Parameterization::softmax;
}

SaddleConfig saddle_of(const EstimatorConfig& e, std::uint64_t seed) {
  SaddleConfig s;
  s.iterations = e.iterations;
  s.alpha = e.alpha;
  s.beta = e.beta_step;
  s.alpha_schedule =
      e.alpha_schedule == "constant" ? AlphaSchedule::constant : AlphaSchedule::robbins_monro;
  s.beta_schedule = e.beta_schedule == "constant"        ? BetaSchedule::constant
                    : e.beta_schedule == "robbins_monro" ? BetaSchedule::robbins_monro
                                                         : BetaSchedule::averaging;
  s.q_source.kind = e.q_source == "exact" ? QSourceKind::exact : QSourceKind::rollout;
  s.q_source.rollout_horizon = e.rollout_horizon;
  s.q_source.seed = Rng::derive(seed, 3).engine()();
  s.seed = seed;
  return s;
}

FrankWolfeConfig frank_wolfe_of(const RateConfig& r) {
  FrankWolfeConfig f;
  f.iterations = r.fw_iterations;
  f.tolerance = r.fw_tolerance;
  f.step = r.fw_step == "line_search" ? FwStep::line_search : FwStep::open_loop;
  return f;
}

std::uint64_t stream(std::uint64_t seed, std::uint64_t id) { return Rng::derive(seed, id).engine()(); }

std::vector<long> checkpoint_times(long iterations, int count) {
  std::set<long> times{0, iterations};
  if (iterations > 0 && count > 1) {
    for (int i = 0; i < count; ++i) {
      const double f = static_cast<double>(i) / (count - 1);
      times.insert(std::lround(std::pow(static_cast<double>(iterations), f)));
    }
  }
  return {times.begin(), times.end()};
}

double mean_of_tail(const std::vector<AscentMetrics>& metrics, double AscentMetrics::*field,
                    std::size_t count) {
  double total = 0.0;
  std::size_t used = 0;
  for (auto it = metrics.rbegin(); it != metrics.rend() && used < count; ++it) {
    if (std::isnan((*it).*field)) continue;
    total += (*it).*field;
    ++used;
  }
  return used ? total / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& err) {
    const std::size_t byte = std::min<std::size_t>(err.byte, text.size());
    const int line =
        1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(byte ? byte - 1 : 0), '\n'));
    throw ConfigError("config: malformed JSON at line " + std::to_string(line) + ": " +
                      line_text(text, line) + " (" + err.what() + ")");
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  return from_json(root, text);
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config(buffer.str());
  } catch (const ConfigError& err) {
    throw ConfigError(path.string() + ": " + err.what());
  }
}

std::string serialize_config(const ExperimentConfig& config) { return to_json(config).dump(2); }

ExperimentConfig with_override(const ExperimentConfig& config, const std::string& path,
                               double value) {
  json j = to_json(config);
  std::string pointer = "/" + path;
  std::replace(pointer.begin(), pointer.end(), '.', '/');
  const json::json_pointer ptr(pointer);
  if (!j.contains(ptr) || !j.at(ptr).is_number()) {
    throw ConfigError("config: sweep parameter '" + path + "' is not a numeric field");
  }
  if (!j.at(ptr).is_number_float()) {
    if (value != std::floor(value)) {
      throw ConfigError("config: sweep parameter '" + path + "' needs integer values");
    }
    if (j.at(ptr).is_number_unsigned() && value >= 0.0) {
      j[ptr] = static_cast<std::uint64_t>(value);
    } else {
      j[ptr] = static_cast<std::int64_t>(value);
    }
  } else {
    j[ptr] = value;
  }
  const std::string text = j.dump(2);
  return from_json(j, text);
}

Mdp make_environment(const EnvironmentConfig& e) {
  if (e.type == "random") {
    return random_mdp(e.states, e.actions, e.discount, e.mdp_seed, e.dirichlet_alpha);
  }
  GridSpec spec;
  spec.layout = GridSpec::parse_layout(e.layout);
  spec.slippery = e.slippery;
  spec.reward_goal = e.reward_goal;
  spec.cost_at_c = e.cost_at_c;
  spec.reward_at_c = e.reward_at_c;
  spec.start_mix = e.start_mix;
  spec.discount = e.discount;
  return build_gridworld(spec);
}

UtilityPtr make_utility(const ExperimentConfig& config, const Mdp& mdp) {
  const auto& u = config.utility;
  const int ns = mdp.num_states();
  const int na = mdp.num_actions();
  if (u.name == "linear") return linear_utility(mdp.reward_table());
  if (u.name == "entropy") return entropy_utility(mdp.discount());
  if (u.name == "kl") {
    Vector prior(ns);
    if (!u.prior.empty()) {
      if (static_cast<int>(u.prior.size()) != ns) {
        throw ConfigError("config: utility.prior needs " + std::to_string(ns) + " entries");
      }
      for (int s = 0; s < ns; ++s) prior[s] = u.prior[static_cast<std::size_t>(s)];
    } else {
      Rng rng(u.prior_seed);
      Table probs(ns, na);
      for (int s = 0; s < ns; ++s) probs.row(s) = dirichlet(rng, na, 1.0).transpose();
      prior = OccupancyMeasure(occupancy_exact(mdp, TabularPolicy(probs))).visitation(mdp.discount());
      if (!(prior.array() > 0.0).all()) {
        throw ConfigError(
            "config: the drawn KL prior has zero entries (some states are unreachable); "
            "give utility.prior or a positive environment.start_mix");
      }
      prior /= prior.sum();
    }
    try {
      std::optional<double> modulus;
      if (u.strong_concavity > 0.0) modulus = u.strong_concavity;
      return std::make_shared<KlUtility>(prior, mdp.discount(), modulus);
    } catch (const std::invalid_argument& err) {
      throw ConfigError(std::string("config: utility.prior: ") + err.what());
    }
  }
  if (u.name == "min_eigenvalue") {
    Eigen::MatrixXd features;
    if (!u.features.empty()) {
      const auto width = u.features.front().size();
      if (static_cast<int>(u.features.size()) != ns * na || width == 0) {
        throw ConfigError("config: utility.features needs " + std::to_string(ns * na) +
                          " non-empty rows");
      }
      features.resize(ns * na, static_cast<Eigen::Index>(width));
      for (std::size_t i = 0; i < u.features.size(); ++i) {
        if (u.features[i].size() != width) throw ConfigError("config: utility.features is ragged");
        for (std::size_t d = 0; d < width; ++d) {
          features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = u.features[i][d];
        }
      }
    } else {
      Rng rng(u.feature_seed);
      features.resize(ns * na, u.feature_dim);
      for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = rng.normal();
    }
    return min_eigenvalue_utility(features, ns, na);
  }
  if (!mdp.cost()) throw ConfigError("config: log_barrier needs an environment with a cost channel");
  return log_barrier_cmdp_utility(mdp.reward_table(), mdp.cost_table(), u.budget, u.beta);
}

ParametricPolicy make_initial_policy(const PolicyConfig& config, const Mdp& mdp) {
  const int ns = mdp.num_states();
  const int na = mdp.num_actions();
  const bool tabular = config.parameterization == "tabular";
  Table params;
  if (config.init == "table") {
    if (static_cast<int>(config.table.size()) != ns) {
      throw ConfigError("config: policy.table needs " + std::to_string(ns) + " rows");
    }
    params.resize(ns, na);
    for (int s = 0; s < ns; ++s) {
      const auto& row = config.table[static_cast<std::size_t>(s)];
      if (static_cast<int>(row.size()) != na) {
        throw ConfigError("config: policy.table rows need " + std::to_string(na) + " entries");
      }
      for (int a = 0; a < na; ++a) params(s, a) = row[static_cast<std::size_t>(a)];
    }
  } else if (config.init == "random") {
    Rng rng(config.init_seed);
    params.resize(ns, na);
    for (int s = 0; s < ns; ++s) {
      if (tabular) {
        params.row(s) = dirichlet(rng, na, 1.0).transpose();
      } else {
        for (int a = 0; a < na; ++a) params(s, a) = config.init_scale * rng.normal();
      }
    }
  } else {
    params = tabular ? TabularPolicy::uniform(ns, na).probs() : Table::Zero(ns, na);
  }
  try {
    return make_policy(tabular ? Parameterization::tabular : Parameterization::softmax, params);
  } catch (const std::invalid_argument& err) {
    throw ConfigError(std::string("config: policy.table: ") + err.what());
  }
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

void write_occupancy(const fs::path& path, const Table& lambda, double discount) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << lambda.rows() << ',' << lambda.cols() << '\n' << format_double(discount) << '\n';
  for (Eigen::Index s = 0; s < lambda.rows(); ++s) {
    for (Eigen::Index a = 0; a < lambda.cols(); ++a) {
      out << (a ? "," : "") << format_double(lambda(s, a));
    }
    out << '\n';
  }
}

OccupancyDump read_occupancy(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  int rows = 0;
  int cols = 0;
  char comma = 0;
  if (!std::getline(in, line) || !(std::istringstream(line) >> rows >> comma >> cols) ||
      comma != ',' || rows < 1 || cols < 1) {
    throw std::runtime_error(path.string() + ": bad dimension line");
  }
  OccupancyDump dump;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing discount line");
  dump.discount = std::stod(line);
  dump.lambda.resize(rows, cols);
  for (int s = 0; s < rows; ++s) {
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing rows");
    std::istringstream cells(line);
    std::string cell;
    for (int a = 0; a < cols; ++a) {
      if (!std::getline(cells, cell, ',')) throw std::runtime_error(path.string() + ": short row");
      dump.lambda(s, a) = std::stod(cell);
    }
  }
  return dump;
}

// ---------------------------------------------------------------------------
// Commands

CommandResult cmd_estimate_gradient(const ExperimentConfig& config) {
  const Mdp mdp = make_environment(config.environment);
  const UtilityPtr utility = make_utility(config, mdp);
  const ParametricPolicy policy = make_initial_policy(config.policy, mdp);
  const auto& est = config.estimator;
  const bool barrier = dynamic_cast<const LogBarrierUtility*>(utility.get()) != nullptr;
  if (est.mode == "exact") {
    throw ConfigError("config: estimator.mode: estimate-gradient needs a sampled estimator");
  }
  if (barrier != (est.mode == "composite")) {
    throw ConfigError(barrier ? "config: estimator.mode: log_barrier is dual-free; use composite"
                              : "config: estimator.mode: composite needs the log_barrier utility");
  }

  const fs::path dir = prepare_output(config);
  const Table oracle = exact_utility_gradient(mdp, policy, *utility);
  const int horizon = est.horizon > 0 ? est.horizon : default_horizon(mdp.discount());
  const EpisodeBatch batch = generate_batch(mdp, TabularPolicy(policy_probs(policy)), est.episodes,
                                            horizon, stream(config.seed, 1));

  CsvWriter csv(dir / "gradient.csv", {"t", "cosine_similarity_vs_oracle", "l2_error"});
  Table estimate;
  if (barrier) {
    const SaddleConfig saddle = saddle_of(est, stream(config.seed, 2));
    estimate = composite_pg(mdp, batch, policy, static_cast<const LogBarrierUtility&>(*utility),
                            saddle.q_source);
    csv.row({0.0, cosine_similarity(estimate, oracle), (estimate - oracle).norm()});
  } else {
    const std::vector<long> times = checkpoint_times(est.iterations, est.checkpoints);
    std::size_t next = 0;
    auto observer = [&](const SaddleState& state) {
      if (next < times.size() && state.t == times[next]) {
        csv.row({static_cast<double>(state.t), cosine_similarity(state.x, oracle),
                 (state.x - oracle).norm()});
        ++next;
      }
    };
    estimate = variational_pg(mdp, batch, *utility, policy, saddle_of(est, stream(config.seed, 2)),
                              observer);
  }

  json summary = {{"cosine_similarity_vs_oracle", cosine_similarity(estimate, oracle)},
                  {"l2_error", (estimate - oracle).norm()},
                  {"oracle_norm", oracle.norm()},
                  {"episodes", est.episodes},
                  {"horizon", horizon}};
  if (dynamic_cast<const LinearUtility*>(utility.get()) != nullptr) {
    const Table reinforce = reinforce_pg(mdp, batch, mdp.reward_table(), policy);
    summary["reinforce_cosine_vs_oracle"] = cosine_similarity(reinforce, oracle);
    summary["reinforce_cosine_vs_estimate"] = cosine_similarity(reinforce, estimate);
  }
  write_json(dir / "summary.json", summary);

  CommandResult result;
  result.files = {dir / "config.json", dir / "gradient.csv", dir / "summary.json"};
  result.summary = "cosine similarity vs oracle " +
                   format_double(summary["cosine_similarity_vs_oracle"].get<double>());
  return result;
}

namespace {

CommandResult train_impl(const ExperimentConfig& config, std::vector<AscentMetrics>* metrics);

}  // namespace

CommandResult cmd_train(const ExperimentConfig& config) { return train_impl(config, nullptr); }

namespace {

CommandResult train_impl(const ExperimentConfig& config, std::vector<AscentMetrics>* metrics) {
  const Mdp mdp = make_environment(config.environment);
  const UtilityPtr utility = make_utility(config, mdp);
  const ParametricPolicy initial = make_initial_policy(config.policy, mdp);
  const auto& est = config.estimator;
  const auto& tr = config.train;
  const bool barrier = dynamic_cast<const LogBarrierUtility*>(utility.get()) != nullptr;
  if (est.mode == "variational" && !utility->has_dual()) {
    throw ConfigError("config: estimator.mode: utility '" + utility->name() +
                      "' is dual-free; use composite (log_barrier) or exact");
  }
  if (est.mode == "composite" && !barrier) {
    throw ConfigError("config: estimator.mode: composite needs the log_barrier utility");
  }
  const fs::path dir = prepare_output(config);

  AscentConfig ac;
  ac.step = tr.step;
  ac.iterations = tr.iterations;
  ac.parameterization = parameterization_of(config);
  ac.estimator = est.mode == "exact"         ? EstimatorMode::exact
                 : est.mode == "variational" ? EstimatorMode::variational
                                             : EstimatorMode::composite;
  ac.episodes = est.episodes;
  ac.horizon = est.horizon;
  ac.saddle = saddle_of(est, stream(config.seed, 2));
  ac.smoothness_samples = tr.smoothness_samples;
  ac.eval_episodes = tr.eval_episodes;
  ac.eval_every = tr.eval_every;
  ac.keep_iterates = false;
  ac.seed = config.seed;

  json summary;
  if (tr.oracle) {
    try {
      const PolytopeOptimum opt = frank_wolfe_optimum(mdp, *utility, frank_wolfe_of(config.rate));
      ac.optimum = opt.value;
      summary["optimum"] = opt.value;
      summary["optimum_certificate"] = opt.gap;
      summary["optimum_converged"] = opt.converged;
    } catch (const std::exception& err) {
      summary["optimum_error"] = err.what();
    }
  }

  const AscentRun run = pg_ascent(mdp, initial, *utility, ac);
  CsvWriter csv(dir / "metrics.csv",
                {"k", "R_exact", "gap_vs_oracle", "grad_norm", "eval_reward", "eval_cost"});
  for (const auto& m : run.metrics) {
    csv.row({static_cast<double>(m.k), m.objective, m.gap, m.grad_norm, m.eval_reward,
             m.eval_cost});
  }

  const TabularPolicy final_policy(policy_probs(run.final_policy()));
  const Table lambda = occupancy_exact(mdp, final_policy).lambda();
  write_occupancy(dir / "occupancy.csv", lambda, mdp.discount());
  CommandResult result;
  result.files = {dir / "config.json", dir / "metrics.csv", dir / "occupancy.csv"};
  if (config.environment.type == "gridworld") {
    GridSpec spec;
    spec.layout = GridSpec::parse_layout(config.environment.layout);
    const Vector d = OccupancyMeasure(lambda).visitation(mdp.discount());
    std::ofstream grid(dir / "visitation_grid.csv");
    for (int r = 0; r < spec.rows(); ++r) {
      for (int c = 0; c < spec.cols(); ++c) {
        grid << (c ? "," : "") << format_double(d[r * spec.cols() + c]);
      }
      grid << '\n';
    }
    result.files.push_back(dir / "visitation_grid.csv");
  }

  const Table uniform_lambda =
      occupancy_exact(mdp, TabularPolicy::uniform(mdp.num_states(), mdp.num_actions())).lambda();
  const auto& last = run.metrics.back();
  summary["status"] = run.status == AscentStatus::completed ? "completed" : "barrier_exit";
  summary["diagnostic"] = run.diagnostic;
  summary["step"] = run.step;
  summary["iterations_recorded"] = run.metrics.size();
  summary["final_objective"] = last.objective;
  summary["final_eval_reward"] = last.eval_reward;
  summary["final_eval_cost"] = last.eval_cost;
  summary["uniform_policy_objective"] = utility->value(uniform_lambda);
  write_json(dir / "summary.json", summary);
  result.files.push_back(dir / "summary.json");
  result.summary = "final objective " + format_double(last.objective) + " after " +
                   std::to_string(last.k) + " iterations";
  if (metrics != nullptr) *metrics = run.metrics;
  return result;
}

}  // namespace

CommandResult cmd_mse_study(const ExperimentConfig& config) {
  const Mdp mdp = make_environment(config.environment);
  const UtilityPtr utility = make_utility(config, mdp);
  if (!utility->has_dual()) {
    throw ConfigError("config: utility.name: mse-study needs a utility with a closed-form dual");
  }
  const ParametricPolicy policy = make_initial_policy(config.policy, mdp);
  const fs::path dir = prepare_output(config);

  MseStudyConfig study;
  study.episode_counts = config.mse.episode_counts;
  study.repeats = config.mse.repeats;
  study.horizon = config.estimator.horizon;
  study.iterations_per_episode = config.mse.iterations_per_episode;
  study.saddle = saddle_of(config.estimator, stream(config.seed, 2));
  study.seed = config.seed;
  study.threads = worker_count();
  const MseStudyResult res = estimator_mse_study(mdp, policy, *utility, study);

  CsvWriter csv(dir / "mse.csv", {"n", "mse", "stderr"});
  for (const auto& row : res.rows) {
    csv.row({static_cast<double>(row.episodes), row.mse, row.stderr_mse});
  }
  json summary = {{"slope", res.slope},
                  {"slope_stderr", res.slope_stderr},
                  {"low_confidence", res.low_confidence},
                  {"insufficient_points", res.insufficient_points}};
  if (res.insufficient_points) summary["note"] = "fewer than two batch sizes; no slope fitted";
  write_json(dir / "summary.json", summary);

  CommandResult result;
  result.files = {dir / "config.json", dir / "mse.csv", dir / "summary.json"};
  result.summary = res.insufficient_points ? "insufficient points for a slope"
                                           : "log-log slope " + format_double(res.slope);
  return result;
}

CommandResult cmd_rate_study(const ExperimentConfig& config) {
  const Mdp mdp = make_environment(config.environment);
  const UtilityPtr utility = make_utility(config, mdp);
  const ParametricPolicy initial = make_initial_policy(config.policy, mdp);
  const auto& rc = config.rate;
  const bool linear = dynamic_cast<const LinearUtility*>(utility.get()) != nullptr;
  const Parameterization kind = parameterization_of(config);
  if (rc.analytic_smoothness && !(linear && kind == Parameterization::tabular)) {
    throw ConfigError(
        "config: rate.analytic_smoothness needs the linear utility with tabular policies");
  }
  if (config.estimator.mode == "composite") {
    throw ConfigError("config: estimator.mode: rate-study supports exact or variational");
  }
  const fs::path dir = prepare_output(config);

  const PolytopeOptimum opt = frank_wolfe_optimum(mdp, *utility, frank_wolfe_of(rc));
  AscentConfig ac;
  ac.iterations = config.train.iterations;
  ac.parameterization = kind;
  ac.estimator = config.estimator.mode == "exact" ? EstimatorMode::exact : EstimatorMode::variational;
  ac.episodes = config.estimator.episodes;
  ac.horizon = config.estimator.horizon;
  ac.saddle = saddle_of(config.estimator, stream(config.seed, 2));
  ac.smoothness_samples = config.train.smoothness_samples;
  ac.optimum = opt.value;
  ac.keep_iterates = false;
  ac.seed = config.seed;
  double smoothness = 0.0;
  if (rc.analytic_smoothness) {
    smoothness = *estimate_smoothness(mdp, *utility, kind, 2, config.seed).analytic;
    ac.step = 1.0 / smoothness;
  } else {
    ac.step = config.train.step;
  }
  const AscentRun run = pg_ascent(mdp, initial, *utility, ac);
  const std::vector<double> gaps = run.gaps();

  std::optional<TabularPolicy> optimal;
  if (rc.analytic_smoothness) {
    optimal = deterministic_policy(value_iteration(mdp, mdp.reward_table()).greedy,
                                   mdp.num_actions());
  }
  bool bound_holds = true;
  std::vector<std::string> header{"k", "gap"};
  if (optimal) header.push_back("bound");
  CsvWriter csv(dir / "gaps.csv", header);
  for (std::size_t k = 0; k < gaps.size(); ++k) {
    std::vector<double> row{static_cast<double>(k), gaps[k]};
    if (optimal) {
      const double rhs = tabular_rate_bound(mdp, *optimal, smoothness, static_cast<int>(k));
      if (k >= 1 && gaps[k] > rhs) bound_holds = false;
      row.push_back(rhs);
    }
    csv.row(row);
  }

  json report = {{"optimum", opt.value},
                 {"optimum_certificate", opt.gap},
                 {"optimum_converged", opt.converged},
                 {"step", run.step},
                 {"model", rc.model}};
  FitWindow window;
  window.first_k = rc.first_k;
  window.last_k = rc.last_k;
  window.floor = rc.floor;
  for (RateModel model : {RateModel::sublinear, RateModel::linear}) {
    const char* name = model == RateModel::sublinear ? "sublinear" : "linear";
    try {
      report[name] = fit_json(rate_fit(gaps, model, window));
    } catch (const std::exception& err) {
      report[name] = {{"error", err.what()}};
    }
  }
  if (optimal) {
    report["smoothness"] = smoothness;
    report["bound_holds"] = bound_holds;
  }
  write_json(dir / "fit.json", report);

  CommandResult result;
  result.files = {dir / "config.json", dir / "gaps.csv", dir / "fit.json"};
  const json& chosen = report[rc.model];
  if (chosen.contains("error")) {
    result.summary = chosen["error"].get<std::string>();
  } else if (rc.model == "sublinear") {
    result.summary = "sublinear slope " + format_double(chosen["slope"].get<double>());
  } else {
    result.summary = "contraction " + format_double(chosen["rho"].get<double>());
  }
  return result;
}

CommandResult cmd_sweep(const ExperimentConfig& config) {
  const auto& sw = config.sweep;
  if (sw.values.empty()) throw ConfigError("config: sweep.values must not be empty");
  const std::vector<std::uint64_t> seeds =
      sw.seeds.empty() ? std::vector<std::uint64_t>{config.seed} : sw.seeds;
  const fs::path dir = prepare_output(config);
  const std::string label = sw.parameter.substr(sw.parameter.rfind('.') + 1);

  struct Run {
    double value;
    std::uint64_t seed;
    ExperimentConfig config;
    AscentMetrics last{};
    double reward_tail = 0.0;
    double cost_tail = 0.0;
  };
  std::vector<Run> runs;
  for (double v : sw.values) {
    for (std::uint64_t s : seeds) {
      ExperimentConfig c = with_override(config, sw.parameter, v);
      c.seed = s;
      c.output_dir = (dir / (label + "=" + format_double(v)) / ("seed=" + std::to_string(s))).string();
      runs.push_back({v, s, std::move(c)});
    }
  }

  parallel_for(static_cast<int>(runs.size()), worker_count(), [&](int i) {
    Run& run = runs[static_cast<std::size_t>(i)];
    std::vector<AscentMetrics> rows;
    train_impl(run.config, &rows);
    run.last = rows.back();
    run.reward_tail = mean_of_tail(rows, &AscentMetrics::eval_reward, 20);
    run.cost_tail = mean_of_tail(rows, &AscentMetrics::eval_cost, 20);
  });

  CsvWriter table(dir / "sweep.csv", {label, "seed", "R_final", "eval_reward", "eval_cost",
                                      "eval_reward_tail20", "eval_cost_tail20"});
  std::map<double, std::pair<double, double>> means;
  for (const auto& run : runs) {
    table.row({run.value, static_cast<double>(run.seed), run.last.objective, run.last.eval_reward,
               run.last.eval_cost, run.reward_tail, run.cost_tail});
    means[run.value].first += run.last.eval_reward / static_cast<double>(seeds.size());
    means[run.value].second += run.last.eval_cost / static_cast<double>(seeds.size());
  }
  CsvWriter summary(dir / "sweep_summary.csv", {label, "eval_reward_mean", "eval_cost_mean"});
  for (double v : sw.values) summary.row({v, means[v].first, means[v].second});

  CommandResult result;
  result.files = {dir / "config.json", dir / "sweep.csv", dir / "sweep_summary.csv"};
  result.summary = std::to_string(runs.size()) + " runs";
  return result;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"estimate-gradient", "train", "mse-study",
                                              "rate-study", "sweep"};
  return names;
}

CommandResult run_command(const std::string& name, const ExperimentConfig& config) {
  if (name == "estimate-gradient") return cmd_estimate_gradient(config);
  if (name == "train") return cmd_train(config);
  if (name == "mse-study") return cmd_mse_study(config);
  if (name == "rate-study") return cmd_rate_study(config);
  if (name == "sweep") return cmd_sweep(config);
  throw std::invalid_argument("unknown command '" + name + "'");
}

}  // namespace gupg
