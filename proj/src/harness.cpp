#include "arisaoi/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>

#include "arisaoi/units.hpp"

namespace arisaoi {

namespace pt = boost::property_tree;

namespace {

struct KeyDefault {
  const char* key;
  const char* value;  // nullptr: optional key without a default
};

// Units are part of the key name; dB/dBm values are converted once in build_network.
constexpr KeyDefault kKeys[] = {
    {"network.num_devices", "5"},
    {"network.layout", "random"},
    {"network.area_size_m", "500"},
    {"network.layout_seed", "1"},
    {"network.devices", nullptr},
    {"network.uav_x_m", "250"},
    {"network.uav_y_m", "250"},
    {"network.bs_x_m", "2000"},
    {"network.bs_y_m", "500"},
    {"network.bs_z_m", "25"},
    {"network.num_elements", "128"},
    {"network.tx_power_dbm", "20"},
    {"network.noise_power_dbm", "-110"},
    {"network.ref_gain_db", "-20"},
    {"network.path_loss_exponent", "2.3"},
    {"network.rician_k1_db", "8"},
    {"network.rician_k2_db", "8"},
    {"network.snr_threshold_db", "0"},
    {"network.h_min_m", "10"},
    {"network.h_max_m", "1000"},
    {"network.h_start_m", "100"},
    {"network.d_max_m", "10"},
    {"network.horizon", "120"},
    {"network.activation", "iid_bernoulli"},
    {"network.activation_probs", nullptr},
    {"network.activation_trace", nullptr},
    {"network.altitude_penalty", "1"},
    {"network.snr_feature_cap", "10"},
    {"network.redraw_los_per_slot", "false"},
    {"network.seed", "1"},
    {"ppo.rollout_length", "240"},
    {"ppo.epochs", "10"},
    {"ppo.minibatch_size", "60"},
    {"ppo.clip_epsilon", "0.2"},
    {"ppo.discount", "0.9"},
    {"ppo.gae_lambda", "0.95"},
    {"ppo.value_coef", "0.5"},
    {"ppo.entropy_coef", "0.01"},
    {"ppo.learning_rate", "0.001"},
    {"ppo.total_samples", "48000"},
    {"ppo.advantage_normalization", "true"},
    {"ppo.hidden", "64,64,64"},
    {"ppo.reward_scale", "0.01"},
    {"ppo.max_grad_norm", "0.5"},
    {"ppo.num_envs", "1"},
    {"ppo.normalize_observations", "true"},
    {"ppo.seed", "1"},
    {"experiment.name", "experiment"},
    {"experiment.sweep", "num_devices"},
    {"experiment.sweep_values", "3,5,8"},
    {"experiment.episodes_per_point", "50"},
    {"experiment.seeds", "1"},
    {"experiment.policies", "random_walk,hovering_greedy,trained_ppo"},
    {"experiment.output_dir", "out"},
    {"experiment.jobs", "1"},
    {"experiment.stochastic_eval", "false"},
    {"experiment.dp_aoi_cap", "1048576"},
};

bool known_key(const std::string& key) {
  return std::any_of(std::begin(kKeys), std::end(kKeys), [&](const KeyDefault& k) { return key == k.key; });
}

// Shifted by the first value so identical samples give exactly zero.
double sample_std(const std::vector<double>& values) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    sum += v - values.front();
    sq += (v - values.front()) * (v - values.front());
  }
  return std::sqrt(std::max(0.0, (sq - sum * sum / n) / (n - 1)));
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string raw(const pt::ptree& t, const std::string& key) {
  const auto v = t.get_optional<std::string>(key);
  if (!v) throw ConfigError(key, "missing value");
  return trim(*v);
}

double as_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a number, got '" + text + "'");
  }
}

long long as_int(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected an integer, got '" + text + "'");
  }
}

std::uint64_t as_uint(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  }
}

bool as_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + text + "'");
}

double get_double(const pt::ptree& t, const std::string& key) { return as_double(key, raw(t, key)); }
long long get_int(const pt::ptree& t, const std::string& key) { return as_int(key, raw(t, key)); }
std::uint64_t get_uint(const pt::ptree& t, const std::string& key) { return as_uint(key, raw(t, key)); }
bool get_bool(const pt::ptree& t, const std::string& key) { return as_bool(key, raw(t, key)); }

std::vector<Position3> parse_devices(const std::string& key, const std::string& text) {
  std::vector<Position3> devices;
  for (const auto& entry : split(text, ';')) {
    const auto coords = split(entry, ',');
    if (coords.size() != 2 && coords.size() != 3)
      throw ConfigError(key, "device entries are 'x,y' or 'x,y,z' separated by ';'");
    Position3 p(as_double(key, coords[0]), as_double(key, coords[1]),
                coords.size() == 3 ? as_double(key, coords[2]) : 0.0);
    devices.push_back(p);
  }
  if (devices.empty()) throw ConfigError(key, "empty device list");
  return devices;
}

ActivationTrace parse_trace(const std::string& key, const std::string& text) {
  std::vector<std::vector<std::uint8_t>> rows;
  for (const auto& row_text : split(text, ';')) {
    std::vector<std::uint8_t> row;
    for (char c : row_text) {
      if (c == '0' || c == '1') row.push_back(static_cast<std::uint8_t>(c - '0'));
      else if (c != ',' && c != ' ') throw ConfigError(key, "trace rows contain only 0/1 digits");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError(key, "empty activation trace");
  ActivationTrace trace(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) throw ConfigError(key, "trace rows differ in length");
    for (std::size_t n = 0; n < rows[i].size(); ++n)
      trace(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = rows[i][n];
  }
  return trace;
}

NetworkConfig build_network(const pt::ptree& t) {
  NetworkConfig c;
  const std::string layout = raw(t, "network.layout");
  const auto devices_text = t.get_optional<std::string>("network.devices");
  const auto m = get_int(t, "network.num_devices");
  const auto layout_seed = get_uint(t, "network.layout_seed");
  if (layout == "explicit") {
    if (!devices_text) throw ConfigError("network.devices", "explicit layout requires a device list");
    c.devices = parse_devices("network.devices", *devices_text);
    if (static_cast<long long>(c.devices.size()) != m)
      throw ConfigError("network.num_devices", "does not match the number of listed devices");
  } else if (layout == "random") {
    if (devices_text) throw ConfigError("network.devices", "device list given with random layout");
    if (m < 1) throw ConfigError("network.num_devices", "at least one device required");
    const double area = get_double(t, "network.area_size_m");
    if (!(area > 0)) throw ConfigError("network.area_size_m", "must be positive");
    c.devices = random_layout(static_cast<std::size_t>(m), area, layout_seed);
  } else {
    throw ConfigError("network.layout", "expected 'random' or 'explicit'");
  }

  c.uav_xy = Planar(get_double(t, "network.uav_x_m"), get_double(t, "network.uav_y_m"));
  c.bs = Position3(get_double(t, "network.bs_x_m"), get_double(t, "network.bs_y_m"),
                   get_double(t, "network.bs_z_m"));

  auto& ch = c.channel;
  const auto elements = get_int(t, "network.num_elements");
  if (elements < 1 || elements > 1 << 20) throw ConfigError("network.num_elements", "must lie in [1, 2^20]");
  ch.num_elements = static_cast<int>(elements);
  ch.tx_power = dbm_to_watts(get_double(t, "network.tx_power_dbm"));
  ch.noise_power = dbm_to_watts(get_double(t, "network.noise_power_dbm"));
  ch.gamma0 = db_to_linear(get_double(t, "network.ref_gain_db"));
  ch.path_loss_exponent = get_double(t, "network.path_loss_exponent");
  ch.rician_k1 = db_to_linear(get_double(t, "network.rician_k1_db"));
  ch.rician_k2 = db_to_linear(get_double(t, "network.rician_k2_db"));
  ch.snr_threshold = db_to_linear(get_double(t, "network.snr_threshold_db"));

  c.h_min = get_double(t, "network.h_min_m");
  c.h_max = get_double(t, "network.h_max_m");
  c.h_start = get_double(t, "network.h_start_m");
  c.d_max = get_double(t, "network.d_max_m");
  const auto horizon = get_int(t, "network.horizon");
  if (horizon < 1 || horizon > 1 << 24) throw ConfigError("network.horizon", "must lie in [1, 2^24]");
  c.horizon = static_cast<int>(horizon);

  const std::string activation = raw(t, "network.activation");
  const auto probs_text = t.get_optional<std::string>("network.activation_probs");
  const auto trace_text = t.get_optional<std::string>("network.activation_trace");
  if (activation == "iid_bernoulli") {
    c.activation.kind = ActivationKind::iid_bernoulli;
    if (trace_text) throw ConfigError("network.activation_trace", "trace given for iid_bernoulli activation");
    if (probs_text) {
      for (const auto& p : split(*probs_text, ','))
        c.activation.probs.push_back(as_double("network.activation_probs", p));
    } else {
      c.activation.probs = random_activation_probs(c.devices.size(), layout_seed);
    }
  } else if (activation == "fixed_trace") {
    c.activation.kind = ActivationKind::fixed_trace;
    if (probs_text) throw ConfigError("network.activation_probs", "probabilities given for fixed_trace activation");
    if (!trace_text) throw ConfigError("network.activation_trace", "fixed_trace activation requires a trace");
    c.activation.trace = parse_trace("network.activation_trace", *trace_text);
  } else {
    throw ConfigError("network.activation", "expected 'iid_bernoulli' or 'fixed_trace'");
  }

  c.altitude_penalty = get_double(t, "network.altitude_penalty");
  c.snr_feature_cap = get_double(t, "network.snr_feature_cap");
  c.redraw_los_per_slot = get_bool(t, "network.redraw_los_per_slot");
  c.seed = get_uint(t, "network.seed");
  validate(c);
  return c;
}

PpoConfig build_ppo(const pt::ptree& t) {
  PpoConfig p;
  p.rollout_length = static_cast<int>(get_int(t, "ppo.rollout_length"));
  p.epochs_per_iter = static_cast<int>(get_int(t, "ppo.epochs"));
  p.minibatch_size = static_cast<int>(get_int(t, "ppo.minibatch_size"));
  p.clip_epsilon = get_double(t, "ppo.clip_epsilon");
  p.discount = get_double(t, "ppo.discount");
  p.gae_lambda = get_double(t, "ppo.gae_lambda");
  p.value_coef = get_double(t, "ppo.value_coef");
  p.entropy_coef = get_double(t, "ppo.entropy_coef");
  p.learning_rate = get_double(t, "ppo.learning_rate");
  p.total_samples = get_int(t, "ppo.total_samples");
  p.advantage_normalization = get_bool(t, "ppo.advantage_normalization");
  p.hidden.clear();
  for (const auto& w : split(raw(t, "ppo.hidden"), ',')) p.hidden.push_back(as_int("ppo.hidden", w));
  p.reward_scale = get_double(t, "ppo.reward_scale");
  p.max_grad_norm = get_double(t, "ppo.max_grad_norm");
  p.num_envs = static_cast<int>(get_int(t, "ppo.num_envs"));
  p.normalize_observations = get_bool(t, "ppo.normalize_observations");
  p.seed = get_uint(t, "ppo.seed");
  validate(p);
  return p;
}

SweepKind parse_sweep(const std::string& text) {
  if (text == "convergence") return SweepKind::convergence;
  if (text == "num_devices") return SweepKind::num_devices;
  if (text == "per_device_age") return SweepKind::per_device_age;
  if (text == "num_elements_and_power") return SweepKind::num_elements_and_power;
  throw ConfigError("experiment.sweep", "unknown sweep '" + text + "'");
}

ExperimentSpec build_experiment(const pt::ptree& t) {
  ExperimentSpec e;
  e.name = raw(t, "experiment.name");
  e.sweep = parse_sweep(raw(t, "experiment.sweep"));
  e.sweep_values = split(raw(t, "experiment.sweep_values"), ',');
  if (e.sweep_values.empty()) throw ConfigError("experiment.sweep_values", "must not be empty");
  e.episodes_per_point = static_cast<int>(get_int(t, "experiment.episodes_per_point"));
  if (e.episodes_per_point < 1) throw ConfigError("experiment.episodes_per_point", "must be >= 1");
  e.seeds.clear();
  for (const auto& s : split(raw(t, "experiment.seeds"), ',')) e.seeds.push_back(as_uint("experiment.seeds", s));
  if (e.seeds.empty()) throw ConfigError("experiment.seeds", "must not be empty");
  e.policies.clear();
  for (const auto& p : split(raw(t, "experiment.policies"), ',')) {
    try {
      e.policies.push_back(parse_policy_kind(p));
    } catch (const std::invalid_argument& err) {
      throw ConfigError("experiment.policies", err.what());
    }
  }
  if (e.policies.empty()) throw ConfigError("experiment.policies", "must not be empty");
  e.output_dir = raw(t, "experiment.output_dir");
  e.jobs = static_cast<int>(get_int(t, "experiment.jobs"));
  if (e.jobs < 1) throw ConfigError("experiment.jobs", "must be >= 1");
  e.stochastic_eval = get_bool(t, "experiment.stochastic_eval");
  e.dp_aoi_cap = static_cast<int>(get_int(t, "experiment.dp_aoi_cap"));
  if (e.dp_aoi_cap < 1) throw ConfigError("experiment.dp_aoi_cap", "must be >= 1");
  return e;
}

void apply_override(pt::ptree& t, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override must be KEY=VALUE");
  const std::string key = trim(assignment.substr(0, eq));
  if (!known_key(key)) throw ConfigError(key, "unknown config key");
  t.put(key, trim(assignment.substr(eq + 1)));
}

std::string format_double(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

std::string join(const Eigen::VectorXd& v, char sep) {
  std::ostringstream ss;
  ss << std::setprecision(17);
  for (Eigen::Index i = 0; i < v.size(); ++i) ss << (i ? std::string(1, sep) : "") << v[i];
  return ss.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::string to_string(SweepKind kind) {
  switch (kind) {
    case SweepKind::convergence: return "convergence";
    case SweepKind::num_devices: return "num_devices";
    case SweepKind::per_device_age: return "per_device_age";
    case SweepKind::num_elements_and_power: return "num_elements_and_power";
  }
  return "unknown";
}

ResolvedConfig resolve_config(const pt::ptree& user, std::span<const std::string> overrides) {
  pt::ptree t;
  for (const auto& k : kKeys)
    if (k.value) t.put(k.key, k.value);
  for (const auto& [section, body] : user) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(section, "keys must live in a [network], [ppo] or [experiment] section");
    for (const auto& [key, value] : body) {
      const std::string path = section + "." + key;
      if (!known_key(path)) throw ConfigError(path, "unknown config key");
      t.put(path, trim(value.data()));
    }
  }
  for (const auto& o : overrides) apply_override(t, o);

  // an explicit device list implies an explicit layout of that size
  if (const auto devices = t.get_optional<std::string>("network.devices")) {
    const auto count = parse_devices("network.devices", *devices).size();
    const bool size_given = user.get_optional<std::string>("network.num_devices").has_value() ||
                            std::any_of(overrides.begin(), overrides.end(), [](const std::string& o) {
                              return trim(o.substr(0, o.find('='))) == "network.num_devices";
                            });
    if (size_given && static_cast<std::size_t>(get_int(t, "network.num_devices")) != count)
      throw ConfigError("network.num_devices", "does not match the number of listed devices");
    t.put("network.num_devices", std::to_string(count));
    t.put("network.layout", "explicit");
  }

  ResolvedConfig rc;
  rc.network = build_network(t);
  rc.ppo = build_ppo(t);
  rc.experiment = build_experiment(t);
  rc.tree = std::move(t);
  return rc;
}

ResolvedConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  pt::ptree user;
  try {
    pt::read_ini(path.string(), user);
  } catch (const pt::ini_parser_error& err) {
    throw ConfigError(path.string(), err.what());
  }
  return resolve_config(user, overrides);
}

ResolvedConfig default_config() { return resolve_config(pt::ptree{}); }

void dump_config(const ResolvedConfig& config, std::ostream& out) {
  out << "; resolved configuration\n";
  pt::write_ini(out, config.tree);
}

NetworkConfig network_for_point(const ResolvedConfig& config, const std::string& sweep_value,
                                std::uint64_t seed) {
  pt::ptree t = config.tree;
  switch (config.experiment.sweep) {
    case SweepKind::num_devices:
    case SweepKind::per_device_age:
      if (raw(t, "network.layout") == "explicit" || t.get_optional<std::string>("network.activation_probs"))
        throw ConfigError("experiment.sweep", "sweeping num_devices needs a random layout and random probabilities");
      t.put("network.num_devices", sweep_value);
      break;
    case SweepKind::num_elements_and_power: {
      const auto parts = split(sweep_value, ':');
      if (parts.empty() || parts.size() > 2)
        throw ConfigError("experiment.sweep_values", "entries are 'F' or 'F:P_dBm'");
      t.put("network.num_elements", parts[0]);
      if (parts.size() == 2) t.put("network.tx_power_dbm", parts[1]);
      break;
    }
    case SweepKind::convergence:
      break;
  }
  if (raw(t, "network.layout") == "random") {
    const auto layout_seed = get_uint(t, "network.layout_seed");
    t.put("network.layout_seed", std::to_string(derive_seed(layout_seed, seed)));
  }
  t.put("network.seed", std::to_string(derive_seed(get_uint(t, "network.seed"), seed)));
  return build_network(t);
}

std::uint64_t evaluation_episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, 1000 + static_cast<std::uint64_t>(episode));
}

EvaluationResult evaluate_policy(Policy& policy, const NetworkConfig& network, int episodes,
                                 std::span<const std::uint64_t> seeds, std::vector<TraceRow>* trace) {
  if (episodes < 1 || seeds.empty()) throw std::invalid_argument("evaluate_policy: nothing to evaluate");
  Environment env(network);
  const auto m = static_cast<Eigen::Index>(network.num_devices());
  EvaluationResult result;
  result.per_device_age = Eigen::VectorXd::Zero(m);
  double reward_sum = 0.0;
  std::int64_t steps = 0;
  for (auto seed : seeds) {
    for (int e = 0; e < episodes; ++e) {
      const auto episode_seed = evaluation_episode_seed(seed, e);
      env.reset(episode_seed);
      policy.begin_episode(env, episode_seed);
      Eigen::VectorXd ages = Eigen::VectorXd::Zero(m);
      while (!env.done()) {
        const Action action = policy.act(env);
        if (trace) {
          const EnvState before = env.state();
          const auto out = env.step(action);
          trace->push_back(make_trace_row(before, action, out));
          ages += out.next_state.aoi.cast<double>();
          reward_sum += out.reward;
        } else {
          const auto out = env.step(action);
          ages += out.next_state.aoi.cast<double>();
          reward_sum += out.reward;
        }
        ++steps;
      }
      result.per_device_age += ages / static_cast<double>(network.horizon);
      result.episode_esa.push_back(env.episode_esa());
    }
  }
  const auto n = static_cast<double>(result.episode_esa.size());
  result.per_device_age /= n;
  double sum = 0.0;
  for (double v : result.episode_esa) sum += v;
  result.mean_esa = sum / n;
  result.std_esa = sample_std(result.episode_esa);
  result.mean_reward = reward_sum / static_cast<double>(steps);
  return result;
}

std::unique_ptr<Policy> make_baseline(PolicyKind kind, const NetworkConfig& network, int dp_aoi_cap) {
  switch (kind) {
    case PolicyKind::random_walk: return std::make_unique<RandomWalkPolicy>();
    case PolicyKind::hovering_greedy: return std::make_unique<HoveringGreedyPolicy>();
    case PolicyKind::dp_oracle: {
      DpOptions options;
      options.aoi_cap = dp_aoi_cap;
      return std::make_unique<ReplayPolicy>(dp_oracle(network, options).actions);
    }
    case PolicyKind::trained_ppo: break;
  }
  throw std::invalid_argument("make_baseline: trained_ppo is not a baseline");
}

void write_metrics_header(std::ostream& out) {
  out << "experiment,policy,sweep_value,seed,esa,mean_reward,per_device_ages\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << csv_field(r.experiment) << ',' << csv_field(r.policy) << ',' << csv_field(r.sweep_value) << ','
      << r.seed << ',' << format_double(r.esa) << ',' << format_double(r.mean_reward) << ','
      << (r.per_device_ages ? join(*r.per_device_ages, ';') : std::string()) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = parse_csv_line(line);
    if (f.size() != 7) throw std::runtime_error("metrics csv: expected 7 fields in '" + line + "'");
    MetricsRow r;
    r.experiment = f[0];
    r.policy = f[1];
    r.sweep_value = f[2];
    r.seed = as_uint("seed", f[3]);
    r.esa = as_double("esa", f[4]);
    r.mean_reward = as_double("mean_reward", f[5]);
    if (!f[6].empty()) {
      const auto parts = split(f[6], ';');
      Eigen::VectorXd ages(static_cast<Eigen::Index>(parts.size()));
      for (std::size_t i = 0; i < parts.size(); ++i)
        ages[static_cast<Eigen::Index>(i)] = as_double("per_device_ages", parts[i]);
      r.per_device_ages = ages;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<PlotPoint> aggregate(std::span<const MetricsRow> rows) {
  std::vector<PlotPoint> points;
  std::vector<std::vector<const MetricsRow*>> members;
  for (const auto& r : rows) {
    auto it = std::find_if(points.begin(), points.end(), [&](const PlotPoint& p) {
      return p.policy == r.policy && p.sweep_value == r.sweep_value;
    });
    if (it == points.end()) {
      points.push_back({r.policy, r.sweep_value, 0, 0.0, 0.0, {}});
      members.emplace_back();
      it = points.end() - 1;
    }
    members[static_cast<std::size_t>(it - points.begin())].push_back(&r);
  }
  for (std::size_t k = 0; k < points.size(); ++k) {
    auto& p = points[k];
    const auto& group = members[k];
    p.count = group.size();
    double sum = 0.0;
    for (const auto* r : group) sum += r->esa;
    p.mean_esa = sum / static_cast<double>(p.count);
    std::vector<double> values;
    for (const auto* r : group) values.push_back(r->esa);
    p.std_esa = sample_std(values);
    const bool have_ages = std::all_of(group.begin(), group.end(), [&](const MetricsRow* r) {
      return r->per_device_ages && r->per_device_ages->size() == group.front()->per_device_ages->size();
    });
    if (have_ages) {
      p.mean_device_age = Eigen::VectorXd::Zero(group.front()->per_device_ages->size());
      for (const auto* r : group) p.mean_device_age += *r->per_device_ages;
      p.mean_device_age /= static_cast<double>(p.count);
    }
  }
  return points;
}

namespace {

struct PointTask {
  PolicyKind policy;
  std::string sweep_value;
  std::uint64_t seed;
};

struct PointResult {
  MetricsRow row;
  std::vector<TrainingRow> curve;
};

PointResult compute_point(const ResolvedConfig& config, const PointTask& task) {
  const auto& spec = config.experiment;
  const NetworkConfig network = network_for_point(config, task.sweep_value, task.seed);
  PointResult result;
  std::unique_ptr<Policy> policy;
  if (task.policy == PolicyKind::trained_ppo) {
    PpoConfig ppo = config.ppo;
    ppo.seed = derive_seed(config.ppo.seed, task.seed);
    auto trained = train(ppo, network);
    result.curve = std::move(trained.curve);
    policy = std::make_unique<PpoPolicy>(std::move(trained.checkpoint), spec.stochastic_eval);
  } else {
    policy = make_baseline(task.policy, network, spec.dp_aoi_cap);
  }
  const std::uint64_t seeds[] = {task.seed};
  const auto eval = evaluate_policy(*policy, network, spec.episodes_per_point, seeds);
  result.row.experiment = spec.name;
  result.row.policy = to_string(task.policy);
  result.row.sweep_value = task.sweep_value;
  result.row.seed = task.seed;
  result.row.esa = eval.mean_esa;
  result.row.mean_reward = eval.mean_reward;
  result.row.per_device_ages = eval.per_device_age;
  return result;
}

std::string point_key(const std::string& policy, const std::string& value, std::uint64_t seed) {
  return policy + '\x1f' + value + '\x1f' + std::to_string(seed);
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out;
}

void write_plot_files(const ExperimentSpec& spec, std::span<const MetricsRow> rows) {
  const auto points = aggregate(rows);
  std::ofstream plot(spec.output_dir / ("plot_" + file_safe(spec.name) + ".csv"));
  plot << "policy,sweep_value,count,mean_esa,std_esa\n";
  for (const auto& p : points)
    plot << csv_field(p.policy) << ',' << csv_field(p.sweep_value) << ',' << p.count << ','
         << format_double(p.mean_esa) << ',' << format_double(p.std_esa) << '\n';
  if (spec.sweep == SweepKind::per_device_age) {
    std::ofstream ages(spec.output_dir / ("plot_" + file_safe(spec.name) + "_per_device.csv"));
    ages << "policy,sweep_value,device,mean_age\n";
    for (const auto& p : points)
      for (Eigen::Index i = 0; i < p.mean_device_age.size(); ++i)
        ages << csv_field(p.policy) << ',' << csv_field(p.sweep_value) << ',' << i << ','
             << format_double(p.mean_device_age[i]) << '\n';
  }
}

}  // namespace

ExperimentOutcome run_experiment(const ResolvedConfig& config, std::ostream* log) {
  const auto& spec = config.experiment;
  std::filesystem::create_directories(spec.output_dir);
  const auto metrics_path = spec.output_dir / "metrics.csv";

  ExperimentOutcome outcome;
  std::set<std::string> done;
  if (std::filesystem::exists(metrics_path)) {
    std::ifstream in(metrics_path);
    outcome.rows = read_metrics_csv(in);
    for (const auto& r : outcome.rows)
      if (r.experiment == spec.name) done.insert(point_key(r.policy, r.sweep_value, r.seed));
  }
  const bool fresh = !std::filesystem::exists(metrics_path) || std::filesystem::file_size(metrics_path) == 0;
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path.string());
  if (fresh) write_metrics_header(metrics);

  std::vector<PointTask> tasks;
  for (const auto& value : spec.sweep_values)
    for (auto seed : spec.seeds)
      for (auto policy : spec.policies) {
        if (done.count(point_key(to_string(policy), value, seed))) {
          ++outcome.skipped;
          continue;
        }
        tasks.push_back({policy, value, seed});
      }

  const auto jobs = static_cast<std::size_t>(spec.jobs);
  for (std::size_t start = 0; start < tasks.size(); start += jobs) {
    const std::size_t count = std::min(jobs, tasks.size() - start);
    std::vector<PointResult> results(count);
    std::vector<std::exception_ptr> errors(count);
    {
      std::vector<std::jthread> workers;
      for (std::size_t k = 0; k < count; ++k) {
        workers.emplace_back([&, k] {
          try {
            results[k] = compute_point(config, tasks[start + k]);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        });
      }
    }
    for (std::size_t k = 0; k < count; ++k) {
      if (errors[k]) {
        metrics.flush();
        std::rethrow_exception(errors[k]);
      }
      const auto& r = results[k];
      write_metrics_row(metrics, r.row);
      metrics.flush();
      if (!r.curve.empty()) {
        std::ofstream curve(spec.output_dir / ("curve_" + file_safe(r.row.sweep_value) + "_seed" +
                                               std::to_string(r.row.seed) + ".csv"));
        write_training_header(curve);
        for (const auto& row : r.curve) write_training_row(curve, row);
      }
      if (log)
        *log << spec.name << ' ' << r.row.policy << " value=" << r.row.sweep_value << " seed=" << r.row.seed
             << " esa=" << r.row.esa << '\n';
      outcome.rows.push_back(r.row);
      ++outcome.computed;
    }
  }

  std::vector<MetricsRow> mine;
  for (const auto& r : outcome.rows)
    if (r.experiment == spec.name) mine.push_back(r);
  write_plot_files(spec, mine);
  return outcome;
}

}  // namespace arisaoi
