#include "commsim/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "commsim/error.hpp"
#include "commsim/parallel.hpp"

namespace commsim {

using nlohmann::json;

namespace {

std::string type_name(const json& node) { return node.type_name(); }

/// Walks one JSON object, remembering which keys were consumed so leftovers
/// can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ConfigError(where(), "expected an object, got " + type_name(node_));
    }
  }

  std::string where() const { return path_.empty() ? "/" : path_; }
  std::string child(const std::string& key) const { return path_ + "/" + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!node_.contains(key)) throw ConfigError(child(key), "required field is missing");
    return node_.at(key);
  }

  std::size_t size(const std::string& key, std::size_t fallback) {
    return has(key) ? as_size(node_.at(key), child(key)) : fallback;
  }
  double number(const std::string& key, double fallback) {
    return has(key) ? as_number(node_.at(key), child(key)) : fallback;
  }
  std::optional<double> optional_number(const std::string& key) {
    if (!has(key) || node_.at(key).is_null()) return std::nullopt;
    return as_number(node_.at(key), child(key));
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const json& v = node_.at(key);
    if (!v.is_boolean()) throw ConfigError(child(key), "expected a boolean, got " + type_name(v));
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& fallback) {
    return has(key) ? as_string(node_.at(key), child(key)) : fallback;
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(child(item.key()), "unknown key");
    }
  }

  static std::size_t as_size(const json& v, const std::string& path) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() &&
                                   v.get<std::int64_t>() < 0)) {
      throw ConfigError(path, "expected a non-negative integer, got " + v.dump());
    }
    return v.get<std::size_t>();
  }
  static double as_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number, got " + type_name(v));
    return v.get<double>();
  }
  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path, "expected a string, got " + type_name(v));
    return v.get<std::string>();
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum pick(const std::string& value, const std::vector<std::pair<std::string, Enum>>& options,
          const std::string& path) {
  std::string known;
  for (const auto& [name, e] : options) {
    if (name == value) return e;
    known += (known.empty() ? "" : ", ") + name;
  }
  throw ConfigError(path, "unknown value '" + value + "' (expected one of: " + known + ")");
}

const std::vector<std::pair<std::string, CompressorKind>> kCompressorKinds = {
    {"identity", CompressorKind::Identity}, {"rand_k", CompressorKind::RandK},
    {"same_rand_k", CompressorKind::SameRandK}, {"perm_k", CompressorKind::PermK},
    {"top_k", CompressorKind::TopK}, {"natural", CompressorKind::Natural},
    {"compose", CompressorKind::Compose}};

const std::vector<std::pair<std::string, Algorithm>> kAlgorithms = {
    {"gd", Algorithm::GD}, {"marina", Algorithm::Marina}, {"marina_p", Algorithm::MarinaP},
    {"m3", Algorithm::M3}, {"ef21p", Algorithm::EF21P}};

const std::vector<std::pair<std::string, ProblemFamily>> kFamilies = {
    {"quadratic", ProblemFamily::Quadratic},
    {"matfac", ProblemFamily::MatrixFactorization},
    {"chain", ProblemFamily::Chain},
    {"file", ProblemFamily::File}};

ProblemSpec parse_problem(const json& node, const std::string& path) {
  ObjectReader r(node, path);
  ProblemSpec spec;
  spec.family = pick(r.string("family", "quadratic"), kFamilies, r.child("family"));
  if (spec.family != ProblemFamily::File) spec.n = r.size("n", spec.n);
  spec.seed = r.size("seed", spec.seed);
  if (spec.n < 1) throw ConfigError(r.child("n"), "need at least one worker");
  switch (spec.family) {
    case ProblemFamily::Quadratic: {
      spec.d = r.size("d", spec.d);
      spec.base = pick(r.string("base", "tridiagonal"),
                       std::vector<std::pair<std::string, QuadraticBase>>{
                           {"tridiagonal", QuadraticBase::Tridiagonal},
                           {"identity", QuadraticBase::Identity}},
                       r.child("base"));
      spec.v = r.number("v", spec.v);
      spec.sigma = r.number("sigma", spec.sigma);
      spec.v0 = r.optional_number("v0");
      if (spec.d < 2) throw ConfigError(r.child("d"), "quadratics need d >= 2");
      if (spec.sigma < 0.0) throw ConfigError(r.child("sigma"), "sigma must be >= 0");
      if (spec.v0 && !(*spec.v0 > 0.0)) throw ConfigError(r.child("v0"), "v0 must be > 0");
      spec.init_scale = r.number("init_scale", 0.0);
      break;
    }
    case ProblemFamily::MatrixFactorization: {
      spec.d1 = r.size("d1", spec.d1);
      spec.d2 = r.size("d2", spec.d2);
      spec.samples = r.size("samples", spec.samples);
      spec.lambda = r.number("lambda", spec.lambda);
      if (spec.d1 < 1 || spec.d2 < 1) throw ConfigError(r.where(), "d1 and d2 must be >= 1");
      if (spec.samples < 1 || spec.samples % spec.n != 0) {
        throw ConfigError(r.child("samples"), "samples must be a positive multiple of n");
      }
      if (spec.lambda < 0.0) throw ConfigError(r.child("lambda"), "lambda must be >= 0");
      spec.d = 2 * spec.d1 * spec.d2;
      spec.init_scale = r.number("init_scale", 0.1);
      break;
    }
    case ProblemFamily::Chain: {
      spec.d = r.size("T", 50);
      spec.chain_lambda = r.number("lambda", spec.chain_lambda);
      spec.chain_L = r.number("L", spec.chain_L);
      if (spec.d < 1) throw ConfigError(r.child("T"), "T must be >= 1");
      if (!(spec.chain_lambda > 0.0)) throw ConfigError(r.child("lambda"), "lambda must be > 0");
      if (!(spec.chain_L > 0.0)) throw ConfigError(r.child("L"), "L must be > 0");
      spec.init_scale = r.number("init_scale", 0.0);
      break;
    }
    case ProblemFamily::File: {
      spec.path = ObjectReader::as_string(r.at("path"), r.child("path"));
      try {
        const QuadraticEnsemble ens = load_quadratic(spec.path);
        spec.n = ens.workers();
        spec.d = ens.dim();
      } catch (const ConfigError& e) {
        throw ConfigError(r.child("path"), e.what());
      }
      spec.init_scale = r.number("init_scale", 0.0);
      break;
    }
  }
  if (spec.init_scale < 0.0) throw ConfigError(r.child("init_scale"), "must be >= 0");
  r.finish();
  return spec;
}

void parse_params(const json& node, const std::string& path, MethodConfig& m) {
  if (node.is_string()) {
    if (node.get<std::string>() != "theory") {
      throw ConfigError(path, "expected \"theory\" or an object of explicit parameters");
    }
    return;
  }
  ObjectReader r(node, path);
  m.gamma = r.optional_number("gamma");
  m.p = r.optional_number("p");
  m.p_P = r.optional_number("p_P");
  m.p_D = r.optional_number("p_D");
  m.beta = r.optional_number("beta");
  r.finish();
}

MethodConfig parse_method(const json& node, const std::string& path) {
  ObjectReader r(node, path);
  MethodConfig m;
  m.algorithm = pick(ObjectReader::as_string(r.at("algorithm"), r.child("algorithm")),
                     kAlgorithms, r.child("algorithm"));
  if (r.has("params")) parse_params(r.at("params"), r.child("params"), m);
  m.gamma_multiplier = r.number("gamma_multiplier", 1.0);
  if (!(m.gamma_multiplier > 0.0)) {
    throw ConfigError(r.child("gamma_multiplier"), "must be > 0");
  }
  if (r.has("primal")) m.primal = parse_compressor(r.at("primal"), r.child("primal"));
  if (r.has("dual")) m.dual = parse_compressor(r.at("dual"), r.child("dual"));
  m.ef21_mode = pick(r.string("ef21_mode", "downlink"),
                     std::vector<std::pair<std::string, Ef21Mode>>{
                         {"downlink", Ef21Mode::DownlinkOnly},
                         {"bidirectional", Ef21Mode::Bidirectional}},
                     r.child("ef21_mode"));
  m.lean = r.boolean("lean", false);
  m.m3_rule = pick(r.string("m3_rule", "general"),
                   std::vector<std::pair<std::string, M3Rule>>{{"general", M3Rule::General},
                                                               {"scaling", M3Rule::Scaling}},
                   r.child("m3_rule"));
  m.mu = r.optional_number("mu");
  if (m.mu && !(*m.mu > 0.0)) throw ConfigError(r.child("mu"), "mu must be > 0");
  m.name = r.string("name", "");
  if (m.name.empty()) {
    m.name = to_string(m.algorithm);
    if (m.primal) m.name += "_" + to_string(m.primal->kind);
    if (m.dual) m.name += "_" + to_string(m.dual->kind);
  }
  for (char c : m.name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) {
      throw ConfigError(r.child("name"), "names may only use [A-Za-z0-9_.-]");
    }
  }
  r.finish();
  return m;
}

// Checks the method against a problem shape without computing constants.
void check_method(const MethodConfig& m, std::size_t d, std::size_t n, const std::string& path) {
  AlgoConfig cfg;
  cfg.gamma = 1.0;
  cfg.p = m.p.value_or(1.0);
  cfg.p_P = m.p_P.value_or(1.0);
  cfg.p_D = m.p_D.value_or(1.0);
  cfg.beta = m.beta.value_or(1.0);
  cfg.ef21_mode = m.ef21_mode;
  const Algorithm a = m.algorithm;
  const bool needs_primal = a == Algorithm::MarinaP || a == Algorithm::M3 || a == Algorithm::EF21P;
  const bool needs_dual = a == Algorithm::Marina || a == Algorithm::M3 ||
                          (a == Algorithm::EF21P && m.ef21_mode == Ef21Mode::Bidirectional);
  if (needs_primal && !m.primal) throw ConfigError(path + "/primal", "required by " + to_string(a));
  if (needs_dual && !m.dual) throw ConfigError(path + "/dual", "required by " + to_string(a));
  try {
    if (m.primal) cfg.primal = resolve(*m.primal, d, n);
    if (m.dual) cfg.dual = resolve(*m.dual, d, n);
    cfg.validate(m.algorithm, d, n);
  } catch (const UnsupportedShapeError& e) {
    throw UnsupportedShapeError(path + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  if (m.gamma && !(*m.gamma > 0.0)) throw ConfigError(path + "/params/gamma", "must be > 0");
}

std::vector<int> default_exponents() {
  std::vector<int> e;
  for (int i = -6; i <= 6; ++i) e.push_back(i);
  return e;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::filesystem::path output_dir(const ExperimentConfig& config) {
  std::filesystem::path dir(config.output);
  std::filesystem::create_directories(dir);
  return dir;
}

Exec current_exec() { return omp_get_max_threads() > 1 ? Exec::Parallel : Exec::Serial; }

}  // namespace

CompressorConfig parse_compressor(const json& node, const std::string& path) {
  if (node.is_string()) {
    CompressorConfig c;
    c.kind = pick(node.get<std::string>(), kCompressorKinds, path);
    if (c.kind == CompressorKind::Compose) {
      throw ConfigError(path, "compose needs an object with outer and inner");
    }
    return c;
  }
  ObjectReader r(node, path);
  CompressorConfig c;
  c.kind = pick(ObjectReader::as_string(r.at("kind"), r.child("kind")), kCompressorKinds,
                r.child("kind"));
  switch (c.kind) {
    case CompressorKind::RandK:
    case CompressorKind::SameRandK:
    case CompressorKind::TopK:
      c.k = r.size("k", 0);
      break;
    case CompressorKind::Compose:
      c.outer = std::make_shared<CompressorConfig>(parse_compressor(r.at("outer"), r.child("outer")));
      c.inner = std::make_shared<CompressorConfig>(parse_compressor(r.at("inner"), r.child("inner")));
      break;
    default:
      break;
  }
  r.finish();
  return c;
}

CompressorSpec resolve(const CompressorConfig& config, std::size_t d, std::size_t n) {
  const std::size_t k = config.k != 0 ? config.k : std::max<std::size_t>(1, d / n);
  switch (config.kind) {
    case CompressorKind::Identity: return CompressorSpec::identity(d);
    case CompressorKind::RandK: return CompressorSpec::rand_k(d, k);
    case CompressorKind::SameRandK: return CompressorSpec::same_rand_k(d, k);
    case CompressorKind::PermK: return CompressorSpec::perm_k(d, n);
    case CompressorKind::TopK: return CompressorSpec::top_k(d, k);
    case CompressorKind::Natural: return CompressorSpec::natural(d);
    case CompressorKind::Compose:
      return CompressorSpec::compose(resolve(*config.outer, d, n), resolve(*config.inner, d, n));
  }
  throw ParameterError("unknown compressor kind");
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("malformed JSON: ") + e.what());
  }
  ObjectReader r(root, "");
  ExperimentConfig config;
  config.label = r.string("label", config.label);
  config.problem = parse_problem(r.at("problem"), "/problem");
  config.method = parse_method(r.at("method"), "/method");
  if (r.has("stop")) {
    ObjectReader s(r.at("stop"), "/stop");
    config.stop.eps = s.optional_number("eps");
    config.stop.max_iters = s.size("max_iters", config.stop.max_iters);
    if (config.stop.eps && !(*config.stop.eps > 0.0)) {
      throw ConfigError("/stop/eps", "eps must be > 0");
    }
    s.finish();
  }
  config.repeats = r.size("repeats", config.repeats);
  if (config.repeats < 1) throw ConfigError("/repeats", "repeats must be >= 1");
  config.seed = r.size("seed", config.seed);
  config.stride = r.size("stride", config.stride);
  if (config.stride < 1) throw ConfigError("/stride", "stride must be >= 1");
  if (r.has("cost")) {
    ObjectReader c(r.at("cost"), "/cost");
    config.cost.unit = pick(c.string("unit", "coordinates"),
                            std::vector<std::pair<std::string, CostUnit>>{
                                {"coordinates", CostUnit::Coordinates}, {"bits", CostUnit::Bits}},
                            "/cost/unit");
    config.cost.natural_weight = c.number("natural_weight", config.cost.natural_weight);
    config.cost.full_float_bits = c.number("full_float_bits", config.cost.full_float_bits);
    c.finish();
    try {
      config.cost.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("/cost", e.what());
    }
  }
  config.output = r.string("output", config.output);
  if (config.output.empty()) throw ConfigError("/output", "output path is empty");
  if (r.has("sweep")) {
    ObjectReader s(r.at("sweep"), "/sweep");
    if (s.has("n")) {
      const json& arr = s.at("n");
      if (!arr.is_array()) throw ConfigError("/sweep/n", "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::size_t n = ObjectReader::as_size(arr[i], "/sweep/n/" + std::to_string(i));
        if (n < 1) throw ConfigError("/sweep/n/" + std::to_string(i), "n must be >= 1");
        config.sweep.n.push_back(n);
      }
    }
    if (s.has("gamma_exponents")) {
      const json& arr = s.at("gamma_exponents");
      if (!arr.is_array()) throw ConfigError("/sweep/gamma_exponents", "expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "/sweep/gamma_exponents/" + std::to_string(i);
        if (!arr[i].is_number_integer()) throw ConfigError(p, "expected an integer");
        const auto e = arr[i].get<std::int64_t>();
        if (e < -60 || e > 60) throw ConfigError(p, "exponent out of range [-60, 60]");
        config.sweep.gamma_exponents.push_back(static_cast<int>(e));
      }
    }
    if (s.has("methods")) {
      const json& arr = s.at("methods");
      if (!arr.is_array()) throw ConfigError("/sweep/methods", "expected an array");
      std::set<std::string> names;
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "/sweep/methods/" + std::to_string(i);
        config.sweep.methods.push_back(parse_method(arr[i], p));
        if (!names.insert(config.sweep.methods.back().name).second) {
          throw ConfigError(p + "/name", "duplicate method name '" +
                                             config.sweep.methods.back().name + "'");
        }
      }
    }
    s.finish();
  }
  r.finish();

  if (config.problem.family == ProblemFamily::File && !config.sweep.n.empty()) {
    throw ConfigError("/sweep/n", "a problem loaded from a file has a fixed n");
  }
  std::vector<std::size_t> ns = config.sweep.n;
  ns.push_back(config.problem.n);
  for (std::size_t n : ns) {
    if (config.problem.family == ProblemFamily::MatrixFactorization &&
        config.problem.samples % n != 0) {
      throw ConfigError("/problem/samples", "samples must be a multiple of every n (" +
                                                std::to_string(n) + ")");
    }
    check_method(config.method, config.problem.d, n, "/method");
    for (std::size_t i = 0; i < config.sweep.methods.size(); ++i) {
      check_method(config.sweep.methods[i], config.problem.d, n,
                   "/sweep/methods/" + std::to_string(i));
    }
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/", "cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

json to_json(const CompressorConfig& config) {
  json j;
  j["kind"] = to_string(config.kind);
  if (config.k != 0) j["k"] = config.k;
  if (config.outer) j["outer"] = to_json(*config.outer);
  if (config.inner) j["inner"] = to_json(*config.inner);
  return j;
}

namespace {

json method_json(const MethodConfig& m) {
  json j;
  j["name"] = m.name;
  j["algorithm"] = to_string(m.algorithm);
  json params = json::object();
  if (m.gamma) params["gamma"] = *m.gamma;
  if (m.p) params["p"] = *m.p;
  if (m.p_P) params["p_P"] = *m.p_P;
  if (m.p_D) params["p_D"] = *m.p_D;
  if (m.beta) params["beta"] = *m.beta;
  j["params"] = params.empty() ? json("theory") : params;
  j["gamma_multiplier"] = m.gamma_multiplier;
  if (m.primal) j["primal"] = to_json(*m.primal);
  if (m.dual) j["dual"] = to_json(*m.dual);
  j["ef21_mode"] = m.ef21_mode == Ef21Mode::DownlinkOnly ? "downlink" : "bidirectional";
  j["lean"] = m.lean;
  j["m3_rule"] = m.m3_rule == M3Rule::General ? "general" : "scaling";
  if (m.mu) j["mu"] = *m.mu;
  return j;
}

}  // namespace

json to_json(const ExperimentConfig& config) {
  const ProblemSpec& p = config.problem;
  json problem;
  problem["family"] = to_string(p.family);
  problem["n"] = p.n;
  problem["seed"] = p.seed;
  problem["init_scale"] = p.init_scale;
  switch (p.family) {
    case ProblemFamily::Quadratic:
      problem["d"] = p.d;
      problem["base"] = p.base == QuadraticBase::Tridiagonal ? "tridiagonal" : "identity";
      problem["v"] = p.v;
      problem["sigma"] = p.sigma;
      if (p.v0) problem["v0"] = *p.v0;
      break;
    case ProblemFamily::MatrixFactorization:
      problem["d1"] = p.d1;
      problem["d2"] = p.d2;
      problem["samples"] = p.samples;
      problem["lambda"] = p.lambda;
      break;
    case ProblemFamily::Chain:
      problem["T"] = p.d;
      problem["lambda"] = p.chain_lambda;
      problem["L"] = p.chain_L;
      break;
    case ProblemFamily::File:
      problem.erase("n");
      problem["path"] = p.path;
      break;
  }
  json j;
  j["label"] = config.label;
  j["problem"] = problem;
  j["method"] = method_json(config.method);
  json stop;
  if (config.stop.eps) stop["eps"] = *config.stop.eps;
  stop["max_iters"] = config.stop.max_iters;
  j["stop"] = stop;
  j["repeats"] = config.repeats;
  j["seed"] = config.seed;
  j["stride"] = config.stride;
  j["cost"] = {{"unit", to_string(config.cost.unit)},
               {"natural_weight", config.cost.natural_weight},
               {"full_float_bits", config.cost.full_float_bits}};
  j["output"] = config.output;
  if (!config.sweep.n.empty() || !config.sweep.gamma_exponents.empty() ||
      !config.sweep.methods.empty()) {
    json sweep;
    if (!config.sweep.n.empty()) sweep["n"] = config.sweep.n;
    if (!config.sweep.gamma_exponents.empty()) {
      sweep["gamma_exponents"] = config.sweep.gamma_exponents;
    }
    if (!config.sweep.methods.empty()) {
      sweep["methods"] = json::array();
      for (const auto& m : config.sweep.methods) sweep["methods"].push_back(method_json(m));
    }
    j["sweep"] = sweep;
  }
  return j;
}

namespace {

json matrix_json(const SymmetricMatrix& m) {
  return json{{"bandwidth", m.bandwidth()}, {"diagonals", m.diagonals()}};
}

SymmetricMatrix matrix_from_json(const json& node, const std::string& path) {
  ObjectReader r(node, path);
  r.size("bandwidth", 0);
  const json& diags = r.at("diagonals");
  r.finish();
  std::vector<std::vector<double>> values;
  try {
    values = diags.get<std::vector<std::vector<double>>>();
  } catch (const json::exception&) {
    throw ConfigError(path + "/diagonals", "expected an array of number arrays");
  }
  try {
    return SymmetricMatrix::from_diagonals(values);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + "/diagonals", e.what());
  }
}

std::vector<double> numbers(const json& node, const std::string& path) {
  try {
    return node.get<std::vector<double>>();
  } catch (const json::exception&) {
    throw ConfigError(path, "expected an array of numbers");
  }
}

}  // namespace

json quadratic_to_json(const QuadraticEnsemble& ens) {
  json j;
  j["format"] = "commsim-quadratic";
  j["d"] = ens.dim();
  j["n"] = ens.workers();
  if (ens.is_scaled()) {
    j["base"] = matrix_json(ens.base());
    j["scales"] = ens.scales();
  } else {
    j["blocks"] = json::array();
    for (std::size_t i = 0; i < ens.workers(); ++i) j["blocks"].push_back(matrix_json(ens.matrix(i)));
  }
  j["b"] = json::array();
  for (Eigen::Index i = 0; i < ens.linear_terms().cols(); ++i) {
    const Vec col = ens.linear_terms().col(i);
    j["b"].push_back(std::vector<double>(col.data(), col.data() + col.size()));
  }
  const Vec& c = ens.offsets();
  j["c"] = std::vector<double>(c.data(), c.data() + c.size());
  return j;
}

QuadraticEnsemble quadratic_from_json(const json& node) {
  ObjectReader r(node, "");
  if (ObjectReader::as_string(r.at("format"), "/format") != "commsim-quadratic") {
    throw ConfigError("/format", "not a commsim-quadratic file");
  }
  const std::size_t d = r.size("d", 0);
  const std::size_t n = r.size("n", 0);
  if (d < 1 || n < 1) throw ConfigError("/", "d and n must be >= 1");
  const json& bj = r.at("b");
  if (!bj.is_array() || bj.size() != n) throw ConfigError("/b", "expected n arrays");
  Mat b(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = numbers(bj[i], "/b/" + std::to_string(i));
    if (col.size() != d) throw ConfigError("/b/" + std::to_string(i), "expected d numbers");
    for (std::size_t j = 0; j < d; ++j) {
      b(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = col[j];
    }
  }
  const auto cv = numbers(r.at("c"), "/c");
  if (cv.size() != n) throw ConfigError("/c", "expected n numbers");
  const Vec c = Eigen::Map<const Vec>(cv.data(), static_cast<Eigen::Index>(n));
  if (r.has("base")) {
    SymmetricMatrix base = matrix_from_json(r.at("base"), "/base");
    if (base.dim() != d) throw ConfigError("/base", "dimension does not match d");
    const auto scales = numbers(r.at("scales"), "/scales");
    if (scales.size() != n) throw ConfigError("/scales", "expected n numbers");
    r.finish();
    return QuadraticEnsemble::scaled(std::move(base), scales, b, c);
  }
  const json& blocks = r.at("blocks");
  r.finish();
  if (!blocks.is_array() || blocks.size() != n) throw ConfigError("/blocks", "expected n blocks");
  std::vector<SymmetricMatrix> mats;
  for (std::size_t i = 0; i < n; ++i) {
    mats.push_back(matrix_from_json(blocks[i], "/blocks/" + std::to_string(i)));
    if (mats.back().dim() != d) {
      throw ConfigError("/blocks/" + std::to_string(i), "dimension does not match d");
    }
  }
  return QuadraticEnsemble::dense(std::move(mats), b, c);
}

void save_quadratic(const QuadraticEnsemble& ens, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << quadratic_to_json(ens).dump() << '\n';
}

QuadraticEnsemble load_quadratic(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("/", "cannot open problem file '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("malformed JSON: ") + e.what());
  }
  return quadratic_from_json(root);
}

std::unique_ptr<Problem> build_problem(const ProblemSpec& spec) {
  Stream rng = make_stream(spec.seed, StreamRole::Problem, 0);
  switch (spec.family) {
    case ProblemFamily::Quadratic: {
      QuadraticGenerator gen;
      gen.n = spec.n;
      gen.d = spec.d;
      gen.v = spec.v;
      gen.sigma = spec.sigma;
      gen.v0 = spec.v0;
      gen.base = spec.base;
      return std::make_unique<QuadraticEnsemble>(generate_het_quadratic(gen, rng));
    }
    case ProblemFamily::MatrixFactorization:
      return std::make_unique<MatrixFactorizationProblem>(
          generate_matfac(spec.d1, spec.d2, spec.samples, spec.lambda, spec.n, rng));
    case ProblemFamily::Chain:
      return std::make_unique<ChainProblem>(spec.d, spec.chain_lambda, spec.chain_L, spec.n);
    case ProblemFamily::File:
      return std::make_unique<QuadraticEnsemble>(load_quadratic(spec.path));
  }
  throw ParameterError("unknown problem family");
}

Vec initial_point(const ProblemSpec& spec) {
  Vec x = Vec::Zero(static_cast<Eigen::Index>(spec.d));
  if (spec.init_scale == 0.0) return x;
  Stream rng = make_stream(spec.seed, StreamRole::Init, 0);
  std::normal_distribution<double> normal(0.0, spec.init_scale);
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = normal(rng);
  return x;
}

AlgoConfig resolve_method(const MethodConfig& method, const Problem& problem,
                          const ProblemConstants& c) {
  const std::size_t d = problem.dim();
  const std::size_t n = problem.workers();
  AlgoConfig cfg;
  cfg.ef21_mode = method.ef21_mode;
  cfg.lean = method.lean;
  if (method.primal) cfg.primal = resolve(*method.primal, d, n);
  if (method.dual) cfg.dual = resolve(*method.dual, d, n);

  auto omega_of = [](const std::optional<CompressorSpec>& spec, const char* role) {
    if (!spec || !spec->omega()) {
      throw ParameterError(std::string("theory parameters need an unbiased ") + role +
                           " compressor");
    }
    return *spec->omega();
  };

  double gamma = 0.0;
  switch (method.algorithm) {
    case Algorithm::GD:
    case Algorithm::EF21P:
      gamma = step_gd(c.L);
      break;
    case Algorithm::Marina: {
      const double omega = omega_of(cfg.dual, "dual");
      cfg.p = method.p.value_or(1.0 / (omega + 1.0));
      gamma = step_marina(c.L, c.L_hat, omega, cfg.p, n);
      break;
    }
    case Algorithm::MarinaP: {
      const double omega = omega_of(cfg.primal, "primal");
      const double theta = cfg.primal->theta(n).value_or(omega);
      cfg.p = method.p.value_or(1.0 / (omega + 1.0));
      gamma = method.mu ? step_marinap_pl(c.L, c.L_A, c.L_B, omega, theta, cfg.p, *method.mu)
                        : step_marinap_general(c.L, c.L_A, c.L_B, omega, theta, cfg.p);
      break;
    }
    case Algorithm::M3: {
      const double omega_P = omega_of(cfg.primal, "primal");
      const double omega_D = omega_of(cfg.dual, "dual");
      const double theta = cfg.primal->theta(n).value_or(omega_P);
      TheoryParams tp = method.m3_rule == M3Rule::Scaling
                            ? step_m3(c.L, c.L_A, c.L_B, c.L_max, n)
                            : m3_params_general(c.L, c.L_A, c.L_B, c.L_max, n, omega_P,
                                                omega_D, theta);
      M3Compression mc{omega_P, omega_D, theta, method.p_P.value_or(tp.p_P),
                       method.p_D.value_or(tp.p_D), method.beta.value_or(tp.beta)};
      cfg.p_P = mc.p_P;
      cfg.p_D = mc.p_D;
      cfg.beta = mc.beta;
      if (method.mu) {
        tp = step_m3_pl(c.L, c.L_A, c.L_B, c.L_max, n, mc, *method.mu);
      } else if (method.p_P || method.p_D || method.beta) {
        tp.gamma = step_m3_general(c.L, c.L_A, c.L_B, c.L_max, n, mc);
      }
      gamma = tp.gamma;
      break;
    }
  }
  cfg.gamma = method.gamma.value_or(gamma) * method.gamma_multiplier;
  cfg.validate(method.algorithm, d, n);
  return cfg;
}

std::vector<RunOutcome> run_repeats(const ExperimentConfig& config, const MethodConfig& method,
                                    const Problem& problem, const ProblemConstants& constants,
                                    Exec exec) {
  AlgoConfig cfg = resolve_method(method, problem, constants);
  cfg.exec = exec;
  RunOptions opts;
  opts.stop = config.stop;
  opts.stride = config.stride;
  opts.cost = config.cost;
  const Vec x0 = initial_point(config.problem);

  std::vector<RunOutcome> out(config.repeats);
  for_each_task(config.repeats, exec, [&](std::size_t r) {
    RunOutcome& o = out[r];
    o.seed = config.seed + r;
    try {
      RunResult res = run_experiment(method.algorithm, problem, cfg, x0, opts, o.seed);
      o.iterations = res.iterations;
      o.status = res.reached ? "reached" : "max_iters";
      if (config.stop.eps) o.to_target = coords_to_target(res.trace, *config.stop.eps);
      o.trace = std::move(res.trace);
    } catch (const DivergenceError& e) {
      o.status = "diverged";
      o.iterations = e.iteration();
    }
  });
  return out;
}

SweepAxis parse_axis(const std::string& name) {
  if (name == "n") return SweepAxis::N;
  if (name == "gamma" || name == "gamma_multiplier") return SweepAxis::Gamma;
  if (name == "algorithm") return SweepAxis::Algorithm;
  throw ConfigError("--axis", "unknown sweep axis '" + name + "' (expected n, gamma, algorithm)");
}

namespace {

struct Instance {
  std::unique_ptr<Problem> problem;
  ProblemConstants constants;
};

Instance make_instance(const ProblemSpec& spec) {
  Instance inst;
  inst.problem = build_problem(spec);
  Stream rng = make_stream(spec.seed, StreamRole::Estimator, 0);
  inst.constants = problem_constants(*inst.problem, initial_point(spec), rng);
  return inst;
}

SummaryRow summary_row(const std::string& label, const MethodConfig& method, std::size_t n,
                       double gamma, const RunOutcome& o) {
  SummaryRow row;
  row.label = label;
  row.algorithm = to_string(method.algorithm);
  row.n = n;
  row.seed = o.seed;
  row.gamma = gamma;
  row.iterations = o.iterations;
  row.status = o.status;
  row.to_target = o.to_target;
  return row;
}

std::vector<TraceRecord> mean_trace(const std::vector<RunOutcome>& runs) {
  std::vector<std::vector<TraceRecord>> traces;
  for (const auto& o : runs) {
    if (o.status != "diverged") traces.push_back(o.trace);
  }
  return traces.empty() ? std::vector<TraceRecord>{} : average_traces(traces);
}

}  // namespace

CommandReport cmd_run(const ExperimentConfig& config, std::ostream& log) {
  const Exec exec = current_exec();
  const Instance inst = make_instance(config.problem);
  const AlgoConfig cfg = resolve_method(config.method, *inst.problem, inst.constants);
  const std::vector<RunOutcome> runs =
      run_repeats(config, config.method, *inst.problem, inst.constants, exec);

  const auto dir = output_dir(config);
  CommandReport report;
  std::vector<SummaryRow> rows;
  for (const auto& o : runs) {
    rows.push_back(summary_row(config.label, config.method, config.problem.n, cfg.gamma, o));
    log << fmt::format("{} seed={} status={} iterations={}", config.label, o.seed, o.status,
                       o.iterations);
    if (o.to_target) log << fmt::format(" s2w={} w2s={}", o.to_target->s2w, o.to_target->w2s);
    log << '\n';
    if (o.status == "diverged") {
      report.ok = false;
      continue;
    }
    const auto path = dir / fmt::format("{}_seed{}.csv", config.label, o.seed);
    write_trace_csv(path.string(), o.trace);
    report.files.push_back(path.string());
  }
  const auto mean = mean_trace(runs);
  if (!mean.empty()) {
    const auto path = dir / fmt::format("{}_mean.csv", config.label);
    write_trace_csv(path.string(), mean);
    report.files.push_back(path.string());
  }
  const auto summary = dir / "summary.csv";
  write_summary_csv(summary.string(), rows);
  report.files.push_back(summary.string());
  return report;
}

CommandReport cmd_sweep(const ExperimentConfig& config, const std::vector<SweepAxis>& axes,
                        std::ostream& log) {
  auto uses = [&](SweepAxis a) { return std::find(axes.begin(), axes.end(), a) != axes.end(); };
  if (axes.empty()) throw ConfigError("--axis", "a sweep needs at least one axis");
  if (uses(SweepAxis::N) && config.sweep.n.empty()) {
    throw ConfigError("/sweep/n", "axis n needs a list of worker counts");
  }
  if (uses(SweepAxis::Algorithm) && config.sweep.methods.empty()) {
    throw ConfigError("/sweep/methods", "axis algorithm needs a list of methods");
  }
  const std::vector<std::size_t> ns =
      uses(SweepAxis::N) ? config.sweep.n : std::vector<std::size_t>{config.problem.n};
  const std::vector<MethodConfig> methods =
      uses(SweepAxis::Algorithm) ? config.sweep.methods : std::vector<MethodConfig>{config.method};
  std::vector<int> exps = {0};
  if (uses(SweepAxis::Gamma)) {
    exps = config.sweep.gamma_exponents.empty() ? default_exponents()
                                                : config.sweep.gamma_exponents;
    std::sort(exps.begin(), exps.end());
    exps.erase(std::unique(exps.begin(), exps.end()), exps.end());
  }

  std::vector<ExperimentConfig> per_n;
  std::vector<Instance> instances;
  for (std::size_t n : ns) {
    ExperimentConfig c = config;
    c.problem.n = n;
    instances.push_back(make_instance(c.problem));
    per_n.push_back(std::move(c));
  }

  struct Point {
    std::size_t ni = 0;
    std::size_t mi = 0;
    int exponent = 0;
    double gamma = 0.0;
    std::vector<RunOutcome> runs;
    std::vector<TraceRecord> mean;
    std::string status;
    std::optional<CostsToTarget> median;
  };
  std::vector<Point> points;
  for (std::size_t ni = 0; ni < ns.size(); ++ni) {
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      for (int e : exps) {
        Point pt;
        pt.ni = ni;
        pt.mi = mi;
        pt.exponent = e;
        points.push_back(std::move(pt));
      }
    }
  }

  const Exec exec = current_exec();
  for_each_task(points.size(), exec, [&](std::size_t k) {
    Point& pt = points[k];
    MethodConfig m = methods[pt.mi];
    m.gamma_multiplier *= std::ldexp(1.0, pt.exponent);
    const Instance& inst = instances[pt.ni];
    pt.gamma = resolve_method(m, *inst.problem, inst.constants).gamma;
    pt.runs = run_repeats(per_n[pt.ni], m, *inst.problem, inst.constants, Exec::Serial);
    pt.mean = mean_trace(pt.runs);
    std::vector<double> s2w, w2s, total;
    bool diverged = false;
    for (auto& o : pt.runs) {
      diverged = diverged || o.status == "diverged";
      if (o.to_target) {
        s2w.push_back(o.to_target->s2w);
        w2s.push_back(o.to_target->w2s);
        total.push_back(o.to_target->total);
      }
      o.trace.clear();
      o.trace.shrink_to_fit();
    }
    if (diverged) {
      pt.status = "diverged";
    } else if (total.size() == pt.runs.size()) {
      pt.status = "reached";
      pt.median = CostsToTarget{median(s2w), median(w2s), median(total), 0};
    } else {
      pt.status = "not_reached";
    }
  });

  const auto dir = output_dir(config);
  CommandReport report;
  std::ofstream grid(dir / "sweep.csv", std::ios::binary);
  grid << "method,algorithm,n,exponent,multiplier,gamma,status,reached_runs,runs,s2w,w2s,total,"
          "best\n";
  std::vector<SummaryRow> rows;
  for (std::size_t ni = 0; ni < ns.size(); ++ni) {
    for (std::size_t mi = 0; mi < methods.size(); ++mi) {
      const Point* best = nullptr;
      const Point* fallback = nullptr;
      for (const Point& pt : points) {
        if (pt.ni != ni || pt.mi != mi) continue;
        if (pt.median && (!best || pt.median->total < best->median->total)) best = &pt;
        if (!pt.mean.empty() && pt.status != "diverged" &&
            (!fallback || pt.mean.back().grad_norm_sq < fallback->mean.back().grad_norm_sq)) {
          fallback = &pt;
        }
      }
      const Point* chosen = best ? best : fallback;
      const MethodConfig& m = methods[mi];
      for (const Point& pt : points) {
        if (pt.ni != ni || pt.mi != mi) continue;
        std::size_t reached = 0;
        for (const auto& o : pt.runs) reached += o.to_target ? 1 : 0;
        grid << fmt::format("{},{},{},{},{},{},{},{},{},", m.name, to_string(m.algorithm), ns[ni],
                            pt.exponent, format_double(std::ldexp(1.0, pt.exponent)),
                            format_double(pt.gamma), pt.status, reached, pt.runs.size());
        if (pt.median) {
          grid << format_double(pt.median->s2w) << ',' << format_double(pt.median->w2s) << ','
               << format_double(pt.median->total);
        } else {
          grid << ",,";
        }
        grid << ',' << (&pt == chosen ? 1 : 0) << '\n';
        const std::string label = fmt::format("{}@2^{}", m.name, pt.exponent);
        for (const auto& o : pt.runs) rows.push_back(summary_row(label, m, ns[ni], pt.gamma, o));
      }
      if (!chosen) {
        log << fmt::format("{} n={}: every multiplier diverged\n", m.name, ns[ni]);
        report.ok = false;
        continue;
      }
      const auto path = dir / fmt::format("{}_n{}.csv", m.name, ns[ni]);
      write_trace_csv(path.string(), chosen->mean);
      report.files.push_back(path.string());
      log << fmt::format("{} n={}: best exponent {} ({}), gamma={}", m.name, ns[ni],
                         chosen->exponent, chosen->status, format_double(chosen->gamma));
      if (chosen->median) log << fmt::format(" median total={}", chosen->median->total);
      log << '\n';
    }
  }
  report.files.push_back((dir / "sweep.csv").string());
  const auto summary = dir / "summary.csv";
  write_summary_csv(summary.string(), rows);
  report.files.push_back(summary.string());
  return report;
}

CommandReport cmd_estimate(const std::string& text, std::ostream& out) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("/", std::string("malformed JSON: ") + e.what());
  }
  ObjectReader r(root, "");
  const CompressorConfig cc = parse_compressor(r.at("compressor"), "/compressor");
  const std::size_t d = r.size("d", 100);
  const std::size_t n = r.size("n", 10);
  const std::size_t samples = r.size("samples", 100000);
  const std::uint64_t seed = r.size("seed", 0);
  r.finish();
  if (d < 1 || n < 1) throw ConfigError("/", "d and n must be >= 1");
  if (samples < 10000) throw ConfigError("/samples", "need at least 10000 samples");
  CompressorSpec spec;
  try {
    spec = resolve(cc, d, n);
  } catch (const UnsupportedShapeError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError("/compressor", e.what());
  }

  Stream probe_rng = make_stream(seed, StreamRole::Init, 0);
  std::normal_distribution<double> normal;
  Vec x(static_cast<Eigen::Index>(d));
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = normal(probe_rng);

  const Exec exec = current_exec();
  Stream rng = make_stream(seed, StreamRole::Estimator, 0);
  out << "compressor: " << spec.describe() << "\n";
  out << fmt::format("d = {}, n = {}, samples = {}\n", d, n, samples);
  if (spec.omega()) {
    const double est = estimate_omega(spec, x, samples, rng, exec);
    out << fmt::format("omega: stated {} estimated {}\n", format_double(*spec.omega()),
                       format_double(est));
  } else if (spec.alpha()) {
    out << fmt::format("alpha: stated {}\n", format_double(*spec.alpha()));
  }
  if (!spec.biased()) {
    const double est = estimate_theta(spec, n, x, samples, rng, exec);
    const auto stated = spec.theta(n);
    out << fmt::format("theta: stated {} estimated {}\n",
                       stated ? format_double(*stated) : std::string("n/a"), format_double(est));
  }
  return CommandReport{};
}

std::string to_string(ProblemFamily family) {
  switch (family) {
    case ProblemFamily::Quadratic: return "quadratic";
    case ProblemFamily::MatrixFactorization: return "matfac";
    case ProblemFamily::Chain: return "chain";
    case ProblemFamily::File: return "file";
  }
  return "?";
}

}  // namespace commsim
