#include "hvr/config.hpp"

#include "hvr/antithetic.hpp"
#include "hvr/control_variate.hpp"
#include "hvr/homog.hpp"
#include "hvr/sqs.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace hvr {

namespace {

using nlohmann::json;

// Reads keys of one JSON object, tracking defaults and unknown keys.
class Reader {
 public:
  Reader(const json& obj, std::string path, json& echo, std::vector<std::string>& defaulted)
      : obj_(obj), path_(std::move(path)), echo_(echo), defaulted_(defaulted) {
    if (!obj_.is_object()) fail("", "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigurationError(full(key) + ": " + msg);
  }

  std::string full(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  bool has(const std::string& key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    seen_.insert(key);
    if (!has(key)) {
      defaulted_.push_back(full(key));
      echo_[key] = fallback;
      return fallback;
    }
    return required<T>(key);
  }

  template <class T>
  T required(const std::string& key) {
    seen_.insert(key);
    if (!has(key)) fail(key, "is required");
    try {
      T v = obj_.at(key).get<T>();
      echo_[key] = v;
      return v;
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  void ignore(const std::string& key) { seen_.insert(key); }

  void reject_unknown() const {
    for (const auto& [key, value] : obj_.items())
      if (!seen_.count(key)) fail(key, "unknown key");
  }

 private:
  const json& obj_;
  std::string path_;
  json& echo_;
  std::vector<std::string>& defaulted_;
  std::set<std::string> seen_;
};

SmallMat parse_matrix(const json& j, int dim, const std::string& path) {
  try {
    if (j.is_number()) return scaled_identity(dim, j.get<double>());
    SmallMat m = matrix_from_json(j);
    if (m.rows() != dim) throw ConfigurationError("size");
    return m;
  } catch (const std::exception&) {
    throw ConfigurationError(path + ": must be a number or a " + std::to_string(dim) + "x" + std::to_string(dim) +
                             " matrix");
  }
}

UnitCell parse_cell(const json& j, int dim, const std::string& path) {
  if (!j.is_object()) return UnitCell::constant(parse_matrix(j, dim, path), dim);
  UnitCell c;
  c.dim = dim;
  if (!j.contains("subgrid") || !j.at("subgrid").is_number_integer() || j.at("subgrid").get<int>() < 1)
    throw ConfigurationError(path + ".subgrid: must be a positive integer");
  c.subgrid = j.at("subgrid").get<int>();
  if (!j.contains("values") || !j.at("values").is_array())
    throw ConfigurationError(path + ".values: must be an array");
  const std::size_t expected = dim == 2 ? static_cast<std::size_t>(c.subgrid * c.subgrid)
                                        : static_cast<std::size_t>(c.subgrid);
  if (j.at("values").size() != expected)
    throw ConfigurationError(path + ".values: expected " + std::to_string(expected) + " entries");
  for (std::size_t i = 0; i < expected; ++i)
    c.values.push_back(parse_matrix(j.at("values")[i], dim, path + ".values[" + std::to_string(i) + "]"));
  return c;
}

FieldSpec parse_law(const json& j, int dim, json& echo, std::vector<std::string>& defaulted) {
  Reader in(j, "law", echo, defaulted);
  const auto type = in.required<std::string>("type");
  FieldSpec spec;
  spec.dim = dim;
  if (type == "two_state") {
    TwoStateLaw law;
    law.alpha = in.required<double>("alpha");
    law.beta = in.required<double>("beta");
    law.p = in.get<double>("p", 0.5);
    if (!(law.alpha > 0.0)) in.fail("alpha", "must be > 0");
    if (!(law.beta > 0.0)) in.fail("beta", "must be > 0");
    if (!(law.p >= 0.0 && law.p <= 1.0)) in.fail("p", "must lie in [0, 1]");
    spec.law = law;
    spec.isotropic = true;
  } else if (type == "perturbation") {
    PerturbationSpec law;
    if (!in.has("C0")) in.fail("C0", "is required");
    if (!in.has("C1")) in.fail("C1", "is required");
    law.c0 = parse_matrix(in.raw("C0"), dim, "law.C0");
    law.c1 = parse_cell(in.raw("C1"), dim, "law.C1");
    echo["C0"] = matrix_to_json(law.c0);
    echo["C1"] = {{"subgrid", law.c1.subgrid}, {"values", unit_cell_to_json(law.c1).at("values")}};
    law.eta = in.get<double>("eta", 1.0);
    const auto x_law = in.required<std::string>("x_law");
    if (x_law == "bernoulli01") {
      law.x_law = XLaw::bernoulli01;
      law.eta_b = in.get<double>("eta_B", 0.5);
      if (!(law.eta_b >= 0.0 && law.eta_b <= 1.0)) in.fail("eta_B", "must lie in [0, 1]");
    } else if (x_law == "pm1") {
      law.x_law = XLaw::pm1;
      in.ignore("eta_B");
      if (in.has("eta_B")) in.fail("eta_B", "only applies to x_law bernoulli01");
    } else {
      in.fail("x_law", "must be bernoulli01 or pm1");
    }
    spec.law = law;
    const bool c0_iso = dim == 1 || (law.c0(0, 1) == 0.0 && law.c0(1, 0) == 0.0 && law.c0(0, 0) == law.c0(1, 1));
    spec.isotropic = c0_iso && law.c1.is_isotropic();
  } else {
    in.fail("type", "must be two_state or perturbation");
  }
  in.reject_unknown();
  try {
    validate(spec);
  } catch (const ConfigurationError& e) {
    throw ConfigurationError(std::string("law: ") + e.what());
  }
  return spec;
}

const std::set<std::string> kMethods = {"mc", "antithetic", "cv1", "cv2", "sqs1", "sqs2", "oracle"};

std::string join(const std::filesystem::path& dir, const std::string& file) { return (dir / file).string(); }

}  // namespace

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  json echo = json::object();
  std::vector<std::string> defaulted;
  Reader in(j, "", echo, defaulted);

  const int version = in.required<int>("schema_version");
  if (version != kConfigSchemaVersion)
    in.fail("schema_version", "unsupported version " + std::to_string(version));
  c.method = in.required<std::string>("method");
  if (!kMethods.count(c.method)) in.fail("method", "must be one of mc, antithetic, cv1, cv2, sqs1, sqs2, oracle");

  // Keys marked as defaulted in an echoed config stay marked.
  std::vector<std::string> inherited;
  if (in.has("defaulted")) {
    try {
      inherited = in.raw("defaulted").get<std::vector<std::string>>();
    } catch (const json::exception&) {
      in.fail("defaulted", "must be a list of key paths");
    }
  }
  in.ignore("defaulted");

  const int dim = in.get<int>("dim", 2);
  if (dim != 1 && dim != 2) in.fail("dim", "must be 1 or 2");
  c.output = in.get<std::string>("output", "out");

  if (c.method != "oracle") {
    c.N = in.required<int>("N");
    if (c.N < 1) in.fail("N", "must be >= 1");
    c.r = in.get<int>("r", 8);
    if (c.r < 1) in.fail("r", "must be >= 1");
    const auto M = in.required<std::int64_t>("M");
    if (M < 2) in.fail("M", "must be >= 2");
    c.M = static_cast<std::size_t>(M);
    c.master_seed = in.get<std::uint64_t>("master_seed", 1);
    c.tol = in.get<double>("tol", 1e-10);
    if (!(c.tol > 0.0 && c.tol < 1.0)) in.fail("tol", "must lie in (0, 1)");
    if (!in.has("law")) in.fail("law", "is required");
    json law_echo = json::object();
    c.field = parse_law(in.raw("law"), dim, law_echo, defaulted);
    echo["law"] = law_echo;
    if (const auto* p = std::get_if<PerturbationSpec>(&c.field.law))
      if (c.r % p->c1.subgrid != 0) in.fail("r", "must be a multiple of law.C1.subgrid");

    const bool cv = c.method == "cv1" || c.method == "cv2";
    const bool sqs = c.method == "sqs1" || c.method == "sqs2";
    const auto* pert = std::get_if<PerturbationSpec>(&c.field.law);
    if (cv && (!pert || pert->x_law != XLaw::bernoulli01))
      in.fail("law", "control variates need a perturbation law with x_law bernoulli01");
    if (sqs && (!pert || pert->x_law != XLaw::pm1))
      in.fail("law", "SQS sampling needs a perturbation law with x_law pm1");

    if (cv) {
      c.cutoff = in.get<int>("cutoff", -1);
      const auto pilot = in.get<std::int64_t>("pilot", 0);
      if (pilot < 0 || (pilot > 0 && (pilot < 2 || static_cast<std::size_t>(pilot) + 2 > c.M)))
        in.fail("pilot", "must be 0 or leave >= 2 samples on both sides");
      c.pilot = static_cast<std::size_t>(pilot);
      if (in.has("rho")) {
        try {
          const json& rj = in.raw("rho");
          c.rho = rj.is_number() ? std::vector<double>{rj.get<double>()} : rj.get<std::vector<double>>();
        } catch (const json::exception&) {
          in.fail("rho", "must be a number or a list of numbers");
        }
        echo["rho"] = *c.rho;
      } else {
        in.ignore("rho");
      }
    }
    if (sqs) {
      c.allow_odd = in.get<bool>("allow_odd", false);
      if (c.method == "sqs2") {
        const auto P = in.get<std::int64_t>("P", 2000);
        if (P < static_cast<std::int64_t>(c.M)) in.fail("P", "must be >= M");
        c.P = static_cast<std::size_t>(P);
        c.n_ref = in.get<int>("N_ref", 3 * c.N);
        if (c.n_ref < c.N) in.fail("N_ref", "must be >= N");
        if (in.has("sqs_tolerance")) {
          c.sqs_tolerance = in.required<double>("sqs_tolerance");
          if (!(*c.sqs_tolerance >= 0.0)) in.fail("sqs_tolerance", "must be >= 0");
        } else {
          in.ignore("sqs_tolerance");
        }
      }
    }
    if (cv || c.method == "sqs2") c.cache_dir = in.get<std::string>("cache_dir", "");
    c.baseline_report = in.get<std::string>("baseline_report", "");
  }
  in.reject_unknown();

  for (const auto& key : inherited)
    if (std::find(defaulted.begin(), defaulted.end(), key) == defaulted.end()) defaulted.push_back(key);
  std::sort(defaulted.begin(), defaulted.end());
  echo["defaulted"] = defaulted;
  c.echo = std::move(echo);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigurationError("config: " + std::string(e.what()));
  }
  return parse_config(j);
}

ExperimentResult run_experiment(const ExperimentConfig& c) {
  SolveOptions solver;
  solver.tol = c.tol;
  std::optional<EstimatorReport> baseline;
  if (!c.baseline_report.empty() && std::filesystem::exists(c.baseline_report)) {
    std::ifstream in(c.baseline_report);
    baseline = report_from_json(json::parse(in));
  }
  if (c.method == "mc") {
    auto [report, table] = run_mc(c.field, c.N, c.r, c.M, c.master_seed, solver);
    return {report, table};
  }
  if (c.method == "antithetic") {
    auto [report, table] = run_antithetic(c.field, c.N, c.r, c.M, c.master_seed, solver);
    return {report, table};
  }
  if (c.method == "cv1" || c.method == "cv2") {
    CvOptions o;
    o.order = c.method == "cv1" ? 1 : 2;
    o.cutoff = c.cutoff;
    o.fixed_rho = c.rho;
    o.pilot = c.pilot;
    if (!c.cache_dir.empty()) o.cache_path = join(c.cache_dir, "defect_table.json");
    o.solver = solver;
    auto [report, table] = run_cv(c.field, c.N, c.r, c.M, c.master_seed, o);
    return {report, table};
  }
  if (c.method == "sqs1" || c.method == "sqs2") {
    SqsOptions o;
    o.order = c.method == "sqs1" ? 1 : 2;
    o.selection.pool = c.P;
    o.selection.tolerance = c.sqs_tolerance;
    o.selection.allow_odd = c.allow_odd;
    o.n_ref = c.n_ref;
    if (!c.cache_dir.empty()) o.cache_path = join(c.cache_dir, "sqs_table.json");
    o.baseline = baseline;
    o.solver = solver;
    auto [report, table] = run_sqs(c.field, c.N, c.r, c.M, c.master_seed, o);
    return {report, table};
  }
  throw ConfigurationError("method: " + c.method + " is not an estimator");
}

json report_document(const ExperimentConfig& config, const EstimatorReport& report) {
  json j = report_to_json(report);
  j["config"] = config.echo;
  return j;
}

std::vector<OracleCheck> run_oracle_suite() {
  std::vector<OracleCheck> checks;
  auto record = [&](std::string name, bool ok, std::string detail) {
    checks.push_back({std::move(name), ok, std::move(detail)});
  };

  {
    // 1D: the discrete problem reproduces the harmonic mean of the cells.
    double worst = 0.0;
    for (std::uint64_t m = 0; m < 20; ++m) {
      Stream s = Stream::split(7, m);
      std::vector<double> cells(8);
      for (auto& c : cells) c = s.uniform() < 0.5 ? 3.0 : 20.0;
      const double a = homogenized_matrix(field_from_scalars(1, 8, cells), 4).value(0, 0);
      worst = std::max(worst, std::abs(a - harmonic_mean_1d(cells)));
    }
    std::ostringstream d;
    d << "max |A - harmonic| = " << worst;
    record("harmonic_mean_1d", worst <= 1e-8, d.str());
  }
  {
    // Laminate varying along x: harmonic mean across layers, arithmetic along them.
    const std::vector<double> cells = {1.0, 4.0, 1.0, 4.0};
    const SmallMat a = homogenized_matrix(field_from_scalars(2, 2, cells), 16).value;
    SmallMat expected = SmallMat::Zero(2, 2);
    expected(0, 0) = 1.6;
    expected(1, 1) = 2.5;
    const double err = max_abs_diff(a, expected);
    std::ostringstream d;
    d << "max entry error = " << err;
    record("laminate_2d", err <= 1e-4, d.str());
  }
  {
    double worst = 0.0;
    for (std::uint64_t m = 0; m < 10; ++m) {
      Stream s = Stream::split(11, m);
      std::vector<double> cells(16);
      for (auto& c : cells) c = s.uniform() < 0.5 ? 3.0 : 20.0;
      const FieldRealization f = field_from_scalars(2, 4, cells);
      const SmallMat a = homogenized_matrix(f, 4).value;
      const SmallMat lo = a - reuss_bound(f).value;
      const SmallMat hi = voigt_bound(f).value - a;
      worst = std::min({worst, min_eigenvalue(0.5 * (lo + lo.transpose())), min_eigenvalue(0.5 * (hi + hi.transpose()))});
    }
    std::ostringstream d;
    d << "min eigenvalue slack = " << worst;
    record("voigt_reuss_order", worst >= -1e-8, d.str());
  }
  return checks;
}

}  // namespace hvr
