#include "heatctrl/config.hpp"

#include <cctype>
#include <climits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "heatctrl/common.hpp"

namespace heatctrl {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::optional<double> parse_double(const std::string& tok) {
  if (tok.empty()) return std::nullopt;
  const char* begin = tok.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + tok.size()) return std::nullopt;
  return v;
}

std::optional<long long> parse_int(const std::string& tok) {
  if (tok.empty()) return std::nullopt;
  const char* begin = tok.c_str();
  char* end = nullptr;
  const long long v = std::strtoll(begin, &end, 10);
  if (end != begin + tok.size()) return std::nullopt;
  return v;
}

std::optional<std::uint64_t> parse_u64(const std::string& tok) {
  if (tok.empty() || tok[0] == '-') return std::nullopt;
  const char* begin = tok.c_str();
  char* end = nullptr;
  const unsigned long long v = std::strtoull(begin, &end, 10);
  if (end != begin + tok.size()) return std::nullopt;
  return static_cast<std::uint64_t>(v);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// One key's parse handler: consumes the whitespace-split value tokens.
using Handler = std::function<void(const std::vector<std::string>&, int line,
                                   ProblemSpec&, std::vector<std::string>&)>;

void expect_arity(const std::vector<std::string>& toks, std::size_t n, int line,
                  const std::string& key, std::vector<std::string>& errors) {
  if (toks.size() != n) {
    errors.push_back("line " + std::to_string(line) + ": key '" + key + "' expects " +
                     std::to_string(n) + " value(s), got " + std::to_string(toks.size()));
  }
}

Handler double_key(double ProblemSpec::* field, const std::string& key) {
  return [field, key](const std::vector<std::string>& toks, int line, ProblemSpec& s,
                      std::vector<std::string>& errors) {
    expect_arity(toks, 1, line, key, errors);
    if (toks.size() != 1) return;
    const auto v = parse_double(toks[0]);
    if (!v) {
      errors.push_back("line " + std::to_string(line) + ": key '" + key +
                       "' expects a number, got '" + toks[0] + "'");
      return;
    }
    s.*field = *v;
  };
}

Handler int_key(int ProblemSpec::* field, const std::string& key) {
  return [field, key](const std::vector<std::string>& toks, int line, ProblemSpec& s,
                      std::vector<std::string>& errors) {
    expect_arity(toks, 1, line, key, errors);
    if (toks.size() != 1) return;
    const auto v = parse_int(toks[0]);
    if (!v || *v < INT_MIN || *v > INT_MAX) {
      errors.push_back("line " + std::to_string(line) + ": key '" + key +
                       "' expects an integer, got '" + toks[0] + "'");
      return;
    }
    s.*field = static_cast<int>(*v);
  };
}

Handler interval_key(double ProblemSpec::* lo, double ProblemSpec::* hi,
                     const std::string& key) {
  return [lo, hi, key](const std::vector<std::string>& toks, int line, ProblemSpec& s,
                       std::vector<std::string>& errors) {
    expect_arity(toks, 2, line, key, errors);
    if (toks.size() != 2) return;
    const auto a = parse_double(toks[0]);
    const auto b = parse_double(toks[1]);
    if (!a || !b) {
      errors.push_back("line " + std::to_string(line) + ": key '" + key +
                       "' expects two numbers");
      return;
    }
    s.*lo = *a;
    s.*hi = *b;
  };
}

void parse_nonlinearity(const std::vector<std::string>& toks, int line, ProblemSpec& s,
                        std::vector<std::string>& errors) {
  if (toks.empty()) {
    errors.push_back("line " + std::to_string(line) +
                     ": key 'nonlinearity' expects a selector (linear|tanh|table)");
    return;
  }
  NonlinearityChoice& nl = s.nonlinearity;
  if (toks[0] == "linear") {
    nl.kind = NonlinearityChoice::Kind::linear;
    expect_arity(toks, 2, line, "nonlinearity linear", errors);
    if (toks.size() == 2) {
      if (const auto v = parse_double(toks[1])) {
        nl.coefficient = *v;
      } else {
        errors.push_back("line " + std::to_string(line) +
                         ": 'nonlinearity linear' expects a numeric coefficient");
      }
    }
  } else if (toks[0] == "tanh") {
    nl.kind = NonlinearityChoice::Kind::tanh;
    expect_arity(toks, 2, line, "nonlinearity tanh", errors);
    if (toks.size() == 2) {
      if (const auto v = parse_double(toks[1])) {
        nl.scale = *v;
      } else {
        errors.push_back("line " + std::to_string(line) +
                         ": 'nonlinearity tanh' expects a numeric scale");
      }
    }
  } else if (toks[0] == "table") {
    nl.kind = NonlinearityChoice::Kind::table;
    nl.knots.clear();
    nl.values.clear();
    if (toks.size() < 3) {
      errors.push_back("line " + std::to_string(line) +
                       ": 'nonlinearity table' expects at least two knot:value pairs");
      return;
    }
    for (std::size_t k = 1; k < toks.size(); ++k) {
      const std::size_t colon = toks[k].find(':');
      const auto kv = colon == std::string::npos
                          ? std::nullopt
                          : parse_double(toks[k].substr(0, colon));
      const auto vv = colon == std::string::npos
                          ? std::nullopt
                          : parse_double(toks[k].substr(colon + 1));
      if (!kv || !vv) {
        errors.push_back("line " + std::to_string(line) + ": malformed knot:value pair '" +
                         toks[k] + "'");
        return;
      }
      nl.knots.push_back(*kv);
      nl.values.push_back(*vv);
    }
  } else {
    errors.push_back("line " + std::to_string(line) + ": unknown nonlinearity selector '" +
                     toks[0] + "' (expected linear|tanh|table)");
  }
}

void parse_y0(const std::vector<std::string>& toks, int line, ProblemSpec& s,
              std::vector<std::string>& errors) {
  if (toks.empty()) {
    errors.push_back("line " + std::to_string(line) +
                     ": key 'y0' expects a selector (zero|sine|gaussian|file)");
    return;
  }
  InitialChoice& c = s.y0;
  if (toks[0] == "zero") {
    c.kind = InitialChoice::Kind::zero;
    expect_arity(toks, 1, line, "y0 zero", errors);
  } else if (toks[0] == "sine") {
    c.kind = InitialChoice::Kind::sine;
    expect_arity(toks, 2, line, "y0 sine", errors);
    if (toks.size() == 2) {
      if (const auto v = parse_int(toks[1])) {
        c.mode = static_cast<int>(*v);
      } else {
        errors.push_back("line " + std::to_string(line) +
                         ": 'y0 sine' expects an integer mode");
      }
    }
  } else if (toks[0] == "gaussian") {
    c.kind = InitialChoice::Kind::gaussian;
    expect_arity(toks, 3, line, "y0 gaussian", errors);
    if (toks.size() == 3) {
      const auto a = parse_double(toks[1]);
      const auto b = parse_double(toks[2]);
      if (a && b) {
        c.center = *a;
        c.width = *b;
      } else {
        errors.push_back("line " + std::to_string(line) +
                         ": 'y0 gaussian' expects numeric center and width");
      }
    }
  } else if (toks[0] == "file") {
    c.kind = InitialChoice::Kind::file;
    expect_arity(toks, 2, line, "y0 file", errors);
    if (toks.size() == 2) c.path = toks[1];
  } else {
    errors.push_back("line " + std::to_string(line) + ": unknown y0 selector '" + toks[0] +
                     "' (expected zero|sine|gaussian|file)");
  }
}

void parse_yd(const std::vector<std::string>& toks, int line, ProblemSpec& s,
              std::vector<std::string>& errors) {
  if (toks.empty()) {
    errors.push_back("line " + std::to_string(line) +
                     ": key 'yd' expects a selector (zero|decay|file)");
    return;
  }
  TargetChoice& c = s.yd;
  if (toks[0] == "zero") {
    c.kind = TargetChoice::Kind::zero;
    expect_arity(toks, 1, line, "yd zero", errors);
  } else if (toks[0] == "decay") {
    c.kind = TargetChoice::Kind::decay;
    expect_arity(toks, 2, line, "yd decay", errors);
    if (toks.size() == 2) {
      if (const auto v = parse_double(toks[1])) {
        c.rate = *v;
      } else {
        errors.push_back("line " + std::to_string(line) +
                         ": 'yd decay' expects a numeric rate");
      }
    }
  } else if (toks[0] == "file") {
    c.kind = TargetChoice::Kind::file;
    expect_arity(toks, 2, line, "yd file", errors);
    if (toks.size() == 2) c.path = toks[1];
  } else {
    errors.push_back("line " + std::to_string(line) + ": unknown yd selector '" + toks[0] +
                     "' (expected zero|decay|file)");
  }
}

void parse_box(const std::vector<std::string>& toks, int line, ProblemSpec& s,
               std::vector<std::string>& errors) {
  if (toks.size() == 1 && toks[0] == "none") {
    s.has_box = false;
    return;
  }
  if (toks.size() != 4) {
    errors.push_back("line " + std::to_string(line) +
                     ": key 'box' expects 'none' or four numbers (e1_lo e1_hi e2_lo e2_hi)");
    return;
  }
  double v[4];
  for (int k = 0; k < 4; ++k) {
    const auto p = parse_double(toks[static_cast<std::size_t>(k)]);
    if (!p) {
      errors.push_back("line " + std::to_string(line) + ": key 'box' expects numbers, got '" +
                       toks[static_cast<std::size_t>(k)] + "'");
      return;
    }
    v[k] = *p;
  }
  s.has_box = true;
  s.box.e1_lo = v[0];
  s.box.e1_hi = v[1];
  s.box.e2_lo = v[2];
  s.box.e2_hi = v[3];
}

const std::map<std::string, Handler>& key_table() {
  static const std::map<std::string, Handler> table = {
      {"x_lo", double_key(&ProblemSpec::x_lo, "x_lo")},
      {"x_hi", double_key(&ProblemSpec::x_hi, "x_hi")},
      {"n_cells", int_key(&ProblemSpec::n_cells, "n_cells")},
      {"horizon", double_key(&ProblemSpec::horizon, "horizon")},
      {"n_steps", int_key(&ProblemSpec::n_steps, "n_steps")},
      {"omega", interval_key(&ProblemSpec::omega_lo, &ProblemSpec::omega_hi, "omega")},
      {"O", interval_key(&ProblemSpec::o_lo, &ProblemSpec::o_hi, "O")},
      {"O_d", interval_key(&ProblemSpec::od_lo, &ProblemSpec::od_hi, "O_d")},
      {"nonlinearity", parse_nonlinearity},
      {"y0", parse_y0},
      {"yd", parse_yd},
      {"ell", double_key(&ProblemSpec::ell, "ell")},
      {"gamma", double_key(&ProblemSpec::gamma, "gamma")},
      {"epsilon", double_key(&ProblemSpec::epsilon, "epsilon")},
      {"box", parse_box},
      {"carleman_lambda", double_key(&ProblemSpec::carleman_lambda, "carleman_lambda")},
      {"carleman_sigma2", double_key(&ProblemSpec::carleman_sigma2, "carleman_sigma2")},
      {"carleman_M", double_key(&ProblemSpec::carleman_M, "carleman_M")},
      {"carleman_s", double_key(&ProblemSpec::carleman_s, "carleman_s")},
      {"observability_samples",
       int_key(&ProblemSpec::observability_samples, "observability_samples")},
      {"penalty",
       [](const std::vector<std::string>& toks, int line, ProblemSpec& s,
          std::vector<std::string>& errors) {
         expect_arity(toks, 1, line, "penalty", errors);
         if (toks.size() == 1) s.penalty = toks[0];
       }},
      {"sweep_tol", double_key(&ProblemSpec::sweep_tol, "sweep_tol")},
      {"max_sweeps", int_key(&ProblemSpec::max_sweeps, "max_sweeps")},
      {"cg_tol", double_key(&ProblemSpec::cg_tol, "cg_tol")},
      {"max_cg", int_key(&ProblemSpec::max_cg, "max_cg")},
      {"picard_tol", double_key(&ProblemSpec::picard_tol, "picard_tol")},
      {"max_picard", int_key(&ProblemSpec::max_picard, "max_picard")},
      {"outer_tol", double_key(&ProblemSpec::outer_tol, "outer_tol")},
      {"max_outer", int_key(&ProblemSpec::max_outer, "max_outer")},
      {"n_quad", int_key(&ProblemSpec::n_quad, "n_quad")},
      {"seed",
       [](const std::vector<std::string>& toks, int line, ProblemSpec& s,
          std::vector<std::string>& errors) {
         expect_arity(toks, 1, line, "seed", errors);
         if (toks.size() != 1) return;
         if (const auto v = parse_u64(toks[0])) {
           s.seed = *v;
         } else {
           errors.push_back("line " + std::to_string(line) +
                            ": key 'seed' expects a non-negative integer");
         }
       }},
  };
  return table;
}

void require_positive(double v, const std::string& name, std::vector<std::string>& errors) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    errors.push_back("'" + name + "' must be a positive finite number (got " + fmt(v) + ")");
  }
}

void require_min_int(int v, int lo, const std::string& name,
                     std::vector<std::string>& errors) {
  if (v < lo) {
    errors.push_back("'" + name + "' must be at least " + std::to_string(lo) + " (got " +
                     std::to_string(v) + ")");
  }
}

}  // namespace

LoadResult parse_spec_text(const std::string& text) {
  LoadResult out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      out.errors.push_back("line " + std::to_string(line_no) +
                           ": expected 'key = value', got '" + line + "'");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::vector<std::string> toks = split_ws(line.substr(eq + 1));
    if (key.empty()) {
      out.errors.push_back("line " + std::to_string(line_no) + ": empty key");
      continue;
    }
    const auto it = key_table().find(key);
    if (it == key_table().end()) {
      out.errors.push_back("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      continue;
    }
    if (!seen.insert(key).second) {
      out.errors.push_back("line " + std::to_string(line_no) + ": duplicate key '" + key +
                           "'");
      continue;
    }
    it->second(toks, line_no, out.spec, out.errors);
  }
  const std::vector<std::string> violations = validate_spec(out.spec);
  out.errors.insert(out.errors.end(), violations.begin(), violations.end());
  return out;
}

LoadResult load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    LoadResult out;
    out.errors.push_back("cannot open spec file '" + path + "'");
    return out;
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_spec_text(buf.str());
}

std::vector<std::string> validate_spec(const ProblemSpec& spec) {
  std::vector<std::string> errors;

  if (!(spec.x_hi > spec.x_lo)) {
    errors.push_back("'x_hi' must exceed 'x_lo' (got [" + fmt(spec.x_lo) + ", " +
                     fmt(spec.x_hi) + "])");
  }
  require_min_int(spec.n_cells, 4, "n_cells", errors);
  require_min_int(spec.n_steps, 4, "n_steps", errors);
  require_positive(spec.horizon, "horizon", errors);

  const auto check_interval = [&](double lo, double hi, const std::string& name) {
    if (!(lo < hi)) {
      errors.push_back("region '" + name + "' needs lo < hi (got [" + fmt(lo) + ", " +
                       fmt(hi) + "])");
    }
    if (lo < spec.x_lo || hi > spec.x_hi) {
      errors.push_back("region '" + name + "' must sit inside the domain [" +
                       fmt(spec.x_lo) + ", " + fmt(spec.x_hi) + "]");
    }
  };
  check_interval(spec.omega_lo, spec.omega_hi, "omega");
  check_interval(spec.o_lo, spec.o_hi, "O");
  check_interval(spec.od_lo, spec.od_hi, "O_d");

  // Grid-level geometry (disjointness of omega and O, omega meeting O_d):
  // delegate to the geometry validator so the error cites the hypothesis.
  if (errors.empty()) {
    try {
      const Grid g = spec_grid(spec);
      (void)spec_regions(spec, g);
    } catch (const SpecError& e) {
      errors.push_back(e.what());
    }
  }

  require_positive(spec.ell, "ell", errors);
  require_positive(spec.gamma, "gamma", errors);
  require_positive(spec.epsilon, "epsilon", errors);

  switch (spec.nonlinearity.kind) {
    case NonlinearityChoice::Kind::linear:
      if (!std::isfinite(spec.nonlinearity.coefficient)) {
        errors.push_back("'nonlinearity linear' coefficient must be finite");
      }
      break;
    case NonlinearityChoice::Kind::tanh:
      require_positive(spec.nonlinearity.scale, "nonlinearity tanh scale", errors);
      break;
    case NonlinearityChoice::Kind::table:
      try {
        (void)table_nonlinearity(spec.nonlinearity.knots, spec.nonlinearity.values);
      } catch (const SpecError& e) {
        errors.push_back(e.what());
      }
      break;
  }

  switch (spec.y0.kind) {
    case InitialChoice::Kind::sine:
      require_min_int(spec.y0.mode, 1, "y0 sine mode", errors);
      break;
    case InitialChoice::Kind::gaussian:
      require_positive(spec.y0.width, "y0 gaussian width", errors);
      break;
    case InitialChoice::Kind::file:
      if (spec.y0.path.empty()) errors.push_back("'y0 file' needs a path");
      break;
    case InitialChoice::Kind::zero:
      break;
  }
  switch (spec.yd.kind) {
    case TargetChoice::Kind::decay:
      require_positive(spec.yd.rate, "yd decay rate", errors);
      break;
    case TargetChoice::Kind::file:
      if (spec.yd.path.empty()) errors.push_back("'yd file' needs a path");
      break;
    case TargetChoice::Kind::zero:
      break;
  }

  if (spec.has_box) {
    try {
      spec.box.validate();
    } catch (const SpecError& e) {
      errors.push_back(e.what());
    }
  }

  require_positive(spec.carleman_lambda, "carleman_lambda", errors);
  require_positive(spec.carleman_sigma2, "carleman_sigma2", errors);
  if (spec.carleman_M < 0.0 || !std::isfinite(spec.carleman_M)) {
    errors.push_back("'carleman_M' must be non-negative and finite");
  }
  if (spec.carleman_s < 0.0 || !std::isfinite(spec.carleman_s)) {
    errors.push_back("'carleman_s' must be non-negative (0 selects the threshold default)");
  } else if (spec.carleman_s > 0.0 && spec.horizon > 0.0) {
    try {
      spec_carleman_params(spec).validate(spec.horizon);
    } catch (const SpecError& e) {
      errors.push_back(e.what());
    }
  }
  require_min_int(spec.observability_samples, 1, "observability_samples", errors);

  if (spec.penalty != "quadratic" && spec.penalty != "exact_norm") {
    errors.push_back("'penalty' must be 'quadratic' or 'exact_norm' (got '" + spec.penalty +
                     "')");
  }
  require_positive(spec.sweep_tol, "sweep_tol", errors);
  require_positive(spec.cg_tol, "cg_tol", errors);
  require_positive(spec.picard_tol, "picard_tol", errors);
  require_positive(spec.outer_tol, "outer_tol", errors);
  require_min_int(spec.max_sweeps, 1, "max_sweeps", errors);
  require_min_int(spec.max_cg, 1, "max_cg", errors);
  require_min_int(spec.max_picard, 1, "max_picard", errors);
  require_min_int(spec.max_outer, 1, "max_outer", errors);
  require_min_int(spec.n_quad, 2, "n_quad", errors);

  return errors;
}

std::string canonical_spec_text(const ProblemSpec& spec) {
  std::ostringstream out;
  out << "x_lo = " << fmt(spec.x_lo) << "\n";
  out << "x_hi = " << fmt(spec.x_hi) << "\n";
  out << "n_cells = " << spec.n_cells << "\n";
  out << "horizon = " << fmt(spec.horizon) << "\n";
  out << "n_steps = " << spec.n_steps << "\n";
  out << "omega = " << fmt(spec.omega_lo) << " " << fmt(spec.omega_hi) << "\n";
  out << "O = " << fmt(spec.o_lo) << " " << fmt(spec.o_hi) << "\n";
  out << "O_d = " << fmt(spec.od_lo) << " " << fmt(spec.od_hi) << "\n";
  out << "nonlinearity = ";
  switch (spec.nonlinearity.kind) {
    case NonlinearityChoice::Kind::linear:
      out << "linear " << fmt(spec.nonlinearity.coefficient);
      break;
    case NonlinearityChoice::Kind::tanh:
      out << "tanh " << fmt(spec.nonlinearity.scale);
      break;
    case NonlinearityChoice::Kind::table:
      out << "table";
      for (std::size_t k = 0; k < spec.nonlinearity.knots.size(); ++k) {
        out << " " << fmt(spec.nonlinearity.knots[k]) << ":"
            << fmt(spec.nonlinearity.values[k]);
      }
      break;
  }
  out << "\n";
  out << "y0 = ";
  switch (spec.y0.kind) {
    case InitialChoice::Kind::zero:
      out << "zero";
      break;
    case InitialChoice::Kind::sine:
      out << "sine " << spec.y0.mode;
      break;
    case InitialChoice::Kind::gaussian:
      out << "gaussian " << fmt(spec.y0.center) << " " << fmt(spec.y0.width);
      break;
    case InitialChoice::Kind::file:
      out << "file " << spec.y0.path;
      break;
  }
  out << "\n";
  out << "yd = ";
  switch (spec.yd.kind) {
    case TargetChoice::Kind::zero:
      out << "zero";
      break;
    case TargetChoice::Kind::decay:
      out << "decay " << fmt(spec.yd.rate);
      break;
    case TargetChoice::Kind::file:
      out << "file " << spec.yd.path;
      break;
  }
  out << "\n";
  out << "ell = " << fmt(spec.ell) << "\n";
  out << "gamma = " << fmt(spec.gamma) << "\n";
  out << "epsilon = " << fmt(spec.epsilon) << "\n";
  if (spec.has_box) {
    out << "box = " << fmt(spec.box.e1_lo) << " " << fmt(spec.box.e1_hi) << " "
        << fmt(spec.box.e2_lo) << " " << fmt(spec.box.e2_hi) << "\n";
  } else {
    out << "box = none\n";
  }
  out << "carleman_lambda = " << fmt(spec.carleman_lambda) << "\n";
  out << "carleman_sigma2 = " << fmt(spec.carleman_sigma2) << "\n";
  out << "carleman_M = " << fmt(spec.carleman_M) << "\n";
  out << "carleman_s = " << fmt(spec.carleman_s) << "\n";
  out << "observability_samples = " << spec.observability_samples << "\n";
  out << "penalty = " << spec.penalty << "\n";
  out << "sweep_tol = " << fmt(spec.sweep_tol) << "\n";
  out << "max_sweeps = " << spec.max_sweeps << "\n";
  out << "cg_tol = " << fmt(spec.cg_tol) << "\n";
  out << "max_cg = " << spec.max_cg << "\n";
  out << "picard_tol = " << fmt(spec.picard_tol) << "\n";
  out << "max_picard = " << spec.max_picard << "\n";
  out << "outer_tol = " << fmt(spec.outer_tol) << "\n";
  out << "max_outer = " << spec.max_outer << "\n";
  out << "n_quad = " << spec.n_quad << "\n";
  out << "seed = " << spec.seed << "\n";
  return out.str();
}

std::uint64_t spec_hash(const ProblemSpec& spec) {
  const std::string text = canonical_spec_text(spec);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string spec_hash_hex(const ProblemSpec& spec) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(spec_hash(spec)));
  return buf;
}

Grid spec_grid(const ProblemSpec& spec) {
  return make_grid(spec.x_lo, spec.x_hi, spec.n_cells, spec.horizon, spec.n_steps);
}

Regions spec_regions(const ProblemSpec& spec, const Grid& g) {
  Regions r;
  r.omega = make_mask(g, "omega", spec.omega_lo, spec.omega_hi);
  r.O = make_mask(g, "O", spec.o_lo, spec.o_hi);
  r.O_d = make_mask(g, "O_d", spec.od_lo, spec.od_hi);
  validate_geometry(g, r);
  return r;
}

Nonlinearity spec_nonlinearity(const ProblemSpec& spec) {
  switch (spec.nonlinearity.kind) {
    case NonlinearityChoice::Kind::linear:
      return linear_nonlinearity(spec.nonlinearity.coefficient);
    case NonlinearityChoice::Kind::tanh:
      return tanh_nonlinearity(spec.nonlinearity.scale);
    case NonlinearityChoice::Kind::table:
      return table_nonlinearity(spec.nonlinearity.knots, spec.nonlinearity.values);
  }
  throw SpecError("unreachable nonlinearity kind");
}

namespace {

// Reads "x,value" rows for the interior nodes, in node order. Lines starting
// with '#' are comments; one optional non-numeric header row is allowed.
std::vector<double> read_initial_csv(const std::string& path, const Grid& g) {
  std::ifstream in(path);
  if (!in) throw SpecError("y0 file: cannot open '" + path + "'");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(g.n_interior()));
  std::string line;
  int line_no = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream row(t);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() < 2) {
      throw SpecError("y0 file '" + path + "' line " + std::to_string(line_no) +
                      ": expected 'x,value'");
    }
    const auto x = parse_double(cells[0]);
    const auto v = parse_double(cells[1]);
    if (!x || !v) {
      if (header_allowed) {
        header_allowed = false;
        continue;
      }
      throw SpecError("y0 file '" + path + "' line " + std::to_string(line_no) +
                      ": non-numeric row");
    }
    header_allowed = false;
    const int i = static_cast<int>(out.size());
    if (i < g.n_interior() && std::abs(*x - g.x(i)) > 1e-9 * (1.0 + std::abs(g.x(i)))) {
      throw SpecError("y0 file '" + path + "' line " + std::to_string(line_no) +
                      ": x = " + fmt(*x) + " does not match grid node " + fmt(g.x(i)));
    }
    out.push_back(*v);
  }
  if (static_cast<int>(out.size()) != g.n_interior()) {
    throw SpecError("y0 file '" + path + "': expected " + std::to_string(g.n_interior()) +
                    " rows, got " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace

SpaceTimeField read_trajectory_csv(const std::string& path, const Grid& g) {
  std::ifstream in(path);
  if (!in) throw SpecError("trajectory file: cannot open '" + path + "'");
  SpaceTimeField f = zero_field(g);
  const std::size_t expected =
      static_cast<std::size_t>(g.n_time_nodes()) * static_cast<std::size_t>(g.n_interior());
  std::size_t rows = 0;
  std::string line;
  int line_no = 0;
  bool header_allowed = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<std::string> cells;
    std::istringstream row(t);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() < 3) {
      throw SpecError("trajectory file '" + path + "' line " + std::to_string(line_no) +
                      ": expected 't,x,value'");
    }
    const auto tv = parse_double(cells[0]);
    const auto xv = parse_double(cells[1]);
    const auto vv = parse_double(cells[2]);
    if (!tv || !xv || !vv) {
      if (header_allowed) {
        header_allowed = false;
        continue;
      }
      throw SpecError("trajectory file '" + path + "' line " + std::to_string(line_no) +
                      ": non-numeric row");
    }
    header_allowed = false;
    if (rows >= expected) {
      throw SpecError("trajectory file '" + path + "': more than " +
                      std::to_string(expected) + " data rows");
    }
    const int n = static_cast<int>(rows / static_cast<std::size_t>(g.n_interior()));
    const int i = static_cast<int>(rows % static_cast<std::size_t>(g.n_interior()));
    const double tn = n * g.dt;
    if (std::abs(*tv - tn) > 1e-9 * (1.0 + std::abs(tn)) ||
        std::abs(*xv - g.x(i)) > 1e-9 * (1.0 + std::abs(g.x(i)))) {
      throw SpecError("trajectory file '" + path + "' line " + std::to_string(line_no) +
                      ": (t,x) = (" + fmt(*tv) + ", " + fmt(*xv) +
                      ") does not match the grid's node order");
    }
    f.at(n, i) = *vv;
    ++rows;
  }
  if (rows != expected) {
    throw SpecError("trajectory file '" + path + "': expected " + std::to_string(expected) +
                    " data rows, got " + std::to_string(rows));
  }
  return f;
}

std::vector<double> spec_initial(const ProblemSpec& spec, const Grid& g) {
  const double pi = 3.14159265358979323846;
  std::vector<double> y0(static_cast<std::size_t>(g.n_interior()), 0.0);
  const double length = spec.x_hi - spec.x_lo;
  switch (spec.y0.kind) {
    case InitialChoice::Kind::zero:
      break;
    case InitialChoice::Kind::sine:
      for (int i = 0; i < g.n_interior(); ++i) {
        y0[static_cast<std::size_t>(i)] =
            std::sin(spec.y0.mode * pi * (g.x(i) - spec.x_lo) / length);
      }
      break;
    case InitialChoice::Kind::gaussian:
      for (int i = 0; i < g.n_interior(); ++i) {
        const double z = (g.x(i) - spec.y0.center) / spec.y0.width;
        y0[static_cast<std::size_t>(i)] = std::exp(-0.5 * z * z);
      }
      break;
    case InitialChoice::Kind::file:
      y0 = read_initial_csv(spec.y0.path, g);
      break;
  }
  return y0;
}

SpaceTimeField spec_target(const ProblemSpec& spec, const Grid& g) {
  const double pi = 3.14159265358979323846;
  const double length = spec.x_hi - spec.x_lo;
  switch (spec.yd.kind) {
    case TargetChoice::Kind::zero:
      return zero_field(g);
    case TargetChoice::Kind::decay: {
      SpaceTimeField f = zero_field(g);
      for (int n = 0; n <= g.n_steps; ++n) {
        const double envelope = std::exp(-spec.yd.rate * n * g.dt);
        for (int i = 0; i < g.n_interior(); ++i) {
          f.at(n, i) = envelope * std::sin(pi * (g.x(i) - spec.x_lo) / length);
        }
      }
      return f;
    }
    case TargetChoice::Kind::file:
      return read_trajectory_csv(spec.yd.path, g);
  }
  throw SpecError("unreachable target kind");
}

RobustParams spec_robust_params(const ProblemSpec& spec) {
  RobustParams p;
  p.ell = spec.ell;
  p.gamma = spec.gamma;
  return p;
}

CarlemanParams spec_carleman_params(const ProblemSpec& spec) {
  if (spec.carleman_s == 0.0) {
    return default_carleman_params(spec.horizon, spec.carleman_M, spec.carleman_lambda,
                                   spec.carleman_sigma2);
  }
  CarlemanParams p;
  p.s = spec.carleman_s;
  p.lambda = spec.carleman_lambda;
  p.sigma2 = spec.carleman_sigma2;
  p.M = spec.carleman_M;
  return p;
}

SweepOpts spec_sweep_opts(const ProblemSpec& spec) {
  SweepOpts o;
  o.tol = spec.sweep_tol;
  o.max_sweeps = spec.max_sweeps;
  return o;
}

LeaderOpts spec_leader_opts(const ProblemSpec& spec) {
  LeaderOpts o;
  o.cg_tol = spec.cg_tol;
  o.max_cg = spec.max_cg;
  o.penalty_mode =
      spec.penalty == "exact_norm" ? PenaltyMode::exact_norm : PenaltyMode::quadratic;
  o.sweep = spec_sweep_opts(spec);
  return o;
}

HierarchyOpts spec_hierarchy_opts(const ProblemSpec& spec) {
  HierarchyOpts o;
  o.outer_tol = spec.outer_tol;
  o.max_outer = spec.max_outer;
  o.n_quad = spec.n_quad;
  o.leader = spec_leader_opts(spec);
  o.picard.tol = spec.picard_tol;
  o.picard.max_inner = spec.max_picard;
  return o;
}

}  // namespace heatctrl
