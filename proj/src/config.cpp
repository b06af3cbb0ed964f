#include <algorithm>
#include <cctype>
#include <fstream>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "topicsurv/csv.hpp"
#include "topicsurv/pipeline.hpp"

namespace topicsurv::pipeline {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
  auto l = lower(v);
  if (l == "true" || l == "yes" || l == "on" || l == "1") return true;
  if (l == "false" || l == "no" || l == "off" || l == "0") return false;
  throw input_error(where + ": expected true or false, got '" + v + "'");
}

int parse_int(const std::string& v, const std::string& where) {
  long long x = csv::parse_int(v, where);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw input_error(where + ": integer out of range");
  return static_cast<int>(x);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <class T, class F>
std::string join_with(const std::vector<T>& items, F&& f) {
  std::vector<std::string> s;
  for (const auto& x : items) s.push_back(f(x));
  return join(s);
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Key {
  const char* name;
  const char* help;
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"id", "configuration label used in result tables",
       [](PipelineConfig& c, const std::string& v, const std::string&) { c.id = v; },
       [](const PipelineConfig& c) { return c.id; }},
      {"features.clinical", "use clinical columns",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.features.clinical = parse_bool(v, w); },
       [](const PipelineConfig& c) { return fmt_bool(c.features.clinical); }},
      {"features.pca", "use supervised principal component scores",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.features.pca = parse_bool(v, w); },
       [](const PipelineConfig& c) { return fmt_bool(c.features.pca); }},
      {"features.dlda", "use dLDA topic mixtures",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.features.dlda = parse_bool(v, w); },
       [](const PipelineConfig& c) { return fmt_bool(c.features.dlda); }},
      {"features.extra", "use the columns listed in extra_columns",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.features.extra_columns = parse_bool(v, w); },
       [](const PipelineConfig& c) { return fmt_bool(c.features.extra_columns); }},
      {"extra_columns", "clinical columns that belong to the extra group (comma list)",
       [](PipelineConfig& c, const std::string& v, const std::string&) { c.extra_columns = split_list(v); },
       [](const PipelineConfig& c) { return join(c.extra_columns); }},
      {"learner", "Cox, RCox or MTLR",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         try {
           c.learner = learner_from_string(v);
         } catch (const Error& e) {
           throw input_error(w + ": " + e.message());
         }
       },
       [](const PipelineConfig& c) { return std::string(to_string(c.learner)); }},
      {"seed", "master seed; every random choice derives from it",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
           throw input_error(w + ": seed must be a non-negative integer");
         try {
           c.seed = std::stoull(v);
         } catch (const std::exception&) {
           throw input_error(w + ": seed out of range");
         }
       },
       [](const PipelineConfig& c) { return std::to_string(c.seed); }},
      {"train_fraction", "share of patients in the training part of a split",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.train_fraction = csv::parse_double(v, w); },
       [](const PipelineConfig& c) { return csv::format_double(c.train_fraction); }},
      {"dlda.k_grid", "candidate topic counts (comma list)",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         c.k_grid.clear();
         for (const auto& s : split_list(v)) c.k_grid.push_back(parse_int(s, w));
       },
       [](const PipelineConfig& c) { return join_with(c.k_grid, [](int k) { return std::to_string(k); }); }},
      {"dlda.schemes", "encodings to try: A, B or A,B",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         c.schemes.clear();
         for (const auto& s : split_list(v)) {
           try {
             c.schemes.push_back(dlda::scheme_from_string(s));
           } catch (const Error& e) {
             throw input_error(w + ": " + e.message());
           }
         }
       },
       [](const PipelineConfig& c) {
         return join_with(c.schemes, [](dlda::EncodingScheme s) { return std::string(dlda::to_string(s)); });
       }},
      {"dlda.folds", "cross-validation folds for the scheme and K search",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.dlda_folds = parse_int(v, w); },
       [](const PipelineConfig& c) { return std::to_string(c.dlda_folds); }},
      {"dlda.alpha", "symmetric Dirichlet prior on topic mixtures",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.alpha = csv::parse_double(v, w); },
       [](const PipelineConfig& c) { return csv::format_double(c.alpha); }},
      {"dlda.max_em_iterations", "variational EM iteration cap",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.lda_max_iterations = parse_int(v, w); },
       [](const PipelineConfig& c) { return std::to_string(c.lda_max_iterations); }},
      {"dlda.em_tolerance", "relative change of the evidence bound that stops EM",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.lda_tolerance = csv::parse_double(v, w); },
       [](const PipelineConfig& c) { return csv::format_double(c.lda_tolerance); }},
      {"pca.eta_grid", "p-value thresholds for component screening (comma list)",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         c.eta_grid.clear();
         for (const auto& s : split_list(v)) c.eta_grid.push_back(csv::parse_double(s, w));
       },
       [](const PipelineConfig& c) { return join_with(c.eta_grid, csv::format_double); }},
      {"pca.folds", "cross-validation folds for the eta search",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.pca_folds = parse_int(v, w); },
       [](const PipelineConfig& c) { return std::to_string(c.pca_folds); }},
      {"rcox.ridge_grid", "ridge penalties tried by RCox (comma list)",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         c.ridge_grid.clear();
         for (const auto& s : split_list(v)) c.ridge_grid.push_back(csv::parse_double(s, w));
       },
       [](const PipelineConfig& c) { return join_with(c.ridge_grid, csv::format_double); }},
      {"mtlr.c_grid", "MTLR regularization strengths (comma list)",
       [](PipelineConfig& c, const std::string& v, const std::string& w) {
         c.mtlr_c_grid.clear();
         for (const auto& s : split_list(v)) c.mtlr_c_grid.push_back(csv::parse_double(s, w));
       },
       [](const PipelineConfig& c) { return join_with(c.mtlr_c_grid, csv::format_double); }},
      {"mtlr.intervals", "MTLR time points; 0 means floor(sqrt(n))",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.mtlr_intervals = parse_int(v, w); },
       [](const PipelineConfig& c) { return std::to_string(c.mtlr_intervals); }},
      {"learner.folds", "cross-validation folds for the RCox and MTLR penalties",
       [](PipelineConfig& c, const std::string& v, const std::string& w) { c.learner_folds = parse_int(v, w); },
       [](const PipelineConfig& c) { return std::to_string(c.learner_folds); }},
  };
  return table;
}

struct Line {
  std::size_t number;
  std::string key, value;  // key empty for a section header, whose name is in value
};

std::vector<Line> tokenize(std::string_view text) {
  std::vector<Line> out;
  std::size_t number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string raw(text.substr(pos, end - pos));
    pos = end + 1;
    ++number;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    const std::string where = "config line " + std::to_string(number);
    if (line.front() == '[') {
      if (line.back() != ']') throw input_error(where + ": unterminated section header");
      std::string name = trim(std::string_view(line).substr(1, line.size() - 2));
      if (name.empty()) throw input_error(where + ": empty section name");
      out.push_back({number, "", name});
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw input_error(where + ": expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw input_error(where + ": missing key");
    out.push_back({number, key, trim(std::string_view(line).substr(eq + 1))});
  }
  return out;
}

void apply_line(PipelineConfig& c, const Line& l) {
  const std::string where = "config line " + std::to_string(l.number) + " (" + l.key + ")";
  for (const auto& k : keys())
    if (l.key == k.name) {
      k.set(c, l.value, where);
      return;
    }
  throw input_error("config line " + std::to_string(l.number) + ": unknown key '" + l.key + "'");
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

PipelineConfig parse_config(std::string_view text, const PipelineConfig& base) {
  PipelineConfig c = base;
  for (const auto& l : tokenize(text)) {
    if (l.key.empty())
      throw input_error("config line " + std::to_string(l.number) +
                        ": section headers are only allowed in matrix configs");
    apply_line(c, l);
  }
  c.validate();
  return c;
}

std::vector<PipelineConfig> parse_matrix_config(std::string_view text, const PipelineConfig& base) {
  auto lines = tokenize(text);
  PipelineConfig shared = base;
  std::size_t i = 0;
  for (; i < lines.size() && !lines[i].key.empty(); ++i) apply_line(shared, lines[i]);
  std::vector<PipelineConfig> out;
  for (; i < lines.size(); ++i) {
    if (lines[i].key.empty()) {
      for (const auto& c : out)
        if (c.id == lines[i].value) throw input_error("config line " + std::to_string(lines[i].number) + ": duplicate section [" + c.id + "]");
      out.push_back(shared);
      out.back().id = lines[i].value;
    } else {
      apply_line(out.back(), lines[i]);
    }
  }
  if (out.size() < 2) throw input_error("matrix config needs at least 2 [sections], found " + std::to_string(out.size()));
  for (const auto& c : out) {
    try {
      c.validate();
    } catch (const Error& e) {
      throw input_error("config [" + c.id + "]: " + e.message());
    }
  }
  return out;
}

PipelineConfig read_config(const std::filesystem::path& path) {
  try {
    return parse_config(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message(), e.stage());
  }
}

std::vector<PipelineConfig> read_matrix_config(const std::filesystem::path& path) {
  try {
    return parse_matrix_config(read_file(path));
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message(), e.stage());
  }
}

std::string format_config(const PipelineConfig& c) {
  std::string out;
  for (const auto& k : keys()) out += "# " + std::string(k.help) + "\n" + k.name + " = " + k.get(c) + "\n";
  return out;
}

void PipelineConfig::validate() const {
  if (!features.any()) throw input_error("features: every feature group is disabled; enable at least one");
  if (features.extra_columns && extra_columns.empty())
    throw input_error("features.extra is enabled but extra_columns is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw input_error("train_fraction must lie in (0,1)");
  if (k_grid.empty()) throw input_error("dlda.k_grid is empty");
  for (int k : k_grid)
    if (k <= 0) throw input_error("dlda.k_grid contains K = " + std::to_string(k) + "; K must be positive");
  if (schemes.empty()) throw input_error("dlda.schemes is empty");
  if (dlda_folds < 2) throw input_error("dlda.folds must be at least 2");
  if (!(alpha > 0.0)) throw input_error("dlda.alpha must be positive");
  if (lda_max_iterations < 1) throw input_error("dlda.max_em_iterations must be at least 1");
  if (!(lda_tolerance >= 0.0)) throw input_error("dlda.em_tolerance must be non-negative");
  if (eta_grid.empty()) throw input_error("pca.eta_grid is empty");
  for (double e : eta_grid)
    if (!(e > 0.0 && e < 1.0)) throw input_error("pca.eta_grid values must lie in (0,1)");
  if (pca_folds < 2) throw input_error("pca.folds must be at least 2");
  if (ridge_grid.empty()) throw input_error("rcox.ridge_grid is empty");
  for (double r : ridge_grid)
    if (!(r > 0.0) || !std::isfinite(r)) throw input_error("rcox.ridge_grid values must be positive");
  if (mtlr_c_grid.empty()) throw input_error("mtlr.c_grid is empty");
  for (double c : mtlr_c_grid)
    if (!(c > 0.0) || !std::isfinite(c)) throw input_error("mtlr.c_grid values must be positive");
  if (mtlr_intervals < 0) throw input_error("mtlr.intervals must be non-negative");
  if (learner_folds < 2) throw input_error("learner.folds must be at least 2");
}

std::string_view to_string(Learner l) {
  switch (l) {
    case Learner::kCox: return "Cox";
    case Learner::kRCox: return "RCox";
    case Learner::kMtlr: return "MTLR";
  }
  return "?";
}

Learner learner_from_string(std::string_view s) {
  auto l = lower(std::string(s));
  if (l == "cox") return Learner::kCox;
  if (l == "rcox") return Learner::kRCox;
  if (l == "mtlr") return Learner::kMtlr;
  throw input_error("unknown learner '" + std::string(s) + "' (expected Cox, RCox or MTLR)");
}

void to_json(Json& j, const PipelineConfig& c) { j = format_config(c); }

void from_json(const Json& j, PipelineConfig& c) {
  // The echo is stored verbatim; an old file that no longer validates is still loadable.
  c = PipelineConfig{};
  for (const auto& l : tokenize(j.get<std::string>()))
    if (!l.key.empty()) apply_line(c, l);
}

}  // namespace topicsurv::pipeline
