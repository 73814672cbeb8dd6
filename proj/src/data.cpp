#include "ridg/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "ridg/errors.hpp"

namespace ridg {

void DomainDataset::validate() const {
  if (features.size() != labels.size() * feature_dim ||
      domains.size() != labels.size()) {
    throw ValidationError("dataset arrays have inconsistent sizes");
  }
  std::vector<std::size_t> per_domain(domain_count, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
      throw ValidationError("sample " + std::to_string(i) + " has label " +
                            std::to_string(labels[i]) + " outside [0, " +
                            std::to_string(class_count) + ")");
    }
    if (domains[i] < 0 ||
        static_cast<std::size_t>(domains[i]) >= domain_count) {
      throw ValidationError("sample " + std::to_string(i) + " has domain " +
                            std::to_string(domains[i]) + " outside [0, " +
                            std::to_string(domain_count) + ")");
    }
    ++per_domain[static_cast<std::size_t>(domains[i])];
  }
  if (domain_count >= 2) {
    for (std::size_t d = 0; d < domain_count; ++d) {
      if (per_domain[d] == 0) {
        throw ValidationError("domain " + std::to_string(d) + " is empty");
      }
    }
  }
}

DomainDataset DomainDataset::subset(std::span<const std::size_t> indices) const {
  DomainDataset out;
  out.feature_dim = feature_dim;
  out.class_count = class_count;
  out.domain_count = domain_count;
  out.label_names = label_names;
  out.domain_names = domain_names;
  out.features.reserve(indices.size() * feature_dim);
  for (std::size_t i : indices) {
    const auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
    out.domains.push_back(domains[i]);
  }
  return out;
}

GeneratorKind parse_generator(std::string_view s) {
  if (s == "two_blobs_spurious" || s == "two_blobs") {
    return GeneratorKind::two_blobs_spurious;
  }
  if (s == "rotated_moons") return GeneratorKind::rotated_moons;
  if (s == "nuisance_dims") return GeneratorKind::nuisance_dims;
  throw ConfigError("unknown generator '" + std::string(s) + "'");
}

std::string_view to_string(GeneratorKind g) {
  switch (g) {
    case GeneratorKind::two_blobs_spurious: return "two_blobs_spurious";
    case GeneratorKind::rotated_moons: return "rotated_moons";
    case GeneratorKind::nuisance_dims: return "nuisance_dims";
  }
  return "?";
}

void SyntheticShiftConfig::validate() const {
  if (domain_count < 2) throw ConfigError("generate: need at least 2 domains");
  if (class_count < 2) throw ConfigError("generate: need at least 2 classes");
  if (samples_per_domain < class_count) {
    throw ConfigError("generate: samples_per_domain must be >= class_count");
  }
  if (strengths.size() != domain_count) {
    throw ConfigError("generate: " + std::to_string(strengths.size()) +
                      " strengths for " + std::to_string(domain_count) +
                      " domains");
  }
  for (double s : strengths) {
    if (!(s >= 0.0 && s <= 1.0)) {
      throw ConfigError("generate: strength " + std::to_string(s) +
                        " outside [0, 1]");
    }
  }
  if (flipped_domain && *flipped_domain >= domain_count) {
    throw ConfigError("generate: flipped domain " +
                      std::to_string(*flipped_domain) + " out of range");
  }
  if (!(noise >= 0) || !(spurious_noise >= 0) || !(domain_shift >= 0) ||
      !(spurious_spread >= 0) || !(spurious_domain_spread >= 0)) {
    throw ConfigError("generate: noise scales must be >= 0");
  }
  if (generator == GeneratorKind::rotated_moons && class_count != 2) {
    throw ConfigError("generate: rotated_moons supports exactly 2 classes");
  }
}

GeneratedLayout generated_layout(const SyntheticShiftConfig& config) {
  GeneratedLayout layout;
  std::size_t col = 0;
  const std::size_t label_dims =
      config.class_count == 2 &&
              config.generator != GeneratorKind::rotated_moons
          ? 1
          : 2;
  for (std::size_t i = 0; i < label_dims; ++i) layout.core.push_back(col++);
  const std::size_t spurious_dims = config.class_count == 2 ? 1 : 2;
  for (std::size_t i = 0; i < spurious_dims; ++i) {
    layout.spurious.push_back(col++);
  }
  const std::size_t nuisance = config.generator == GeneratorKind::nuisance_dims
                                   ? config.nuisance_dims
                                   : 2;
  for (std::size_t i = 0; i < nuisance; ++i) layout.nuisance.push_back(col++);
  return layout;
}

namespace {

// Point on the unit circle for class c of K (K > 2), or +-1 on a line.
std::vector<double> class_anchor(std::size_t c, std::size_t k) {
  if (k == 2) return {c == 0 ? -1.0 : 1.0};
  const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) /
                       static_cast<double>(k);
  return {std::cos(angle), std::sin(angle)};
}

}  // namespace

DomainDataset generate(const SyntheticShiftConfig& config) {
  config.validate();
  const GeneratedLayout layout = generated_layout(config);
  const std::size_t dim =
      layout.core.size() + layout.spurious.size() + layout.nuisance.size();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Label-independent style offset per domain for the nuisance columns.
  std::vector<std::vector<double>> style(config.domain_count);
  for (auto& s : style) {
    for (std::size_t i = 0; i < layout.nuisance.size(); ++i) {
      s.push_back(config.domain_shift * gauss(rng));
    }
  }

  std::vector<double> gain(config.domain_count);
  for (auto& g : gain) g = std::exp(config.spurious_domain_spread * gauss(rng));

  DomainDataset ds;
  ds.feature_dim = dim;
  ds.class_count = config.class_count;
  ds.domain_count = config.domain_count;
  const std::size_t k = config.class_count;
  for (std::size_t d = 0; d < config.domain_count; ++d) {
    const double strength = config.flipped_domain == d
                                ? 1.0 - config.strengths[d]
                                : config.strengths[d];
    const double rotation = config.generator == GeneratorKind::rotated_moons
                                ? static_cast<double>(d) * std::numbers::pi / 12
                                : 0.0;
    for (std::size_t i = 0; i < config.samples_per_domain; ++i) {
      const std::size_t y = i % k;
      std::vector<double> x(dim, 0.0);

      if (config.generator == GeneratorKind::rotated_moons) {
        const double t = std::numbers::pi * unit(rng);
        double px = y == 0 ? std::cos(t) : 1.0 - std::cos(t);
        double py = y == 0 ? std::sin(t) : 0.5 - std::sin(t);
        px = config.core_signal * (px - 0.5) + config.noise * gauss(rng);
        py = config.core_signal * (py - 0.25) + config.noise * gauss(rng);
        x[layout.core[0]] = std::cos(rotation) * px - std::sin(rotation) * py;
        x[layout.core[1]] = std::sin(rotation) * px + std::cos(rotation) * py;
      } else {
        const auto anchor = class_anchor(y, k);
        for (std::size_t c = 0; c < layout.core.size(); ++c) {
          x[layout.core[c]] =
              config.core_signal * anchor[c] + config.noise * gauss(rng);
        }
      }

      std::size_t spurious_class = y;
      if (unit(rng) >= strength) {
        // Disagree: uniform over the other classes.
        std::uniform_int_distribution<std::size_t> other(0, k - 2);
        const std::size_t o = other(rng);
        spurious_class = o >= y ? o + 1 : o;
      }
      const auto s_anchor = class_anchor(spurious_class, k);
      const double magnitude =
          config.spurious_scale * gain[d] *
          std::exp(config.spurious_spread * gauss(rng));
      for (std::size_t c = 0; c < layout.spurious.size(); ++c) {
        x[layout.spurious[c]] = magnitude * s_anchor[c] +
                                config.spurious_noise * gauss(rng);
      }

      for (std::size_t c = 0; c < layout.nuisance.size(); ++c) {
        x[layout.nuisance[c]] = style[d][c] + gauss(rng);
      }

      ds.features.insert(ds.features.end(), x.begin(), x.end());
      ds.labels.push_back(static_cast<int>(y));
      ds.domains.push_back(static_cast<int>(d));
    }
  }
  ds.validate();
  return ds;
}

std::vector<std::size_t> source_indices(const DomainDataset& ds,
                                        std::size_t domain) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (static_cast<std::size_t>(ds.domains[i]) != domain) out.push_back(i);
  }
  return out;
}

DomainSplit leave_one_out_splits(const DomainDataset& ds,
                                 const SplitPlan& plan) {
  if (plan.held_out_domain >= ds.domain_count) {
    throw ValidationError("held-out domain " +
                          std::to_string(plan.held_out_domain) +
                          " outside [0, " + std::to_string(ds.domain_count) +
                          ")");
  }
  if (!(plan.train_fraction > 0.0 && plan.train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  DomainSplit split;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (static_cast<std::size_t>(ds.domains[i]) == plan.held_out_domain) {
      split.target.push_back(i);
    } else {
      source.push_back(i);
    }
  }
  std::mt19937_64 rng(plan.seed);
  std::shuffle(source.begin(), source.end(), rng);
  const auto cut = static_cast<std::size_t>(
      std::llround(plan.train_fraction * static_cast<double>(source.size())));
  split.train.assign(source.begin(), source.begin() + cut);
  split.val.assign(source.begin() + cut, source.end());
  return split;
}

Standardizer Standardizer::fit(const DomainDataset& ds,
                               std::span<const std::size_t> indices) {
  Standardizer s;
  const std::size_t d = ds.feature_dim;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  if (indices.empty()) return s;
  std::vector<double> sq(d, 0.0);
  for (std::size_t i : indices) {
    const auto r = ds.row(i);
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  const double n = static_cast<double>(indices.size());
  for (auto& m : s.mean) m /= n;
  for (std::size_t i : indices) {
    const auto r = ds.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double c = r[j] - s.mean[j];
      sq[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double sd = std::sqrt(sq[j] / n);
    s.scale[j] = sd > 0 ? sd : 1.0;
  }
  return s;
}

DomainDataset Standardizer::apply(const DomainDataset& ds) const {
  DomainDataset out = ds;
  const std::size_t d = ds.feature_dim;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double& v = out.features[i * d + j];
      v = (v - mean[j]) / scale[j];
    }
  return out;
}

// -------------------------------------------------------------------- CSV

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool is_integer(const std::string& s) {
  long long v;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return !s.empty() && ec == std::errc() && ptr == s.data() + s.size();
}

// Dense ids for a column of names: numeric order when every name is an
// integer, lexicographic otherwise.
std::vector<std::string> dense_names(const std::vector<std::string>& raw) {
  std::vector<std::string> names(raw.begin(), raw.end());
  std::sort(names.begin(), names.end());
  names.erase(std::unique(names.begin(), names.end()), names.end());
  if (std::all_of(names.begin(), names.end(), is_integer)) {
    std::sort(names.begin(), names.end(),
              [](const std::string& a, const std::string& b) {
                return std::stoll(a) < std::stoll(b);
              });
  }
  return names;
}

std::vector<int> reindex(const std::vector<std::string>& raw,
                         const std::vector<std::string>& names) {
  std::map<std::string, int> id;
  for (std::size_t i = 0; i < names.size(); ++i) {
    id[names[i]] = static_cast<int>(i);
  }
  std::vector<int> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(id.at(r));
  return out;
}

}  // namespace

DomainDataset load_csv(const std::filesystem::path& path,
                       const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw SchemaError(path.string() + ": missing header row");
  }
  std::vector<std::string> header = split_line(trim(line));
  for (auto& h : header) h = trim(h);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw SchemaError(path.string() + ": missing column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column(schema.label_column);
  const std::size_t domain_col = column(schema.domain_column);
  std::vector<std::size_t> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i != label_col && i != domain_col) feature_cols.push_back(i);
    }
  } else {
    for (const auto& name : schema.feature_columns) {
      feature_cols.push_back(column(name));
    }
  }
  if (feature_cols.empty()) {
    throw SchemaError(path.string() + ": no feature columns");
  }

  DomainDataset ds;
  ds.feature_dim = feature_cols.size();
  std::vector<std::string> raw_labels, raw_domains;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ": row " + std::to_string(line_no) +
                           " has " + std::to_string(cells.size()) +
                           " cells, header has " +
                           std::to_string(header.size()),
                       line_no);
    }
    for (std::size_t c : feature_cols) {
      double v;
      const std::string cell = trim(cells[c]);
      if (!parse_double(cell, v)) {
        throw ParseError(path.string() + ": row " + std::to_string(line_no) +
                             ", column '" + header[c] +
                             "': not a number: '" + cell + "'",
                         line_no);
      }
      ds.features.push_back(v);
    }
    raw_labels.push_back(trim(cells[label_col]));
    raw_domains.push_back(trim(cells[domain_col]));
  }
  ds.label_names = dense_names(raw_labels);
  ds.domain_names = dense_names(raw_domains);
  ds.labels = reindex(raw_labels, ds.label_names);
  ds.domains = reindex(raw_domains, ds.domain_names);
  ds.class_count = ds.label_names.size();
  ds.domain_count = ds.domain_names.size();
  ds.validate();
  return ds;
}

void write_csv(const DomainDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t j = 0; j < ds.feature_dim; ++j) out << 'f' << j << ',';
  out << "label,domain\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.row(i)) out << v << ',';
    const auto l = static_cast<std::size_t>(ds.labels[i]);
    const auto d = static_cast<std::size_t>(ds.domains[i]);
    if (l < ds.label_names.size()) {
      out << ds.label_names[l];
    } else {
      out << l;
    }
    out << ',';
    if (d < ds.domain_names.size()) {
      out << ds.domain_names[d];
    } else {
      out << d;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace ridg
