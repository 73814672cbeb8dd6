#include "ridg/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "ridg/errors.hpp"

namespace ridg {

int score_rule(double mean, double stddev, double base_mean, double base_std) {
  if (mean - stddev > base_mean + base_std) return 1;
  if (mean + stddev < base_mean - base_std) return -1;
  return 0;
}

namespace {

// Order-independent mean: sums sorted values.
double stable_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(values.size());
}

void order_and_score(std::vector<MethodSummary>& out,
                     std::string_view baseline) {
  std::sort(out.begin(), out.end(),
            [&](const MethodSummary& a, const MethodSummary& b) {
              const bool ab = a.method == baseline, bb = b.method == baseline;
              if (ab != bb) return ab;
              return a.method < b.method;
            });
  for (auto& m : out) {
    std::sort(m.datasets.begin(), m.datasets.end(),
              [](const DatasetSummary& a, const DatasetSummary& b) {
                return a.dataset < b.dataset;
              });
  }
  std::map<std::string, std::pair<double, double>> base;  // mean, std
  for (const auto& m : out) {
    if (m.method != baseline) continue;
    for (const auto& d : m.datasets) base[d.dataset] = {d.mean, d.stddev};
  }
  for (auto& m : out) {
    m.total_score = 0;
    std::vector<double> means;
    for (auto& d : m.datasets) {
      const auto it = base.find(d.dataset);
      d.score = m.method == baseline || it == base.end()
                    ? 0
                    : score_rule(d.mean, d.stddev, it->second.first,
                                 it->second.second);
      m.total_score += d.score;
      means.push_back(d.mean);
    }
    m.average = means.empty() ? 0.0 : stable_mean(means);
  }
}

}  // namespace

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  std::vector<double> v(values.begin(), values.end());
  const double mean = stable_mean(v);
  std::vector<double> sq;
  for (double x : v) sq.push_back((x - mean) * (x - mean));
  std::sort(sq.begin(), sq.end());
  const double ss = std::accumulate(sq.begin(), sq.end(), 0.0);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::vector<MethodSummary> summarize(std::span<const TrialRecord> records,
                                     StdMode mode, std::string_view baseline) {
  // method -> dataset -> records
  std::map<std::string, std::map<std::string, std::vector<const TrialRecord*>>>
      groups;
  for (const auto& r : records) groups[r.method][r.dataset].push_back(&r);

  std::vector<MethodSummary> out;
  for (const auto& [method, by_dataset] : groups) {
    MethodSummary m;
    m.method = method;
    for (const auto& [dataset, recs] : by_dataset) {
      if (recs.empty()) {
        throw AggregationError("no trials for " + method + " / " + dataset);
      }
      DatasetSummary d;
      d.dataset = dataset;
      d.std_mode = mode;
      std::map<std::size_t, std::vector<double>> per_domain;
      std::vector<double> all;
      for (const auto* r : recs) {
        per_domain[r->domain].push_back(r->accuracy);
        all.push_back(r->accuracy);
      }
      std::vector<double> domain_means;
      for (const auto& [dom, accs] : per_domain) {
        d.per_domain[dom] = stable_mean(accs);
        domain_means.push_back(d.per_domain[dom]);
      }
      if (mode == StdMode::over_groups) {
        // group -> domain -> accuracies
        std::map<std::size_t, std::map<std::size_t, std::vector<double>>> g;
        for (const auto* r : recs) g[r->group][r->domain].push_back(r->accuracy);
        std::vector<double> group_values;
        for (const auto& [gid, doms] : g) {
          std::vector<double> means;
          for (const auto& [dom, accs] : doms) means.push_back(stable_mean(accs));
          group_values.push_back(stable_mean(means));
        }
        d.mean = stable_mean(group_values);
        d.stddev = sample_std(group_values);
        d.count = group_values.size();
      } else {
        d.mean = stable_mean(domain_means);
        d.stddev = sample_std(all);
        d.count = all.size();
      }
      m.datasets.push_back(std::move(d));
    }
    out.push_back(std::move(m));
  }
  order_and_score(out, baseline);
  return out;
}

std::vector<MethodSummary> summarize(std::span<const PublishedStat> stats,
                                     std::string_view baseline) {
  std::map<std::string, MethodSummary> by_method;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& s : stats) {
    if (!seen.insert({s.method, s.dataset}).second) {
      throw AggregationError("duplicate entry for " + s.method + " / " +
                             s.dataset);
    }
    auto& m = by_method[s.method];
    m.method = s.method;
    DatasetSummary d;
    d.dataset = s.dataset;
    d.mean = s.mean;
    d.stddev = s.stddev;
    d.count = 1;
    d.std_mode = StdMode::over_groups;
    m.datasets.push_back(std::move(d));
  }
  std::vector<MethodSummary> out;
  for (auto& [name, m] : by_method) out.push_back(std::move(m));
  order_and_score(out, baseline);
  return out;
}

nlohmann::json summaries_to_json(std::span<const MethodSummary> summaries) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& m : summaries) {
    nlohmann::json datasets = nlohmann::json::array();
    for (const auto& d : m.datasets) {
      nlohmann::json per_domain = nlohmann::json::object();
      for (const auto& [dom, acc] : d.per_domain) {
        per_domain[std::to_string(dom)] = acc;
      }
      datasets.push_back(
          {{"dataset", d.dataset},
           {"mean", d.mean},
           {"std", d.stddev},
           {"count", d.count},
           {"std_mode",
            d.std_mode == StdMode::over_groups ? "over_groups" : "over_trials"},
           {"score", d.score},
           {"per_domain", per_domain}});
    }
    arr.push_back({{"method", m.method},
                   {"average", m.average},
                   {"total_score", m.total_score},
                   {"datasets", datasets}});
  }
  return arr;
}

std::vector<MethodSummary> summaries_from_json(const nlohmann::json& j) {
  std::vector<MethodSummary> out;
  for (const auto& mj : j) {
    MethodSummary m;
    m.method = mj.at("method").get<std::string>();
    m.average = mj.at("average").get<double>();
    m.total_score = mj.at("total_score").get<int>();
    for (const auto& dj : mj.at("datasets")) {
      DatasetSummary d;
      d.dataset = dj.at("dataset").get<std::string>();
      d.mean = dj.at("mean").get<double>();
      d.stddev = dj.at("std").get<double>();
      d.count = dj.at("count").get<std::size_t>();
      d.std_mode = dj.at("std_mode").get<std::string>() == "over_groups"
                       ? StdMode::over_groups
                       : StdMode::over_trials;
      d.score = dj.at("score").get<int>();
      for (const auto& [key, acc] : dj.at("per_domain").items()) {
        d.per_domain[std::stoul(key)] = acc.get<double>();
      }
      m.datasets.push_back(std::move(d));
    }
    out.push_back(std::move(m));
  }
  return out;
}

namespace {

std::string fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<std::filesystem::path> export_tables(
    std::span<const MethodSummary> summaries, const std::filesystem::path& dir,
    std::string_view tag) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string stem = "summary_" + std::string(tag);
  const auto csv_path = dir / (stem + ".csv");
  const auto json_path = dir / (stem + ".json");
  {
    auto out = open_out(csv_path);
    out << "method,dataset,mean,std,score\n";
    for (const auto& m : summaries) {
      for (const auto& d : m.datasets) {
        out << m.method << ',' << d.dataset << ',' << fixed1(d.mean) << ','
            << fixed1(d.stddev) << ',' << d.score << '\n';
      }
    }
    if (!out) throw IoError("failed writing " + csv_path.string());
  }
  {
    auto out = open_out(json_path);
    out << summaries_to_json(summaries).dump(2) << '\n';
    if (!out) throw IoError("failed writing " + json_path.string());
  }
  return {csv_path, json_path};
}

void export_domain_table(std::span<const MethodSummary> summaries,
                         std::string_view dataset,
                         const std::filesystem::path& path) {
  std::set<std::size_t> domains;
  for (const auto& m : summaries)
    for (const auto& d : m.datasets)
      if (d.dataset == dataset)
        for (const auto& [dom, acc] : d.per_domain) domains.insert(dom);
  auto out = open_out(path);
  out << "method";
  for (std::size_t dom : domains) out << ",d" << dom;
  out << ",avg,std,score\n";
  for (const auto& m : summaries) {
    for (const auto& d : m.datasets) {
      if (d.dataset != dataset) continue;
      out << m.method;
      for (std::size_t dom : domains) {
        const auto it = d.per_domain.find(dom);
        out << ',' << (it == d.per_domain.end() ? "" : fixed1(it->second));
      }
      out << ',' << fixed1(d.mean) << ',' << fixed1(d.stddev) << ',' << d.score
          << '\n';
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string content_hash(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ridg
