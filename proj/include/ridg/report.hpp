#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ridg {

// One trial's selected target accuracy (percent).
struct TrialRecord {
  std::string method;
  std::string dataset;
  std::size_t domain = 0;  // held-out domain
  std::size_t group = 0;   // repetition the trial belongs to
  double accuracy = 0;
};

enum class StdMode { over_trials, over_groups };

struct DatasetSummary {
  std::string dataset;
  double mean = 0;
  double stddev = 0;
  std::size_t count = 0;  // trials, or groups in over_groups mode
  StdMode std_mode = StdMode::over_trials;
  int score = 0;          // vs the baseline method
  std::map<std::size_t, double> per_domain;  // mean per held-out domain

  friend bool operator==(const DatasetSummary&,
                         const DatasetSummary&) = default;
};

struct MethodSummary {
  std::string method;
  std::vector<DatasetSummary> datasets;  // sorted by name
  double average = 0;                    // mean over datasets
  int total_score = 0;

  friend bool operator==(const MethodSummary&, const MethodSummary&) = default;
};

// +1 when the method's interval lies strictly above the baseline's, -1 when
// strictly below, 0 when they overlap.
int score_rule(double mean, double stddev, double base_mean, double base_std);

// Sample standard deviation; 0 for fewer than two values.
double sample_std(std::span<const double> values);

// Aggregates trials per method x dataset. The dataset mean is the average of
// the per-domain means. In over_groups mode each group's domain-averaged
// accuracy is one observation and std is taken over groups; otherwise std is
// over raw trials. Output: baseline first, then methods by name.
std::vector<MethodSummary> summarize(std::span<const TrialRecord> records,
                                     StdMode mode = StdMode::over_groups,
                                     std::string_view baseline = "ERM");

// Pre-aggregated (mean, std) pairs, e.g. published numbers.
struct PublishedStat {
  std::string method;
  std::string dataset;
  double mean = 0;
  double stddev = 0;
};

std::vector<MethodSummary> summarize(std::span<const PublishedStat> stats,
                                     std::string_view baseline = "ERM");

nlohmann::json summaries_to_json(std::span<const MethodSummary> summaries);
std::vector<MethodSummary> summaries_from_json(const nlohmann::json& j);

// Writes <dir>/summary_<tag>.csv (method,dataset,mean,std,score with one
// decimal) and <dir>/summary_<tag>.json (full precision). Returns both paths.
std::vector<std::filesystem::path> export_tables(
    std::span<const MethodSummary> summaries, const std::filesystem::path& dir,
    std::string_view tag);

// Per-domain table for one dataset: method, d0..d{M-1}, avg, std.
void export_domain_table(std::span<const MethodSummary> summaries,
                         std::string_view dataset,
                         const std::filesystem::path& path);

// FNV-1a 64-bit digest as 16 hex characters.
std::string content_hash(std::string_view text);

}  // namespace ridg
