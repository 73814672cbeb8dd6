#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ridg {

// Labeled samples partitioned by domain. Features are row-major
// size() x feature_dim and always held in double; trainers convert.
struct DomainDataset {
  std::size_t feature_dim = 0;
  std::size_t class_count = 0;
  std::size_t domain_count = 0;
  std::vector<double> features;
  std::vector<int> labels;
  std::vector<int> domains;
  // Original names from CSV ingestion, indexed by dense id. Empty for
  // generated data.
  std::vector<std::string> label_names;
  std::vector<std::string> domain_names;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * feature_dim, feature_dim};
  }

  // Throws ValidationError on out-of-range labels/domains, inconsistent
  // sizes, or an empty domain when domain_count >= 2.
  void validate() const;

  DomainDataset subset(std::span<const std::size_t> indices) const;
};

enum class GeneratorKind { two_blobs_spurious, rotated_moons, nuisance_dims };

GeneratorKind parse_generator(std::string_view s);
std::string_view to_string(GeneratorKind g);

// Synthetic multi-domain data with a label-correlated spurious coordinate.
// The spurious coordinate agrees with the label with probability
// strengths[d] in every domain except `flipped_domain`, where it agrees with
// probability 1 - strengths[d].
struct SyntheticShiftConfig {
  GeneratorKind generator = GeneratorKind::two_blobs_spurious;
  std::size_t class_count = 2;
  std::size_t domain_count = 4;
  std::size_t samples_per_domain = 500;
  std::vector<double> strengths{0.9, 0.9, 0.9, 0.9};
  std::optional<std::size_t> flipped_domain;
  double noise = 1.0;            // std of the core coordinates
  double core_signal = 1.0;      // distance of class centers from origin
  double spurious_scale = 1.0;   // distance of spurious centers from origin
  double spurious_noise = 0.1;   // std of the spurious coordinates
  double domain_shift = 0.5;     // magnitude of per-domain style offsets
  double spurious_spread = 0.0;  // log-std of the per-sample spurious magnitude
  double spurious_domain_spread = 0.0;  // log-std of a per-domain spurious gain
  std::size_t nuisance_dims = 4; // nuisance_dims generator only
  std::uint64_t seed = 0;

  void validate() const;
};

DomainDataset generate(const SyntheticShiftConfig& config);

// Column layout of generated data.
struct GeneratedLayout {
  std::vector<std::size_t> core;
  std::vector<std::size_t> spurious;
  std::vector<std::size_t> nuisance;
};
GeneratedLayout generated_layout(const SyntheticShiftConfig& config);

struct SplitPlan {
  std::size_t held_out_domain = 0;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
};

struct DomainSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> target;
};

// Target = every sample of the held-out domain; the remaining samples are
// shuffled with plan.seed and cut train_fraction / (1 - train_fraction).
DomainSplit leave_one_out_splits(const DomainDataset& ds, const SplitPlan& plan);

// Per-feature affine map fitted on a subset (the source domains).
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const DomainDataset& ds,
                          std::span<const std::size_t> indices);
  DomainDataset apply(const DomainDataset& ds) const;
};

// Indices of every sample not in `domain`.
std::vector<std::size_t> source_indices(const DomainDataset& ds,
                                        std::size_t domain);

struct CsvSchema {
  std::vector<std::string> feature_columns;  // empty: every other column
  std::string label_column = "label";
  std::string domain_column = "domain";
};

// Labels and domains are reindexed densely in sorted order (numeric order
// when every value is an integer); the names are kept in label_names and
// domain_names.
DomainDataset load_csv(const std::filesystem::path& path,
                       const CsvSchema& schema = {});

// Header f0..f{d-1},label,domain. Labels/domains are written as their
// original names when present.
void write_csv(const DomainDataset& ds, const std::filesystem::path& path);

}  // namespace ridg
