#pragma once

// Flat run configuration. Every setting is a dotted key ("train.alpha") in
// one JSON object; sources are applied left to right and the last writer
// wins. Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ridg/data.hpp"
#include "ridg/trainer.hpp"

namespace ridg {

inline constexpr const char* kCodeVersion = "ridg 1.0.0";

class RunSettings {
 public:
  RunSettings();

  // Sets one key. Strings are coerced to the key's type (numbers, booleans,
  // JSON arrays). `source` is recorded in the composition log.
  void set(std::string_view key, const nlohmann::json& value,
           std::string_view source);
  void set_text(std::string_view key, std::string_view text,
                std::string_view source);

  // Applies every key of a flat JSON document file.
  void merge_file(const std::filesystem::path& path);

  // "key=value"
  void apply_override(std::string_view assignment);

  const nlohmann::json& values() const { return values_; }
  const std::vector<std::string>& composition() const { return composition_; }

  template <typename T>
  T get(std::string_view key) const {
    return values_.at(std::string(key)).get<T>();
  }

  TrainConfig train_config() const;
  SyntheticShiftConfig shift_config(std::size_t flipped_domain) const;
  HpRanges hp_ranges() const;
  std::uint64_t seed() const { return get<std::uint64_t>("run.seed"); }
  std::string dataset_name() const;

 private:
  nlohmann::json values_;
  std::vector<std::string> composition_;
};

// Loads data.csv when set, otherwise generates the preset with the held-out
// domain's spurious correlation flipped.
DomainDataset load_dataset(const RunSettings& settings, std::size_t holdout);

nlohmann::json train_config_to_json(const TrainConfig& c);
nlohmann::json result_to_json(const TrialResult& r);
TrialResult result_from_json(const nlohmann::json& j);

// step, L_cla, L_inv, L_all, scd_rationale, scd_feature, scd_logit,
// val_acc, target_acc. Accuracy columns are empty between evaluations.
void write_trace_csv(const TrialResult& r, const std::filesystem::path& path);

nlohmann::json make_manifest(std::string_view command,
                             const RunSettings& settings,
                             Precision precision);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace ridg
