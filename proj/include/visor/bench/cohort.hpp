#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "visor/image/image.hpp"

namespace visor::bench {

inline constexpr const char* kDrugs[] = {"Temodar", "DrugB", "DrugC", "none"};

struct CohortParams {
  std::uint64_t seed = 42;
  std::size_t patients = 10;
  std::size_t scans_per_patient = 1;
  std::size_t slices_per_scan = 155;
  std::uint32_t width = 256;
  std::uint32_t height = 256;
  std::int64_t age_min = 40;  // ages are uniform over [age_min, age_max]
  std::int64_t age_max = 95;
};

struct SliceInfo {
  std::string id;    // "P0001-S1-007"
  std::string file;  // relative to the manifest directory
  std::int64_t index = 0;
  bool tumor = false;
  std::string sha256;  // of the png file
};

struct ScanInfo {
  std::string scan_id;  // "P0001-S1"
  std::vector<SliceInfo> slices;
};

struct PatientInfo {
  std::string patient_id;  // "P0001"
  std::int64_t age = 0;
  std::string chemo_drug;
  std::vector<ScanInfo> scans;
};

struct Manifest {
  CohortParams params;
  std::vector<PatientInfo> patients;
  std::filesystem::path root;  // directory holding manifest.json

  std::size_t image_count() const;
};

// Patient metadata only; no pixels. Deterministic in `params`.
std::vector<PatientInfo> plan_cohort(const CohortParams& params);

// The synthetic slice for (patient, scan, slice): noise-textured ellipse
// with a bright disc on tumor slices.
image::Image synth_slice(const CohortParams& params, std::size_t patient, std::size_t scan, std::size_t slice,
                         bool* tumor = nullptr);

// Writes images/<slice id>.png and manifest.json under out_dir.
Manifest generate(const CohortParams& params, const std::filesystem::path& out_dir);

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root);
Manifest load_manifest(const std::filesystem::path& manifest_file);
// SHA-256 of the canonical manifest JSON, which includes every image digest.
std::string manifest_hash(const Manifest& m);

}  // namespace visor::bench
