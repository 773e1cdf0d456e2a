#include "visor/bench/cohort.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "visor/bench/rng.hpp"
#include "visor/common/error.hpp"
#include "visor/common/file.hpp"
#include "visor/image/codec.hpp"

namespace visor::bench {

namespace {

struct Tumor {
  double cx, cy, r;
  std::size_t first, last;  // slice range
};

std::string patient_id(std::size_t p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "P%04zu", p + 1);
  return buf;
}

Tumor tumor_of(const CohortParams& params, std::size_t patient, std::size_t scan) {
  Rng rng(mix_seed(mix_seed(params.seed, patient + 1), scan + 1));
  Tumor t;
  t.cx = 0.35 + 0.3 * rng.uniform01();
  t.cy = 0.35 + 0.3 * rng.uniform01();
  t.r = 0.05 + 0.07 * rng.uniform01();
  const auto n = static_cast<std::int64_t>(params.slices_per_scan);
  const auto span = std::max<std::int64_t>(1, n / 4);
  const auto start = rng.uniform_int(0, std::max<std::int64_t>(0, n - span));
  t.first = static_cast<std::size_t>(start);
  t.last = static_cast<std::size_t>(start + span - 1);
  return t;
}

}  // namespace

std::size_t Manifest::image_count() const {
  std::size_t n = 0;
  for (const auto& p : patients)
    for (const auto& s : p.scans) n += s.slices.size();
  return n;
}

std::vector<PatientInfo> plan_cohort(const CohortParams& params) {
  if (params.age_max < params.age_min) throw Error(Errc::validation, "age_max must be >= age_min");
  Rng rng(params.seed);
  std::vector<PatientInfo> out;
  for (std::size_t p = 0; p < params.patients; ++p) {
    PatientInfo info;
    info.patient_id = patient_id(p);
    info.age = rng.uniform_int(params.age_min, params.age_max);
    info.chemo_drug = kDrugs[rng.uniform_int(0, 3)];
    for (std::size_t s = 0; s < params.scans_per_patient; ++s) {
      ScanInfo scan;
      scan.scan_id = info.patient_id + "-S" + std::to_string(s + 1);
      const Tumor t = tumor_of(params, p, s);
      for (std::size_t k = 0; k < params.slices_per_scan; ++k) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "-%03zu", k);
        SliceInfo slice;
        slice.id = scan.scan_id + buf;
        slice.file = "images/" + slice.id + ".png";
        slice.index = static_cast<std::int64_t>(k);
        slice.tumor = k >= t.first && k <= t.last;
        scan.slices.push_back(std::move(slice));
      }
      info.scans.push_back(std::move(scan));
    }
    out.push_back(std::move(info));
  }
  return out;
}

image::Image synth_slice(const CohortParams& params, std::size_t patient, std::size_t scan, std::size_t slice,
                         bool* tumor) {
  const std::uint32_t w = params.width, h = params.height;
  auto img = image::Image::filled(w, h, 1);
  Rng rng(mix_seed(mix_seed(mix_seed(params.seed, patient + 1), scan + 1), slice + 1));
  const Tumor t = tumor_of(params, patient, scan);
  const bool has_tumor = slice >= t.first && slice <= t.last;
  if (tumor) *tumor = has_tumor;

  // Head cross-section shrinks toward both ends of the scan.
  const double phase = std::sin(std::numbers::pi * (static_cast<double>(slice) + 1) /
                                (static_cast<double>(params.slices_per_scan) + 1));
  const double rx = 0.42 * phase * w, ry = 0.46 * phase * h;
  const double cx = 0.5 * w, cy = 0.5 * h;
  const double tr = t.r * std::min(w, h);
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) {
      const std::uint64_t noise = rng.next();
      const double dx = (x + 0.5 - cx) / std::max(rx, 1e-9), dy = (y + 0.5 - cy) / std::max(ry, 1e-9);
      int v = static_cast<int>(noise & 0x0F);
      if (dx * dx + dy * dy <= 1.0) {
        v = 90 + static_cast<int>((noise >> 8) % 41);
        if (has_tumor) {
          const double tx = x + 0.5 - t.cx * w, ty = y + 0.5 - t.cy * h;
          if (tx * tx + ty * ty <= tr * tr) v = 200 + static_cast<int>((noise >> 16) % 41);
        }
      }
      img.at(x, y) = static_cast<std::uint8_t>(std::min(v, 255));
    }
  }
  return img;
}

Manifest generate(const CohortParams& params, const std::filesystem::path& out_dir) {
  if (params.width < 1 || params.height < 1) throw Error(Errc::validation, "slice dimensions must be at least 1x1");
  Manifest m;
  m.params = params;
  m.root = out_dir;
  m.patients = plan_cohort(params);
  std::filesystem::create_directories(out_dir / "images");
  for (std::size_t p = 0; p < m.patients.size(); ++p) {
    for (std::size_t s = 0; s < m.patients[p].scans.size(); ++s) {
      for (std::size_t k = 0; k < m.patients[p].scans[s].slices.size(); ++k) {
        auto& slice = m.patients[p].scans[s].slices[k];
        Bytes png = image::encode_png(synth_slice(params, p, s, k));
        slice.sha256 = sha256_hex(png);
        write_file_atomic(out_dir / slice.file, png, false);
      }
    }
  }
  const std::string text = manifest_to_json(m).dump(1);
  write_file_atomic(out_dir / "manifest.json", as_bytes(std::string_view(text)), true);
  return m;
}

nlohmann::json manifest_to_json(const Manifest& m) {
  using nlohmann::json;
  json patients = json::array();
  for (const auto& p : m.patients) {
    json scans = json::array();
    for (const auto& s : p.scans) {
      json slices = json::array();
      for (const auto& sl : s.slices)
        slices.push_back({{"id", sl.id}, {"file", sl.file}, {"index", sl.index}, {"tumor", sl.tumor}, {"sha256", sl.sha256}});
      scans.push_back({{"ScanID", s.scan_id}, {"slices", std::move(slices)}});
    }
    patients.push_back(
        {{"PatientID", p.patient_id}, {"Age", p.age}, {"ChemoDrug", p.chemo_drug}, {"scans", std::move(scans)}});
  }
  const auto& c = m.params;
  return {{"version", 1},
          {"params",
           {{"seed", c.seed},
            {"patients", c.patients},
            {"scans_per_patient", c.scans_per_patient},
            {"slices_per_scan", c.slices_per_scan},
            {"width", c.width},
            {"height", c.height},
            {"age_min", c.age_min},
            {"age_max", c.age_max}}},
          {"patients", std::move(patients)}};
}

Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& root) {
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::validation, "unsupported manifest version");
    Manifest m;
    m.root = root;
    const auto& c = j.at("params");
    m.params.seed = c.at("seed").get<std::uint64_t>();
    m.params.patients = c.at("patients").get<std::size_t>();
    m.params.scans_per_patient = c.at("scans_per_patient").get<std::size_t>();
    m.params.slices_per_scan = c.at("slices_per_scan").get<std::size_t>();
    m.params.width = c.at("width").get<std::uint32_t>();
    m.params.height = c.at("height").get<std::uint32_t>();
    m.params.age_min = c.at("age_min").get<std::int64_t>();
    m.params.age_max = c.at("age_max").get<std::int64_t>();
    for (const auto& pj : j.at("patients")) {
      PatientInfo p;
      p.patient_id = pj.at("PatientID").get<std::string>();
      p.age = pj.at("Age").get<std::int64_t>();
      p.chemo_drug = pj.at("ChemoDrug").get<std::string>();
      for (const auto& sj : pj.at("scans")) {
        ScanInfo s;
        s.scan_id = sj.at("ScanID").get<std::string>();
        for (const auto& lj : sj.at("slices"))
          s.slices.push_back({lj.at("id").get<std::string>(), lj.at("file").get<std::string>(),
                              lj.at("index").get<std::int64_t>(), lj.at("tumor").get<bool>(),
                              lj.at("sha256").get<std::string>()});
        p.scans.push_back(std::move(s));
      }
      m.patients.push_back(std::move(p));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::validation, std::string("malformed manifest: ") + e.what());
  }
}

Manifest load_manifest(const std::filesystem::path& manifest_file) {
  auto bytes = read_file(manifest_file);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(as_chars(bytes));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::validation, std::string("manifest is not JSON: ") + e.what());
  }
  return manifest_from_json(j, manifest_file.parent_path());
}

std::string manifest_hash(const Manifest& m) {
  const std::string text = manifest_to_json(m).dump();
  return sha256_hex(as_bytes(std::string_view(text)));
}

}  // namespace visor::bench
