#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "lunetkit/grid/io.hpp"
#include "lunetkit/parallel.hpp"
#include "lunetkit/phantom/generator.hpp"

namespace lunetkit::phantom {

struct FoldAssignment {
  std::size_t k = 0;
  std::vector<int> folds;  ///< fold index per record

  std::vector<std::size_t> members(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < folds.size(); ++i) {
      if (folds[i] == fold) out.push_back(i);
    }
    return out;
  }
  bool operator==(const FoldAssignment&) const = default;
};

struct StratumKey {
  Quality quality;
  EfCategory category;
};

/// Records are grouped by (quality, EF category); within each stratum the
/// order is shuffled with the seed, then all strata are dealt round-robin
/// with one pointer carried across strata.
inline FoldAssignment stratified_folds(std::span<const StratumKey> keys, std::size_t k,
                                       std::uint64_t seed) {
  require(k >= 1 && k <= keys.size(), ErrorCode::InvalidK,
          "k must lie in [1, record count], got " + std::to_string(k));
  std::map<std::pair<int, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    strata[{static_cast<int>(keys[i].quality), static_cast<int>(keys[i].category)}].push_back(i);
  }
  std::mt19937_64 rng(seed);
  FoldAssignment out{k, std::vector<int>(keys.size(), -1)};
  std::size_t pointer = 0;
  for (auto& [key, members] : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t idx : members) out.folds[idx] = static_cast<int>(pointer++ % k);
  }
  return out;
}

inline FoldAssignment stratified_folds(std::span<const PatientRecord> records, std::size_t k,
                                       std::uint64_t seed) {
  std::vector<StratumKey> keys;
  keys.reserve(records.size());
  for (const auto& r : records) keys.push_back({r.quality, r.category()});
  return stratified_folds(keys, k, seed);
}

struct Dataset {
  PhantomParams params;
  std::uint64_t seed = 0;
  std::vector<PatientRecord> records;
  FoldAssignment folds;
};

/// n patients with seeds derived from the master seed, generated in
/// parallel, then assigned to k stratified folds.
inline Dataset generate_dataset(const PhantomParams& params, std::size_t n, std::uint64_t seed,
                                std::size_t k = 10) {
  params.validate();
  require(n >= 1, ErrorCode::InvalidArgument, "dataset needs at least one patient");
  Dataset ds{params, seed, std::vector<PatientRecord>(n), {}};
  parallel_for(n, [&](std::size_t i) {
    ds.records[i] = generate_patient(params, patient_seed(seed, i), patient_id(i));
  });
  ds.folds = stratified_folds(ds.records, k, seed);
  for (std::size_t i = 0; i < n; ++i) ds.records[i].fold = ds.folds.folds[i];
  return ds;
}

inline std::string sample_stem(View v, Instant i) { return grid::to_string(v) + "_" + grid::to_string(i); }

/// Layout: <dir>/manifest.json and <dir>/<patient_id>/{<view>_<instant>_img.png,
/// <view>_<instant>_mask.png, info.json}.
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::IoFailure, "cannot create " + dir.string());
  nlohmann::json records = nlohmann::json::array();
  parallel_for(ds.records.size(), [&](std::size_t idx) {
    const auto& rec = ds.records[idx];
    const fs::path pdir = dir / rec.patient_id;
    std::error_code e;
    fs::create_directories(pdir, e);
    require(!e, ErrorCode::IoFailure, "cannot create " + pdir.string());
    nlohmann::json boxes = nlohmann::json::object();
    for (View v : grid::kViews) {
      for (Instant i : grid::kInstants) {
        const auto& s = rec.at(v, i);
        grid::write_image_png(pdir / (sample_stem(v, i) + "_img.png"), s.image);
        grid::write_mask_png(pdir / (sample_stem(v, i) + "_mask.png"), s.mask);
        boxes[sample_stem(v, i)] = grid::bbox_to_json(s.bbox);
      }
    }
    const auto& sp = rec.samples[0].image.spacing();
    grid::write_json(pdir / "info.json",
                     {{"patient_id", rec.patient_id},
                      {"dx_mm", sp.dx},
                      {"dy_mm", sp.dy},
                      {"bbox", boxes},
                      {"edv", rec.edv},
                      {"esv", rec.esv},
                      {"ef", rec.ef},
                      {"quality", to_string(rec.quality)},
                      {"ef_category", to_string(rec.category())},
                      {"fold", rec.fold}});
  });
  for (const auto& rec : ds.records) {
    records.push_back({{"patient_id", rec.patient_id}, {"fold", rec.fold}});
  }
  grid::write_json(dir / "manifest.json", {{"seed", ds.seed},
                                           {"k", ds.folds.k},
                                           {"params", ds.params},
                                           {"records", records}});
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest = grid::read_json(dir / "manifest.json");
  Dataset ds;
  try {
    ds.seed = manifest.at("seed").get<std::uint64_t>();
    ds.params = manifest.at("params").get<PhantomParams>();
    ds.folds.k = manifest.at("k").get<std::size_t>();
    const auto& recs = manifest.at("records");
    require(recs.is_array() && !recs.empty(), ErrorCode::EmptyDataset, "manifest lists no records");
    ds.records.resize(recs.size());
    ds.folds.folds.resize(recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
      ds.records[i].patient_id = recs[i].at("patient_id").get<std::string>();
      ds.folds.folds[i] = recs[i].at("fold").get<int>();
      require(ds.folds.folds[i] >= 0 && static_cast<std::size_t>(ds.folds.folds[i]) < ds.folds.k,
              ErrorCode::IoFailure, "fold index out of range in manifest");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoFailure, std::string("malformed manifest: ") + e.what());
  }
  parallel_for(ds.records.size(), [&](std::size_t idx) {
    auto& rec = ds.records[idx];
    const auto pdir = dir / rec.patient_id;
    const auto info = grid::read_json(pdir / "info.json");
    try {
      const grid::PixelSpacing sp{info.at("dx_mm").get<double>(), info.at("dy_mm").get<double>()};
      sp.validate();
      rec.edv = info.at("edv").get<double>();
      rec.esv = info.at("esv").get<double>();
      rec.ef = info.at("ef").get<double>();
      rec.quality = quality_from_string(info.at("quality").get<std::string>());
      rec.fold = ds.folds.folds[idx];
      for (View v : grid::kViews) {
        for (Instant i : grid::kInstants) {
          auto& s = rec.at(v, i);
          s.image = grid::read_image_png(pdir / (sample_stem(v, i) + "_img.png"), sp);
          s.mask = grid::read_mask_png(pdir / (sample_stem(v, i) + "_mask.png"), sp);
          s.bbox = grid::bbox_from_json(info.at("bbox").at(sample_stem(v, i)));
          require(s.image.height() == s.mask.height() && s.image.width() == s.mask.width(),
                  ErrorCode::IoFailure, "image and mask sizes differ for " + rec.patient_id);
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::IoFailure, "malformed info.json for " + rec.patient_id + ": " + e.what());
    }
  });
  return ds;
}

}  // namespace lunetkit::phantom
