#include "urec/report.hpp"

#include "urec/checkpoint.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace urec::report {

namespace {

auto first_seen_rank(std::vector<std::string> &seen, std::string const &key) -> std::size_t
{
  auto it = std::find(seen.begin(), seen.end(), key);
  if (it == seen.end()) {
    seen.push_back(key);
    return seen.size() - 1;
  }
  return static_cast<std::size_t>(it - seen.begin());
}

} // namespace

auto collect(std::vector<io::fs::path> const &roots) -> std::vector<ReportRow>
{
  std::vector<io::fs::path> manifests;
  for (auto const &root : roots) {
    if (!io::fs::exists(root)) {
      throw IoError("report input " + root.string() + " does not exist");
    }
    if (io::fs::is_regular_file(root)) {
      manifests.push_back(root);
      continue;
    }
    for (auto const &entry : io::fs::recursive_directory_iterator(root)) {
      if (entry.is_regular_file() && entry.path().filename() == io::kRunManifest) {
        manifests.push_back(entry.path());
      }
    }
  }
  std::sort(manifests.begin(), manifests.end());

  std::vector<ReportRow> rows;
  std::set<std::pair<std::string, double>> baselines;
  for (auto const &path : manifests) {
    auto const m = io::run_manifest_from_json(io::read_json(path));
    if (m.command != "evaluate") {
      continue;
    }
    auto const &r = m.results;
    auto const label = r.at("label").get<std::string>();
    auto const params = r.at("params").get<Index>();
    for (auto const &t : r.at("tables")) {
      auto const anatomy = t.at("anatomy").get<std::string>();
      double const accel = t.at("accel").get<double>();
      auto const &mm = t.at("mean_model");
      rows.push_back({label, anatomy, accel, io::psnr_from_json(mm.at("psnr_db")), mm.at("ssim_pct").get<double>(),
                      params});
      if (baselines.insert({anatomy, accel}).second) {
        auto const &zf = t.at("mean_zero_filled");
        rows.push_back({kUndersampledLabel, anatomy, accel, io::psnr_from_json(zf.at("psnr_db")),
                        zf.at("ssim_pct").get<double>(), 0});
      }
    }
  }
  return rows;
}

auto with_averages(std::vector<ReportRow> rows) -> std::vector<ReportRow>
{
  rows.erase(std::remove_if(rows.begin(), rows.end(), [](ReportRow const &r) { return r.anatomy == kAverageAnatomy; }),
             rows.end());
  std::vector<std::string> models{kUndersampledLabel};
  std::vector<std::string> anatomies;
  for (auto const &r : rows) {
    first_seen_rank(models, r.model);
    first_seen_rank(anatomies, r.anatomy);
  }
  std::map<std::pair<std::string, double>, std::vector<ReportRow const *>> groups;
  for (auto const &r : rows) {
    groups[{r.model, r.accel}].push_back(&r);
  }
  std::vector<ReportRow> averages;
  for (auto const &[key, members] : groups) {
    ReportRow avg{key.first, kAverageAnatomy, key.second, 0.0, 0.0, 0};
    for (auto const *m : members) {
      avg.psnr_db += m->psnr_db;
      avg.ssim_pct += m->ssim_pct;
      avg.params = std::max(avg.params, m->params);
    }
    avg.psnr_db /= static_cast<double>(members.size());
    avg.ssim_pct /= static_cast<double>(members.size());
    averages.push_back(avg);
  }
  rows.insert(rows.end(), averages.begin(), averages.end());
  anatomies.push_back(kAverageAnatomy);
  std::stable_sort(rows.begin(), rows.end(), [&](ReportRow const &a, ReportRow const &b) {
    auto key = [&](ReportRow const &r) {
      return std::make_tuple(r.accel, first_seen_rank(models, r.model), first_seen_rank(anatomies, r.anatomy));
    };
    return key(a) < key(b);
  });
  return rows;
}

auto format_table(std::vector<ReportRow> const &rows) -> std::string
{
  std::vector<std::array<std::string, 6>> cells;
  cells.push_back({"model", "anatomy", "accel", "PSNR(dB)", "SSIM(%)", "params"});
  for (auto const &r : rows) {
    cells.push_back({r.model, r.anatomy, fmt::format("{:g}x", r.accel),
                     std::isinf(r.psnr_db) ? "inf" : fmt::format("{:.2f}", r.psnr_db), fmt::format("{:.2f}", r.ssim_pct),
                     fmt::format("{}", r.params)});
  }
  std::array<std::size_t, 6> width{};
  for (auto const &row : cells) {
    for (std::size_t c = 0; c < 6; c++) {
      width[c] = std::max(width[c], row[c].size());
    }
  }
  std::string out;
  for (std::size_t i = 0; i < cells.size(); i++) {
    for (std::size_t c = 0; c < 6; c++) {
      // Text columns left-aligned, numbers right-aligned.
      out += c < 2 ? fmt::format("{:<{}}", cells[i][c], width[c]) : fmt::format("{:>{}}", cells[i][c], width[c]);
      out += c + 1 < 6 ? "  " : "\n";
    }
    if (i == 0) {
      std::size_t total = 0;
      for (auto w : width) {
        total += w;
      }
      out += std::string(total + 10, '-') + "\n";
    }
  }
  return out;
}

auto to_csv(std::vector<ReportRow> const &rows) -> std::string
{
  std::string out = "model,anatomy,accel,PSNR(dB),SSIM(%),params\n";
  for (auto const &r : rows) {
    out += fmt::format("{},{},{:g},{},{:.6f},{}\n", r.model, r.anatomy, r.accel,
                       std::isinf(r.psnr_db) ? std::string("inf") : fmt::format("{:.6f}", r.psnr_db), r.ssim_pct,
                       r.params);
  }
  return out;
}

auto to_json(std::vector<ReportRow> const &rows) -> io::Json
{
  io::Json out = io::Json::array();
  for (auto const &r : rows) {
    out.push_back({{"model", r.model},
                   {"anatomy", r.anatomy},
                   {"accel", r.accel},
                   {"psnr_db", io::psnr_to_json(r.psnr_db)},
                   {"ssim_pct", r.ssim_pct},
                   {"params", r.params}});
  }
  return out;
}

auto mean_psnr(std::vector<ReportRow> const &rows, std::string const &model, double accel) -> double
{
  double sum = 0.0;
  int n = 0;
  for (auto const &r : rows) {
    if (r.model == model && r.accel == accel && r.anatomy != kAverageAnatomy) {
      sum += r.psnr_db;
      n++;
    }
  }
  if (n == 0) {
    throw ArgumentError(fmt::format("no report rows for model '{}' at {}x", model, accel));
  }
  return sum / n;
}

} // namespace urec::report
