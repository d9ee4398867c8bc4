#include "bcsi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "bcsi/tensor.hpp"

namespace bcsi {

namespace {

void require_same_dims(const LabelVolume& a, const LabelVolume& b, const char* what) {
  if (a.D != b.D || a.H != b.H || a.W != b.W)
    throw ShapeError(std::string(what) + ": mask dims differ");
}

int64_t count_on(const LabelVolume& m) {
  int64_t n = 0;
  for (uint8_t v : m.mask) n += v;
  return n;
}

int64_t count_overlap(const LabelVolume& a, const LabelVolume& b) {
  int64_t n = 0;
  for (size_t i = 0; i < a.mask.size(); ++i) n += a.mask[i] & b.mask[i];
  return n;
}

// directed distances d(a, B) for every a in A, by brute force
std::vector<double> directed_distances(const std::vector<std::array<int, 3>>& A,
                                       const std::vector<std::array<int, 3>>& B) {
  std::vector<double> out;
  out.reserve(A.size());
  for (const auto& a : A) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& b : B) {
      const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
      best = std::min(best, dz * dz + dy * dy + dx * dx);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

struct SurfacePair {
  std::vector<std::array<int, 3>> a, b;
};

SurfacePair surfaces(const LabelVolume& pred, const LabelVolume& gt, const char* what) {
  require_same_dims(pred, gt, what);
  return {surface_voxels(pred), surface_voxels(gt)};
}

}  // namespace

double dice(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred, gt, "dice");
  const int64_t p = count_on(pred), g = count_on(gt);
  if (p + g == 0) return 100.0;
  return 100.0 * 2.0 * static_cast<double>(count_overlap(pred, gt)) / static_cast<double>(p + g);
}

double jaccard(const LabelVolume& pred, const LabelVolume& gt) {
  require_same_dims(pred, gt, "jaccard");
  const int64_t inter = count_overlap(pred, gt);
  const int64_t uni = count_on(pred) + count_on(gt) - inter;
  if (uni == 0) return 100.0;
  return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::array<int, 3>> surface_voxels(const LabelVolume& m) {
  std::vector<std::array<int, 3>> out;
  auto at = [&](int z, int y, int x) -> bool {
    if (z < 0 || z >= m.D || y < 0 || y >= m.H || x < 0 || x >= m.W) return false;
    return m.mask[(static_cast<size_t>(z) * m.H + y) * m.W + x] != 0;
  };
  for (int z = 0; z < m.D; ++z)
    for (int y = 0; y < m.H; ++y)
      for (int x = 0; x < m.W; ++x) {
        if (!at(z, y, x)) continue;
        if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) || !at(z, y + 1, x) ||
            !at(z, y, x - 1) || !at(z, y, x + 1))
          out.push_back({z, y, x});
      }
  if (out.empty()) throw DomainError("surface_voxels: empty mask");
  return out;
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw DomainError("percentile: empty sample");
  if (p < 0.0 || p > 100.0) throw DomainError("percentile: p outside [0,100]");
  std::sort(values.begin(), values.end());
  const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(rank);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double hd95(const LabelVolume& pred, const LabelVolume& gt) {
  SurfacePair s = surfaces(pred, gt, "hd95");
  const double fwd = percentile(directed_distances(s.a, s.b), 95.0);
  const double bwd = percentile(directed_distances(s.b, s.a), 95.0);
  return std::max(fwd, bwd);
}

double asd(const LabelVolume& pred, const LabelVolume& gt) {
  SurfacePair s = surfaces(pred, gt, "asd");
  const std::vector<double> fwd = directed_distances(s.a, s.b);
  const std::vector<double> bwd = directed_distances(s.b, s.a);
  double total = 0.0;
  for (double d : fwd) total += d;
  for (double d : bwd) total += d;
  return total / static_cast<double>(fwd.size() + bwd.size());
}

CaseMetrics compute_case_metrics(int case_id, const LabelVolume& pred, const LabelVolume& gt) {
  CaseMetrics c;
  c.case_id = case_id;
  c.dice = dice(pred, gt);
  c.jaccard = jaccard(pred, gt);
  if (count_on(pred) == 0 || count_on(gt) == 0) {
    c.flagged = true;
    c.hd95 = std::numeric_limits<double>::quiet_NaN();
    c.asd = std::numeric_limits<double>::quiet_NaN();
  } else {
    c.hd95 = hd95(pred, gt);
    c.asd = asd(pred, gt);
  }
  return c;
}

MetricsReport summarize(std::vector<CaseMetrics> cases) {
  MetricsReport r;
  r.cases = std::move(cases);
  for (const CaseMetrics& c : r.cases) {
    if (c.flagged) continue;
    r.mean_dice += c.dice;
    r.mean_jaccard += c.jaccard;
    r.mean_hd95 += c.hd95;
    r.mean_asd += c.asd;
    ++r.evaluated;
  }
  if (r.evaluated > 0) {
    r.mean_dice /= r.evaluated;
    r.mean_jaccard /= r.evaluated;
    r.mean_hd95 /= r.evaluated;
    r.mean_asd /= r.evaluated;
  }
  return r;
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
  std::ofstream f(path);
  if (!f) throw FormatError("write_metrics_csv: cannot open " + path);
  f.precision(17);
  f << "case_id,dice,jaccard,hd95,asd,flag\n";
  for (const CaseMetrics& c : report.cases)
    f << c.case_id << ',' << c.dice << ',' << c.jaccard << ',' << c.hd95 << ',' << c.asd << ','
      << (c.flagged ? "empty" : "ok") << '\n';
}

void write_metrics_json(const std::string& path, const MetricsReport& report) {
  nlohmann::json j;
  j["cases"] = nlohmann::json::array();
  for (const CaseMetrics& c : report.cases) {
    nlohmann::json row{{"case_id", c.case_id}, {"dice", c.dice},     {"jaccard", c.jaccard},
                       {"flag", c.flagged ? "empty" : "ok"}};
    if (!c.flagged) {
      row["hd95"] = c.hd95;
      row["asd"] = c.asd;
    }
    j["cases"].push_back(row);
  }
  j["mean"] = {{"dice", report.mean_dice},
               {"jaccard", report.mean_jaccard},
               {"hd95", report.mean_hd95},
               {"asd", report.mean_asd},
               {"evaluated", report.evaluated}};
  std::ofstream f(path);
  if (!f) throw FormatError("write_metrics_json: cannot open " + path);
  f << j.dump(2) << '\n';
}

}  // namespace bcsi
