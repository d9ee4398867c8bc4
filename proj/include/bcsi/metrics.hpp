#pragma once

#include <array>
#include <string>
#include <vector>

#include "bcsi/volume.hpp"

// Overlap and surface-distance metrics on binary masks: Dice and Jaccard as
// percentages, 95th-percentile and average symmetric surface distances in
// voxel units (unit isotropic spacing, voxel-center coordinates).

namespace bcsi {

// 100 * 2|P∩G| / (|P|+|G|); both masks empty -> 100
double dice(const LabelVolume& pred, const LabelVolume& gt);

// 100 * |P∩G| / |P∪G|; both masks empty -> 100
double jaccard(const LabelVolume& pred, const LabelVolume& gt);

// foreground voxels with a 6-connected background or out-of-bounds neighbor
std::vector<std::array<int, 3>> surface_voxels(const LabelVolume& mask);

// linear interpolation between order statistics; p in [0,100]
double percentile(std::vector<double> values, double p);

// max of the two directed 95th-percentile surface distances; both non-empty
double hd95(const LabelVolume& pred, const LabelVolume& gt);

// symmetric mean surface distance; both masks non-empty
double asd(const LabelVolume& pred, const LabelVolume& gt);

struct CaseMetrics {
  int case_id = -1;
  double dice = 0.0, jaccard = 0.0, hd95 = 0.0, asd = 0.0;
  bool flagged = false;  // an empty mask made the surface distances undefined
};

struct MetricsReport {
  std::vector<CaseMetrics> cases;
  double mean_dice = 0.0, mean_jaccard = 0.0, mean_hd95 = 0.0, mean_asd = 0.0;
  int evaluated = 0;  // unflagged case count feeding the means
};

// overlap metrics always; surface distances only when both masks are non-empty,
// otherwise the case is flagged and excluded from every mean
CaseMetrics compute_case_metrics(int case_id, const LabelVolume& pred, const LabelVolume& gt);

MetricsReport summarize(std::vector<CaseMetrics> cases);

// header: case_id,dice,jaccard,hd95,asd,flag ; flagged rows print nan distances
void write_metrics_csv(const std::string& path, const MetricsReport& report);
void write_metrics_json(const std::string& path, const MetricsReport& report);

}  // namespace bcsi
