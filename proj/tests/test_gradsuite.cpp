#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <string>

#include "bcsi/gradsuite.hpp"

using namespace bcsi;

TEST_CASE("op, network and router checks pass and every op is listed") {
  const GradSuiteReport rep = run_grad_suite(false);
  CHECK(rep.all_pass);
  for (const GradCheckEntry& e : rep.entries) {
    INFO(e.name << " max_rel_err=" << e.max_rel_err << " tol=" << e.tolerance);
    CHECK(e.pass);
  }

  std::set<std::string> names;
  for (const GradCheckEntry& e : rep.entries) names.insert(e.name);
  CHECK(names.size() == rep.entries.size());  // no duplicate entries
  for (const char* required :
       {"op.add", "op.sub", "op.mul", "op.div", "op.mask_mul", "op.relu", "op.sigmoid", "op.exp",
        "op.log", "op.power", "op.clamp", "op.sum_all", "op.mean_all", "op.max_all",
        "op.softmax_axis0", "op.reshape", "op.transpose2d", "op.slice", "op.pad", "op.concat",
        "op.upsample_nearest", "op.downsample_nearest", "op.gather_channels",
        "op.scatter_channels", "op.matmul", "op.conv3d_s1p1", "op.conv_transpose3d_s2",
        "op.group_norm", "network.end_to_end", "router.straight_through_matches",
        "router.straight_through_fd", "negative_control.detached_factor_flagged"}) {
    INFO(required);
    CHECK(names.count(required) == 1);
  }
}

TEST_CASE("negative control records a large error, not a small one") {
  const GradSuiteReport rep = run_grad_suite(false);
  bool found = false;
  for (const GradCheckEntry& e : rep.entries)
    if (e.name == "negative_control.detached_factor_flagged") {
      found = true;
      CHECK(e.max_rel_err > 0.1);  // the broken gradient must be clearly visible
      CHECK(e.pass);
    }
  CHECK(found);
}

TEST_CASE("report formatting carries one line per entry") {
  const GradSuiteReport rep = run_grad_suite(false);
  const std::string text = format_grad_report(rep);
  size_t lines = 0;
  for (char c : text) lines += c == '\n' ? 1 : 0;
  CHECK(lines == rep.entries.size() + 1);  // entries plus the summary line
  CHECK(text.find("network.end_to_end") != std::string::npos);
}

TEST_CASE("full objective gradient matches finite differences") {
  const GradSuiteReport rep = run_grad_suite(true);
  CHECK(rep.all_pass);
  bool frozen_seen = false, fd_seen = false;
  for (const GradCheckEntry& e : rep.entries) {
    INFO(e.name << " max_rel_err=" << e.max_rel_err << " tol=" << e.tolerance);
    CHECK(e.pass);
    frozen_seen = frozen_seen || e.name == "objective.frozen_matches_real";
    fd_seen = fd_seen || e.name == "objective.miniature_fd";
  }
  CHECK(frozen_seen);
  CHECK(fd_seen);
}
