#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "bcsi/checkpoint.hpp"
#include "bcsi/trainer.hpp"

using namespace bcsi;
namespace fs = std::filesystem;

namespace {

RunConfig mini_config() {
  RunConfig c;
  c.seed = 11;
  c.t_max = 6;
  c.batch_labeled = c.batch_unlabeled = 1;
  c.crop_size = {8, 8, 8};
  c.checkpoint_every = 2;
  c.network.base_channels = 2;
  c.network.levels = 2;
  c.network.bottleneck_channels = 8;
  c.network.gn_groups = 2;
  c.router.channels = 8;
  c.router.k = 2;
  c.router.hidden_ratio = 2;
  c.bci.d_proj = 4;
  c.bci.queue_capacity = 6;
  c.data.n_cases = 5;
  c.data.n_test = 2;
  c.data.labeled_ratio = 0.25;
  c.data.gen.dims = {12, 12, 12};
  c.data.gen.radius_lo = 2.0;
  c.data.gen.radius_hi = 3.5;
  c.validate();
  return c;
}

// 1 labeled / 2 unlabeled / 2 test cases on disk, labels for everyone
std::string write_dataset(const RunConfig& c, const std::string& name) {
  const std::string dir = (fs::temp_directory_path() / name).string();
  fs::remove_all(dir);
  fs::create_directories(dir);
  DatasetManifest m;
  m.seed = 999;
  m.labeled_ids = {0};
  m.unlabeled_ids = {1, 2};
  m.test_ids = {3, 4};
  m.generator_params = c.data.gen;
  for (int id = 0; id < 5; ++id) {
    auto [vol, lab] = generate_case(1000 + static_cast<uint64_t>(id), c.data.gen);
    write_volume(volume_path(dir, id), vol);
    write_volume(label_path(dir, id), lab);
  }
  write_manifest(dir + "/manifest.json", m);
  return dir;
}

bool has_prefix(const ParamSet& p, const std::string& prefix) {
  for (const auto& [name, t] : p.items())
    if (name.rfind(prefix, 0) == 0) return true;
  return false;
}

bool params_bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.items()[i].first != b.items()[i].first) return false;
    const Tensor& ta = a.items()[i].second;
    const Tensor& tb = b.items()[i].second;
    if (ta.shape() != tb.shape()) return false;
    for (int64_t j = 0; j < ta.numel(); ++j)
      if (f64_as_u64(ta.data()[j]) != f64_as_u64(tb.data()[j])) return false;
  }
  return true;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(bool(is));
  return std::vector<char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("init_state registers parameter groups per the toggles") {
  RunConfig c = mini_config();
  SUBCASE("full model") {
    TrainerState s = init_state(c);
    CHECK(has_prefix(s.params, "net."));
    CHECK(has_prefix(s.params, "router."));
    CHECK(has_prefix(s.params, "bci."));
    CHECK(s.momentum.size() == s.params.size());
    for (size_t i = 0; i < s.params.size(); ++i) {
      CHECK(s.momentum[i].size() == static_cast<size_t>(s.params.items()[i].second.numel()));
      for (double v : s.momentum[i]) CHECK(v == 0.0);
    }
    CHECK(s.q_l.size() == c.bci.queue_capacity);  // queues start full
    CHECK(s.q_u.size() == c.bci.queue_capacity);
    CHECK(s.t == 0);
  }
  SUBCASE("interaction off drops router and attention") {
    c.ablation.bci = false;
    TrainerState s = init_state(c);
    CHECK(has_prefix(s.params, "net."));
    CHECK_FALSE(has_prefix(s.params, "router."));
    CHECK_FALSE(has_prefix(s.params, "bci."));
  }
  SUBCASE("channel selection off keeps attention but no scorer") {
    c.ablation.cr = false;
    TrainerState s = init_state(c);
    CHECK_FALSE(has_prefix(s.params, "router."));
    CHECK(has_prefix(s.params, "bci."));
  }
  SUBCASE("random router mode needs no scorer parameters") {
    c.router_mode = RouterMode::random;
    TrainerState s = init_state(c);
    CHECK_FALSE(has_prefix(s.params, "router."));
    CHECK(has_prefix(s.params, "bci."));
  }
}

TEST_CASE("polynomial decay starts at lr0 and stays positive") {
  OptimizerConfig opt;
  CHECK(poly_lr(opt, 1, 2000) == 0.01);  // first step uses lr0 exactly
  CHECK(poly_lr(opt, 2000, 2000) == doctest::Approx(0.01 * std::pow(1.0 / 2000.0, 0.9)));
  CHECK(poly_lr(opt, 2000, 2000) > 0.0);
  for (int64_t t = 1; t < 40; ++t) CHECK(poly_lr(opt, t, 40) > poly_lr(opt, t + 1, 40));
  CHECK_THROWS_AS(poly_lr(opt, 0, 10), DomainError);
  CHECK_THROWS_AS(poly_lr(opt, 11, 10), DomainError);
}

TEST_CASE("a training step reports finite losses and moves the parameters") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_step");
  const Dataset data = load_dataset(dir);
  CHECK(data.labeled.size() == 1);
  CHECK(data.unlabeled.size() == 2);
  CHECK(data.test.size() == 2);
  CHECK_FALSE(data.unlabeled[0].has_label);  // the unlabeled stream never sees GT

  TrainerState s = init_state(c);
  std::vector<double> before(s.params.items()[0].second.data(),
                             s.params.items()[0].second.data() +
                                 s.params.items()[0].second.numel());
  const LossBreakdown bd = train_step(s, data);
  CHECK(s.t == 1);
  CHECK(std::isfinite(bd.total_value));
  CHECK(bd.l_sup > 0.0);
  CHECK(bd.l_unsup > 0.0);
  CHECK(bd.l_cons >= 0.0);
  CHECK(bd.lambda == lambda_u(1.0, 6.0));
  CHECK(bd.total_value ==
        doctest::Approx(bd.l_sup + bd.l_cons + bd.lambda * bd.l_unsup).epsilon(1e-12));

  const double* after = s.params.items()[0].second.data();
  bool moved = false;
  for (size_t j = 0; j < before.size(); ++j) moved = moved || before[j] != after[j];
  CHECK(moved);
  CHECK(s.q_l.size() == c.bci.queue_capacity);  // enqueue keeps the queues full
  fs::remove_all(dir);
}

TEST_CASE("identical config and seed give bitwise identical trajectories") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_det");
  const Dataset data = load_dataset(dir);
  TrainerState a = init_state(c);
  TrainerState b = init_state(c);
  for (int i = 0; i < 3; ++i) {
    const LossBreakdown ba = train_step(a, data);
    const LossBreakdown bb = train_step(b, data);
    CHECK(f64_as_u64(ba.total_value) == f64_as_u64(bb.total_value));
  }
  CHECK(params_bitwise_equal(a.params, b.params));
  fs::remove_all(dir);
}

TEST_CASE("checkpoint resume matches the uninterrupted run bitwise") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_resume");
  const Dataset data = load_dataset(dir);

  TrainerState a = init_state(c);
  std::vector<double> tail_a;
  for (int i = 0; i < 4; ++i) tail_a.push_back(train_step(a, data).total_value);

  TrainerState b = init_state(c);
  train_step(b, data);
  train_step(b, data);
  const std::string ck = (fs::temp_directory_path() / "bcsi_mid.bck").string();
  save_state(ck, b);

  TrainerState r = init_state(c);
  load_state(ck, r);
  CHECK(r.t == 2);
  CHECK(params_bitwise_equal(r.params, b.params));
  CHECK(r.q_l.serialize() == b.q_l.serialize());
  CHECK(r.q_u.serialize() == b.q_u.serialize());
  std::vector<double> tail_r;
  for (int i = 0; i < 2; ++i) tail_r.push_back(train_step(r, data).total_value);
  CHECK(f64_as_u64(tail_r[0]) == f64_as_u64(tail_a[2]));
  CHECK(f64_as_u64(tail_r[1]) == f64_as_u64(tail_a[3]));
  CHECK(params_bitwise_equal(r.params, a.params));

  std::remove(ck.c_str());
  fs::remove_all(dir);
}

TEST_CASE("load_state rejects a checkpoint from a different model") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_badload");
  TrainerState full = init_state(c);
  const std::string ck = (fs::temp_directory_path() / "bcsi_full.bck").string();
  save_state(ck, full);

  RunConfig c2 = mini_config();
  c2.ablation.bci = false;
  TrainerState bare = init_state(c2);
  CHECK_THROWS_AS(load_state(ck, bare), FormatError);
  std::remove(ck.c_str());
  fs::remove_all(dir);
}

TEST_CASE("non-finite losses abort the step") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_nan");
  const Dataset data = load_dataset(dir);
  TrainerState s = init_state(c);
  // poison past the last relu: a NaN in an encoder conv would be swallowed
  // by relu(NaN) = 0, but the head bias reaches the loss unclamped
  s.params.at("net.head.b").mutable_data()[0] = std::nan("");
  CHECK_THROWS_WITH_AS(train_step(s, data), doctest::Contains("non-finite"), NumericError);
  fs::remove_all(dir);
}

TEST_CASE("ablation toggles reduce the objective as documented") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_toggles");
  const Dataset data = load_dataset(dir);

  SUBCASE("all off: supervised-only training on weak views") {
    c.ablation = {false, false, false};
    TrainerState s = init_state(c);
    const LossBreakdown bd = train_step(s, data);
    CHECK(bd.l_cons == 0.0);
    CHECK(bd.l_unsup == 0.0);
    CHECK(bd.total_value == bd.l_sup);
  }
  SUBCASE("perturbation off, interaction on: weak-view self-training") {
    c.ablation = {false, true, true};
    TrainerState s = init_state(c);
    const LossBreakdown bd = train_step(s, data);
    CHECK(bd.l_cons == 0.0);
    CHECK(bd.l_unsup > 0.0);
  }
  SUBCASE("interaction off keeps the full perturbation objective") {
    c.ablation = {true, false, false};
    TrainerState s = init_state(c);
    const LossBreakdown bd = train_step(s, data);
    CHECK(bd.l_sup > 0.0);
    CHECK(bd.l_unsup > 0.0);
    CHECK(std::isfinite(bd.total_value));
  }
  SUBCASE("selection off feeds every channel to the interaction") {
    c.ablation.cr = false;
    TrainerState s = init_state(c);
    CHECK(std::isfinite(train_step(s, data).total_value));
  }
  SUBCASE("direction none leaves both streams untouched but still trains") {
    c.bci.direction = Direction::none;
    TrainerState s = init_state(c);
    CHECK(std::isfinite(train_step(s, data).total_value));
  }
  SUBCASE("weak-only interaction trains") {
    c.bci_views = BciViews::weak;
    TrainerState s = init_state(c);
    CHECK(std::isfinite(train_step(s, data).total_value));
  }
  SUBCASE("random router mode trains without scorer parameters") {
    c.router_mode = RouterMode::random;
    TrainerState a = init_state(c);
    TrainerState b = init_state(c);
    const double va = train_step(a, data).total_value;
    const double vb = train_step(b, data).total_value;
    CHECK(f64_as_u64(va) == f64_as_u64(vb));  // random masks come from a seeded stream
  }
  fs::remove_all(dir);
}

TEST_CASE("missing streams are reported before any work") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_missing");
  Dataset data = load_dataset(dir);
  TrainerState s = init_state(c);
  Dataset no_unlabeled{data.labeled, {}, data.test};
  CHECK_THROWS_AS(train_step(s, no_unlabeled), ConfigError);
  Dataset no_labeled{{}, data.unlabeled, data.test};
  CHECK_THROWS_AS(train_step(s, no_labeled), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("evaluate_cases is deterministic and guards its inputs") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_eval");
  const Dataset data = load_dataset(dir);
  TrainerState s = init_state(c);
  const MetricsReport r1 = evaluate_cases(s, data.test);
  const MetricsReport r2 = evaluate_cases(s, data.test);
  REQUIRE(r1.cases.size() == 2);
  CHECK(r1.cases[0].case_id == 3);
  CHECK(r1.cases[1].case_id == 4);
  for (size_t i = 0; i < r1.cases.size(); ++i) {
    CHECK(f64_as_u64(r1.cases[i].dice) == f64_as_u64(r2.cases[i].dice));
    CHECK(r1.cases[i].dice >= 0.0);
    CHECK(r1.cases[i].dice <= 100.0);
  }
  CHECK_THROWS_AS(evaluate_cases(s, {}), ConfigError);
  CHECK_THROWS_AS(evaluate_cases(s, data.unlabeled), ConfigError);  // no ground truth
  fs::remove_all(dir);
}

TEST_CASE("generate_dataset is reproducible and guards the output directory") {
  RunConfig c = mini_config();
  const std::string dir = (fs::temp_directory_path() / "bcsi_gen").string();
  fs::remove_all(dir);
  const DatasetManifest m = generate_dataset(dir, c, false);
  CHECK(m.labeled_ids.size() + m.unlabeled_ids.size() + m.test_ids.size() == 5);
  CHECK(m.test_ids.size() == 2);
  CHECK(m.labeled_ids.size() == 1);  // round(0.25 * 3 train cases)
  for (int id = 0; id < 5; ++id) {
    CHECK(fs::exists(volume_path(dir, id)));
    CHECK(fs::exists(label_path(dir, id)));
  }
  CHECK_NOTHROW(require_dataset_matches(dir, c));
  CHECK(load_dataset(dir).labeled.size() == 1);

  CHECK_THROWS_AS(generate_dataset(dir, c, false), ConfigError);  // no silent clobber
  const std::vector<char> before = slurp(volume_path(dir, 0));
  generate_dataset(dir, c, true);
  CHECK(slurp(volume_path(dir, 0)) == before);  // regeneration is byte-identical

  RunConfig bad = mini_config();
  bad.crop_size = {16, 16, 16};  // larger than the generated volumes
  const std::string dir2 = (fs::temp_directory_path() / "bcsi_gen_bad").string();
  fs::remove_all(dir2);
  CHECK_THROWS_AS(generate_dataset(dir2, bad, false), ConfigError);
  CHECK_FALSE(fs::exists(dir2));  // validation failed before any write
  fs::remove_all(dir);
}

TEST_CASE("dataset and config must agree before training") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_match");
  CHECK_NOTHROW(require_dataset_matches(dir, c));
  RunConfig wrong_dims = c;
  wrong_dims.data.gen.dims = {16, 16, 16};
  wrong_dims.crop_size = {8, 8, 8};
  CHECK_THROWS_AS(require_dataset_matches(dir, wrong_dims), ConfigError);
  RunConfig wrong_cases = c;
  wrong_cases.data.n_cases = 7;
  CHECK_THROWS_AS(require_dataset_matches(dir, wrong_cases), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("run_training writes logs, checkpoints and bitwise-resumable state") {
  RunConfig c = mini_config();
  const std::string dir = write_dataset(c, "bcsi_trainer_run");
  c.data_dir = dir;
  const std::string out_a = (fs::temp_directory_path() / "bcsi_run_a").string();
  fs::remove_all(out_a);
  c.out_dir = out_a;
  run_training(c);

  // loss log: header plus exactly t_max rows, final warm-up weight 0.1
  std::ifstream csv(out_a + "/loss.csv");
  REQUIRE(bool(csv));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "iter,l_sup,l_cons,l_unsup,lambda_u,total");
  std::vector<std::string> rows;
  while (std::getline(csv, line)) rows.push_back(line);
  REQUIRE(rows.size() == 6);
  {
    std::stringstream last(rows.back());
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(last, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() == 6);
    CHECK(cells[0] == "6");
    CHECK(std::stod(cells[4]) == 0.1);  // lambda_u(t_max) = 0.1
  }

  CHECK(fs::exists(out_a + "/ckpt_2.bck"));
  CHECK(fs::exists(out_a + "/ckpt_4.bck"));
  CHECK_FALSE(fs::exists(out_a + "/ckpt_6.bck"));  // the last step goes to final.bck
  CHECK(fs::exists(out_a + "/final.bck"));
  CHECK(dump_config(load_config(out_a + "/config.json")) == dump_config(c));

  // same config, fresh directory: every artifact byte matches
  const std::string out_b = (fs::temp_directory_path() / "bcsi_run_b").string();
  fs::remove_all(out_b);
  RunConfig cb = c;
  cb.out_dir = out_b;
  run_training(cb);
  CHECK(slurp(out_a + "/final.bck") == slurp(out_b + "/final.bck"));
  CHECK(slurp(out_a + "/loss.csv") != std::vector<char>{});
  {
    std::ifstream fa(out_a + "/loss.csv"), fb(out_b + "/loss.csv");
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    const std::string a_txt = sa.str(), b_txt = sb.str();
    // the config copy differs only in out_dir; the losses must not
    CHECK(a_txt == b_txt);
  }

  // resuming from the midpoint checkpoint reproduces the final state bitwise
  const std::string out_c = (fs::temp_directory_path() / "bcsi_run_c").string();
  fs::remove_all(out_c);
  RunConfig cc = c;
  cc.out_dir = out_c;
  run_training(cc, out_a + "/ckpt_2.bck");
  CHECK(slurp(out_c + "/final.bck") == slurp(out_a + "/final.bck"));

  fs::remove_all(out_a);
  fs::remove_all(out_b);
  fs::remove_all(out_c);
  fs::remove_all(dir);
}
