#include "bcsi/ablate.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "bcsi/trainer.hpp"

namespace bcsi {

const std::vector<std::string>& known_cells() {
  static const std::vector<std::string> names = {
      "baseline",  "ssp",      "bci",      "full",           "k4",
      "k8",        "k16",      "k32",      "k64",            "dir_none",
      "dir_l2u",   "dir_u2l",  "dir_both", "router_learned", "router_random"};
  return names;
}

AblationCell make_cell(const std::string& name, const RunConfig& base) {
  AblationCell cell{name, base};
  RunConfig& c = cell.cfg;
  c.ablation = {true, true, true};
  if (name == "baseline") {
    c.ablation = {false, false, false};
  } else if (name == "ssp") {
    c.ablation = {true, false, false};
  } else if (name == "bci") {
    c.ablation = {true, true, false};
  } else if (name == "full") {
    // base toggles all on already
  } else if (name.size() > 1 && name[0] == 'k' && name.find_first_not_of("0123456789", 1) ==
                                                      std::string::npos) {
    c.router.k = std::stoi(name.substr(1));
  } else if (name.rfind("dir_", 0) == 0) {
    c.bci.direction = parse_direction(name.substr(4));
  } else if (name.rfind("router_", 0) == 0) {
    c.router_mode = parse_router_mode(name.substr(7));
  } else {
    std::string all;
    for (const std::string& n : known_cells()) all += (all.empty() ? "" : ", ") + n;
    throw ConfigError("unknown ablation cell \"" + name + "\" (known: " + all + ")");
  }
  return cell;
}

namespace {

int exchanged_channels(const RunConfig& c) {
  if (!c.ablation.bci) return 0;
  return c.ablation.cr ? c.router.k : c.router.channels;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::string>& cells,
                                      int seeds, const std::string& out_dir) {
  if (cells.empty()) throw ConfigError("run_ablation: no cells requested");
  if (seeds < 1) throw ConfigError("run_ablation: seeds must be >= 1");
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  std::vector<std::string> data_dirs;
  std::vector<Dataset> datasets;
  for (int s = 0; s < seeds; ++s) {
    RunConfig cs = base;
    cs.seed = base.seed + static_cast<uint64_t>(s);
    const std::string dsdir = out_dir + "/data_s" + std::to_string(s);
    generate_dataset(dsdir, cs, true);
    data_dirs.push_back(dsdir);
    datasets.push_back(load_dataset(dsdir));
  }

  std::vector<AblationRow> rows;
  for (const std::string& name : cells) {
    const AblationCell cell = make_cell(name, base);
    if (cell.cfg.ablation.bci && cell.cfg.ablation.cr &&
        cell.cfg.router.k > cell.cfg.router.channels) {
      std::cerr << "skipping cell " << name << ": K=" << cell.cfg.router.k
                << " exceeds the channel pool C=" << cell.cfg.router.channels << "\n";
      continue;
    }
    AblationRow row;
    row.cell = name;
    row.toggles = cell.cfg.ablation;
    row.k = exchanged_channels(cell.cfg);
    row.direction = cell.cfg.bci.direction;
    row.router_mode = cell.cfg.router_mode;
    row.seeds = seeds;
    for (int s = 0; s < seeds; ++s) {
      RunConfig c = cell.cfg;
      c.seed = base.seed + static_cast<uint64_t>(s);
      c.data_dir = data_dirs[static_cast<size_t>(s)];
      c.out_dir = out_dir + "/" + name + "/s" + std::to_string(s);
      fs::remove_all(c.out_dir);
      run_training(c);
      TrainerState state = init_state(c);
      load_state(c.out_dir + "/final.bck", state);
      const MetricsReport rep = evaluate_cases(state, datasets[static_cast<size_t>(s)].test);
      row.dice += rep.mean_dice / seeds;
      row.jaccard += rep.mean_jaccard / seeds;
      row.hd95 += rep.mean_hd95 / seeds;
      row.asd += rep.mean_asd / seeds;
      std::cout << "cell " << name << " seed " << s << ": dice=" << rep.mean_dice
                << " jaccard=" << rep.mean_jaccard << "\n";
    }
    rows.push_back(row);
  }
  return rows;
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw FormatError("write_ablation_csv: cannot open " + path);
  f << "cell,ssp,bci,cr,k,direction,router,seeds,dice,jaccard,hd95,asd\n";
  f << std::fixed << std::setprecision(4);
  for (const AblationRow& r : rows)
    f << r.cell << ',' << (r.toggles.ssp ? 1 : 0) << ',' << (r.toggles.bci ? 1 : 0) << ','
      << (r.toggles.cr ? 1 : 0) << ',' << r.k << ',' << direction_name(r.direction) << ','
      << router_mode_name(r.router_mode) << ',' << r.seeds << ',' << r.dice << ',' << r.jaccard
      << ',' << r.hd95 << ',' << r.asd << '\n';
}

}  // namespace bcsi
