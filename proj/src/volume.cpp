#include "bcsi/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace bcsi {

namespace {

// rotation matrix from a random unit quaternion: uniform over orientations
std::array<std::array<double, 3>, 3> random_rotation(Rng& gen) {
  double q[4];
  double norm = 0.0;
  do {
    norm = 0.0;
    for (auto& c : q) {
      c = gen.gaussian(0.0, 1.0);
      norm += c * c;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (auto& c : q) c /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

// smooth low-frequency field: trilinear interpolation of a 3x3x3 random grid
struct BiasField {
  double grid[27];
  double amplitude;

  BiasField(Rng& gen, double amp) : amplitude(amp) {
    for (auto& g : grid) g = gen.uniform(-1.0, 1.0);
  }

  double at(double fz, double fy, double fx) const {
    // fractional coordinates in [0,1] mapped onto the 2-cell grid
    const auto cell = [](double f, int& i0, double& t) {
      const double u = f * 2.0;
      i0 = std::min(1, static_cast<int>(u));
      t = u - i0;
    };
    int iz, iy, ix;
    double tz, ty, tx;
    cell(fz, iz, tz);
    cell(fy, iy, ty);
    cell(fx, ix, tx);
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const double wz = dz ? tz : 1.0 - tz;
          const double wy = dy ? ty : 1.0 - ty;
          const double wx = dx ? tx : 1.0 - tx;
          acc += wz * wy * wx * grid[(iz + dz) * 9 + (iy + dy) * 3 + (ix + dx)];
        }
    return amplitude * acc;
  }
};

void paint_ellipsoid(LabelVolume& lab, Rng& gen, const GeneratorParams& p) {
  const int D = lab.D, H = lab.H, W = lab.W;
  const double rz = gen.uniform(p.radius_lo, p.radius_hi);
  const double ry = gen.uniform(p.radius_lo, p.radius_hi);
  const double rx = gen.uniform(p.radius_lo, p.radius_hi);
  const double rmax = std::max({rz, ry, rx});
  // center placed so the bounding sphere stays inside the volume
  const double cz = gen.uniform(rmax, D - rmax);
  const double cy = gen.uniform(rmax, H - rmax);
  const double cx = gen.uniform(rmax, W - rmax);
  const auto R = random_rotation(gen);

  const int z0 = std::max(0, static_cast<int>(std::floor(cz - rmax)));
  const int z1 = std::min(D - 1, static_cast<int>(std::ceil(cz + rmax)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - rmax)));
  const int y1 = std::min(H - 1, static_cast<int>(std::ceil(cy + rmax)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rmax)));
  const int x1 = std::min(W - 1, static_cast<int>(std::ceil(cx + rmax)));
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dz = z - cz, dy = y - cy, dx = x - cx;
        // rotate the offset into the ellipsoid frame, then scale by radii
        const double ez = (R[0][0] * dz + R[0][1] * dy + R[0][2] * dx) / rz;
        const double ey = (R[1][0] * dz + R[1][1] * dy + R[1][2] * dx) / ry;
        const double ex = (R[2][0] * dz + R[2][1] * dy + R[2][2] * dx) / rx;
        if (ez * ez + ey * ey + ex * ex <= 1.0)
          lab.mask[(static_cast<size_t>(z) * H + y) * W + x] = 1;
      }
}

}  // namespace

std::pair<Volume, LabelVolume> generate_case(uint64_t seed, const GeneratorParams& p) {
  const int D = p.dims[0], H = p.dims[1], W = p.dims[2];
  if (D < 8 || H < 8 || W < 8) throw FormatError("generate_case: dims must all be >= 8");
  if (p.n_blobs < 1) throw FormatError("generate_case: n_blobs must be >= 1");
  if (p.radius_lo <= 0 || p.radius_lo > p.radius_hi)
    throw FormatError("generate_case: bad radius range");
  if (2.0 * p.radius_hi >= std::min({D, H, W}))
    throw FormatError("generate_case: radius does not fit inside dims");
  if (p.noise_sigma < 0) throw FormatError("generate_case: negative noise sigma");

  Rng gen(Rng(seed).child(0xB10B).key());
  const size_t n = static_cast<size_t>(D) * H * W;

  LabelVolume lab;
  lab.D = D; lab.H = H; lab.W = W;
  constexpr int kMaxAttempts = 64;
  bool ok = false;
  lab.mask.resize(n, 0);
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    std::fill(lab.mask.begin(), lab.mask.end(), 0);
    for (int b = 0; b < p.n_blobs; ++b) paint_ellipsoid(lab, gen, p);
    const double frac =
        std::accumulate(lab.mask.begin(), lab.mask.end(), 0.0) / static_cast<double>(n);
    ok = frac >= p.fg_min && frac <= p.fg_max;
  }
  if (!ok) throw FormatError("generate_case: could not hit the foreground fraction band");

  Volume vol;
  vol.D = D; vol.H = H; vol.W = W;
  vol.voxels.resize(n);
  const BiasField bias(gen, p.bias_amplitude);
  size_t i = 0;
  for (int z = 0; z < D; ++z)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x, ++i) {
        double v = p.background + p.intensity_contrast * lab.mask[i] +
                   bias.at(z / double(D - 1), y / double(H - 1), x / double(W - 1));
        if (p.noise_sigma > 0) v += gen.gaussian(0.0, p.noise_sigma);
        vol.voxels[i] = std::clamp(v, 0.0, 1.0);
      }
  return {std::move(vol), std::move(lab)};
}

// ---- BV01 files -----------------------------------------------------------------

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw FormatError("volume file: truncated header");
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_header(std::ostream& os, int D, int H, int W, uint8_t kind) {
  os.write("BV01", 4);
  put_u32(os, static_cast<uint32_t>(D));
  put_u32(os, static_cast<uint32_t>(H));
  put_u32(os, static_cast<uint32_t>(W));
  os.put(static_cast<char>(kind));
}

struct Header {
  int D, H, W;
  uint8_t kind;
};

Header read_header(std::istream& is, const std::string& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BV01", 4) != 0)
    throw FormatError("volume file: bad magic in " + path);
  Header h;
  h.D = static_cast<int>(get_u32(is));
  h.H = static_cast<int>(get_u32(is));
  h.W = static_cast<int>(get_u32(is));
  int k = is.get();
  if (k == EOF) throw FormatError("volume file: truncated header in " + path);
  h.kind = static_cast<uint8_t>(k);
  if (h.kind > 1) throw FormatError("volume file: unknown kind in " + path);
  if (h.D < 1 || h.H < 1 || h.W < 1) throw FormatError("volume file: bad dims in " + path);
  return h;
}

static_assert(sizeof(double) == 8, "format assumes 64-bit doubles");

}  // namespace

void write_volume(const std::string& path, const Volume& v) {
  if (v.voxels.size() != static_cast<size_t>(v.D) * v.H * v.W)
    throw FormatError("write_volume: dims do not match payload");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_volume: cannot open " + path);
  write_header(os, v.D, v.H, v.W, 0);
  // little-endian assumed for the payload (checked at startup on x86/ARM builds)
  os.write(reinterpret_cast<const char*>(v.voxels.data()),
           static_cast<std::streamsize>(v.voxels.size() * sizeof(double)));
  if (!os) throw FormatError("write_volume: write failed for " + path);
}

void write_volume(const std::string& path, const LabelVolume& v) {
  if (v.mask.size() != static_cast<size_t>(v.D) * v.H * v.W)
    throw FormatError("write_volume: dims do not match payload");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_volume: cannot open " + path);
  write_header(os, v.D, v.H, v.W, 1);
  os.write(reinterpret_cast<const char*>(v.mask.data()),
           static_cast<std::streamsize>(v.mask.size()));
  if (!os) throw FormatError("write_volume: write failed for " + path);
}

Volume read_volume(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_volume: cannot open " + path);
  const Header h = read_header(is, path);
  if (h.kind != 0) throw FormatError("read_volume: " + path + " holds a label, not a volume");
  Volume v;
  v.D = h.D; v.H = h.H; v.W = h.W;
  v.voxels.resize(static_cast<size_t>(h.D) * h.H * h.W);
  is.read(reinterpret_cast<char*>(v.voxels.data()),
          static_cast<std::streamsize>(v.voxels.size() * sizeof(double)));
  if (static_cast<size_t>(is.gcount()) != v.voxels.size() * sizeof(double))
    throw FormatError("read_volume: truncated payload in " + path);
  if (is.get() != EOF) throw FormatError("read_volume: trailing bytes in " + path);
  return v;
}

LabelVolume read_label(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_label: cannot open " + path);
  const Header h = read_header(is, path);
  if (h.kind != 1) throw FormatError("read_label: " + path + " holds a volume, not a label");
  LabelVolume v;
  v.D = h.D; v.H = h.H; v.W = h.W;
  v.mask.resize(static_cast<size_t>(h.D) * h.H * h.W);
  is.read(reinterpret_cast<char*>(v.mask.data()), static_cast<std::streamsize>(v.mask.size()));
  if (static_cast<size_t>(is.gcount()) != v.mask.size())
    throw FormatError("read_label: truncated payload in " + path);
  if (is.get() != EOF) throw FormatError("read_label: trailing bytes in " + path);
  for (uint8_t m : v.mask)
    if (m > 1) throw FormatError("read_label: non-binary value in " + path);
  return v;
}

// ---- splits -----------------------------------------------------------------------

DatasetManifest make_split(int n_cases, double labeled_ratio, int n_test, uint64_t seed) {
  if (n_cases < 1) throw FormatError("make_split: n_cases must be >= 1");
  if (labeled_ratio <= 0.0 || labeled_ratio >= 1.0)
    throw FormatError("make_split: labeled_ratio must be in (0,1)");
  if (n_test < 0 || n_test >= n_cases) throw FormatError("make_split: n_test must be < n_cases");

  std::vector<int> ids(static_cast<size_t>(n_cases));
  std::iota(ids.begin(), ids.end(), 0);
  Rng gen(Rng(seed).child(0x5B117).key());
  for (int i = n_cases - 1; i > 0; --i)
    std::swap(ids[static_cast<size_t>(i)],
              ids[static_cast<size_t>(gen.next_below(static_cast<uint64_t>(i) + 1))]);

  const int n_train = n_cases - n_test;
  const int n_labeled = static_cast<int>(std::llround(labeled_ratio * n_train));
  if (n_labeled < 1) throw FormatError("make_split: ratio yields zero labeled cases");
  if (n_labeled >= n_train) throw FormatError("make_split: ratio yields zero unlabeled cases");

  DatasetManifest m;
  m.seed = seed;
  m.test_ids.assign(ids.begin(), ids.begin() + n_test);
  m.labeled_ids.assign(ids.begin() + n_test, ids.begin() + n_test + n_labeled);
  m.unlabeled_ids.assign(ids.begin() + n_test + n_labeled, ids.end());
  std::sort(m.test_ids.begin(), m.test_ids.end());
  std::sort(m.labeled_ids.begin(), m.labeled_ids.end());
  std::sort(m.unlabeled_ids.begin(), m.unlabeled_ids.end());
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  nlohmann::json j;
  j["seed"] = m.seed;
  j["labeled_ids"] = m.labeled_ids;
  j["unlabeled_ids"] = m.unlabeled_ids;
  j["test_ids"] = m.test_ids;
  j["generator_params"] = {
      {"dims", m.generator_params.dims},
      {"n_blobs", m.generator_params.n_blobs},
      {"radius_range", {m.generator_params.radius_lo, m.generator_params.radius_hi}},
      {"noise_sigma", m.generator_params.noise_sigma},
      {"intensity_contrast", m.generator_params.intensity_contrast},
      {"background", m.generator_params.background},
      {"bias_amplitude", m.generator_params.bias_amplitude},
  };
  std::ofstream os(path);
  if (!os) throw FormatError("write_manifest: cannot open " + path);
  os << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("read_manifest: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_manifest: invalid JSON in " + path + ": " + e.what());
  }
  try {
    DatasetManifest m;
    m.seed = j.at("seed").get<uint64_t>();
    m.labeled_ids = j.at("labeled_ids").get<std::vector<int>>();
    m.unlabeled_ids = j.at("unlabeled_ids").get<std::vector<int>>();
    m.test_ids = j.at("test_ids").get<std::vector<int>>();
    const auto& g = j.at("generator_params");
    m.generator_params.dims = g.at("dims").get<std::array<int, 3>>();
    m.generator_params.n_blobs = g.at("n_blobs").get<int>();
    const auto rr = g.at("radius_range").get<std::array<double, 2>>();
    m.generator_params.radius_lo = rr[0];
    m.generator_params.radius_hi = rr[1];
    m.generator_params.noise_sigma = g.at("noise_sigma").get<double>();
    m.generator_params.intensity_contrast = g.at("intensity_contrast").get<double>();
    m.generator_params.background = g.at("background").get<double>();
    m.generator_params.bias_amplitude = g.at("bias_amplitude").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("read_manifest: missing or mistyped key in " + path + ": " + e.what());
  }
}

std::string volume_path(const std::string& dir, int id) {
  return dir + "/case_" + std::to_string(id) + ".vol";
}

std::string label_path(const std::string& dir, int id) {
  return dir + "/case_" + std::to_string(id) + ".lab";
}

}  // namespace bcsi
