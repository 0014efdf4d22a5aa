#include "ekg/hsi.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "ekg/error.hpp"
#include "ekg/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "cube serialization assumes a little-endian host");

namespace ekg {

i64 HsiCube::num_labeled() const {
  i64 n = 0;
  for (auto l : labels) n += (l != 0);
  return n;
}

int HsiCube::num_classes() const {
  std::uint16_t mx = 0;
  for (auto l : labels) mx = std::max(mx, l);
  return static_cast<int>(mx);
}

std::vector<i64> HsiCube::class_histogram() const {
  std::vector<i64> h(static_cast<std::size_t>(num_classes()) + 1, 0);
  for (auto l : labels) ++h[l];
  return h;
}

void HsiCube::validate() const {
  if (height < 1 || width < 1 || bands < 1)
    throw FormatError("cube: non-positive extents");
  if (static_cast<i64>(data.size()) != height * width * bands)
    throw FormatError("cube: data size " + std::to_string(data.size()) +
                      " != h*w*bands = " + std::to_string(height * width * bands));
  if (static_cast<i64>(labels.size()) != height * width)
    throw FormatError("cube: label grid size " + std::to_string(labels.size()) +
                      " != h*w = " + std::to_string(height * width));
  i64 mask_sum = 0;
  for (auto m : band_mask) mask_sum += (m != 0);
  if (!band_mask.empty() && mask_sum != bands)
    throw FormatError("cube: band_mask keeps " + std::to_string(mask_sum) +
                      " bands but cube has " + std::to_string(bands));
  for (float v : data)
    if (!std::isfinite(v)) throw NumericError("cube: non-finite spectrum value");
  // Labels must be contiguous 1..C over labeled pixels.
  const int c = num_classes();
  std::vector<bool> seen(static_cast<std::size_t>(c) + 1, false);
  for (auto l : labels) seen[l] = true;
  for (int i = 1; i <= c; ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw FormatError("cube: class indices not contiguous (missing " +
                        std::to_string(i) + ")");
}

namespace {

template <typename V>
void write_raw(std::ofstream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_raw(std::ifstream& is, const char* what) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw FormatError(std::string("cube file truncated while reading ") + what);
  return v;
}

}  // namespace

void save_cube(const HsiCube& cube, const std::string& path) {
  cube.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open '" + path + "' for writing");
  os.write("EKGH", 4);
  write_raw(os, static_cast<std::uint32_t>(cube.height));
  write_raw(os, static_cast<std::uint32_t>(cube.width));
  write_raw(os, static_cast<std::uint32_t>(cube.bands));
  os.write(reinterpret_cast<const char*>(cube.data.data()),
           static_cast<std::streamsize>(cube.data.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(cube.labels.data()),
           static_cast<std::streamsize>(cube.labels.size() * sizeof(std::uint16_t)));
  write_raw(os, static_cast<std::uint32_t>(cube.name.size()));
  os.write(cube.name.data(), static_cast<std::streamsize>(cube.name.size()));
  if (!os) throw FormatError("write failed for '" + path + "'");
}

HsiCube load_cube(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EKGH", 4) != 0)
    throw FormatError("'" + path + "': bad magic, not an EKGH cube");
  HsiCube cube;
  cube.height = read_raw<std::uint32_t>(is, "height");
  cube.width = read_raw<std::uint32_t>(is, "width");
  cube.bands = read_raw<std::uint32_t>(is, "bands");
  if (cube.height < 1 || cube.width < 1 || cube.bands < 1)
    throw FormatError("'" + path + "': non-positive extents in header");
  cube.data.resize(static_cast<std::size_t>(cube.height * cube.width * cube.bands));
  is.read(reinterpret_cast<char*>(cube.data.data()),
          static_cast<std::streamsize>(cube.data.size() * sizeof(float)));
  if (!is)
    throw FormatError("'" + path + "': spectrum block truncated (expected " +
                      std::to_string(cube.data.size()) + " floats)");
  cube.labels.resize(static_cast<std::size_t>(cube.height * cube.width));
  is.read(reinterpret_cast<char*>(cube.labels.data()),
          static_cast<std::streamsize>(cube.labels.size() * sizeof(std::uint16_t)));
  if (!is)
    throw FormatError("'" + path + "': label grid truncated (expected " +
                      std::to_string(cube.height) + "x" + std::to_string(cube.width) +
                      " labels after the cube)");
  const auto name_len = read_raw<std::uint32_t>(is, "name length");
  cube.name.resize(name_len);
  if (name_len) {
    is.read(cube.name.data(), name_len);
    if (!is) throw FormatError("'" + path + "': name truncated");
  }
  cube.band_mask.assign(static_cast<std::size_t>(cube.bands), 1);

  // Re-compact sparse class indices to contiguous 1..C.
  std::map<std::uint16_t, std::uint16_t> remap;
  for (auto l : cube.labels)
    if (l != 0) remap.emplace(l, 0);
  std::uint16_t next = 1;
  for (auto& [old_label, new_label] : remap) new_label = next++;
  if (!remap.empty() && remap.rbegin()->second != remap.size())
    throw FormatError("internal: label compaction failed");
  for (auto& l : cube.labels)
    if (l != 0) l = remap[l];

  cube.validate();
  return cube;
}

HsiCube apply_band_mask(const HsiCube& cube, const std::vector<std::uint8_t>& mask) {
  if (static_cast<i64>(mask.size()) != cube.bands)
    throw ShapeError("apply_band_mask: mask length " + std::to_string(mask.size()) +
                     " != band count " + std::to_string(cube.bands));
  i64 kept = 0;
  for (auto m : mask) kept += (m != 0);
  if (kept < 1) throw ParamError("apply_band_mask: mask removes every band");

  HsiCube out;
  out.height = cube.height;
  out.width = cube.width;
  out.bands = kept;
  out.labels = cube.labels;
  out.name = cube.name;
  out.data.resize(static_cast<std::size_t>(kept * cube.height * cube.width));
  i64 ob = 0;
  const i64 plane = cube.height * cube.width;
  for (i64 b = 0; b < cube.bands; ++b) {
    if (!mask[static_cast<std::size_t>(b)]) continue;
    std::copy_n(cube.data.data() + b * plane, plane, out.data.data() + ob * plane);
    ++ob;
  }
  // Compose with the existing indicator over instrument bands.
  out.band_mask = cube.band_mask;
  i64 survivor = 0;
  for (auto& m : out.band_mask) {
    if (!m) continue;
    m = mask[static_cast<std::size_t>(survivor)] ? 1 : 0;
    ++survivor;
  }
  out.validate();
  return out;
}

HsiCube normalize(const HsiCube& cube, NormStats* stats) {
  cube.validate();
  const i64 labeled = cube.num_labeled();
  if (labeled == 0) throw StateError("normalize: cube has no labeled pixels");
  HsiCube out = cube;
  NormStats local;
  local.mean.resize(static_cast<std::size_t>(cube.bands));
  local.stddev.resize(static_cast<std::size_t>(cube.bands));
  local.floored.assign(static_cast<std::size_t>(cube.bands), 0);
  constexpr double kFloor = 1e-8;

  for (i64 b = 0; b < cube.bands; ++b) {
    double sum = 0.0;
    for (i64 r = 0; r < cube.height; ++r)
      for (i64 c = 0; c < cube.width; ++c)
        if (cube.label(r, c) != 0) sum += cube.at(b, r, c);
    const double mean = sum / static_cast<double>(labeled);
    double sq = 0.0;
    for (i64 r = 0; r < cube.height; ++r)
      for (i64 c = 0; c < cube.width; ++c)
        if (cube.label(r, c) != 0) {
          const double d = cube.at(b, r, c) - mean;
          sq += d * d;
        }
    double sd = std::sqrt(sq / static_cast<double>(labeled));
    if (sd < kFloor) {
      sd = kFloor;
      local.floored[static_cast<std::size_t>(b)] = 1;
    }
    local.mean[static_cast<std::size_t>(b)] = static_cast<float>(mean);
    local.stddev[static_cast<std::size_t>(b)] = static_cast<float>(sd);
    const float fm = static_cast<float>(mean), fs = static_cast<float>(sd);
    for (i64 r = 0; r < cube.height; ++r)
      for (i64 c = 0; c < cube.width; ++c) out.at(b, r, c) = (cube.at(b, r, c) - fm) / fs;
  }
  if (stats) *stats = std::move(local);
  return out;
}

std::vector<std::vector<float>> synth_prototypes(const SynthConfig& cfg) {
  if (cfg.classes < 2) throw ParamError("synth: need at least two classes");
  if (cfg.bands < 2 || cfg.height < 1 || cfg.width < 1)
    throw ParamError("synth: degenerate extents");
  SplitRng rng = SplitRng(cfg.seed).derive("prototypes");
  const double L = static_cast<double>(cfg.bands);
  std::vector<std::vector<float>> protos;
  for (int c = 0; c < cfg.classes; ++c) {
    std::vector<float> p(static_cast<std::size_t>(cfg.bands), 0.0f);
    // Main bump pinned per class keeps prototypes distinct; two smaller
    // random bumps add texture.
    const double main_center = L * (c + 0.5) / cfg.classes;
    const double main_width = L / (2.5 * cfg.classes);
    for (i64 b = 0; b < cfg.bands; ++b) {
      const double d = (b - main_center) / main_width;
      p[static_cast<std::size_t>(b)] = static_cast<float>(std::exp(-0.5 * d * d));
    }
    for (int j = 0; j < 2; ++j) {
      const double amp = rng.uniform(0.2, 0.45);
      const double center = rng.uniform(0.0, L);
      const double width = rng.uniform(L / 16.0, L / 6.0);
      for (i64 b = 0; b < cfg.bands; ++b) {
        const double d = (b - center) / width;
        p[static_cast<std::size_t>(b)] += static_cast<float>(amp * std::exp(-0.5 * d * d));
      }
    }
    protos.push_back(std::move(p));
  }
  return protos;
}

HsiCube synthesize_with_prototypes(const SynthConfig& cfg,
                                   const std::vector<std::vector<float>>& prototypes) {
  if (static_cast<int>(prototypes.size()) != cfg.classes)
    throw ParamError("synth: prototype count != classes");
  SplitRng rng = SplitRng(cfg.seed).derive("noise");

  HsiCube cube;
  cube.height = cfg.height;
  cube.width = cfg.width;
  cube.bands = cfg.bands;
  cube.name = "synthetic-c" + std::to_string(cfg.classes) + "-s" +
              std::to_string(cfg.seed);
  cube.band_mask.assign(static_cast<std::size_t>(cfg.bands), 1);
  cube.labels.resize(static_cast<std::size_t>(cfg.height * cfg.width));
  cube.data.assign(static_cast<std::size_t>(cfg.bands * cfg.height * cfg.width), 0.0f);

  // Horizontal class bands: rows [c*H/C, (c+1)*H/C).
  for (i64 r = 0; r < cfg.height; ++r) {
    const int cls = static_cast<int>((r * cfg.classes) / cfg.height);
    for (i64 c = 0; c < cfg.width; ++c)
      cube.labels[static_cast<std::size_t>(r * cfg.width + c)] =
          static_cast<std::uint16_t>(cls + 1);
  }

  std::vector<double> peak(static_cast<std::size_t>(cfg.classes), 0.0);
  for (int c = 0; c < cfg.classes; ++c)
    for (float v : prototypes[static_cast<std::size_t>(c)])
      peak[static_cast<std::size_t>(c)] =
          std::max(peak[static_cast<std::size_t>(c)], std::fabs(static_cast<double>(v)));

  // Gaussian noise drawn per (band, row, col), then blurred spatially so
  // neighbouring pixels are correlated; class means stay exact prototypes.
  const i64 plane = cfg.height * cfg.width;
  std::vector<float> noise(static_cast<std::size_t>(plane));
  std::vector<float> blurred(static_cast<std::size_t>(plane));
  const float kw[3] = {0.25f, 0.5f, 0.25f};
  for (i64 b = 0; b < cfg.bands; ++b) {
    for (i64 r = 0; r < cfg.height; ++r)
      for (i64 c = 0; c < cfg.width; ++c) {
        const int cls = cube.label(r, c) - 1;
        const double sigma = cfg.noise_sigma * peak[static_cast<std::size_t>(cls)];
        noise[static_cast<std::size_t>(r * cfg.width + c)] =
            static_cast<float>(rng.normal(0.0, sigma));
      }
    // Separable 3x3 blur, weights renormalized at the borders.
    for (i64 r = 0; r < cfg.height; ++r)
      for (i64 c = 0; c < cfg.width; ++c) {
        float acc = 0.0f, wsum = 0.0f;
        for (int t = -1; t <= 1; ++t) {
          const i64 cc = c + t;
          if (cc < 0 || cc >= cfg.width) continue;
          acc += kw[t + 1] * noise[static_cast<std::size_t>(r * cfg.width + cc)];
          wsum += kw[t + 1];
        }
        blurred[static_cast<std::size_t>(r * cfg.width + c)] = acc / wsum;
      }
    for (i64 c = 0; c < cfg.width; ++c)
      for (i64 r = 0; r < cfg.height; ++r) {
        float acc = 0.0f, wsum = 0.0f;
        for (int t = -1; t <= 1; ++t) {
          const i64 rr = r + t;
          if (rr < 0 || rr >= cfg.height) continue;
          acc += kw[t + 1] * blurred[static_cast<std::size_t>(rr * cfg.width + c)];
          wsum += kw[t + 1];
        }
        noise[static_cast<std::size_t>(r * cfg.width + c)] = acc / wsum;
      }
    for (i64 r = 0; r < cfg.height; ++r)
      for (i64 c = 0; c < cfg.width; ++c) {
        const int cls = cube.label(r, c) - 1;
        cube.at(b, r, c) =
            prototypes[static_cast<std::size_t>(cls)][static_cast<std::size_t>(b)] +
            noise[static_cast<std::size_t>(r * cfg.width + c)];
      }
  }
  cube.validate();
  return cube;
}

HsiCube synthesize_dataset(const SynthConfig& cfg) {
  return synthesize_with_prototypes(cfg, synth_prototypes(cfg));
}

i64 padded_extent(i64 extent, i64 block) { return extent + 2 * (block / 2); }

template <typename T>
std::vector<i64> PatchDataset<T>::indices_of(Split s) const {
  std::vector<i64> idx;
  for (i64 i = 0; i < count(); ++i)
    if (split[static_cast<std::size_t>(i)] == s) idx.push_back(i);
  return idx;
}

template <typename T>
PatchDataset<T> pad_and_extract(const HsiCube& cube, i64 block) {
  if (block < 1 || block % 2 == 0)
    throw ParamError("pad_and_extract: block size must be odd and positive, got " +
                     std::to_string(block));
  cube.validate();
  const i64 half = block / 2;

  PatchDataset<T> ds;
  ds.block = block;
  ds.bands = cube.bands;
  ds.num_classes = cube.num_classes();
  const i64 labeled = cube.num_labeled();
  ds.storage.assign(static_cast<std::size_t>(labeled * cube.bands * block * block), T(0));
  ds.labels.reserve(static_cast<std::size_t>(labeled));
  ds.coords.reserve(static_cast<std::size_t>(labeled));

  i64 p = 0;
  for (i64 r = 0; r < cube.height; ++r) {
    for (i64 c = 0; c < cube.width; ++c) {
      const std::uint16_t l = cube.label(r, c);
      if (l == 0) continue;
      T* dst = ds.storage.data() + p * ds.patch_numel();
      for (i64 b = 0; b < cube.bands; ++b) {
        for (i64 dr = 0; dr < block; ++dr) {
          const i64 rr = r - half + dr;
          for (i64 dc = 0; dc < block; ++dc) {
            const i64 cc = c - half + dc;
            const bool inside = rr >= 0 && rr < cube.height && cc >= 0 && cc < cube.width;
            dst[(b * block + dr) * block + dc] =
                inside ? static_cast<T>(cube.at(b, rr, cc)) : T(0);
          }
        }
      }
      ds.labels.push_back(static_cast<int>(l) - 1);
      ds.coords.emplace_back(r, c);
      ++p;
    }
  }
  ds.split.assign(static_cast<std::size_t>(labeled), Split::Train);
  return ds;
}

template <typename T>
void stratified_split(PatchDataset<T>& ds, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || ratios.parts() < 1)
    throw ParamError("stratified_split: ratios must be non-negative with a positive sum");
  ds.ratios = ratios;
  ds.split_seed = seed;
  ds.notes.clear();
  SplitRng rng = SplitRng(seed).derive("split");

  const int active =
      (ratios.train > 0) + (ratios.val > 0) + (ratios.test > 0);
  for (int cls = 0; cls < ds.num_classes; ++cls) {
    std::vector<i64> idx;
    for (i64 i = 0; i < ds.count(); ++i)
      if (ds.labels[static_cast<std::size_t>(i)] == cls) idx.push_back(i);
    const i64 n = static_cast<i64>(idx.size());
    if (n == 0) continue;
    rng.shuffle(idx);

    if (n < active) {
      for (i64 i : idx) ds.split[static_cast<std::size_t>(i)] = Split::Train;
      ds.notes.push_back("class " + std::to_string(cls + 1) + ": only " +
                         std::to_string(n) + " pixels, all assigned to train");
      continue;
    }

    // Largest-remainder apportionment of n into the three ratio parts.
    const int parts = ratios.parts();
    const int rat[3] = {ratios.train, ratios.val, ratios.test};
    i64 assign[3];
    double rem[3];
    i64 used = 0;
    for (int s = 0; s < 3; ++s) {
      const double quota = static_cast<double>(n) * rat[s] / parts;
      assign[s] = static_cast<i64>(quota);
      rem[s] = quota - static_cast<double>(assign[s]);
      used += assign[s];
    }
    i64 left = n - used;
    while (left > 0) {
      int best = -1;
      for (int s = 0; s < 3; ++s)
        if (rat[s] > 0 && (best < 0 || rem[s] > rem[best])) best = s;
      assign[best] += 1;
      rem[best] = -1.0;
      --left;
    }

    i64 at = 0;
    for (int s = 0; s < 3; ++s) {
      for (i64 i = 0; i < assign[s]; ++i, ++at)
        ds.split[static_cast<std::size_t>(idx[static_cast<std::size_t>(at)])] =
            static_cast<Split>(s);
    }
  }
}

template struct PatchDataset<float>;
template struct PatchDataset<double>;
template PatchDataset<float> pad_and_extract<float>(const HsiCube&, i64);
template PatchDataset<double> pad_and_extract<double>(const HsiCube&, i64);
template void stratified_split<float>(PatchDataset<float>&, SplitRatios, std::uint64_t);
template void stratified_split<double>(PatchDataset<double>&, SplitRatios, std::uint64_t);

}  // namespace ekg
