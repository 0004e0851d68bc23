#include "shisr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "shisr/cf_net.hpp"
#include "shisr/image.hpp"

namespace shisr {

namespace fs = std::filesystem;

std::string to_string(Magnification m) {
  switch (m) {
    case Magnification::X40: return "40x";
    case Magnification::X100: return "100x";
    case Magnification::X200: return "200x";
    case Magnification::X400: return "400x";
  }
  return "?";
}

Magnification parse_magnification(const std::string& text) {
  std::string t = text;
  if (!t.empty() && (t.back() == 'x' || t.back() == 'X')) t.pop_back();
  if (t == "40") return Magnification::X40;
  if (t == "100") return Magnification::X100;
  if (t == "200") return Magnification::X200;
  if (t == "400") return Magnification::X400;
  throw ConfigError("unknown magnification '" + text + "' (expected 40x, 100x, 200x or 400x)");
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + text + "' (expected train or test)");
}

fs::path Manifest::resolve(const ManifestRecord& r) const {
  const fs::path p(r.path);
  return p.is_absolute() ? p : base_dir / p;
}

void Manifest::validate(bool check_files) const {
  std::set<std::string> seen;
  for (const ManifestRecord& r : records) {
    if (!seen.insert(r.path).second) throw ConfigError("manifest: duplicate path '" + r.path + "'");
    if (r.label < 0 || r.label >= kNumClasses) {
      throw ConfigError("manifest: label " + std::to_string(r.label) + " out of range for '" +
                        r.path + "'");
    }
    if (r.fold < 0) throw ConfigError("manifest: negative fold for '" + r.path + "'");
    if (check_files && !fs::exists(resolve(r))) {
      throw IoError("manifest: file '" + resolve(r).string() + "' does not exist");
    }
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

int parse_label(const std::string& text) {
  const int by_name = class_index(text);
  if (by_name >= 0) return by_name;
  try {
    std::size_t used = 0;
    const int v = std::stoi(text, &used);
    if (used == text.size() && v >= 0 && v < kNumClasses) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("manifest: invalid label '" + text + "'");
}

}  // namespace

Manifest read_manifest(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw IoError("cannot open manifest '" + csv.string() + "'");
  Manifest m;
  m.base_dir = csv.has_parent_path() ? csv.parent_path() : fs::path(".");
  std::string line;
  if (!std::getline(in, line)) throw IoError("manifest '" + csv.string() + "' is empty");
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"path", "label", "magnification", "fold", "split"};
  if (header != expected) {
    throw IoError("manifest '" + csv.string() +
                  "': header must be path,label,magnification,fold,split");
  }
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) {
      throw IoError("manifest '" + csv.string() + "' line " + std::to_string(line_no) +
                    ": expected 5 fields");
    }
    ManifestRecord r;
    r.path = f[0];
    r.label = parse_label(f[1]);
    r.magnification = parse_magnification(f[2]);
    try {
      r.fold = std::stoi(f[3]);
    } catch (const std::exception&) {
      throw IoError("manifest line " + std::to_string(line_no) + ": bad fold '" + f[3] + "'");
    }
    r.split = parse_split(f[4]);
    m.records.push_back(std::move(r));
  }
  m.validate(false);
  return m;
}

void write_manifest(const fs::path& csv, const Manifest& manifest) {
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw IoError("cannot write manifest '" + csv.string() + "'");
  const fs::path dir = fs::absolute(csv).parent_path();
  out << "path,label,magnification,fold,split\n";
  for (const ManifestRecord& r : manifest.records) {
    const fs::path abs = fs::absolute(manifest.resolve(r)).lexically_normal();
    std::string p = abs.lexically_relative(dir).generic_string();
    if (p.empty()) p = abs.generic_string();
    if (p.find(',') != std::string::npos) {
      throw IoError("manifest paths may not contain commas: '" + p + "'");
    }
    out << p << ',' << r.label << ',' << to_string(r.magnification) << ',' << r.fold << ','
        << to_string(r.split) << '\n';
  }
}

std::optional<std::pair<int, Magnification>> parse_breakhis_name(const std::string& filename) {
  // SOB_<B|M>_<CLASS>-<year>-<slide>-<mag>-<seq>.png
  const fs::path p(filename);
  if (p.extension() != ".png" && p.extension() != ".PNG") return std::nullopt;
  const std::string stem = p.stem().string();
  const auto first = stem.find('_');
  const auto second = first == std::string::npos ? first : stem.find('_', first + 1);
  if (second == std::string::npos) return std::nullopt;
  const std::string rest = stem.substr(second + 1);
  std::vector<std::string> parts;
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, '-')) parts.push_back(item);
  if (parts.size() < 4) return std::nullopt;
  const int label = class_index(parts.front());
  if (label < 0) return std::nullopt;
  try {
    return std::make_pair(label, parse_magnification(parts[parts.size() - 2]));
  } catch (const ConfigError&) {
    return std::nullopt;
  }
}

namespace {

using StratumKey = std::pair<int, int>;  // (label, magnification)

std::map<StratumKey, std::vector<std::size_t>> strata(const std::vector<ManifestRecord>& records) {
  std::map<StratumKey, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    out[{records[i].label, static_cast<int>(records[i].magnification)}].push_back(i);
  }
  return out;
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const int j = rng.uniform_int(0, static_cast<int>(i) - 1);
    std::swap(v[i - 1], v[static_cast<std::size_t>(j)]);
  }
}

}  // namespace

FoldAssignment kfold_split(const std::vector<ManifestRecord>& records, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold_split: k must be >= 2");
  FoldAssignment out;
  out.fold.assign(records.size(), 0);
  int start = 0;
  for (auto& [key, members] : strata(records)) {
    if (static_cast<int>(members.size()) < k) {
      out.warnings.push_back("stratum (label " + std::string(kClassNames[key.first]) + ", " +
                             to_string(static_cast<Magnification>(key.second)) + ") has " +
                             std::to_string(members.size()) + " items, fewer than k = " +
                             std::to_string(k));
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(key.first), static_cast<std::uint64_t>(key.second)));
    shuffle(members, rng);
    for (std::size_t j = 0; j < members.size(); ++j) {
      out.fold[members[j]] = static_cast<int>((start + j) % k);
    }
    start = static_cast<int>((start + members.size()) % k);
  }
  return out;
}

std::vector<Split> train_test_split(const std::vector<ManifestRecord>& records, double test_ratio,
                                    std::uint64_t seed) {
  if (!(test_ratio >= 0.0 && test_ratio <= 1.0)) {
    throw ConfigError("train_test_split: test ratio must lie in [0, 1]");
  }
  std::vector<Split> out(records.size(), Split::Train);
  for (auto& [key, members] : strata(records)) {
    Rng rng(mix_seed(seed ^ 0x7e57ULL, static_cast<std::uint64_t>(key.first),
                     static_cast<std::uint64_t>(key.second)));
    shuffle(members, rng);
    const auto n_test = static_cast<std::size_t>(std::lround(test_ratio * members.size()));
    for (std::size_t j = 0; j < n_test; ++j) out[members[j]] = Split::Test;
  }
  return out;
}

Manifest make_manifest(const fs::path& root, std::uint64_t seed, double test_ratio, int folds) {
  if (!fs::is_directory(root)) throw IoError("dataset root '" + root.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file() && parse_breakhis_name(entry.path().filename().string())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  Manifest m;
  m.base_dir = root;
  for (const fs::path& f : files) {
    const auto parsed = parse_breakhis_name(f.filename().string());
    ManifestRecord r;
    r.path = f.lexically_relative(root).generic_string();
    r.label = parsed->first;
    r.magnification = parsed->second;
    m.records.push_back(std::move(r));
  }
  if (m.records.empty()) {
    throw IoError("no BreaKHis-named PNG files under '" + root.string() + "'");
  }
  const auto splits = train_test_split(m.records, test_ratio, seed);
  const auto folds_assigned = kfold_split(m.records, folds, seed);
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    m.records[i].split = splits[i];
    m.records[i].fold = folds_assigned.fold[i];
  }
  return m;
}

Tensor make_hr_patch(const Tensor& image, int size, Rng* rng) {
  const Shape& s = image.shape();
  if (size < 1) throw ConfigError("make_hr_patch: size must be positive");
  if (s.h < 1 || s.w < 1 || s.n != 1) {
    throw ShapeError("make_hr_patch: degenerate image " + s.str());
  }
  Tensor img = image;
  if (s.h < size || s.w < size) {
    const double f = static_cast<double>(size) / std::min(s.h, s.w);
    const int nh = std::max(size, static_cast<int>(std::lround(s.h * f)));
    const int nw = std::max(size, static_cast<int>(std::lround(s.w * f)));
    img = bicubic_resample(image, nh, nw);
  }
  const int h = img.shape().h;
  const int w = img.shape().w;
  int top = (h - size) / 2;
  int left = (w - size) / 2;
  if (rng) {
    top = rng->uniform_int(0, h - size);
    left = rng->uniform_int(0, w - size);
  }
  if (h == size && w == size) return img;
  return crop(img, top, left, size, size);
}

SamplePair make_pair(const Tensor& hr, int scale, int label, Magnification magnification) {
  const Shape& s = hr.shape();
  if (scale < 1 || s.h % scale != 0 || s.w % scale != 0) {
    throw ShapeError("make_pair: HR " + s.str() + " not divisible by scale " +
                     std::to_string(scale));
  }
  SamplePair p;
  p.hr = hr;
  p.lr = scale == 1 ? hr : bicubic_resample(hr, s.h / scale, s.w / scale);
  p.label = label;
  p.magnification = magnification;
  return p;
}

AugmentParams AugmentParams::sample(Rng& rng) {
  AugmentParams p;
  p.rotations = rng.uniform_int(0, 3);
  p.flip = rng.bernoulli(0.5);
  p.brightness = rng.uniform(0.8, 1.2);
  p.contrast = rng.uniform(0.8, 1.2);
  p.saturation = rng.uniform(0.8, 1.2);
  return p;
}

Tensor apply_geometry(const Tensor& image, int rotations, bool flip) {
  const Shape s = image.shape();
  const int r = ((rotations % 4) + 4) % 4;
  if (r == 0 && !flip) return image;
  if ((r % 2 == 1) && s.h != s.w) throw ShapeError("apply_geometry: rotation needs a square image");
  auto d = image.data();
  std::vector<Real> out(d.size());
  const int n = s.h;  // square whenever rotated an odd number of times
  for (int p = 0; p < s.n * s.c; ++p) {
    const Real* src = d.data() + static_cast<std::size_t>(p) * s.h * s.w;
    Real* dst = out.data() + static_cast<std::size_t>(p) * s.h * s.w;
    for (int y = 0; y < s.h; ++y) {
      for (int x = 0; x < s.w; ++x) {
        // Destination (y, x) after the flip comes from (y, xs) before it.
        const int xs = flip ? s.w - 1 - x : x;
        int sy = y, sx = xs;
        // Undo r counter-clockwise quarter turns.
        switch (r) {
          case 1: sy = xs; sx = n - 1 - y; break;
          case 2: sy = s.h - 1 - y; sx = s.w - 1 - xs; break;
          case 3: sy = n - 1 - xs; sx = y; break;
          default: break;
        }
        dst[y * s.w + x] = src[sy * s.w + sx];
      }
    }
  }
  return Tensor::from(s, std::move(out));
}

namespace {

void clamp01(std::vector<Real>& v) {
  for (Real& x : v) x = std::clamp(x, Real(0), Real(1));
}

}  // namespace

Tensor apply_augment(const Tensor& image, const AugmentParams& params) {
  Tensor geo = apply_geometry(image, params.rotations, params.flip);
  const bool jitter = params.brightness != 1.0 || params.contrast != 1.0 ||
                      params.saturation != 1.0;
  if (!jitter) return geo;
  const Shape s = geo.shape();
  if (s.c != 3) throw ShapeError("apply_augment: colour jitter needs 3 channels");
  std::vector<Real> v(geo.data().begin(), geo.data().end());
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  auto gray = [&](int b, std::size_t i) {
    const Real* base = v.data() + static_cast<std::size_t>(b) * 3 * plane;
    return Real(0.299) * base[i] + Real(0.587) * base[plane + i] + Real(0.114) * base[2 * plane + i];
  };
  if (params.brightness != 1.0) {
    for (Real& x : v) x = static_cast<Real>(x * params.brightness);
    clamp01(v);
  }
  if (params.contrast != 1.0) {
    for (int b = 0; b < s.n; ++b) {
      double mean = 0.0;
      for (std::size_t i = 0; i < plane; ++i) mean += gray(b, i);
      mean /= static_cast<double>(plane);
      Real* base = v.data() + static_cast<std::size_t>(b) * 3 * plane;
      for (std::size_t i = 0; i < 3 * plane; ++i) {
        base[i] = static_cast<Real>((base[i] - mean) * params.contrast + mean);
      }
    }
    clamp01(v);
  }
  if (params.saturation != 1.0) {
    for (int b = 0; b < s.n; ++b) {
      Real* base = v.data() + static_cast<std::size_t>(b) * 3 * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double g = gray(b, i);
        for (int c = 0; c < 3; ++c) {
          Real& x = base[c * plane + i];
          x = static_cast<Real>(g + params.saturation * (x - g));
        }
      }
    }
    clamp01(v);
  }
  return Tensor::from(s, std::move(v));
}

SamplePair augment(const SamplePair& pair, const AugmentParams& params) {
  SamplePair out = pair;
  out.lr = apply_augment(pair.lr, params);
  out.hr = apply_augment(pair.hr, params);
  return out;
}

SamplePair augment(const SamplePair& pair, std::uint64_t seed) {
  Rng rng(seed);
  return augment(pair, AugmentParams::sample(rng));
}

std::uint64_t sample_seed(std::uint64_t global_seed, int epoch, std::size_t index) {
  return mix_seed(global_seed, static_cast<std::uint64_t>(epoch) + 1, index);
}

std::vector<SamplePair> synthetic_textures(int count, int n_classes, int hr_size, int scale,
                                           std::uint64_t seed) {
  if (count < 1 || n_classes < 1 || n_classes > kNumClasses) {
    throw ConfigError("synthetic_textures: invalid count or class number");
  }
  // Per-class tint (R, G, B amplitudes).
  static constexpr double kTint[kNumClasses][3] = {
      {0.35, 0.15, 0.30}, {0.15, 0.35, 0.20}, {0.30, 0.30, 0.10}, {0.10, 0.20, 0.35},
      {0.25, 0.10, 0.15}, {0.12, 0.28, 0.28}, {0.33, 0.22, 0.12}, {0.20, 0.12, 0.33}};
  Rng rng(seed);
  std::vector<SamplePair> out;
  const double pi = std::acos(-1.0);
  for (int i = 0; i < count; ++i) {
    const int label = i % n_classes;
    const double theta = pi * label / n_classes;
    const double freq = 3.0 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0));
    const double phase = rng.uniform(0.0, 2.0 * pi);
    // Instance-level level and contrast, so that images of one class differ
    // in their channel statistics and not only in phase.
    const double level = rng.uniform(0.35, 0.65);
    const double gain = rng.uniform(0.6, 1.0);
    std::vector<Real> v(static_cast<std::size_t>(3) * hr_size * hr_size);
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < hr_size; ++y) {
        for (int x = 0; x < hr_size; ++x) {
          const double t = (x * std::cos(theta) + y * std::sin(theta)) / hr_size;
          const double val =
              level + gain * kTint[label][c] * std::sin(2.0 * pi * freq * t + phase + 0.6 * c);
          v[(static_cast<std::size_t>(c) * hr_size + y) * hr_size + x] = static_cast<Real>(val);
        }
      }
    }
    out.push_back(make_pair(Tensor::from({1, 3, hr_size, hr_size}, std::move(v)), scale, label,
                            kMagnifications[i % 4]));
  }
  return out;
}

InMemoryPairs::InMemoryPairs(std::vector<SamplePair> pairs, bool augment_samples,
                             std::uint64_t seed)
    : pairs_(std::move(pairs)), augment_(augment_samples), seed_(seed) {}

SamplePair InMemoryPairs::get(std::size_t index, int epoch) const {
  const SamplePair& p = pairs_.at(index);
  if (!augment_) return p;
  return augment(p, sample_seed(seed_, epoch, index));
}

ManifestPairs::ManifestPairs(Manifest manifest, std::vector<std::size_t> selection, int scale,
                             int hr_size, bool training, std::uint64_t seed, bool cache_images)
    : manifest_(std::move(manifest)),
      selection_(std::move(selection)),
      scale_(scale),
      hr_size_(hr_size),
      training_(training),
      seed_(seed),
      cache_(cache_images) {
  if (hr_size_ % scale_ != 0) {
    throw ConfigError("hr_size " + std::to_string(hr_size_) + " is not divisible by scale " +
                      std::to_string(scale_));
  }
  for (std::size_t i : selection_) {
    if (i >= manifest_.records.size()) throw ConfigError("ManifestPairs: selection out of range");
  }
}

SamplePair ManifestPairs::get(std::size_t index, int epoch) const {
  const std::size_t rec_index = selection_.at(index);
  const ManifestRecord& r = manifest_.records[rec_index];
  Tensor image;
  if (cache_) {
    auto it = cached_.find(rec_index);
    if (it == cached_.end()) it = cached_.emplace(rec_index, load_png(manifest_.resolve(r))).first;
    image = it->second;
  } else {
    image = load_png(manifest_.resolve(r));
  }
  if (!training_) {
    return make_pair(make_hr_patch(image, hr_size_), scale_, r.label, r.magnification);
  }
  Rng rng(sample_seed(seed_, epoch, index));
  const Tensor hr = make_hr_patch(image, hr_size_, &rng);
  return augment(make_pair(hr, scale_, r.label, r.magnification), AugmentParams::sample(rng));
}

int ManifestPairs::label(std::size_t index) const {
  return manifest_.records[selection_.at(index)].label;
}

Magnification ManifestPairs::magnification(std::size_t index) const {
  return manifest_.records[selection_.at(index)].magnification;
}

std::vector<std::size_t> select_records(const Manifest& manifest, Split split, int fold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const ManifestRecord& r = manifest.records[i];
    const bool in_test = fold < 0 ? r.split == Split::Test : r.fold == fold;
    if (in_test == (split == Split::Test)) out.push_back(i);
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& images) {
  if (images.empty()) throw ShapeError("stack_batch: no images");
  const Shape s = images.front().shape();
  std::vector<Real> v;
  v.reserve(s.numel() * images.size());
  int n = 0;
  for (const Tensor& t : images) {
    const Shape& ts = t.shape();
    if (ts.c != s.c || ts.h != s.h || ts.w != s.w) {
      throw ShapeError("stack_batch: " + ts.str() + " does not match " + s.str());
    }
    v.insert(v.end(), t.data().begin(), t.data().end());
    n += ts.n;
  }
  return Tensor::from({n, s.c, s.h, s.w}, std::move(v));
}

Batch collate(const std::vector<SamplePair>& samples, const std::vector<std::size_t>& indices) {
  Batch b;
  std::vector<Tensor> lr, hr;
  for (const SamplePair& p : samples) {
    lr.push_back(p.lr);
    hr.push_back(p.hr);
    b.labels.push_back(p.label);
    b.magnifications.push_back(p.magnification);
  }
  b.lr = stack_batch(lr);
  b.hr = stack_batch(hr);
  b.indices = indices;
  return b;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size,
                                                    std::uint64_t seed, int epoch, bool shuffle_order,
                                                    int min_batch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_order) {
    Rng rng(mix_seed(seed, 0xba7c4ULL, static_cast<std::uint64_t>(epoch)));
    shuffle(order, rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size) {
    const std::size_t end = std::min(count, i + batch_size);
    batches.emplace_back(order.begin() + i, order.begin() + end);
  }
  if (batches.size() > 1 && static_cast<int>(batches.back().size()) < min_batch) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  return batches;
}

}  // namespace shisr
