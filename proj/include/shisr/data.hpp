#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "shisr/rng.hpp"
#include "shisr/tensor.hpp"

namespace shisr {

enum class Magnification { X40, X100, X200, X400 };
inline constexpr Magnification kMagnifications[] = {Magnification::X40, Magnification::X100,
                                                    Magnification::X200, Magnification::X400};

/// "40x", "100x", ...
std::string to_string(Magnification m);
/// Accepts "40x", "40X" or "40".
Magnification parse_magnification(const std::string& text);

enum class Split { Train, Test };
std::string to_string(Split s);
Split parse_split(const std::string& text);

struct ManifestRecord {
  std::string path;
  int label = 0;
  Magnification magnification = Magnification::X40;
  int fold = 0;
  Split split = Split::Train;
};

/// CSV with header `path,label,magnification,fold,split`. `label` is written
/// as the class id 0-7; the abbreviations (A, DC, F, ...) are accepted on
/// read. Relative paths resolve against the manifest's directory.
struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestRecord& r) const;
  /// Unique paths, labels in range, folds non-negative; optionally every
  /// file present on disk.
  void validate(bool check_files) const;
};

Manifest read_manifest(const std::filesystem::path& csv);
void write_manifest(const std::filesystem::path& csv, const Manifest& manifest);

/// Parses a BreaKHis file name such as SOB_B_TA-14-3411F-100-001.png into
/// (label, magnification); nullopt when the name does not follow the scheme.
std::optional<std::pair<int, Magnification>> parse_breakhis_name(const std::string& filename);

/// Walks a dataset root for BreaKHis-named PNGs, assigns a stratified
/// train/test split per magnification and stratified fold ids.
Manifest make_manifest(const std::filesystem::path& root, std::uint64_t seed,
                       double test_ratio = 0.3, int folds = 5);

struct FoldAssignment {
  std::vector<int> fold;
  std::vector<std::string> warnings;
};

/// Stratified by (label, magnification): each stratum is shuffled and dealt
/// round-robin, with the starting fold rotating between strata so that fold
/// sizes stay balanced overall.
FoldAssignment kfold_split(const std::vector<ManifestRecord>& records, int k, std::uint64_t seed);

/// Random train/test split done separately inside each (magnification,
/// label) stratum; round(test_ratio * size) items per stratum go to test.
std::vector<Split> train_test_split(const std::vector<ManifestRecord>& records,
                                    double test_ratio, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sample pairs
// ---------------------------------------------------------------------------

struct SamplePair {
  Tensor lr;  ///< (1, 3, s, s)
  Tensor hr;  ///< (1, 3, s * scale, s * scale)
  int label = 0;
  Magnification magnification = Magnification::X40;
};

/// Square HR patch. Images shorter than `size` on either side are first
/// resized (bicubic) so the shorter side equals `size`. With `rng` the crop
/// offset is uniform; without it the crop is centred.
Tensor make_hr_patch(const Tensor& image, int size, Rng* rng = nullptr);

/// LR by bicubic downsampling of `hr` by `scale`.
SamplePair make_pair(const Tensor& hr, int scale, int label, Magnification magnification);

struct AugmentParams {
  int rotations = 0;  ///< quarter turns counter-clockwise, 0..3
  bool flip = false;  ///< horizontal flip after rotation
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;

  static AugmentParams identity() { return {}; }
  /// k ~ U{0..3}, flip ~ Bernoulli(0.5), jitter factors ~ U[0.8, 1.2].
  static AugmentParams sample(Rng& rng);
};

/// Geometric transform of a (n, c, H, W) tensor (rotation then flip).
Tensor apply_geometry(const Tensor& image, int rotations, bool flip);
/// Full augmentation of one image: geometry, then brightness, contrast and
/// saturation jitter, each followed by clamping to [0, 1].
Tensor apply_augment(const Tensor& image, const AugmentParams& params);
/// Same transform on both images of the pair.
SamplePair augment(const SamplePair& pair, const AugmentParams& params);
SamplePair augment(const SamplePair& pair, std::uint64_t seed);

/// Seed of the transform applied to sample `index` in `epoch`.
std::uint64_t sample_seed(std::uint64_t global_seed, int epoch, std::size_t index);

/// Smooth oriented-grating textures, one orientation and tint per class;
/// phase, frequency, mean level and contrast vary per image. Labels cycle
/// 0..n_classes-1.
std::vector<SamplePair> synthetic_textures(int count, int n_classes, int hr_size, int scale,
                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Sources and batching
// ---------------------------------------------------------------------------

class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual std::size_t size() const = 0;
  /// Sample `index` as seen in `epoch`; a pure function of its arguments.
  virtual SamplePair get(std::size_t index, int epoch) const = 0;
  virtual int label(std::size_t index) const = 0;
  virtual Magnification magnification(std::size_t index) const = 0;
};

/// Pre-built pairs, optionally augmented with per-(epoch, index) seeds.
class InMemoryPairs : public PairSource {
 public:
  InMemoryPairs(std::vector<SamplePair> pairs, bool augment_samples = false,
                std::uint64_t seed = 0);
  std::size_t size() const override { return pairs_.size(); }
  SamplePair get(std::size_t index, int epoch) const override;
  int label(std::size_t index) const override { return pairs_.at(index).label; }
  Magnification magnification(std::size_t index) const override {
    return pairs_.at(index).magnification;
  }

 private:
  std::vector<SamplePair> pairs_;
  bool augment_;
  std::uint64_t seed_;
};

/// Lazily decodes manifest images: random crop + augmentation for training,
/// centre crop otherwise. Decoded images can be cached in memory.
class ManifestPairs : public PairSource {
 public:
  ManifestPairs(Manifest manifest, std::vector<std::size_t> selection, int scale, int hr_size,
                bool training, std::uint64_t seed, bool cache_images = false);
  std::size_t size() const override { return selection_.size(); }
  SamplePair get(std::size_t index, int epoch) const override;
  int label(std::size_t index) const override;
  Magnification magnification(std::size_t index) const override;

 private:
  Manifest manifest_;
  std::vector<std::size_t> selection_;
  int scale_;
  int hr_size_;
  bool training_;
  std::uint64_t seed_;
  bool cache_;
  mutable std::map<std::size_t, Tensor> cached_;
};

/// Record indices for a run: fold < 0 uses the manifest's split column,
/// otherwise records of that fold are the test set and the rest train.
std::vector<std::size_t> select_records(const Manifest& manifest, Split split, int fold);

struct Batch {
  Tensor lr;
  Tensor hr;
  std::vector<int> labels;
  std::vector<Magnification> magnifications;
  std::vector<std::size_t> indices;
};

Batch collate(const std::vector<SamplePair>& samples, const std::vector<std::size_t>& indices);

/// Index order for one epoch split into batches. With `shuffle` the order is
/// a seeded permutation derived from (seed, epoch); otherwise ascending.
/// A trailing batch smaller than `min_batch` is merged into the previous one.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, int batch_size,
                                                    std::uint64_t seed, int epoch, bool shuffle,
                                                    int min_batch = 1);

/// Stacks (1, c, h, w) tensors into one (n, c, h, w) tensor.
Tensor stack_batch(const std::vector<Tensor>& images);

}  // namespace shisr
