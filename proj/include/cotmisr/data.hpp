#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cotmisr/image.hpp"
#include "cotmisr/rng.hpp"

namespace cotmisr {

enum class Band { nir, red };
// Which bands an experiment reads; `all` means NIR followed by RED.
enum class BandSelection { nir, red, all };

std::string band_name(Band band);            // "NIR" / "RED"
Band parse_band(const std::string& text);    // case-insensitive, throws ConfigError
std::string band_selection_name(BandSelection sel);
BandSelection parse_band_selection(const std::string& text);
bool band_selected(BandSelection sel, Band band);

// One scene: K co-registered-ish LR frames with clearance masks and an
// optional HR target.
struct LrStack {
  std::string scene_id;  // "<BAND>/imgsetNNNN"
  Band band = Band::nir;
  std::vector<Image> frames;
  std::vector<Mask> masks;
  std::optional<Image> hr;
  std::optional<Mask> hr_mask;

  std::size_t size() const { return frames.size(); }
  double clearance(std::size_t i) const { return masks.at(i).clearance(); }
  // Throws DataError if frames/masks disagree in count or extent.
  void validate() const;
};

// Reads LR###.png / QM###.png pairs (sorted by index) plus optional HR.png
// and SM.png. The band is taken from the parent directory name unless given.
LrStack load_scene(const std::filesystem::path& dir, std::optional<Band> band = std::nullopt);
void write_scene(const std::filesystem::path& dir, const LrStack& stack);

// Scene directories under <root>/<BAND>/imgset*, NIR before RED, each sorted
// by name. Returned as scene ids relative to root.
std::vector<std::string> list_scenes(const std::filesystem::path& root, BandSelection sel);

// Drops frames with clearance < min_clearance; if none survive keeps the
// single clearest (lowest index on ties).
LrStack preprocess(const LrStack& stack, double min_clearance = 0.85);

struct SplitManifest {
  std::uint64_t seed = 0;
  std::vector<std::string> train;
  std::vector<std::string> val;
};

// Seeded shuffle then a ratio cut. With two or more scenes both sides are
// non-empty. Each side is returned sorted.
SplitManifest split(const std::vector<std::string>& scene_ids, std::uint64_t seed, double ratio = 0.9);
std::string manifest_to_text(const SplitManifest& manifest);
SplitManifest manifest_from_text(const std::string& text);
void write_manifest(const std::filesystem::path& path, const SplitManifest& manifest);
SplitManifest read_manifest(const std::filesystem::path& path);

struct SynthConfig {
  std::size_t n_scenes = 20;
  std::size_t hr_size = 96;
  std::size_t scale = 3;
  std::size_t k = 9;
  std::size_t shift_px = 2;      // max |integer HR-pixel shift| per axis
  double noise_sigma = 0.01;
  std::uint64_t seed = 0;
  BandSelection bands = BandSelection::nir;
  double cloud_probability = 0.3;  // chance a frame carries cloud occlusions
  bool hr_occlusion = true;        // occasionally mask a small HR region
};

// Procedural scene: texture of sinusoids and Gaussian blobs rendered on a
// canvas padded by shift_px, LR frames are shifted crops box-downsampled by
// `scale` plus Gaussian noise. Values are clamped to [0, 1].
LrStack synthesize_scene(const SynthConfig& cfg, std::size_t index, Band band);
// Writes cfg.n_scenes scenes per selected band in the on-disk layout.
// Returns the scene ids written.
std::vector<std::string> synthesize_dataset(const std::filesystem::path& root, const SynthConfig& cfg);

// Box-filter downsampling by an integer factor (extents must divide).
Image box_downsample(const Image& img, std::size_t factor);

}  // namespace cotmisr
