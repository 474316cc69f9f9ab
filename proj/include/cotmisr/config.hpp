#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "cotmisr/arch.hpp"
#include "cotmisr/data.hpp"

namespace cotmisr {

struct LrcaConfig {
  bool use_ca = true;
  bool use_sa = true;
  std::size_t ca_reduction = 8;
  std::size_t sa_kernel = 3;

  template <typename V>
  void visit(V& v) {
    v("use_ca", use_ca);
    v("use_sa", use_sa);
    v("ca_reduction", ca_reduction);
    v("sa_kernel", sa_kernel);
  }
};

struct TBlockConfig {
  std::size_t layers = 1;
  std::size_t heads = 8;
  std::size_t ff_dim = 256;
  double dropout = 0.0;
  bool pos_embed = false;      // learned additive positional embedding
  std::size_t pos_size = 128;  // largest H and W the embedding covers
  double norm_eps = 1e-5;

  template <typename V>
  void visit(V& v) {
    v("layers", layers);
    v("heads", heads);
    v("ff_dim", ff_dim);
    v("dropout", dropout);
    v("pos_embed", pos_embed);
    v("pos_size", pos_size);
    v("norm_eps", norm_eps);
  }
};

// Optional global skip added to the reconstruction: the bicubic upsample of
// the median reference or of the anchor frame (frame 0, the clearest once
// the stack went through pad_frames).
enum class ResidualKind { none, median, anchor };
std::string residual_kind_name(ResidualKind kind);
ResidualKind parse_residual_kind(const std::string& text);

struct CotConfig {
  std::size_t k = 9;
  std::size_t c_in = 1;
  std::size_t c_e = 64;
  std::size_t scale = 3;
  std::string arch = "(2c1t)x4";
  LrcaConfig lrca;
  TBlockConfig tblock;
  ResidualKind residual = ResidualKind::none;
  double residual_scale = 1.0;  // multiplies the network branch when a skip is used

  // Throws ConfigError on any violated invariant.
  void validate() const;
  Architecture architecture() const { return parse_architecture(arch); }

  template <typename V>
  void visit(V& v) {
    v("k", k);
    v("c_in", c_in);
    v("c_e", c_e);
    v("scale", scale);
    v("arch", arch);
    v.nested("lrca", lrca);
    v.nested("tblock", tblock);
    v("residual", residual);
    v("residual_scale", residual_scale);
  }
};

enum class LossKind { masked_l1, masked_mse };
std::string loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct TrainConfig {
  double lr_encoder = 0.002;
  double lr_cot = 0.001;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;  // 0: no cap, otherwise stop after this many optimizer steps
  std::uint64_t seed = 0;
  LossKind loss = LossKind::masked_l1;
  std::size_t loss_shift = 0;  // shift search radius of the loss in HR pixels, 0: aligned
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 1.0;       // multiplicative per epoch
  std::size_t patch_size = 0;  // LR crop side for training batches, 0: whole frames
  std::size_t val_every = 1;   // validate every n epochs (and after the last)
  bool augment = false;        // random flips/transposes and frame order per training sample

  void validate() const;

  template <typename V>
  void visit(V& v) {
    v("lr_encoder", lr_encoder);
    v("lr_cot", lr_cot);
    v("batch_size", batch_size);
    v("epochs", epochs);
    v("max_steps", max_steps);
    v("seed", seed);
    v("loss", loss);
    v("loss_shift", loss_shift);
    v("beta1", beta1);
    v("beta2", beta2);
    v("adam_eps", adam_eps);
    v("lr_decay", lr_decay);
    v("patch_size", patch_size);
    v("val_every", val_every);
    v("augment", augment);
  }
};

struct DataConfig {
  std::string root = "data";
  BandSelection bands = BandSelection::nir;
  std::string manifest;  // empty: split the scene list with split_seed
  double split_ratio = 0.9;
  std::uint64_t split_seed = 0;
  double min_clearance = 0.85;

  void validate() const;

  template <typename V>
  void visit(V& v) {
    v("root", root);
    v("bands", bands);
    v("manifest", manifest);
    v("split_ratio", split_ratio);
    v("split_seed", split_seed);
    v("min_clearance", min_clearance);
  }
};

struct ExperimentConfig {
  CotConfig model;
  TrainConfig train;
  DataConfig data;
  std::string out_dir = "runs/default";

  void validate() const;

  template <typename V>
  void visit(V& v) {
    v.nested("model", model);
    v.nested("train", train);
    v.nested("data", data);
    v("out_dir", out_dir);
  }
};

// Key-value text: one "dotted.key = value" per line, '#' starts a comment.
// Printing emits every key in a fixed order; doubles use the shortest form
// that reads back to the same value, so parse(print(c)) == c and
// print(parse(t)) is a fixed point. Unknown keys are a ConfigError; keys not
// given keep their defaults.
std::string to_text(const CotConfig& cfg);
std::string to_text(const ExperimentConfig& cfg);
CotConfig cot_config_from_text(const std::string& text);
ExperimentConfig experiment_config_from_text(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

bool operator==(const CotConfig& a, const CotConfig& b);

}  // namespace cotmisr
