#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cotmisr/checkpoint.hpp"
#include "cotmisr/config.hpp"
#include "cotmisr/data.hpp"
#include "cotmisr/metrics.hpp"
#include "cotmisr/model.hpp"

namespace cotmisr {

// Bias-corrected masked reconstruction loss over [B, C, H, W] tensors; mask
// holds 1 for clear pixels and 0 otherwise. Per sample, b = mean over clear
// pixels of (hr - sr) and the loss is the clear-pixel mean of |hr - sr - b|
// (or its square); the batch loss is the mean over samples.
template <typename T>
Tensor<T> masked_loss(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& mask, LossKind kind);

// Registration-tolerant variant: per sample, the HR window [s, H-s) is
// compared with every SR window offset by up to s pixels in each direction
// and the lowest masked_loss is kept (ties to the first offset in row-major
// order); the gradient flows through that window only. s = 0 is masked_loss.
template <typename T>
Tensor<T> shifted_masked_loss(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& mask, LossKind kind,
                              std::size_t max_shift);

struct Batch {
  Tensor<float> frames;  // [B, k, 1, h, w]
  Tensor<float> hr;      // [B, 1, r*h, r*w]
  Tensor<float> mask;    // same as hr, 1 = clear
};

// Crops are in LR pixels; the HR window is the r-scaled counterpart.
Batch make_batch(const std::vector<const LrStack*>& stacks, const std::vector<CropWindow>& crops, std::size_t scale);

// Applies one of the 8 square symmetries to every image of the stack (bit 0
// flips columns, bit 1 flips rows, bit 2 transposes first; transposes need
// square images) and reorders frames and masks as frames[i] = old[order[i]].
LrStack transform_stack(const LrStack& stack, unsigned symmetry, const std::vector<std::size_t>& order);

// Adam with one learning rate per parameter group.
class Adam {
 public:
  Adam(const ModelParams<float>& params, const TrainConfig& cfg);

  // Applies one update from the current gradients. A zero rate leaves that
  // group's tensors bit-identical.
  void step(ModelParams<float>& params, double lr_encoder, double lr_cot);

  std::size_t steps() const { return step_; }
  NamedArrays state() const;
  void load_state(const NamedArrays& arrays, std::size_t steps);

 private:
  double beta1_, beta2_, eps_;
  std::size_t step_ = 0;
  std::vector<std::string> names_;
  std::vector<std::vector<float>> m_, v_;
};

struct StepMetrics {
  double loss = 0.0;
  double grad_norm_encoder = 0.0;
  double grad_norm_cot = 0.0;
};

// Forward, backward and one optimizer update. Throws NumericalError when
// the loss or a gradient is not finite (parameters are left untouched).
StepMetrics train_step(const Batch& batch, ModelParams<float>& params, Adam& optimizer, const CotConfig& model,
                       const TrainConfig& train, double lr_encoder, double lr_cot, const ForwardOptions& opts);

// Inference on one prepared stack; output clamped to [0, 1].
Image super_resolve(const ModelParams<float>& params, const CotConfig& cfg, const LrStack& stack);
SceneScore evaluate_scene(const ModelParams<float>& params, const CotConfig& cfg, const LrStack& stack,
                          const MetricOptions& opts = {});

// preprocess (clearance threshold) followed by pad_frames to k.
LrStack prepare_stack(const LrStack& raw, std::size_t k, double min_clearance);

struct Dataset {
  SplitManifest manifest;
  std::vector<LrStack> train;
  std::vector<LrStack> val;
};

// Lists scenes under data.root for the selected bands, splits them (or reads
// data.manifest) and loads + prepares every scene. Scenes without HR are
// rejected.
Dataset load_dataset(const ExperimentConfig& cfg);

struct HistoryRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_cpsnr, val_cssim;
  double lr_encoder = 0.0, lr_cot = 0.0;
};
std::string history_to_csv(const std::vector<HistoryRow>& rows);

struct FitResult {
  std::size_t epochs_run = 0;
  std::size_t steps = 0;
  std::vector<HistoryRow> history;
  std::vector<ScoredScene> final_val;
  double best_cpsnr = 0.0;
};

// Epoch loop. Writes into out_dir: checkpoint_last.bin, checkpoint_best.bin
// (best mean validation cPSNR), train_state.bin, history.csv and
// val_report.csv. All randomness for epoch e comes from Rng::derive(seed, e),
// so resuming from train_state.bin continues the exact trajectory.
FitResult fit(const ExperimentConfig& cfg, const Dataset& data, const std::filesystem::path& out_dir, bool resume,
              std::ostream* log = nullptr);

// Scores every stack of `scenes` with the model and the bicubic baseline.
struct EvalResult {
  std::vector<ScoredScene> model;
  std::vector<ScoredScene> bicubic;
};
EvalResult evaluate(const ModelParams<float>& params, const CotConfig& cfg, const std::vector<LrStack>& scenes);
void write_eval_report(std::ostream& os, const EvalResult& result);

}  // namespace cotmisr
