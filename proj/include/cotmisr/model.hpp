#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cotmisr/config.hpp"
#include "cotmisr/data.hpp"
#include "cotmisr/rng.hpp"
#include "cotmisr/tensor.hpp"

namespace cotmisr {

// "encoder": shallow feature extraction and reconstruction; "cot": every
// CoT block. The two groups get separate learning rates.
enum class ParamGroup { encoder, cot };
std::string group_name(ParamGroup group);

template <typename T>
class ModelParams {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor<T> tensor;
  };

  // Names must be unique; the tensor becomes a grad-requiring leaf.
  void add(std::string name, ParamGroup group, Tensor<T> tensor);
  bool contains(std::string_view name) const;
  const Tensor<T>& get(std::string_view name) const;
  Tensor<T>& get(std::string_view name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  void zero_grad();

  template <typename U>
  ModelParams<U> cast() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Total scalar count, optionally restricted to one group.
template <typename T>
std::size_t count_params(const ModelParams<T>& params, std::optional<ParamGroup> group = std::nullopt);

// Parameter layout for a validated config, with default initialization:
// conv kernels uniform in +-1/sqrt(fan_in), Xavier-uniform attention and
// feed-forward weights, zero biases, unit/zero layer-norm affine. With a
// residual skip the reconstruction kernel starts at zero.
template <typename T>
ModelParams<T> init_params(const CotConfig& cfg, Rng& rng);

// Per-call switches. Dropout is active only when training with an rng.
struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;
};

// Stages of the network; frames are [B, K, C, H, W].
template <typename T> Tensor<T> median_reference(const Tensor<T>& frames);
template <typename T> Tensor<T> pair_with_reference(const Tensor<T>& frames, const Tensor<T>& ref);
template <typename T>
Tensor<T> shallow_encode(const Tensor<T>& paired, const ModelParams<T>& params, const CotConfig& cfg);
// `prefix` names the block, e.g. "cot.0".
template <typename T>
Tensor<T> lrca_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                       const CotConfig& cfg);
template <typename T>
Tensor<T> tblock_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                         const CotConfig& cfg, const ForwardOptions& opts = {});
// Attention weights [B*heads, L, L] of layer `layer` inside a T-Block, for
// inspection; runs the block without recording a graph.
template <typename T>
Tensor<T> tblock_attention_weights(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                                   const CotConfig& cfg, std::size_t layer);
template <typename T>
Tensor<T> cot_forward(const Tensor<T>& x, const ModelParams<T>& params, const CotConfig& cfg,
                      const ForwardOptions& opts = {});
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& features, const ModelParams<T>& params, const CotConfig& cfg);
// Full network: [B, K, C, H, W] -> [B, C, rH, rW].
template <typename T>
Tensor<T> forward(const Tensor<T>& frames, const ModelParams<T>& params, const CotConfig& cfg,
                  const ForwardOptions& opts = {});

// Brings a stack to exactly k frames ordered clearest first (ties to the
// lower index). With more than k only the k clearest are kept; with fewer
// that order is repeated cyclically until k exist.
LrStack pad_frames(const LrStack& stack, std::size_t k);

// Packs stacks (all k frames, same extent) into [B, k, 1, H, W]. A non-zero
// `crop` takes a crop x crop window at the given LR offsets.
struct CropWindow {
  std::size_t y = 0, x = 0, size = 0;
};
template <typename T>
Tensor<T> stack_tensor(const std::vector<const LrStack*>& stacks, const std::vector<CropWindow>& crops = {});

// Converts a [1, 1, H, W] (or [H, W]) tensor to an image, clamped to [0, 1]
// when `clamp` is set.
template <typename T> Image tensor_to_image(const Tensor<T>& t, bool clamp);

}  // namespace cotmisr
