#include <algorithm>
#include <cmath>
#include <numeric>

#include "cotmisr/errors.hpp"
#include "cotmisr/model.hpp"
#include "cotmisr/ops.hpp"

namespace cotmisr {

template <typename T>
Tensor<T> median_reference(const Tensor<T>& frames) {
  if (frames.rank() != 5) throw ShapeError("median_reference: expected [B,K,C,H,W], got " + shape_string(frames.shape()));
  if (frames.dim(1) == 0) throw ShapeError("median_reference: no frames");
  return median(frames, 1);
}

template <typename T>
Tensor<T> pair_with_reference(const Tensor<T>& frames, const Tensor<T>& ref) {
  if (frames.rank() != 5 || ref.rank() != 4) throw ShapeError("pair_with_reference: expected [B,K,C,H,W] and [B,C,H,W]");
  const auto& f = frames.shape();
  const auto& r = ref.shape();
  if (r[0] != f[0] || r[1] != f[2] || r[2] != f[3] || r[3] != f[4])
    throw ShapeError("pair_with_reference: reference " + shape_string(r) + " does not match frames " + shape_string(f));
  const Tensor<T> ref5 = broadcast_to(reshape(ref, {r[0], 1, r[1], r[2], r[3]}), f);
  return concat(std::vector<Tensor<T>>{ref5, frames}, 2);
}

template <typename T>
Tensor<T> shallow_encode(const Tensor<T>& paired, const ModelParams<T>& params, const CotConfig& cfg) {
  if (paired.rank() != 5) throw ShapeError("shallow_encode: expected [B,K,2C,H,W]");
  const auto& s = paired.shape();
  if (s[1] != cfg.k)
    throw ShapeError("shallow_encode: got " + std::to_string(s[1]) + " frames, model expects k=" + std::to_string(cfg.k));
  if (s[2] != 2 * cfg.c_in) throw ShapeError("shallow_encode: channel count does not match 2*c_in");
  const Tensor<T> folded = reshape(paired, {s[0], s[1] * s[2], s[3], s[4]});
  const Tensor<T> h = relu(conv2d(folded, params.get("encoder.conv1.weight"), params.get("encoder.conv1.bias"), 1, 1));
  return conv2d(h, params.get("encoder.conv2.weight"), params.get("encoder.conv2.bias"), 1, 1);
}

template <typename T>
Tensor<T> lrca_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                       const CotConfig& cfg) {
  const auto& l = cfg.lrca;
  if (!l.use_ca && !l.use_sa) throw ConfigError("lrca: both attention parts disabled");
  if (x.rank() != 4 || x.dim(1) != cfg.c_e) throw ShapeError("lrca: expected [B,c_e,H,W], got " + shape_string(x.shape()));
  Tensor<T> y = x;
  if (l.use_sa) {
    const Tensor<T> f = depthwise_conv2d(y, params.get(prefix + ".sa.depthwise.weight"),
                                         params.get(prefix + ".sa.depthwise.bias"), 1, l.sa_kernel / 2);
    const Tensor<T> gate =
        sigmoid(conv2d(f, params.get(prefix + ".sa.pointwise.weight"), params.get(prefix + ".sa.pointwise.bias")));
    y = mul(f, gate);
  }
  if (l.use_ca) {
    const Tensor<T> pooled = global_avg_pool2d(y);
    const Tensor<T> z =
        relu(conv2d(pooled, params.get(prefix + ".ca.reduce.weight"), params.get(prefix + ".ca.reduce.bias")));
    const Tensor<T> gate =
        sigmoid(conv2d(z, params.get(prefix + ".ca.expand.weight"), params.get(prefix + ".ca.expand.bias")));
    y = mul(y, gate);
  }
  return add(y, x);
}

namespace {

// [L, B, Ce] -> [B*heads, L, dh]
template <typename T>
Tensor<T> to_heads(const Tensor<T>& s, std::size_t heads) {
  const std::size_t len = s.dim(0), batch = s.dim(1), dh = s.dim(2) / heads;
  const Tensor<T> t = permute(reshape(s, {len, batch, heads, dh}), {1, 2, 0, 3});
  return reshape(t, {batch * heads, len, dh});
}

template <typename T>
Tensor<T> from_heads(const Tensor<T>& o, std::size_t batch, std::size_t heads) {
  const std::size_t len = o.dim(1), dh = o.dim(2);
  const Tensor<T> t = permute(reshape(o, {batch, heads, len, dh}), {2, 0, 1, 3});
  return reshape(t, {len, batch, heads * dh});
}

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, const CotConfig& cfg, const ForwardOptions& opts) {
  if (!opts.training || opts.rng == nullptr || cfg.tblock.dropout == 0.0) return x;
  return dropout(x, cfg.tblock.dropout, *opts.rng);
}

template <typename T>
Tensor<T> to_sequence(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                      const CotConfig& cfg) {
  if (x.rank() != 4 || x.dim(1) != cfg.c_e) throw ShapeError("tblock: expected [B,c_e,H,W], got " + shape_string(x.shape()));
  if (cfg.tblock.heads == 0 || cfg.c_e % cfg.tblock.heads != 0) throw ShapeError("tblock: c_e must be divisible by heads");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> in = x;
  if (cfg.tblock.pos_embed) {
    if (h > cfg.tblock.pos_size || w > cfg.tblock.pos_size)
      throw ShapeError("tblock: input larger than the positional embedding (pos_size)");
    const Tensor<T> pos = slice(slice(params.get(prefix + ".pos_embed"), 2, 0, h), 3, 0, w);
    in = add(in, pos);
  }
  // reshape1: (B, Ce, H, W) -> (H*W, B, Ce)
  return permute(reshape(in, {b, c, h * w}), {2, 0, 1});
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& s, const ModelParams<T>& params, const std::string& l, const CotConfig& cfg,
                        const ForwardOptions& opts) {
  const std::size_t ce = cfg.c_e, heads = cfg.tblock.heads, batch = s.dim(1);
  const T eps = static_cast<T>(cfg.tblock.norm_eps);
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ce / heads)));

  const Tensor<T> h = layer_norm(s, params.get(l + ".norm1.weight"), params.get(l + ".norm1.bias"), eps);
  const Tensor<T> qkv = linear(h, params.get(l + ".attn.in_proj.weight"), params.get(l + ".attn.in_proj.bias"));
  const auto parts = split(qkv, 2, {ce, ce, ce});
  const Tensor<T> att = scaled_dot_product_attention(to_heads(parts[0], heads), to_heads(parts[1], heads),
                                                     to_heads(parts[2], heads), scale);
  const Tensor<T> o =
      linear(from_heads(att, batch, heads), params.get(l + ".attn.out_proj.weight"), params.get(l + ".attn.out_proj.bias"));
  const Tensor<T> s1 = add(s, maybe_dropout(o, cfg, opts));

  const Tensor<T> h2 = layer_norm(s1, params.get(l + ".norm2.weight"), params.get(l + ".norm2.bias"), eps);
  const Tensor<T> f1 = maybe_dropout(
      relu(linear(h2, params.get(l + ".ff.linear1.weight"), params.get(l + ".ff.linear1.bias"))), cfg, opts);
  const Tensor<T> f2 = linear(f1, params.get(l + ".ff.linear2.weight"), params.get(l + ".ff.linear2.bias"));
  return add(s1, maybe_dropout(f2, cfg, opts));
}

}  // namespace

template <typename T>
Tensor<T> tblock_forward(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                         const CotConfig& cfg, const ForwardOptions& opts) {
  Tensor<T> s = to_sequence(x, params, prefix, cfg);
  for (std::size_t j = 0; j < cfg.tblock.layers; ++j)
    s = encoder_layer(s, params, prefix + ".layer" + std::to_string(j), cfg, opts);
  // reshape2: (H*W, B, Ce) -> (B, Ce, H, W)
  return reshape(permute(s, {1, 2, 0}), x.shape());
}

template <typename T>
Tensor<T> tblock_attention_weights(const Tensor<T>& x, const ModelParams<T>& params, const std::string& prefix,
                                   const CotConfig& cfg, std::size_t layer) {
  if (layer >= cfg.tblock.layers) throw ConfigError("tblock: layer index out of range");
  NoGradGuard guard;
  Tensor<T> s = to_sequence(x, params, prefix, cfg);
  for (std::size_t j = 0; j < layer; ++j) s = encoder_layer(s, params, prefix + ".layer" + std::to_string(j), cfg, {});
  const std::string l = prefix + ".layer" + std::to_string(layer);
  const std::size_t ce = cfg.c_e, heads = cfg.tblock.heads;
  const Tensor<T> h = layer_norm(s, params.get(l + ".norm1.weight"), params.get(l + ".norm1.bias"),
                                 static_cast<T>(cfg.tblock.norm_eps));
  const auto parts = split(linear(h, params.get(l + ".attn.in_proj.weight"), params.get(l + ".attn.in_proj.bias")), 2,
                           {ce, ce, ce});
  return attention_weights(to_heads(parts[0], heads), to_heads(parts[1], heads),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(ce / heads))));
}

template <typename T>
Tensor<T> cot_forward(const Tensor<T>& x, const ModelParams<T>& params, const CotConfig& cfg,
                      const ForwardOptions& opts) {
  const auto blocks = expand(cfg.architecture());
  Tensor<T> y = x;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = "cot." + std::to_string(i);
    y = blocks[i] == BlockKind::lrca ? lrca_forward(y, params, prefix, cfg) : tblock_forward(y, params, prefix, cfg, opts);
  }
  return y;
}

template <typename T>
Tensor<T> reconstruct(const Tensor<T>& features, const ModelParams<T>& params, const CotConfig& cfg) {
  const Tensor<T> z = conv2d(features, params.get("recon.conv.weight"), params.get("recon.conv.bias"), 1, 1);
  return pixel_shuffle(z, cfg.scale);
}

template <typename T>
Tensor<T> forward(const Tensor<T>& frames, const ModelParams<T>& params, const CotConfig& cfg,
                  const ForwardOptions& opts) {
  if (frames.rank() != 5) throw ShapeError("forward: expected [B,K,C,H,W], got " + shape_string(frames.shape()));
  if (frames.dim(2) != cfg.c_in) throw ShapeError("forward: frame channels do not match c_in");
  const Tensor<T> ref = median_reference(frames);
  const Tensor<T> br = shallow_encode(pair_with_reference(frames, ref), params, cfg);
  const Tensor<T> sr = reconstruct(cot_forward(br, params, cfg, opts), params, cfg);
  if (cfg.residual == ResidualKind::none) return sr;
  const Tensor<T> base = cfg.residual == ResidualKind::median ? ref : reshape(slice(frames, 1, 0, 1), ref.shape());
  const Tensor<T> branch = cfg.residual_scale == 1.0 ? sr : scale(sr, static_cast<T>(cfg.residual_scale));
  return add(branch, upsample_bicubic(base, cfg.scale));
}

LrStack pad_frames(const LrStack& stack, std::size_t k) {
  if (stack.size() == 0) throw DataError("pad_frames: empty frame list");
  if (k == 0) throw ConfigError("pad_frames: k must be >= 1");
  const std::size_t n = stack.size();
  std::vector<std::size_t> by_clearance(n);
  std::iota(by_clearance.begin(), by_clearance.end(), 0);
  std::stable_sort(by_clearance.begin(), by_clearance.end(),
                   [&](std::size_t a, std::size_t b) { return stack.clearance(a) > stack.clearance(b); });

  std::vector<std::size_t> order(k);
  for (std::size_t j = 0; j < k; ++j) order[j] = by_clearance[j % n];
  LrStack out = stack;
  out.frames.clear();
  out.masks.clear();
  for (std::size_t i : order) {
    out.frames.push_back(stack.frames[i]);
    out.masks.push_back(stack.masks[i]);
  }
  return out;
}

template <typename T>
Tensor<T> stack_tensor(const std::vector<const LrStack*>& stacks, const std::vector<CropWindow>& crops) {
  if (stacks.empty()) throw ShapeError("stack_tensor: no stacks");
  if (!crops.empty() && crops.size() != stacks.size()) throw ShapeError("stack_tensor: one crop per stack required");
  const std::size_t k = stacks[0]->size();
  std::size_t h = stacks[0]->frames.at(0).height, w = stacks[0]->frames.at(0).width;
  if (!crops.empty()) h = w = crops[0].size;
  std::vector<T> data;
  data.reserve(stacks.size() * k * h * w);
  for (std::size_t b = 0; b < stacks.size(); ++b) {
    const LrStack& s = *stacks[b];
    if (s.size() != k) throw ShapeError("stack_tensor: stacks differ in frame count");
    const CropWindow cw = crops.empty() ? CropWindow{0, 0, 0} : crops[b];
    for (const Image& f : s.frames) {
      const std::size_t ch = crops.empty() ? f.height : cw.size, cwid = crops.empty() ? f.width : cw.size;
      if (ch != h || cwid != w || cw.y + ch > f.height || cw.x + cwid > f.width)
        throw ShapeError("stack_tensor: frame extents or crop out of range");
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) data.push_back(static_cast<T>(f.at(cw.y + y, cw.x + x)));
    }
  }
  return Tensor<T>({stacks.size(), k, 1, h, w}, std::move(data));
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, bool clamp) {
  const auto& s = t.shape();
  std::size_t h = 0, w = 0;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 4 && s[0] == 1 && s[1] == 1) {
    h = s[2];
    w = s[3];
  } else {
    throw ShapeError("tensor_to_image: expected [1,1,H,W] or [H,W], got " + shape_string(s));
  }
  Image img(h, w);
  const auto d = t.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const double v = static_cast<double>(d[i]);
    if (!std::isfinite(v)) throw NumericalError("non-finite value in model output");
    img.pixels[i] = clamp ? std::clamp(v, 0.0, 1.0) : v;
  }
  return img;
}

#define COTMISR_INSTANTIATE_NETWORK(T)                                                                              \
  template Tensor<T> median_reference(const Tensor<T>&);                                                           \
  template Tensor<T> pair_with_reference(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> shallow_encode(const Tensor<T>&, const ModelParams<T>&, const CotConfig&);                    \
  template Tensor<T> lrca_forward(const Tensor<T>&, const ModelParams<T>&, const std::string&, const CotConfig&);  \
  template Tensor<T> tblock_forward(const Tensor<T>&, const ModelParams<T>&, const std::string&, const CotConfig&, \
                                    const ForwardOptions&);                                                        \
  template Tensor<T> tblock_attention_weights(const Tensor<T>&, const ModelParams<T>&, const std::string&,         \
                                              const CotConfig&, std::size_t);                                      \
  template Tensor<T> cot_forward(const Tensor<T>&, const ModelParams<T>&, const CotConfig&, const ForwardOptions&); \
  template Tensor<T> reconstruct(const Tensor<T>&, const ModelParams<T>&, const CotConfig&);                       \
  template Tensor<T> forward(const Tensor<T>&, const ModelParams<T>&, const CotConfig&, const ForwardOptions&);    \
  template Tensor<T> stack_tensor(const std::vector<const LrStack*>&, const std::vector<CropWindow>&);             \
  template Image tensor_to_image(const Tensor<T>&, bool);

COTMISR_INSTANTIATE_NETWORK(float)
COTMISR_INSTANTIATE_NETWORK(double)

}  // namespace cotmisr
