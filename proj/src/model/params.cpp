#include <cmath>

#include "cotmisr/errors.hpp"
#include "cotmisr/model.hpp"

namespace cotmisr {

std::string group_name(ParamGroup group) { return group == ParamGroup::encoder ? "encoder" : "cot"; }

template <typename T>
void ModelParams<T>::add(std::string name, ParamGroup group, Tensor<T> tensor) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  if (!tensor.node()->is_leaf()) throw ConfigError("parameter '" + name + "' must be a leaf tensor");
  tensor.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), group, std::move(tensor)});
}

template <typename T>
bool ModelParams<T>::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename T>
const Tensor<T>& ModelParams<T>::get(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename T>
Tensor<T>& ModelParams<T>::get(std::string_view name) {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("missing parameter '" + std::string(name) + "'");
  return entries_[it->second].tensor;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  for (const auto& e : entries_) out.add(e.name, e.group, e.tensor.detach().template cast<U>());
  return out;
}

template <typename T>
std::size_t count_params(const ModelParams<T>& params, std::optional<ParamGroup> group) {
  std::size_t n = 0;
  for (const auto& e : params.entries())
    if (!group || e.group == *group) n += e.tensor.numel();
  return n;
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(const Shape& shape, double bound, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(shape, std::move(v));
}

// Kaiming-uniform with a = sqrt(5) (the usual framework default for convs):
// bound = 1 / sqrt(fan_in).
template <typename T>
Tensor<T> kaiming_conv(std::size_t out_c, std::size_t in_c, std::size_t kh, std::size_t kw, Rng& rng) {
  const double fan_in = static_cast<double>(in_c * kh * kw);
  return uniform_tensor<T>({out_c, in_c, kh, kw}, 1.0 / std::sqrt(fan_in), rng);
}

template <typename T>
Tensor<T> xavier(std::size_t out_f, std::size_t in_f, Rng& rng) {
  return uniform_tensor<T>({out_f, in_f}, std::sqrt(6.0 / static_cast<double>(in_f + out_f)), rng);
}

template <typename T>
Tensor<T> zeros(std::size_t n) {
  return Tensor<T>(Shape{n}, T(0));
}

}  // namespace

template <typename T>
ModelParams<T> init_params(const CotConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams<T> p;
  const std::size_t ce = cfg.c_e, in_ch = cfg.k * 2 * cfg.c_in;
  const auto enc = ParamGroup::encoder, cot = ParamGroup::cot;

  p.add("encoder.conv1.weight", enc, kaiming_conv<T>(ce, in_ch, 3, 3, rng));
  p.add("encoder.conv1.bias", enc, zeros<T>(ce));
  p.add("encoder.conv2.weight", enc, kaiming_conv<T>(ce, ce, 3, 3, rng));
  p.add("encoder.conv2.bias", enc, zeros<T>(ce));

  const auto blocks = expand(cfg.architecture());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string b = "cot." + std::to_string(i);
    if (blocks[i] == BlockKind::lrca) {
      const auto& l = cfg.lrca;
      if (l.use_sa) {
        p.add(b + ".sa.depthwise.weight", cot, kaiming_conv<T>(ce, 1, l.sa_kernel, l.sa_kernel, rng));
        p.add(b + ".sa.depthwise.bias", cot, zeros<T>(ce));
        p.add(b + ".sa.pointwise.weight", cot, kaiming_conv<T>(1, ce, 1, 1, rng));
        p.add(b + ".sa.pointwise.bias", cot, zeros<T>(1));
      }
      if (l.use_ca) {
        const std::size_t mid = ce / l.ca_reduction;
        p.add(b + ".ca.reduce.weight", cot, kaiming_conv<T>(mid, ce, 1, 1, rng));
        p.add(b + ".ca.reduce.bias", cot, zeros<T>(mid));
        p.add(b + ".ca.expand.weight", cot, kaiming_conv<T>(ce, mid, 1, 1, rng));
        p.add(b + ".ca.expand.bias", cot, zeros<T>(ce));
      }
    } else {
      const auto& t = cfg.tblock;
      if (t.pos_embed) {
        Shape s{1, ce, t.pos_size, t.pos_size};
        std::vector<T> v(shape_numel(s));
        for (auto& x : v) x = static_cast<T>(0.02 * rng.normal());
        p.add(b + ".pos_embed", cot, Tensor<T>(s, std::move(v)));
      }
      for (std::size_t j = 0; j < t.layers; ++j) {
        const std::string l = b + ".layer" + std::to_string(j);
        p.add(l + ".norm1.weight", cot, Tensor<T>(Shape{ce}, T(1)));
        p.add(l + ".norm1.bias", cot, zeros<T>(ce));
        p.add(l + ".attn.in_proj.weight", cot, xavier<T>(3 * ce, ce, rng));
        p.add(l + ".attn.in_proj.bias", cot, zeros<T>(3 * ce));
        p.add(l + ".attn.out_proj.weight", cot, xavier<T>(ce, ce, rng));
        p.add(l + ".attn.out_proj.bias", cot, zeros<T>(ce));
        p.add(l + ".norm2.weight", cot, Tensor<T>(Shape{ce}, T(1)));
        p.add(l + ".norm2.bias", cot, zeros<T>(ce));
        p.add(l + ".ff.linear1.weight", cot, xavier<T>(t.ff_dim, ce, rng));
        p.add(l + ".ff.linear1.bias", cot, zeros<T>(t.ff_dim));
        p.add(l + ".ff.linear2.weight", cot, xavier<T>(ce, t.ff_dim, rng));
        p.add(l + ".ff.linear2.bias", cot, zeros<T>(ce));
      }
    }
  }

  const std::size_t out_ch = cfg.c_in * cfg.scale * cfg.scale;
  Tensor<T> recon = kaiming_conv<T>(out_ch, ce, 3, 3, rng);
  // with a skip the untrained network starts as the plain upsample
  if (cfg.residual != ResidualKind::none) recon = Tensor<T>(recon.shape(), std::vector<T>(recon.numel(), T(0)));
  p.add("recon.conv.weight", enc, recon);
  p.add("recon.conv.bias", enc, zeros<T>(out_ch));
  return p;
}

template class ModelParams<float>;
template class ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;
template std::size_t count_params(const ModelParams<float>&, std::optional<ParamGroup>);
template std::size_t count_params(const ModelParams<double>&, std::optional<ParamGroup>);
template ModelParams<float> init_params<float>(const CotConfig&, Rng&);
template ModelParams<double> init_params<double>(const CotConfig&, Rng&);

}  // namespace cotmisr
