#include "cotmisr/trainer.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "cotmisr/checkpoint.hpp"
#include "cotmisr/errors.hpp"
#include "cotmisr/ops.hpp"

namespace fs = std::filesystem;

namespace cotmisr {

template <typename T>
Tensor<T> masked_loss(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& mask, LossKind kind) {
  if (sr.shape() != hr.shape() || mask.shape() != hr.shape())
    throw ShapeError("loss: sr " + shape_string(sr.shape()) + ", hr " + shape_string(hr.shape()) + " and mask " +
                     shape_string(mask.shape()) + " must agree");
  if (sr.rank() < 2) throw ShapeError("loss: expected a batch axis");
  const std::size_t b = sr.dim(0), n = sr.numel() / b;
  const Tensor<T> m = reshape(mask, {b, n});
  const Tensor<T> count = sum(m, 1, true);
  for (T c : count.data())
    if (!(c > T(0))) throw DataError("loss: a sample has no clear HR pixels");
  const Tensor<T> diff = reshape(sub(hr, sr), {b, n});
  const Tensor<T> bias = div(sum(mul(diff, m), 1, true), count);
  const Tensor<T> resid = mul(sub(diff, bias), m);
  const Tensor<T> per = kind == LossKind::masked_l1 ? abs(resid) : square(resid);
  return mean(div(sum(per, 1, true), count));
}

template <typename T>
Tensor<T> shifted_masked_loss(const Tensor<T>& sr, const Tensor<T>& hr, const Tensor<T>& mask, LossKind kind,
                              std::size_t max_shift) {
  if (max_shift == 0) return masked_loss(sr, hr, mask, kind);
  if (sr.shape() != hr.shape() || mask.shape() != hr.shape() || sr.rank() != 4)
    throw ShapeError("loss: sr, hr and mask must be matching [B,C,H,W]");
  const std::size_t b = sr.dim(0), c = sr.dim(1), h = sr.dim(2), w = sr.dim(3), s = max_shift;
  if (h <= 2 * s || w <= 2 * s) throw ShapeError("loss: patch too small for the shift search");
  const std::size_t wh = h - 2 * s, ww = w - 2 * s;
  const auto srd = sr.data(), hrd = hr.data(), md = mask.data();

  // value of the loss for one sample and shift, or -1 without clear pixels
  auto window_loss = [&](std::size_t n, std::size_t du, std::size_t dv) {
    double count = 0.0, bias = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < wh; ++y)
        for (std::size_t x = 0; x < ww; ++x) {
          const std::size_t hi = ((n * c + ch) * h + s + y) * w + s + x;
          const std::size_t si = ((n * c + ch) * h + du + y) * w + dv + x;
          if (md[hi] > T(0)) {
            count += 1.0;
            bias += static_cast<double>(hrd[hi]) - static_cast<double>(srd[si]);
          }
        }
    if (count == 0.0) return -1.0;
    bias /= count;
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < wh; ++y)
        for (std::size_t x = 0; x < ww; ++x) {
          const std::size_t hi = ((n * c + ch) * h + s + y) * w + s + x;
          const std::size_t si = ((n * c + ch) * h + du + y) * w + dv + x;
          if (md[hi] > T(0)) {
            const double e = static_cast<double>(hrd[hi]) - static_cast<double>(srd[si]) - bias;
            acc += kind == LossKind::masked_l1 ? std::abs(e) : e * e;
          }
        }
    return acc / count;
  };

  Tensor<T> total;
  for (std::size_t n = 0; n < b; ++n) {
    double best = -1.0;
    std::size_t bu = 0, bv = 0;
    for (std::size_t du = 0; du <= 2 * s; ++du)
      for (std::size_t dv = 0; dv <= 2 * s; ++dv) {
        const double v = window_loss(n, du, dv);
        if (v >= 0.0 && (best < 0.0 || v < best)) {
          best = v;
          bu = du;
          bv = dv;
        }
      }
    if (best < 0.0) throw DataError("loss: a sample has no clear HR pixels");
    auto window = [&](const Tensor<T>& t, std::size_t oy, std::size_t ox) {
      return slice(slice(slice(t, 0, n, 1), 2, oy, wh), 3, ox, ww);
    };
    const Tensor<T> term = masked_loss(window(sr, bu, bv), window(hr, s, s), window(mask, s, s), kind);
    total = n == 0 ? term : add(total, term);
  }
  return scale(total, static_cast<T>(1.0 / static_cast<double>(b)));
}

template Tensor<float> shifted_masked_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, LossKind,
                                           std::size_t);
template Tensor<double> shifted_masked_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                            LossKind, std::size_t);

template Tensor<float> masked_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, LossKind);
template Tensor<double> masked_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, LossKind);

Batch make_batch(const std::vector<const LrStack*>& stacks, const std::vector<CropWindow>& crops, std::size_t scale) {
  Batch batch;
  batch.frames = stack_tensor<float>(stacks, crops);
  const std::size_t lh = batch.frames.dim(3), lw = batch.frames.dim(4);
  const std::size_t hh = lh * scale, hw = lw * scale;
  std::vector<float> hr, mask;
  hr.reserve(stacks.size() * hh * hw);
  mask.reserve(stacks.size() * hh * hw);
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const LrStack& s = *stacks[i];
    if (!s.hr || !s.hr_mask) throw DataError(s.scene_id + ": scene has no HR target");
    const std::size_t oy = crops.empty() ? 0 : crops[i].y * scale, ox = crops.empty() ? 0 : crops[i].x * scale;
    if (oy + hh > s.hr->height || ox + hw > s.hr->width)
      throw DataError(s.scene_id + ": HR extent is not scale x LR extent");
    for (std::size_t y = 0; y < hh; ++y)
      for (std::size_t x = 0; x < hw; ++x) {
        hr.push_back(static_cast<float>(s.hr->at(oy + y, ox + x)));
        mask.push_back(s.hr_mask->at(oy + y, ox + x) ? 1.0f : 0.0f);
      }
  }
  batch.hr = Tensor<float>({stacks.size(), 1, hh, hw}, std::move(hr));
  batch.mask = Tensor<float>({stacks.size(), 1, hh, hw}, std::move(mask));
  return batch;
}

namespace {

template <typename Img>
Img apply_symmetry(const Img& src, unsigned symmetry) {
  const bool transpose = symmetry & 4u;
  if (transpose && src.height != src.width) throw ShapeError("transform_stack: transpose needs square images");
  Img out = src;
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      std::size_t sy = transpose ? x : y, sx = transpose ? y : x;
      if (symmetry & 1u) sx = src.width - 1 - sx;
      if (symmetry & 2u) sy = src.height - 1 - sy;
      if constexpr (std::is_same_v<Img, Mask>)
        out.set(y, x, src.at(sy, sx));
      else
        out.at(y, x) = src.at(sy, sx);
    }
  return out;
}

}  // namespace

LrStack transform_stack(const LrStack& stack, unsigned symmetry, const std::vector<std::size_t>& order) {
  if (symmetry > 7) throw ConfigError("transform_stack: symmetry must be in [0, 7]");
  if (order.size() != stack.size()) throw ShapeError("transform_stack: order length differs from frame count");
  std::vector<bool> seen(order.size(), false);
  for (auto i : order) {
    if (i >= order.size() || seen[i]) throw ShapeError("transform_stack: order is not a permutation");
    seen[i] = true;
  }
  LrStack out = stack;
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.frames[i] = apply_symmetry(stack.frames[order[i]], symmetry);
    out.masks[i] = apply_symmetry(stack.masks[order[i]], symmetry);
  }
  if (stack.hr) out.hr = apply_symmetry(*stack.hr, symmetry);
  if (stack.hr_mask) out.hr_mask = apply_symmetry(*stack.hr_mask, symmetry);
  return out;
}

Adam::Adam(const ModelParams<float>& params, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps) {
  for (const auto& e : params.entries()) {
    names_.push_back(e.name);
    m_.emplace_back(e.tensor.numel(), 0.0f);
    v_.emplace_back(e.tensor.numel(), 0.0f);
  }
}

void Adam::step(ModelParams<float>& params, double lr_encoder, double lr_cot) {
  if (params.size() != names_.size()) throw ConfigError("optimizer/parameter mismatch");
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& e = params.entries()[i];
    if (e.name != names_[i]) throw ConfigError("optimizer/parameter order mismatch at " + e.name);
    const auto g = e.tensor.grad();
    if (g.empty()) continue;
    const float lr = static_cast<float>(e.group == ParamGroup::encoder ? lr_encoder : lr_cot);
    const auto step_size = static_cast<float>(lr / c1);
    const auto inv_c2 = static_cast<float>(1.0 / c2);
    const auto eps = static_cast<float>(eps_);
    auto w = e.tensor.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      w[j] -= step_size * (m[j] / (std::sqrt(v[j] * inv_c2) + eps));
    }
  }
}

NamedArrays Adam::state() const {
  NamedArrays out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    out.emplace_back(names_[i] + ".m", Tensor<float>(Shape{m_[i].size()}, m_[i]));
    out.emplace_back(names_[i] + ".v", Tensor<float>(Shape{v_[i].size()}, v_[i]));
  }
  return out;
}

void Adam::load_state(const NamedArrays& arrays, std::size_t steps) {
  if (arrays.size() != 2 * names_.size()) throw DataError("optimizer state does not match the model");
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto& [mn, mt] = arrays[2 * i];
    const auto& [vn, vt] = arrays[2 * i + 1];
    if (mn != names_[i] + ".m" || vn != names_[i] + ".v" || mt.numel() != m_[i].size() || vt.numel() != v_[i].size())
      throw DataError("optimizer state does not match parameter " + names_[i]);
    m_[i].assign(mt.data().begin(), mt.data().end());
    v_[i].assign(vt.data().begin(), vt.data().end());
  }
  step_ = steps;
}

StepMetrics train_step(const Batch& batch, ModelParams<float>& params, Adam& optimizer, const CotConfig& model,
                       const TrainConfig& train, double lr_encoder, double lr_cot, const ForwardOptions& opts) {
  params.zero_grad();
  const Tensor<float> sr = forward(batch.frames, params, model, opts);
  const Tensor<float> loss = shifted_masked_loss(sr, batch.hr, batch.mask, train.loss, train.loss_shift);
  StepMetrics out;
  out.loss = loss.item();
  if (!std::isfinite(out.loss)) throw NumericalError("training loss is not finite (" + std::to_string(out.loss) + ")");
  loss.backward();
  double enc = 0.0, cot = 0.0;
  for (const auto& e : params.entries()) {
    double s = 0.0;
    for (float g : e.tensor.grad()) s += static_cast<double>(g) * g;
    (e.group == ParamGroup::encoder ? enc : cot) += s;
  }
  out.grad_norm_encoder = std::sqrt(enc);
  out.grad_norm_cot = std::sqrt(cot);
  if (!std::isfinite(out.grad_norm_encoder) || !std::isfinite(out.grad_norm_cot))
    throw NumericalError("non-finite gradient");
  optimizer.step(params, lr_encoder, lr_cot);
  return out;
}

Image super_resolve(const ModelParams<float>& params, const CotConfig& cfg, const LrStack& stack) {
  NoGradGuard guard;
  const Tensor<float> frames = stack_tensor<float>({&stack});
  return tensor_to_image(forward(frames, params, cfg), true);
}

SceneScore evaluate_scene(const ModelParams<float>& params, const CotConfig& cfg, const LrStack& stack,
                          const MetricOptions& opts) {
  if (!stack.hr || !stack.hr_mask) throw DataError(stack.scene_id + ": scene has no HR target");
  return cpsnr(super_resolve(params, cfg, stack), *stack.hr, *stack.hr_mask, opts);
}

LrStack prepare_stack(const LrStack& raw, std::size_t k, double min_clearance) {
  return pad_frames(preprocess(raw, min_clearance), k);
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  const fs::path root = cfg.data.root;
  Dataset ds;
  if (!cfg.data.manifest.empty()) {
    ds.manifest = read_manifest(cfg.data.manifest);
  } else {
    ds.manifest = split(list_scenes(root, cfg.data.bands), cfg.data.split_seed, cfg.data.split_ratio);
  }
  auto load = [&](const std::vector<std::string>& ids, std::vector<LrStack>& out) {
    out.resize(ids.size());
    std::vector<std::exception_ptr> errors(ids.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < ids.size(); ++i) {
      try {
        LrStack s = load_scene(root / ids[i]);
        if (!s.hr || !s.hr_mask) throw DataError(ids[i] + ": scene has no HR.png");
        out[i] = prepare_stack(s, cfg.model.k, cfg.data.min_clearance);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  };
  load(ds.manifest.train, ds.train);
  load(ds.manifest.val, ds.val);
  if (ds.train.empty()) throw DataError("no training scenes");
  return ds;
}

namespace {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string exact_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_exact(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc()) throw DataError("train state: bad number '" + s + "'");
  return v;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

struct TrainState {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double best = -1.0;
  bool has_best = false;
  std::vector<HistoryRow> history;
};

std::string encode_state(const TrainState& s) {
  std::ostringstream os;
  os << "epoch " << s.epoch << "\nsteps " << s.steps << "\nbest " << (s.has_best ? exact_number(s.best) : "none")
     << "\n";
  for (const auto& r : s.history) {
    os << "row " << r.epoch << ' ' << exact_number(r.train_loss) << ' '
       << (r.val_cpsnr ? exact_number(*r.val_cpsnr) : "-") << ' ' << (r.val_cssim ? exact_number(*r.val_cssim) : "-")
       << ' ' << exact_number(r.lr_encoder) << ' ' << exact_number(r.lr_cot) << "\n";
  }
  return os.str();
}

TrainState decode_state(const std::string& text) {
  TrainState s;
  std::istringstream is(text);
  std::string tag;
  while (is >> tag) {
    if (tag == "epoch") {
      is >> s.epoch;
    } else if (tag == "steps") {
      is >> s.steps;
    } else if (tag == "best") {
      std::string v;
      is >> v;
      s.has_best = v != "none";
      if (s.has_best) s.best = parse_exact(v);
    } else if (tag == "row") {
      HistoryRow r;
      std::string loss, cp, cs, le, lc;
      is >> r.epoch >> loss >> cp >> cs >> le >> lc;
      r.train_loss = parse_exact(loss);
      if (cp != "-") r.val_cpsnr = parse_exact(cp);
      if (cs != "-") r.val_cssim = parse_exact(cs);
      r.lr_encoder = parse_exact(le);
      r.lr_cot = parse_exact(lc);
      s.history.push_back(r);
    } else {
      throw DataError("train state: unknown field '" + tag + "'");
    }
    if (!is) throw DataError("train state: malformed field '" + tag + "'");
  }
  return s;
}

}  // namespace

std::string history_to_csv(const std::vector<HistoryRow>& rows) {
  std::ostringstream os;
  os << "epoch,train_loss,val_cpsnr,val_cssim,lr_encoder,lr_cot\n";
  for (const auto& r : rows) {
    os << r.epoch << ',' << format_number(r.train_loss) << ',' << (r.val_cpsnr ? format_metric(*r.val_cpsnr) : "")
       << ',' << (r.val_cssim ? format_metric(*r.val_cssim) : "") << ',' << format_number(r.lr_encoder) << ','
       << format_number(r.lr_cot) << '\n';
  }
  return os.str();
}

EvalResult evaluate(const ModelParams<float>& params, const CotConfig& cfg, const std::vector<LrStack>& scenes) {
  EvalResult r;
  for (const auto& s : scenes) {
    if (!s.hr || !s.hr_mask) throw DataError(s.scene_id + ": scene has no HR target");
    r.model.push_back({s.scene_id, s.band, evaluate_scene(params, cfg, s)});
    r.bicubic.push_back({s.scene_id, s.band, cpsnr(bicubic_baseline(s, cfg.scale), *s.hr, *s.hr_mask)});
  }
  return r;
}

void write_eval_report(std::ostream& os, const EvalResult& result) {
  write_report_header(os);
  write_report_rows(os, result.model, true, "cot-misr");
  write_report_rows(os, result.bicubic, false, "bicubic");
}

FitResult fit(const ExperimentConfig& cfg, const Dataset& data, const fs::path& out_dir, bool resume, std::ostream* log) {
  cfg.validate();
  if (data.train.empty()) throw DataError("fit: empty training set");
  fs::create_directories(out_dir);
  const CotConfig& mc = cfg.model;
  const TrainConfig& tc = cfg.train;

  ModelParams<float> params;
  {
    Rng init_rng = Rng::derive(tc.seed, 0);
    params = init_params<float>(mc, init_rng);
  }
  Adam adam(params, tc);
  TrainState state;
  static const char kStateMagic[4] = {'C', 'O', 'T', 'S'};

  if (resume) {
    const auto ck = load_checkpoint<float>(out_dir / "checkpoint_last.bin");
    if (!(ck.config == mc)) throw ConfigError("resume: checkpoint config differs from the experiment config");
    params = ck.params;
    std::string header;
    const auto arrays = read_arrays(out_dir / "train_state.bin", kStateMagic, header);
    state = decode_state(header);
    adam.load_state(arrays, state.steps);
  }

  const std::size_t lr_size = data.train.front().frames.front().height;
  const std::size_t lr_w = data.train.front().frames.front().width;
  const bool crop = tc.patch_size > 0 && tc.patch_size < std::min(lr_size, lr_w);

  FitResult result;
  result.steps = state.steps;
  bool stop = tc.max_steps > 0 && state.steps >= tc.max_steps;
  for (std::size_t epoch = state.epoch + 1; epoch <= tc.epochs && !stop; ++epoch) {
    Rng rng = Rng::derive(tc.seed, epoch);
    const double decay = std::pow(tc.lr_decay, static_cast<double>(epoch - 1));
    const double lr_enc = tc.lr_encoder * decay, lr_cot = tc.lr_cot * decay;

    std::vector<std::size_t> order(data.train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const LrStack*> stacks;
      std::vector<CropWindow> crops;
      std::vector<LrStack> augmented;
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const LrStack* sp = &data.train[order[i]];
        if (tc.augment) {
          const bool square = sp->frames[0].height == sp->frames[0].width;
          const auto sym = static_cast<unsigned>(rng.below(square ? 8 : 4));
          std::vector<std::size_t> perm(sp->size());
          std::iota(perm.begin(), perm.end(), 0);
          // frame 0 stays put so the anchor frame keeps its role
          for (std::size_t j = perm.size(); j > 2; --j) std::swap(perm[j - 1], perm[1 + rng.below(j - 1)]);
          augmented.push_back(transform_stack(*sp, sym, perm));
          sp = &augmented.back();
        }
        const LrStack& s = *sp;
        stacks.push_back(&s);
        if (crop) {
          const std::size_t h = s.frames[0].height, w = s.frames[0].width;
          crops.push_back({rng.below(h - tc.patch_size + 1), rng.below(w - tc.patch_size + 1), tc.patch_size});
        }
      }
      const Batch batch = make_batch(stacks, crops, mc.scale);
      const StepMetrics m = train_step(batch, params, adam, mc, tc, lr_enc, lr_cot, {true, &rng});
      loss_sum += m.loss;
      ++batches;
      ++state.steps;
      if (tc.max_steps > 0 && state.steps >= tc.max_steps) {
        stop = true;
        break;
      }
    }

    HistoryRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(batches);
    row.lr_encoder = lr_enc;
    row.lr_cot = lr_cot;
    const bool last = stop || epoch == tc.epochs;
    if (!data.val.empty() && (epoch % tc.val_every == 0 || last)) {
      const EvalResult ev = evaluate(params, mc, data.val);
      const SceneScore mean = mean_score(ev.model);
      row.val_cpsnr = mean.cpsnr;
      row.val_cssim = mean.cssim;
      if (!state.has_best || mean.cpsnr > state.best) {
        state.best = mean.cpsnr;
        state.has_best = true;
        save_checkpoint(out_dir / "checkpoint_best.bin", mc, params);
      }
      if (last) {
        std::ofstream rep(out_dir / "val_report.csv", std::ios::binary | std::ios::trunc);
        write_eval_report(rep, ev);
        result.final_val = ev.model;
      }
    }
    state.history.push_back(row);
    state.epoch = epoch;

    save_checkpoint(out_dir / "checkpoint_last.bin", mc, params);
    write_arrays(out_dir / "train_state.bin", kStateMagic, encode_state(state), adam.state());
    write_text(out_dir / "history.csv", history_to_csv(state.history));
    if (log) {
      *log << "epoch " << epoch << "/" << tc.epochs << " steps " << state.steps << " loss "
           << format_number(row.train_loss);
      if (row.val_cpsnr) *log << " val_cpsnr " << format_metric(*row.val_cpsnr) << " val_cssim " << format_metric(*row.val_cssim);
      *log << "\n" << std::flush;
    }
  }
  write_text(out_dir / "config.txt", to_text(cfg));
  write_manifest(out_dir / "manifest.txt", data.manifest);

  result.epochs_run = state.epoch;
  result.steps = state.steps;
  result.history = state.history;
  result.best_cpsnr = state.has_best ? state.best : 0.0;
  return result;
}

}  // namespace cotmisr
