#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <regex>
#include <sstream>

#include "cotmisr/data.hpp"
#include "cotmisr/errors.hpp"

namespace fs = std::filesystem;

namespace cotmisr {

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string frame_name(const char* prefix, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%s%03zu.png", prefix, index);
  return buf;
}

}  // namespace

std::string band_name(Band band) { return band == Band::nir ? "NIR" : "RED"; }

Band parse_band(const std::string& text) {
  const auto u = upper(text);
  if (u == "NIR") return Band::nir;
  if (u == "RED") return Band::red;
  throw ConfigError("unknown band '" + text + "' (expected NIR or RED)");
}

std::string band_selection_name(BandSelection sel) {
  switch (sel) {
    case BandSelection::nir: return "NIR";
    case BandSelection::red: return "RED";
    case BandSelection::all: return "ALL";
  }
  return "ALL";
}

BandSelection parse_band_selection(const std::string& text) {
  const auto u = upper(text);
  if (u == "NIR") return BandSelection::nir;
  if (u == "RED") return BandSelection::red;
  if (u == "ALL") return BandSelection::all;
  throw ConfigError("unknown band '" + text + "' (expected NIR, RED or ALL)");
}

bool band_selected(BandSelection sel, Band band) {
  return sel == BandSelection::all || (sel == BandSelection::nir) == (band == Band::nir);
}

void LrStack::validate() const {
  if (frames.empty()) throw DataError(scene_id + ": stack has no frames");
  if (masks.size() != frames.size()) throw DataError(scene_id + ": frame and mask counts differ");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (!frames[i].same_extent(frames[0]))
      throw DataError(scene_id + ": frame " + std::to_string(i) + " extent differs from frame 0");
    if (masks[i].height != frames[i].height || masks[i].width != frames[i].width)
      throw DataError(scene_id + ": mask " + std::to_string(i) + " extent differs from its frame");
  }
  if (hr && hr_mask && (hr->height != hr_mask->height || hr->width != hr_mask->width))
    throw DataError(scene_id + ": HR and SM extents differ");
}

LrStack load_scene(const fs::path& dir, std::optional<Band> band) {
  if (!fs::is_directory(dir)) throw DataError("scene directory not found: " + dir.string());
  LrStack stack;
  if (band) {
    stack.band = *band;
  } else {
    const auto parent = upper(dir.parent_path().filename().string());
    if (parent != "NIR" && parent != "RED")
      throw DataError("cannot infer band from directory " + dir.string());
    stack.band = parse_band(parent);
  }
  stack.scene_id = band_name(stack.band) + "/" + dir.filename().string();

  static const std::regex pattern(R"((LR|QM)(\d+)\.png)");
  std::map<std::size_t, fs::path> lr, qm;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    const auto index = static_cast<std::size_t>(std::stoul(m[2].str()));
    (m[1] == "LR" ? lr : qm)[index] = entry.path();
  }
  if (lr.empty()) throw DataError(dir.string() + ": no LR frames");
  for (const auto& [i, p] : lr)
    if (!qm.count(i)) throw DataError(dir.string() + ": " + p.filename().string() + " has no matching QM");
  for (const auto& [i, p] : qm)
    if (!lr.count(i)) throw DataError(dir.string() + ": " + p.filename().string() + " has no matching LR");

  for (const auto& [i, p] : lr) {
    stack.frames.push_back(read_png_image(p));
    stack.masks.push_back(read_png_mask(qm.at(i)));
  }
  if (fs::exists(dir / "HR.png")) stack.hr = read_png_image(dir / "HR.png");
  if (fs::exists(dir / "SM.png")) stack.hr_mask = read_png_mask(dir / "SM.png");
  if (stack.hr && !stack.hr_mask) stack.hr_mask = Mask(stack.hr->height, stack.hr->width, true);
  stack.validate();
  return stack;
}

void write_scene(const fs::path& dir, const LrStack& stack) {
  stack.validate();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < stack.size(); ++i) {
    write_png_image(dir / frame_name("LR", i), stack.frames[i]);
    write_png_mask(dir / frame_name("QM", i), stack.masks[i]);
  }
  if (stack.hr) write_png_image(dir / "HR.png", *stack.hr);
  if (stack.hr_mask) write_png_mask(dir / "SM.png", *stack.hr_mask);
}

std::vector<std::string> list_scenes(const fs::path& root, BandSelection sel) {
  std::vector<std::string> ids;
  for (Band band : {Band::nir, Band::red}) {
    if (!band_selected(sel, band)) continue;
    const auto band_dir = root / band_name(band);
    if (!fs::is_directory(band_dir)) continue;
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(band_dir))
      if (entry.is_directory() && entry.path().filename().string().rfind("imgset", 0) == 0)
        names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const auto& n : names) ids.push_back(band_name(band) + "/" + n);
  }
  if (ids.empty()) throw DataError("no scenes for band " + band_selection_name(sel) + " under " + root.string());
  return ids;
}

LrStack preprocess(const LrStack& stack, double min_clearance) {
  stack.validate();
  LrStack out = stack;
  out.frames.clear();
  out.masks.clear();
  for (std::size_t i = 0; i < stack.size(); ++i) {
    if (stack.clearance(i) >= min_clearance) {
      out.frames.push_back(stack.frames[i]);
      out.masks.push_back(stack.masks[i]);
    }
  }
  if (out.frames.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < stack.size(); ++i)
      if (stack.clearance(i) > stack.clearance(best)) best = i;
    out.frames.push_back(stack.frames[best]);
    out.masks.push_back(stack.masks[best]);
  }
  return out;
}

// ---- split / manifest ----

SplitManifest split(const std::vector<std::string>& scene_ids, std::uint64_t seed, double ratio) {
  if (scene_ids.empty()) throw DataError("cannot split an empty scene list");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::string> ids = scene_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("duplicate scene ids in split");
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);

  const std::size_t n = ids.size();
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  else n_train = n;

  SplitManifest m;
  m.seed = seed;
  m.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.val.begin(), m.val.end());
  return m;
}

std::string manifest_to_text(const SplitManifest& manifest) {
  std::ostringstream os;
  os << "seed = " << manifest.seed << "\n[train]\n";
  for (const auto& id : manifest.train) os << id << "\n";
  os << "[val]\n";
  for (const auto& id : manifest.val) os << id << "\n";
  return os.str();
}

SplitManifest manifest_from_text(const std::string& text) {
  SplitManifest m;
  std::istringstream is(text);
  std::string line;
  std::vector<std::string>* section = nullptr;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line == "[train]") {
      section = &m.train;
    } else if (line == "[val]") {
      section = &m.val;
    } else if (line.rfind("seed", 0) == 0 && !section) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("manifest line " + std::to_string(line_no) + ": bad seed");
      m.seed = std::stoull(line.substr(eq + 1));
    } else if (section) {
      section->push_back(line);
    } else {
      throw DataError("manifest line " + std::to_string(line_no) + ": scene id outside [train]/[val]");
    }
  }
  std::vector<std::string> all = m.train;
  all.insert(all.end(), m.val.begin(), m.val.end());
  std::sort(all.begin(), all.end());
  if (std::adjacent_find(all.begin(), all.end()) != all.end())
    throw DataError("manifest lists a scene more than once");
  return m;
}

void write_manifest(const fs::path& path, const SplitManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write manifest " + path.string());
  out << manifest_to_text(manifest);
}

SplitManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read manifest " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return manifest_from_text(ss.str());
}

// ---- synthetic data ----

Image box_downsample(const Image& img, std::size_t factor) {
  if (factor == 0 || img.height % factor || img.width % factor)
    throw ShapeError("box_downsample: extents must be divisible by the factor");
  Image out(img.height / factor, img.width / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < factor; ++dy)
        for (std::size_t dx = 0; dx < factor; ++dx) s += img.at(y * factor + dy, x * factor + dx);
      out.at(y, x) = s * inv;
    }
  return out;
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx;
  bool contains(double y, double x) const {
    const double a = (y - cy) / ry, b = (x - cx) / rx;
    return a * a + b * b <= 1.0;
  }
};

Ellipse random_ellipse(Rng& rng, double h, double w, double min_r, double max_r) {
  return {rng.uniform(0.0, h), rng.uniform(0.0, w), rng.uniform(min_r, max_r), rng.uniform(min_r, max_r)};
}

Image render_texture(Rng& rng, std::size_t size) {
  struct Wave { double amp, fy, fx, phase; };
  struct Blob { double amp, cy, cx, sigma; };
  const double n = static_cast<double>(size);
  const double base = rng.uniform(0.3, 0.5);
  std::vector<Wave> waves(static_cast<std::size_t>(rng.range(3, 6)));
  for (auto& w : waves) {
    const double freq = rng.uniform(0.01, 0.22);  // cycles per HR pixel
    const double angle = rng.uniform(0.0, std::numbers::pi);
    w = {rng.uniform(0.03, 0.10), freq * std::sin(angle), freq * std::cos(angle), rng.uniform(0.0, 2.0 * std::numbers::pi)};
  }
  std::vector<Blob> blobs(static_cast<std::size_t>(rng.range(4, 10)));
  for (auto& b : blobs) {
    const double amp = rng.uniform(0.05, 0.2);
    b = {rng.uniform() < 0.5 ? -amp : amp, rng.uniform(0.0, n), rng.uniform(0.0, n), rng.uniform(2.0, 10.0)};
  }
  Image img(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      double v = base;
      for (const auto& w : waves)
        v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fy * static_cast<double>(y) + w.fx * static_cast<double>(x)) + w.phase);
      for (const auto& b : blobs) {
        const double dy = static_cast<double>(y) - b.cy, dx = static_cast<double>(x) - b.cx;
        v += b.amp * std::exp(-(dy * dy + dx * dx) / (2.0 * b.sigma * b.sigma));
      }
      img.at(y, x) = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

}  // namespace

LrStack synthesize_scene(const SynthConfig& cfg, std::size_t index, Band band) {
  if (cfg.scale < 1 || cfg.hr_size == 0 || cfg.hr_size % cfg.scale) throw ConfigError("synth: hr_size must be a positive multiple of scale");
  if (cfg.k == 0) throw ConfigError("synth: k must be >= 1");
  if (cfg.noise_sigma < 0.0) throw ConfigError("synth: noise_sigma must be >= 0");
  const std::uint64_t stream = (band == Band::nir ? 0ULL : 1ULL << 32) + index;
  Rng rng = Rng::derive(cfg.seed, stream);

  const std::size_t pad = cfg.shift_px;
  const std::size_t canvas_size = cfg.hr_size + 2 * pad;
  const Image canvas = render_texture(rng, canvas_size);
  auto crop = [&](std::size_t oy, std::size_t ox) {
    Image out(cfg.hr_size, cfg.hr_size);
    for (std::size_t y = 0; y < cfg.hr_size; ++y)
      for (std::size_t x = 0; x < cfg.hr_size; ++x) out.at(y, x) = canvas.at(oy + y, ox + x);
    return out;
  };

  char name[32];
  std::snprintf(name, sizeof name, "imgset%04zu", index);
  LrStack stack;
  stack.scene_id = band_name(band) + "/" + name;
  stack.band = band;
  stack.hr = crop(pad, pad);
  stack.hr_mask = Mask(cfg.hr_size, cfg.hr_size, true);
  if (cfg.hr_occlusion && rng.uniform() < 0.5) {
    const double hs = static_cast<double>(cfg.hr_size);
    const Ellipse e = random_ellipse(rng, hs, hs, hs * 0.04, hs * 0.12);
    for (std::size_t y = 0; y < cfg.hr_size; ++y)
      for (std::size_t x = 0; x < cfg.hr_size; ++x)
        if (e.contains(static_cast<double>(y), static_cast<double>(x))) stack.hr_mask->set(y, x, false);
  }

  const std::size_t lr_size = cfg.hr_size / cfg.scale;
  const auto max_shift = static_cast<std::int64_t>(cfg.shift_px);
  for (std::size_t i = 0; i < cfg.k; ++i) {
    const auto dy = rng.range(-max_shift, max_shift), dx = rng.range(-max_shift, max_shift);
    Image lr = box_downsample(crop(static_cast<std::size_t>(static_cast<std::int64_t>(pad) + dy),
                                   static_cast<std::size_t>(static_cast<std::int64_t>(pad) + dx)),
                              cfg.scale);
    if (cfg.noise_sigma > 0.0)
      for (auto& v : lr.pixels) v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);
    Mask mask(lr_size, lr_size, true);
    if (rng.uniform() < cfg.cloud_probability) {
      const auto n_clouds = rng.range(1, 2);
      const double ls = static_cast<double>(lr_size);
      for (std::int64_t c = 0; c < n_clouds; ++c) {
        const Ellipse e = random_ellipse(rng, ls, ls, ls * 0.08, ls * 0.3);
        for (std::size_t y = 0; y < lr_size; ++y)
          for (std::size_t x = 0; x < lr_size; ++x)
            if (e.contains(static_cast<double>(y), static_cast<double>(x))) {
              mask.set(y, x, false);
              lr.at(y, x) = std::min(1.0, 0.7 + 0.3 * lr.at(y, x));
            }
      }
    }
    stack.frames.push_back(std::move(lr));
    stack.masks.push_back(std::move(mask));
  }
  return stack;
}

std::vector<std::string> synthesize_dataset(const fs::path& root, const SynthConfig& cfg) {
  std::vector<std::string> ids;
  for (Band band : {Band::nir, Band::red}) {
    if (!band_selected(cfg.bands, band)) continue;
    for (std::size_t i = 0; i < cfg.n_scenes; ++i) {
      const LrStack stack = synthesize_scene(cfg, i, band);
      write_scene(root / stack.scene_id, stack);
      ids.push_back(stack.scene_id);
    }
  }
  return ids;
}

}  // namespace cotmisr
