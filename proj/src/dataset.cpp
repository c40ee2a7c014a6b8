#include "mis/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mis/io.hpp"
#include "mis/ops.hpp"

namespace mis {

namespace fs = std::filesystem;
using nlohmann::json;

// --- codec -------------------------------------------------------------------

template <typename T>
Tensor<T> ae_encode(const Image& image, std::size_t patch) {
  if (patch == 0 || image.width % patch != 0 || image.height % patch != 0 || image.width == 0 || image.height == 0)
    throw DimensionError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                         " is not divisible into " + std::to_string(patch) + "-pixel patches");
  const std::size_t c = 3 * patch * patch, h = image.height / patch, w = image.width / patch;
  std::vector<T> v(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch) {
            const std::size_t k = (dy * patch + dx) * 3 + ch;
            const double px = image.at(x * patch + dx, y * patch + dy, ch);
            v[(k * h + y) * w + x] = static_cast<T>(2.0 * px / 255.0 - 1.0);
          }
  return Tensor<T>({c, h, w}, std::move(v));
}

template <typename T>
Image ae_decode(const Tensor<T>& latent, std::size_t patch) {
  if (latent.rank() != 3 || patch == 0 || latent.dim(0) != 3 * patch * patch)
    throw DimensionError("latent " + to_string(latent.shape()) + " does not decode with patch " +
                         std::to_string(patch));
  const std::size_t h = latent.dim(1), w = latent.dim(2);
  Image img(w * patch, h * patch);
  auto d = latent.data();
  for (std::size_t k = 0; k < latent.dim(0); ++k) {
    const std::size_t dy = (k / 3) / patch, dx = (k / 3) % patch, ch = k % 3;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double v = std::round((static_cast<double>(d[(k * h + y) * w + x]) + 1.0) * 127.5);
        img.at(x * patch + dx, y * patch + dy, ch) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  }
  return img;
}

template <typename T>
Tensor<T> ae_encode_set(std::span<const Image> images, std::size_t patch) {
  if (images.empty()) throw DimensionError("cannot encode an empty image set");
  std::vector<Tensor<T>> parts;
  for (const auto& img : images) {
    auto z = ae_encode<T>(img, patch);
    parts.push_back(reshape(z, {1, z.dim(0), z.dim(1), z.dim(2)}));
  }
  return concat(std::span<const Tensor<T>>(parts), 0);
}

template Tensor<float> ae_encode(const Image&, std::size_t);
template Tensor<double> ae_encode(const Image&, std::size_t);
template Image ae_decode(const Tensor<float>&, std::size_t);
template Image ae_decode(const Tensor<double>&, std::size_t);
template Tensor<float> ae_encode_set(std::span<const Image>, std::size_t);
template Tensor<double> ae_encode_set(std::span<const Image>, std::size_t);

// --- scenes --------------------------------------------------------------------

std::string_view to_string(Style s) {
  switch (s) {
    case Style::Flat: return "flat";
    case Style::NoiseTexture: return "noise-texture";
    case Style::Outline: return "outline";
  }
  return "?";
}

namespace {

const std::map<std::string, std::array<std::uint8_t, 3>>& palette() {
  static const std::map<std::string, std::array<std::uint8_t, 3>> p{
      {"red", {220, 40, 40}},     {"green", {40, 190, 70}},   {"blue", {50, 80, 220}},   {"yellow", {235, 215, 40}},
      {"cyan", {40, 210, 220}},   {"magenta", {210, 50, 200}}, {"orange", {240, 140, 30}}, {"purple", {120, 50, 170}},
      {"white", {240, 240, 240}}, {"black", {10, 10, 10}},     {"gray", {120, 120, 120}}, {"navy", {20, 30, 90}},
      {"brown", {110, 70, 30}},   {"teal", {20, 120, 120}}};
  return p;
}

const std::vector<std::string> kBackgrounds{"black", "white", "gray", "navy", "brown", "teal"};
const std::vector<std::string> kFiller{"bright", "soft",  "tiny",    "glossy", "matte", "shadowed", "centered",
                                       "bold",   "calm",  "vivid",   "faded",  "sharp", "blurry",   "quiet",
                                       "warm",   "cool",  "crisp",   "dusty",  "clean", "layered",  "simple",
                                       "framed", "plain", "curious", "lonely", "busy",  "gentle",   "strong"};
const std::vector<std::string> kCountWords{"one", "two", "three"};

double hash_noise(std::uint64_t seed, std::size_t x, std::size_t y) {
  const std::uint64_t h = mix_seed(seed, (static_cast<std::uint64_t>(y) << 32) | x);
  return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
}

bool inside_shape(const std::string& shape, double u, double v) {
  if (shape == "circle") return u * u + v * v <= 1.0;
  if (shape == "square") return std::max(std::abs(u), std::abs(v)) <= 0.8;
  if (shape == "ring") {
    const double r2 = u * u + v * v;
    return r2 <= 1.0 && r2 >= 0.3;
  }
  if (shape == "cross") return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
  if (shape == "diamond") return std::abs(u) + std::abs(v) <= 1.0;
  if (shape == "triangle") {
    // Apex up, base at v = 0.5.
    return v <= 0.5 && v >= -1.0 && std::abs(u) <= (v + 1.0) * 0.577;
  }
  throw std::invalid_argument("unknown shape " + shape);
}

std::uint8_t clamp8(double v) { return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0)); }

}  // namespace

const std::vector<std::string>& shape_vocabulary() {
  static const std::vector<std::string> v{"circle", "square", "triangle", "ring", "cross", "diamond"};
  return v;
}

const std::vector<std::string>& color_vocabulary() {
  static const std::vector<std::string> v{"red",  "green",  "blue",   "yellow", "cyan",
                                          "magenta", "orange", "purple", "white"};
  return v;
}

std::array<std::uint8_t, 3> color_rgb(const std::string& name) {
  auto it = palette().find(name);
  if (it == palette().end()) throw std::invalid_argument("unknown color " + name);
  return it->second;
}

std::string SceneSpec::text() const {
  std::ostringstream out;
  out << kCountWords.at(count - 1) << ' ' << to_string(style) << ' ' << color << ' ' << shape << (count > 1 ? "s" : "")
      << " on " << background << " background";
  if (!details.empty()) {
    out << " with";
    for (const auto& d : details) out << ' ' << d;
  }
  return out.str();
}

std::size_t SceneSpec::token_count() const { return count_tokens(text()); }

std::size_t count_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_token = false;
  for (char ch : text) {
    const bool space = std::isspace(static_cast<unsigned char>(ch)) != 0;
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

bool caption_filter(std::string_view text, std::size_t max_tokens) { return count_tokens(text) <= max_tokens; }

SceneSpec random_scene(Rng& rng) {
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };
  SceneSpec s;
  s.shape = pick(shape_vocabulary());
  s.color = pick(color_vocabulary());
  do {
    s.background = pick(kBackgrounds);
  } while (s.background == s.color);
  s.style = static_cast<Style>(std::uniform_int_distribution<int>(0, 2)(rng));
  s.count = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  const std::size_t n_details = std::uniform_int_distribution<std::size_t>(0, 90)(rng);
  for (std::size_t i = 0; i < n_details; ++i) s.details.push_back(pick(kFiller));
  return s;
}

Image render_scene(const SceneSpec& spec, std::uint64_t jitter_seed, std::size_t resolution) {
  if (spec.count < 1 || spec.count > 3) throw std::invalid_argument("scene count must be 1..3");
  Rng rng = make_rng(jitter_seed, fnv1a("scene"));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto bg = color_rgb(spec.background);
  const auto fg = color_rgb(spec.color);
  const double res = static_cast<double>(resolution);
  Image img(resolution, resolution);
  for (std::size_t i = 0; i < resolution * resolution; ++i) std::copy(bg.begin(), bg.end(), img.rgb.begin() + i * 3);

  const double brightness = 0.85 + 0.3 * u01(rng);
  const std::uint64_t texture_seed = rng();
  for (std::size_t k = 0; k < spec.count; ++k) {
    const double size = res * (0.14 + 0.12 * u01(rng)) / std::sqrt(static_cast<double>(spec.count));
    const double cx = res * (0.2 + 0.6 * u01(rng));
    const double cy = res * (0.2 + 0.6 * u01(rng));
    const double theta = 2.0 * std::numbers::pi * u01(rng);
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (std::size_t y = 0; y < resolution; ++y)
      for (std::size_t x = 0; x < resolution; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / size;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / size;
        const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
        if (!inside_shape(spec.shape, u, v)) continue;
        if (spec.style == Style::Outline && inside_shape(spec.shape, u / 0.65, v / 0.65)) continue;
        double gain = brightness;
        if (spec.style == Style::NoiseTexture) gain *= 0.55 + 0.45 * hash_noise(texture_seed, x, y);
        for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = clamp8(fg[c] * gain);
      }
  }
  return img;
}

ImageSetRecord synthesize_set(const SceneSpec& spec, std::size_t n, std::uint64_t base_seed, std::size_t resolution) {
  if (n == 0) throw std::invalid_argument("an image set needs at least one image");
  ImageSetRecord rec;
  rec.spec_text = spec.text();
  std::set<std::uint64_t> used;
  for (std::size_t k = 0; k < n; ++k) {
    std::uint64_t s = mix_seed(base_seed, k);
    while (!used.insert(s).second) s = mix_seed(s, k);
    rec.seeds.push_back(s);
    rec.images.push_back(render_scene(spec, s, resolution));
  }
  return rec;
}

SphereObject random_object(Rng& rng) {
  std::uniform_real_distribution<double> pos(-0.7, 0.7), rad(0.3, 0.6);
  const auto& colors = color_vocabulary();
  std::uniform_int_distribution<std::size_t> col(0, colors.size() - 1);
  SphereObject obj;
  const std::size_t k = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
  for (std::size_t i = 0; i < k; ++i) {
    SphereObject::Sphere s;
    s.center = {pos(rng), pos(rng) * 0.6, pos(rng)};
    s.radius = rad(rng);
    s.color = color_rgb(colors[col(rng)]);
    obj.spheres.push_back(s);
  }
  obj.background = color_rgb(kBackgrounds[std::uniform_int_distribution<std::size_t>(0, 3)(rng)]);
  return obj;
}

Image render_object(const SphereObject& object, const CameraPose& pose, std::size_t resolution) {
  const auto& m = pose.matrix();
  // Camera centre c = -R^T t.
  std::array<double, 3> c{};
  for (int j = 0; j < 3; ++j) c[j] = -(m[0 * 4 + j] * m[3] + m[1 * 4 + j] * m[7] + m[2 * 4 + j] * m[11]);
  const double tan_half = std::tan(0.5 * 50.0 * std::numbers::pi / 180.0);
  const std::array<double, 3> light{0.577, 0.577, -0.577};
  Image img(resolution, resolution);
  const double res = static_cast<double>(resolution);
  for (std::size_t py = 0; py < resolution; ++py)
    for (std::size_t px = 0; px < resolution; ++px) {
      const double cxp = ((static_cast<double>(px) + 0.5) / res * 2.0 - 1.0) * tan_half;
      const double cyp = -((static_cast<double>(py) + 0.5) / res * 2.0 - 1.0) * tan_half;
      // World direction R^T [cxp, cyp, 1].
      std::array<double, 3> d{};
      for (int j = 0; j < 3; ++j) d[j] = m[0 * 4 + j] * cxp + m[1 * 4 + j] * cyp + m[2 * 4 + j];
      const double dn = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
      for (auto& v : d) v /= dn;
      double best = std::numeric_limits<double>::infinity();
      std::array<double, 3> rgb{double(object.background[0]), double(object.background[1]),
                                double(object.background[2])};
      for (const auto& s : object.spheres) {
        std::array<double, 3> oc{c[0] - s.center[0], c[1] - s.center[1], c[2] - s.center[2]};
        const double b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
        const double cc = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - s.radius * s.radius;
        const double disc = b * b - cc;
        if (disc < 0) continue;
        const double t = -b - std::sqrt(disc);
        if (t <= 0 || t >= best) continue;
        best = t;
        std::array<double, 3> nrm{};
        for (int j = 0; j < 3; ++j) nrm[j] = (c[j] + t * d[j] - s.center[j]) / s.radius;
        const double lambert = std::max(0.0, nrm[0] * light[0] + nrm[1] * light[1] + nrm[2] * light[2]);
        for (int j = 0; j < 3; ++j) rgb[j] = s.color[j] * (0.3 + 0.7 * lambert);
      }
      for (std::size_t j = 0; j < 3; ++j) img.at(px, py, j) = clamp8(rgb[j]);
    }
  return img;
}

std::vector<CameraPose> ring_poses(std::size_t count, double elevation, double radius) {
  std::vector<CameraPose> out;
  for (std::size_t k = 0; k < count; ++k)
    out.push_back(CameraPose::look_at_origin(2.0 * std::numbers::pi * static_cast<double>(k) /
                                                 static_cast<double>(count),
                                             elevation, radius));
  return out;
}

Image render_procedure_step(const SceneSpec& spec, std::size_t k, std::size_t n, std::uint64_t seed,
                            std::size_t resolution) {
  if (n == 0 || k >= n) throw std::invalid_argument("procedure step out of range");
  Rng rng = make_rng(seed, fnv1a("procedure"));
  const auto bg = color_rgb(spec.background);
  const auto fg = color_rgb(spec.color);
  const std::size_t r = resolution;
  const std::size_t x0 = r / 4 + std::uniform_int_distribution<std::size_t>(0, r / 8)(rng);
  const std::size_t x1 = x0 + r / 2 - r / 8;
  const std::size_t y0 = r / 8, y1 = r - r / 8;
  const double level = static_cast<double>(k) / static_cast<double>(n);
  const double fill_top = static_cast<double>(y1) - level * static_cast<double>(y1 - y0 - 1);
  Image img(r, r);
  for (std::size_t y = 0; y < r; ++y)
    for (std::size_t x = 0; x < r; ++x) {
      const bool wall = (x == x0 || x == x1 || y == y1) && x >= x0 && x <= x1 && y >= y0 && y <= y1;
      const bool fill = x > x0 && x < x1 && y < y1 && static_cast<double>(y) >= fill_top;
      const auto& col = (wall || fill) ? fg : bg;
      for (std::size_t c = 0; c < 3; ++c) img.at(x, y, c) = wall ? clamp8(col[c] * 0.6) : col[c];
    }
  return img;
}

// --- corpora --------------------------------------------------------------------

std::string_view to_string(CorpusKind k) {
  switch (k) {
    case CorpusKind::Mis: return "mis";
    case CorpusKind::Multiview: return "multiview";
    case CorpusKind::Procedure: return "procedure";
  }
  return "?";
}

CorpusKind parse_corpus_kind(std::string_view text) {
  if (text == "mis") return CorpusKind::Mis;
  if (text == "multiview") return CorpusKind::Multiview;
  if (text == "procedure") return CorpusKind::Procedure;
  throw std::invalid_argument("unknown corpus kind '" + std::string(text) + "' (expected mis, multiview, procedure)");
}

namespace {

std::string record_id(CorpusKind kind, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%05zu", std::string(to_string(kind)).c_str(), i);
  return buf;
}

SceneSpec filtered_scene(Rng& rng, std::size_t max_tokens, std::size_t& rejected) {
  for (;;) {
    SceneSpec s = random_scene(rng);
    if (caption_filter(s.text(), max_tokens)) return s;
    ++rejected;
  }
}

}  // namespace

Manifest build_corpus(const CorpusOptions& opt, const fs::path& out_dir) {
  if (opt.resolution == 0 || opt.resolution % kDefaultPatch != 0)
    throw std::invalid_argument("resolution must be a positive multiple of " + std::to_string(kDefaultPatch));
  if (opt.kind != CorpusKind::Multiview && opt.n == 0) throw std::invalid_argument("n must be at least 1");
  Manifest m;
  m.name = opt.name;
  m.kind = opt.kind;
  m.n_per_set = opt.kind == CorpusKind::Multiview ? kMultiviewCount : opt.n;
  m.resolution = opt.resolution;
  m.seed = opt.seed;

  for (std::size_t i = 0; i < opt.sets; ++i) {
    Rng rng = make_rng(opt.seed, i);
    ManifestRecord rec;
    rec.id = record_id(opt.kind, i);
    std::vector<Image> images;
    switch (opt.kind) {
      case CorpusKind::Mis: {
        const SceneSpec spec = filtered_scene(rng, opt.max_tokens, m.captions_rejected);
        auto set = synthesize_set(spec, opt.n, rng(), opt.resolution);
        rec.spec_text = set.spec_text;
        rec.seeds = set.seeds;
        images = std::move(set.images);
        break;
      }
      case CorpusKind::Multiview: {
        const SphereObject obj = random_object(rng);
        rec.spec_text = "object of " + std::to_string(obj.spheres.size()) + " spheres";
        for (const auto& pose : ring_poses(kMultiviewCount)) {
          images.push_back(render_object(obj, pose, opt.resolution));
          rec.poses.push_back(pose.matrix());
        }
        break;
      }
      case CorpusKind::Procedure: {
        const SceneSpec spec = filtered_scene(rng, opt.max_tokens, m.captions_rejected);
        rec.spec_text = "filling container, " + spec.text();
        const std::uint64_t seed = rng();
        for (std::size_t k = 0; k < opt.n; ++k) {
          images.push_back(render_procedure_step(spec, k, opt.n, seed, opt.resolution));
          rec.steps.push_back(k);
        }
        break;
      }
    }
    for (std::size_t k = 0; k < images.size(); ++k) {
      const std::string rel = rec.id + "/" + std::to_string(k) + ".png";
      write_png(out_dir / rel, images[k]);
      rec.files.push_back(rel);
    }
    m.records.push_back(std::move(rec));
  }
  save_manifest(m, out_dir / kManifestFile);
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  json records = json::array();
  for (const auto& r : m.records) {
    json payload = {{"seeds", r.seeds}, {"poses", r.poses}, {"steps", r.steps}};
    records.push_back({{"id", r.id}, {"spec_text", r.spec_text}, {"files", r.files}, {"payload", payload}});
  }
  json j = {{"name", m.name},
            {"schema_version", m.schema_version},
            {"kind", std::string(to_string(m.kind))},
            {"n_per_set", m.n_per_set},
            {"resolution", m.resolution},
            {"seed", m.seed},
            {"captions_rejected", m.captions_rejected},
            {"records", records}};
  write_text(path, j.dump(2) + "\n");
}

Manifest load_manifest(const fs::path& path) {
  const auto bytes = read_bytes(path);
  Manifest m;
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    m.schema_version = j.at("schema_version").get<std::uint32_t>();
    if (m.schema_version != kManifestSchema)
      throw FormatError(path.string() + ": unsupported manifest schema " + std::to_string(m.schema_version));
    m.name = j.at("name").get<std::string>();
    m.kind = parse_corpus_kind(j.at("kind").get<std::string>());
    m.n_per_set = j.at("n_per_set").get<std::size_t>();
    m.resolution = j.at("resolution").get<std::size_t>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.captions_rejected = j.value("captions_rejected", std::size_t{0});
    for (const auto& r : j.at("records")) {
      ManifestRecord rec;
      rec.id = r.at("id").get<std::string>();
      rec.spec_text = r.at("spec_text").get<std::string>();
      rec.files = r.at("files").get<std::vector<std::string>>();
      const auto& p = r.at("payload");
      rec.seeds = p.value("seeds", std::vector<std::uint64_t>{});
      rec.poses = p.value("poses", std::vector<std::array<double, 16>>{});
      rec.steps = p.value("steps", std::vector<std::size_t>{});
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }

  const fs::path dir = path.parent_path();
  for (const auto& r : m.records) {
    if (r.files.size() != m.n_per_set)
      throw FormatError(path.string() + ": record " + r.id + " lists " + std::to_string(r.files.size()) +
                        " files, expected " + std::to_string(m.n_per_set));
    for (const auto& f : r.files)
      if (!fs::exists(dir / f)) throw IoError(path.string() + ": record " + r.id + " references missing " + f);
    if (m.kind == CorpusKind::Multiview) {
      if (r.poses.size() != r.files.size()) throw FormatError(path.string() + ": record " + r.id + " pose count");
      for (const auto& pose : r.poses)
        if (!is_rigid(pose)) throw FormatError(path.string() + ": record " + r.id + " has a non-rigid pose");
    }
    if (m.kind == CorpusKind::Procedure && r.steps.size() != r.files.size())
      throw FormatError(path.string() + ": record " + r.id + " step count");
  }
  return m;
}

std::vector<Image> load_record_images(const ManifestRecord& record, const fs::path& corpus_dir) {
  std::vector<Image> out;
  for (const auto& f : record.files) out.push_back(read_image(corpus_dir / f));
  return out;
}

TaskCondition record_task(const ManifestRecord& record) {
  TaskCondition t;
  if (!record.poses.empty()) {
    t.kind = TaskKind::Camera;
    for (const auto& p : record.poses) t.poses.emplace_back(p);
  } else if (!record.steps.empty()) {
    t.kind = TaskKind::Position;
    t.steps = record.steps;
  }
  return t;
}

}  // namespace mis
