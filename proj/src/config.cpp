#include "mis/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

#include "mis/io.hpp"
#include "mis/rng.hpp"

namespace mis {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || p != end || text.empty())
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  if constexpr (std::is_floating_point_v<N>)
    if (!std::isfinite(v)) throw ConfigError(key + " must be finite");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

template <typename E, typename F>
E parse_enum(const std::string& key, const std::string& text, F parse) {
  try {
    return parse(text);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

struct Field {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename M>
Field field(std::string name, M RunConfig::*member) {
  Field f;
  f.name = name;
  f.get = [member](const RunConfig& c) -> std::string {
    const auto& v = c.*member;
    using V = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<V, std::string>) return v;
    else if constexpr (std::is_same_v<V, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<V, double>) return format_double(v);
    else if constexpr (std::is_same_v<V, std::optional<double>>) return v ? format_double(*v) : "none";
    else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    } else if constexpr (std::is_enum_v<V>) return std::string(to_string(v));
    else return std::to_string(v);
  };
  f.set = [member, name](RunConfig& c, const std::string& text) {
    auto& v = c.*member;
    using V = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<V, std::string>) v = text;
    else if constexpr (std::is_same_v<V, bool>) {
      if (text == "true" || text == "1" || text == "yes" || text == "on") v = true;
      else if (text == "false" || text == "0" || text == "no" || text == "off") v = false;
      else throw ConfigError("bad boolean for " + name + ": '" + text + "'");
    } else if constexpr (std::is_same_v<V, double>) v = parse_number<double>(name, text);
    else if constexpr (std::is_same_v<V, std::optional<double>>) {
      if (text.empty() || text == "none") v.reset();
      else v = parse_number<double>(name, text);
    } else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
      v.clear();
      std::stringstream ss(text);
      std::string part;
      while (std::getline(ss, part, ',')) v.push_back(parse_number<std::size_t>(name, trim(part)));
    } else if constexpr (std::is_same_v<V, Variant>) v = parse_enum<Variant>(name, text, parse_variant);
    else if constexpr (std::is_same_v<V, TaskKind>) v = parse_enum<TaskKind>(name, text, parse_task_kind);
    else if constexpr (std::is_same_v<V, CorpusKind>) v = parse_enum<CorpusKind>(name, text, parse_corpus_kind);
    else v = parse_number<V>(name, text);
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f{
      field("variant", &RunConfig::variant),
      field("corpus", &RunConfig::corpus),
      field("output", &RunConfig::output),
      field("seed", &RunConfig::seed),
      field("resolution", &RunConfig::resolution),
      field("patch", &RunConfig::patch),
      field("base_channels", &RunConfig::base_channels),
      field("channel_mult", &RunConfig::channel_mult),
      field("time_dim", &RunConfig::time_dim),
      field("groups", &RunConfig::groups),
      field("heads", &RunConfig::heads),
      field("tau", &RunConfig::tau),
      field("block_size", &RunConfig::block_size),
      field("feature_grid", &RunConfig::feature_grid),
      field("feature_dim", &RunConfig::feature_dim),
      field("task", &RunConfig::task),
      field("task_dim", &RunConfig::task_dim),
      field("position_input_dim", &RunConfig::position_input_dim),
      field("attention", &RunConfig::attention),
      field("model_seed", &RunConfig::model_seed),
      field("diffusion_steps", &RunConfig::diffusion_steps),
      field("beta_start", &RunConfig::beta_start),
      field("beta_end", &RunConfig::beta_end),
      field("train_steps", &RunConfig::train_steps),
      field("lr", &RunConfig::lr),
      field("dropout", &RunConfig::dropout),
      field("batch_sets", &RunConfig::batch_sets),
      field("set_size", &RunConfig::set_size),
      field("checkpoint_every", &RunConfig::checkpoint_every),
      field("sampler_steps", &RunConfig::sampler_steps),
      field("guidance", &RunConfig::guidance),
      field("task_guidance", &RunConfig::task_guidance),
      field("window", &RunConfig::window),
      field("total", &RunConfig::total),
      field("eta", &RunConfig::eta),
      field("kind", &RunConfig::kind),
      field("sets", &RunConfig::sets),
      field("n", &RunConfig::n),
      field("max_tokens", &RunConfig::max_tokens),
  };
  return f;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.name == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) { find_field(key).set(*this, value); }

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.name);
    return out;
  }();
  return k;
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  c.apply(text);
  return c;
}

void RunConfig::apply(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    set(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
  }
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  return parse(std::string(bytes.begin(), bytes.end()));
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += f.name + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(to_text())));
  return buf;
}

UNetConfig RunConfig::unet() const {
  UNetConfig c;
  c.variant = variant;
  c.latent_channels = 3 * patch * patch;
  c.latent_height = patch ? resolution / patch : 0;
  c.latent_width = c.latent_height;
  c.base_channels = base_channels;
  c.channel_mult = channel_mult;
  c.time_dim = time_dim;
  c.groups = groups;
  c.heads = heads;
  c.tau = tau;
  c.block_size = block_size;
  c.feature_tokens = feature_grid * feature_grid;
  c.feature_dim = feature_dim;
  c.task = task;
  c.task_dim = task_dim;
  c.position_input_dim = position_input_dim;
  c.attention_enabled = attention;
  c.seed = model_seed;
  return c;
}

NoiseSchedule RunConfig::schedule() const { return make_linear_schedule(diffusion_steps, beta_start, beta_end); }

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.adam.lr = lr;
  o.dropout = dropout;
  o.batch_sets = batch_sets;
  o.set_size = set_size;
  o.seed = seed;
  return o;
}

GenerationPlan RunConfig::plan() const {
  GenerationPlan p;
  p.variant = variant;
  p.total = total;
  p.per_iteration = variant == Variant::MisSa ? block_size : 1;
  p.window = window;
  p.guidance.scale = guidance;
  p.guidance.task_scale = task_guidance;
  p.steps = sampler_steps;
  p.eta = eta;
  p.seed = seed;
  return p;
}

CorpusOptions RunConfig::corpus_options() const {
  CorpusOptions o;
  o.kind = kind;
  o.sets = sets;
  o.n = n;
  o.resolution = resolution;
  o.seed = seed;
  o.max_tokens = max_tokens;
  o.name = std::filesystem::path(corpus).filename().string();
  return o;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (patch == 0 || resolution == 0 || resolution % patch != 0)
    fail("resolution " + std::to_string(resolution) + " must be a positive multiple of patch " +
         std::to_string(patch));
  if (feature_grid == 0 || resolution % feature_grid != 0)
    fail("feature_grid must divide the resolution");
  try {
    unet().validate();
    schedule();
    plan().validate(unet());
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (sampler_steps > diffusion_steps) fail("sampler_steps cannot exceed diffusion_steps");
  if (lr <= 0) fail("lr must be positive");
  if (dropout < 0 || dropout > 1) fail("dropout must be in [0, 1]");
  if (batch_sets == 0) fail("batch_sets must be positive");
  if (n == 0) fail("n must be positive");
  if (task_guidance && task == TaskKind::None) fail("task_guidance needs a task");
}

}  // namespace mis
