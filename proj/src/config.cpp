#include "motionsep/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "motionsep/errors.hpp"

namespace motionsep::config {

uint64_t fnv1a64(std::string_view text) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

std::string trim(std::string_view s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string_view::npos ? std::string() : std::string(s.substr(a, b - a + 1));
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
          c == '_')) {
      return false;
    }
  }
  return true;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ConfigFile ConfigFile::parse_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DependencyError("missing config file: " + path.string());
  std::ostringstream text;
  text << is.rdbuf();
  return parse_string(text.str(), path.string());
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
  ConfigFile cf;
  cf.origin_ = origin;
  std::istringstream is(text);
  std::string raw;
  std::string section;  // "" until the first header: only `schema` lives there
  int lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + why);
    };
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_name(section)) fail("bad section name '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_name(key)) fail("bad key name '" + key + "'");
    if (value.empty()) fail("empty value for '" + key + "'");
    auto [it, inserted] = cf.data_[section].emplace(key, Entry{value});
    if (!inserted) fail("duplicate key '" + key + "' in section [" + section + "]");
  }
  return cf;
}

const ConfigFile::Entry* ConfigFile::find(const std::string& section,
                                          const std::string& key) const {
  auto sit = data_.find(section);
  if (sit == data_.end()) return nullptr;
  auto kit = sit->second.find(key);
  return kit == sit->second.end() ? nullptr : &kit->second;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  return find(section, key) != nullptr;
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->consumed = true;
  return e->value;
}

namespace {

[[noreturn]] void bad_value(const std::string& origin, const std::string& section,
                            const std::string& key, const std::string& value,
                            const char* want) {
  throw ConfigError(origin + ": [" + section + "] " + key + " = '" + value + "' is not " + want);
}

}  // namespace

int ConfigFile::get_int(const std::string& section, const std::string& key, int fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->consumed = true;
  try {
    size_t pos = 0;
    const int v = std::stoi(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    bad_value(origin_, section, key, e->value, "an integer");
  }
}

uint64_t ConfigFile::get_u64(const std::string& section, const std::string& key,
                             uint64_t fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->consumed = true;
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(e->value, &pos);
    if (pos != e->value.size() || e->value[0] == '-') throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    bad_value(origin_, section, key, e->value, "an unsigned integer");
  }
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->consumed = true;
  try {
    size_t pos = 0;
    const double v = std::stod(e->value, &pos);
    if (pos != e->value.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    bad_value(origin_, section, key, e->value, "a number");
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) const {
  const Entry* e = find(section, key);
  if (!e) return fallback;
  e->consumed = true;
  if (e->value == "true" || e->value == "1") return true;
  if (e->value == "false" || e->value == "0") return false;
  bad_value(origin_, section, key, e->value, "a boolean (true/false)");
}

void ConfigFile::check_consumed() const {
  std::vector<std::string> stragglers;
  for (const auto& [section, keys] : data_) {
    for (const auto& [key, entry] : keys) {
      if (!entry.consumed) {
        stragglers.push_back(section.empty() ? key : "[" + section + "] " + key);
      }
    }
  }
  if (!stragglers.empty()) {
    std::string msg = origin_ + ": unknown config keys:";
    for (const auto& s : stragglers) msg += " " + s;
    throw ConfigError(msg);
  }
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DependencyError("missing config file: " + path.string());
  std::ostringstream text;
  text << is.rdbuf();
  return from_string(text.str(), path.string());
}

RunConfig RunConfig::from_string(const std::string& text, const std::string& origin) {
  ConfigFile cf = ConfigFile::parse_string(text, origin);
  const int schema = cf.get_int("", "schema", -1);
  if (schema != kSchemaVersion) {
    throw ConfigError(origin + ": config must declare 'schema = " +
                      std::to_string(kSchemaVersion) + "' before any section");
  }

  RunConfig rc;
  rc.seed = cf.get_u64("run", "seed", rc.seed);
  rc.out_dir = cf.get_string("run", "out_dir", rc.out_dir);

  auto& sy = rc.synth;
  sy.frames = cf.get_int("synth", "frames", sy.frames);
  sy.height = cf.get_int("synth", "height", sy.height);
  sy.width = cf.get_int("synth", "width", sy.width);
  sy.corpus_per_motion = cf.get_int("synth", "corpus_per_motion", sy.corpus_per_motion);
  sy.refset_count = cf.get_int("synth", "refset_count", sy.refset_count);
  sy.custom_motion = cf.get_string("synth", "custom_motion", sy.custom_motion);
  sy.artifact_row = cf.get_int("synth", "artifact_row", sy.artifact_row);
  sy.artifact_col = cf.get_int("synth", "artifact_col", sy.artifact_col);
  sy.artifact_contrast = cf.get_double("synth", "artifact_contrast", sy.artifact_contrast);

  auto& n = rc.net;
  n.levels = cf.get_int("net", "levels", n.levels);
  n.base_channels = cf.get_int("net", "base_channels", n.base_channels);
  n.heads = cf.get_int("net", "heads", n.heads);
  n.patch = cf.get_int("net", "patch", n.patch);
  n.time_embed_dim = cf.get_int("net", "time_embed_dim", n.time_embed_dim);
  n.cond_embed_dim = cf.get_int("net", "cond_embed_dim", n.cond_embed_dim);
  n.temporal_zero_init = cf.get_bool("net", "temporal_zero_init", n.temporal_zero_init);
  n.skip_mode = net::skip_mode_from_string(
      cf.get_string("net", "skip_mode", net::to_string(n.skip_mode)));
  n.beta = cf.get_double("net", "beta", n.beta);
  n.vanilla_skip_scale = cf.get_double("net", "vanilla_skip_scale", n.vanilla_skip_scale);
  n.ah_level_mask = static_cast<uint32_t>(
      cf.get_u64("net", "ah_level_mask", n.ah_level_mask));
  // Geometry mirrors the synth section: one source of truth.
  n.height = sy.height;
  n.width = sy.width;
  n.max_frames = sy.frames;

  auto& sc = rc.sched;
  sc.kind = diffusion::schedule_kind_from_string(
      cf.get_string("diffusion", "kind", diffusion::to_string(sc.kind)));
  sc.steps = cf.get_int("diffusion", "steps", sc.steps);
  sc.beta_start = cf.get_double("diffusion", "beta_start", sc.beta_start);
  sc.beta_end = cf.get_double("diffusion", "beta_end", sc.beta_end);
  sc.cosine_s = cf.get_double("diffusion", "cosine_s", sc.cosine_s);

  auto& pt = rc.pretrain;
  pt.lr = cf.get_double("pretrain", "lr", pt.lr);
  pt.steps = cf.get_int("pretrain", "steps", pt.steps);
  pt.batch = cf.get_int("pretrain", "batch", pt.batch);
  pt.val_clips = cf.get_int("pretrain", "val_clips", pt.val_clips);
  pt.loss_threshold = cf.get_double("pretrain", "loss_threshold", pt.loss_threshold);
  pt.ckpt_every = cf.get_int("pretrain", "ckpt_every", pt.ckpt_every);

  auto& sp = rc.spatial;
  sp.lr = cf.get_double("spatial", "lr", sp.lr);
  sp.steps = cf.get_int("spatial", "steps", sp.steps);
  sp.batch = cf.get_int("spatial", "batch", sp.batch);
  sp.rank = cf.get_int("spatial", "rank", sp.rank);
  sp.scale = cf.get_double("spatial", "scale", sp.scale);

  auto& tp = rc.temporal;
  tp.lr = cf.get_double("temporal", "lr", tp.lr);
  tp.steps = cf.get_int("temporal", "steps", tp.steps);
  tp.batch = cf.get_int("temporal", "batch", tp.batch);
  tp.rank = cf.get_int("temporal", "rank", tp.rank);
  tp.scale = cf.get_double("temporal", "scale", tp.scale);
  tp.plan = cf.get_string("temporal", "plan", tp.plan);
  tp.ah_in_training = cf.get_bool("temporal", "ah_in_training", tp.ah_in_training);

  rc.sample.tau = cf.get_int("sample", "tau", rc.sample.tau);
  rc.sample.snapshot_every = cf.get_int("sample", "snapshot_every", rc.sample.snapshot_every);

  auto& pr = rc.probe;
  pr.eval_specs = cf.get_int("probe", "eval_specs", pr.eval_specs);
  pr.window = cf.get_int("probe", "window", pr.window);
  pr.grid = cf.get_int("probe", "grid", pr.grid);
  pr.judge_train_per_motion = cf.get_int("probe", "judge_train_per_motion",
                                         pr.judge_train_per_motion);
  pr.judge_holdout_per_motion = cf.get_int("probe", "judge_holdout_per_motion",
                                           pr.judge_holdout_per_motion);

  cf.check_consumed();
  rc.validate();
  return rc;
}

void RunConfig::validate() const {
  net.validate();
  sched.validate();
  if (synth.frames < 2) throw ConfigError("synth.frames must be >= 2");
  if (synth.corpus_per_motion < 1) throw ConfigError("synth.corpus_per_motion must be >= 1");
  if (synth.refset_count < 1) throw ConfigError("synth.refset_count must be >= 1");
  if (synth.artifact_contrast <= 0.0 || synth.artifact_contrast > 1.0) {
    throw ConfigError("synth.artifact_contrast must lie in (0, 1]");
  }
  synthvid::motion_from_string(synth.custom_motion);  // throws VocabError if unknown

  auto check_phase = [](const char* name, double lr, int steps, int batch) {
    if (lr <= 0.0) throw ConfigError(std::string(name) + ".lr must be positive");
    if (steps < 1) throw ConfigError(std::string(name) + ".steps must be >= 1");
    if (batch < 1) throw ConfigError(std::string(name) + ".batch must be >= 1");
  };
  check_phase("pretrain", pretrain.lr, pretrain.steps, pretrain.batch);
  check_phase("spatial", spatial.lr, spatial.steps, spatial.batch);
  check_phase("temporal", temporal.lr, temporal.steps, temporal.batch);
  if (pretrain.val_clips < 1) throw ConfigError("pretrain.val_clips must be >= 1");
  if (pretrain.ckpt_every < 0) throw ConfigError("pretrain.ckpt_every must be >= 0");
  if (spatial.rank < 1 || temporal.rank < 1) throw ConfigError("adapter rank must be >= 1");
  adapters::plan_preset_from_string(temporal.plan);  // throws VocabError if unknown

  if (sample.tau < 0 || sample.tau > sched.steps) {
    throw ConfigError("sample.tau must lie in [0, diffusion.steps]");
  }
  if (sample.snapshot_every < 0) throw ConfigError("sample.snapshot_every must be >= 0");
  if (probe.eval_specs < 1) throw ConfigError("probe.eval_specs must be >= 1");
  if (probe.window < 0) throw ConfigError("probe.window must be >= 0");
  if (probe.grid < 1) throw ConfigError("probe.grid must be >= 1");
  if (probe.judge_train_per_motion < 8) {
    throw ConfigError("probe.judge_train_per_motion must be >= 8");
  }
  if (probe.judge_holdout_per_motion < 1) {
    throw ConfigError("probe.judge_holdout_per_motion must be >= 1");
  }

  // The artifact patch must fit the frame.
  synthvid::ArtifactSpec a = artifact();
  if (synth.artifact_row < 0 || synth.artifact_col < 0 ||
      synth.artifact_row + a.size > synth.height || synth.artifact_col + a.size > synth.width) {
    throw ConfigError("artifact patch does not fit the frame");
  }
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os << "schema = " << kSchemaVersion << "\n\n";
  // out_dir is deliberately absent: the canonical text (and hash) identify
  // the experiment, and where its results land is not part of that identity.
  os << "[run]\n"
     << "seed = " << seed << "\n\n";
  os << "[synth]\n"
     << "frames = " << synth.frames << "\n"
     << "height = " << synth.height << "\n"
     << "width = " << synth.width << "\n"
     << "corpus_per_motion = " << synth.corpus_per_motion << "\n"
     << "refset_count = " << synth.refset_count << "\n"
     << "custom_motion = " << synth.custom_motion << "\n"
     << "artifact_row = " << synth.artifact_row << "\n"
     << "artifact_col = " << synth.artifact_col << "\n"
     << "artifact_contrast = " << fmt_double(synth.artifact_contrast) << "\n\n";
  os << "[net]\n"
     << "levels = " << net.levels << "\n"
     << "base_channels = " << net.base_channels << "\n"
     << "heads = " << net.heads << "\n"
     << "patch = " << net.patch << "\n"
     << "time_embed_dim = " << net.time_embed_dim << "\n"
     << "cond_embed_dim = " << net.cond_embed_dim << "\n"
     << "temporal_zero_init = " << (net.temporal_zero_init ? "true" : "false") << "\n"
     << "skip_mode = " << net::to_string(net.skip_mode) << "\n"
     << "beta = " << fmt_double(net.beta) << "\n"
     << "vanilla_skip_scale = " << fmt_double(net.vanilla_skip_scale) << "\n"
     << "ah_level_mask = " << net.ah_level_mask << "\n\n";
  os << "[diffusion]\n"
     << "kind = " << diffusion::to_string(sched.kind) << "\n"
     << "steps = " << sched.steps << "\n"
     << "beta_start = " << fmt_double(sched.beta_start) << "\n"
     << "beta_end = " << fmt_double(sched.beta_end) << "\n"
     << "cosine_s = " << fmt_double(sched.cosine_s) << "\n\n";
  os << "[pretrain]\n"
     << "lr = " << fmt_double(pretrain.lr) << "\n"
     << "steps = " << pretrain.steps << "\n"
     << "batch = " << pretrain.batch << "\n"
     << "val_clips = " << pretrain.val_clips << "\n"
     << "loss_threshold = " << fmt_double(pretrain.loss_threshold) << "\n"
     << "ckpt_every = " << pretrain.ckpt_every << "\n\n";
  os << "[spatial]\n"
     << "lr = " << fmt_double(spatial.lr) << "\n"
     << "steps = " << spatial.steps << "\n"
     << "batch = " << spatial.batch << "\n"
     << "rank = " << spatial.rank << "\n"
     << "scale = " << fmt_double(spatial.scale) << "\n\n";
  os << "[temporal]\n"
     << "lr = " << fmt_double(temporal.lr) << "\n"
     << "steps = " << temporal.steps << "\n"
     << "batch = " << temporal.batch << "\n"
     << "rank = " << temporal.rank << "\n"
     << "scale = " << fmt_double(temporal.scale) << "\n"
     << "plan = " << temporal.plan << "\n"
     << "ah_in_training = " << (temporal.ah_in_training ? "true" : "false") << "\n\n";
  os << "[sample]\n"
     << "tau = " << sample.tau << "\n"
     << "snapshot_every = " << sample.snapshot_every << "\n\n";
  os << "[probe]\n"
     << "eval_specs = " << probe.eval_specs << "\n"
     << "window = " << probe.window << "\n"
     << "grid = " << probe.grid << "\n"
     << "judge_train_per_motion = " << probe.judge_train_per_motion << "\n"
     << "judge_holdout_per_motion = " << probe.judge_holdout_per_motion << "\n";
  return os.str();
}

std::string RunConfig::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

namespace {

// canonical() emits sections in a fixed order, so the text before a section
// header is exactly the phase-relevant prefix.
uint64_t prefix_hash(const std::string& canon, std::string_view stop_header) {
  const size_t pos = canon.find(stop_header);
  return fnv1a64(pos == std::string::npos ? std::string_view(canon)
                                          : std::string_view(canon).substr(0, pos));
}

}  // namespace

uint64_t RunConfig::pretrain_hash() const { return prefix_hash(canonical(), "[spatial]"); }
uint64_t RunConfig::spatial_hash() const { return prefix_hash(canonical(), "[temporal]"); }
uint64_t RunConfig::train_hash() const { return prefix_hash(canonical(), "[sample]"); }

synthvid::ArtifactSpec RunConfig::artifact() const {
  synthvid::ArtifactSpec a;
  a.row = synth.artifact_row;
  a.col = synth.artifact_col;
  a.contrast = synth.artifact_contrast;
  return a;
}

synthvid::MotionLabel RunConfig::custom_motion_label() const {
  return synthvid::motion_from_string(synth.custom_motion);
}

}  // namespace motionsep::config
