#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cfnsg/fields.hpp"
#include "cfnsg/reuse.hpp"
#include "cfnsg/train.hpp"

namespace cfnsg {

// Flat key-value text with repeatable [section] blocks and '#' comments.
// Values are whitespace-separated tokens (scalars or lists).
struct KvSection {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;

  bool has(const std::string& key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return v;
    throw std::invalid_argument("config: missing key '" + key + "' in [" +
                                name + "]");
  }
  std::string get_string(const std::string& key, const std::string& dflt) const {
    return has(key) ? get(key) : dflt;
  }
  double get_double(const std::string& key, double dflt) const {
    return has(key) ? std::stod(get(key)) : dflt;
  }
  int get_int(const std::string& key, int dflt) const {
    return has(key) ? std::stoi(get(key)) : dflt;
  }
  uint64_t get_u64(const std::string& key, uint64_t dflt) const {
    return has(key) ? std::stoull(get(key)) : dflt;
  }
  std::vector<double> get_doubles(const std::string& key) const {
    std::istringstream ss(get(key));
    std::vector<double> out;
    double v;
    while (ss >> v) out.push_back(v);
    if (out.empty())
      throw std::invalid_argument("config: empty list for key '" + key + "'");
    return out;
  }
  Vec3 get_vec3(const std::string& key) const {
    const auto v = get_doubles(key);
    if (v.size() != 3)
      throw std::invalid_argument("config: key '" + key + "' needs 3 values");
    return {v[0], v[1], v[2]};
  }
  Vec3 get_vec3(const std::string& key, const Vec3& dflt) const {
    return has(key) ? get_vec3(key) : dflt;
  }
};

struct KvFile {
  std::vector<KvSection> sections;  // sections[0] is the unnamed top level

  const KvSection& top() const { return sections[0]; }
  // First section with the given name, or an empty one.
  const KvSection& section(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return s;
    static const KvSection empty{};
    return empty;
  }
  std::vector<const KvSection*> all(const std::string& name) const {
    std::vector<const KvSection*> out;
    for (const auto& s : sections)
      if (s.name == name) out.push_back(&s);
    return out;
  }
};

inline KvFile parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  KvFile file;
  file.sections.push_back(KvSection{});
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string{};
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": malformed section header");
      file.sections.push_back(KvSection{trim(line.substr(1, line.size() - 2)), {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    file.sections.back().entries.emplace_back(trim(line.substr(0, eq)),
                                              trim(line.substr(eq + 1)));
  }
  return file;
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "lowrank") return Strategy::kLowRank;
  if (s == "direct") return Strategy::kDirectRgb;
  if (s == "encdec") return Strategy::kEncDec;
  if (s == "naive") return Strategy::kNaiveRgb;
  throw std::invalid_argument("unknown cache strategy: " + s);
}

struct RunConfig {
  std::string scene_path;
  std::string out_dir;
  FieldConfig fields;
  TrainConfig train;
  ReuseConfig reuse;
  int bins_per_axis = 100;
  Strategy strategy = Strategy::kLowRank;

  static RunConfig load(const std::string& path) {
    const KvFile kv = parse_kv_file(path);
    RunConfig cfg;
    cfg.scene_path = kv.top().get("scene");
    // Paths in the config are resolved relative to the config file.
    const auto base = std::filesystem::path(path).parent_path();
    if (!cfg.scene_path.empty() &&
        !std::filesystem::path(cfg.scene_path).is_absolute())
      cfg.scene_path = (base / cfg.scene_path).string();
    if (!std::filesystem::exists(cfg.scene_path))
      throw std::runtime_error("scene file does not exist: " + cfg.scene_path);
    cfg.out_dir = kv.top().get_string("out_dir", "out");
    if (!std::filesystem::path(cfg.out_dir).is_absolute())
      cfg.out_dir = (base / cfg.out_dir).string();

    const KvSection& f = kv.section("fields");
    cfg.fields.first_stage_layers = f.get_int("first_stage_layers", 8);
    cfg.fields.first_stage_width = f.get_int("first_stage_width", 128);
    cfg.fields.second_stage_layers = f.get_int("second_stage_layers", 4);
    cfg.fields.second_stage_width = f.get_int("second_stage_width", 64);
    cfg.fields.enc_position = f.get_int("enc_position", 6);
    cfg.fields.enc_direction = f.get_int("enc_direction", 4);
    cfg.fields.enc_location = f.get_int("enc_location", 2);
    cfg.fields.rank = f.get_int("rank", 4);
    cfg.fields.latent_size = f.get_int("latent_size", 16);

    const KvSection& c = kv.section("cache");
    cfg.bins_per_axis = c.get_int("bins_per_axis", 100);
    cfg.strategy = parse_strategy(c.get_string("strategy", "lowrank"));
    if (cfg.bins_per_axis < 1 || cfg.bins_per_axis > (1 << 20))
      throw std::invalid_argument("cache: bins_per_axis out of range");

    const KvSection& r = kv.section("reuse");
    cfg.reuse.tau = r.get_double("tau", 0.5);
    cfg.reuse.tau_sigma = r.get_double("tau_sigma", 0.9);
    cfg.reuse.tau_grad = r.get_double("tau_grad", 1e-2);
    const std::string rule = r.get_string("skip_rule", "score+density");
    if (rule == "score+density")
      cfg.reuse.skip_rule = SkipRule::kScoreAndDensity;
    else if (rule == "density-only")
      cfg.reuse.skip_rule = SkipRule::kDensityOnly;
    else
      throw std::invalid_argument("unknown skip rule: " + rule);
    cfg.reuse.validate();

    const KvSection& t = kv.section("train");
    cfg.train.lambda = t.get_double("lambda", 1e-8);
    cfg.train.latent_prior_v = t.get_double("latent_prior_v", 1.0);
    cfg.train.lr = t.get_double("lr", 5e-4);
    cfg.train.lr_decay = t.get_double("lr_decay", 1.0);
    cfg.train.batch_rays = t.get_int("batch_rays", 64);
    cfg.train.warmup_steps = t.get_int("warmup_steps", 4000);
    cfg.train.finetune_steps = t.get_int("finetune_steps", 2000);
    cfg.train.seed = t.get_u64("seed", 42);
    cfg.train.score_clamp = t.get_double("score_clamp", 1e-3);
    cfg.train.checkpoint_every = t.get_int("checkpoint_every", 0);
    cfg.train.validate();
    return cfg;
  }
};

}  // namespace cfnsg
