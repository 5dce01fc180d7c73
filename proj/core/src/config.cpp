// Copyright 2026 The STRM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "strm/errors.hpp"
#include "strm/harness.hpp"

extern char** environ;

namespace strm {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "1" || l == "true" || l == "on" || l == "yes") return true;
  if (l == "0" || l == "false" || l == "off" || l == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void ConfigMap::set(const std::string& key, const std::string& value) {
  const std::string k = lower(trim(key));
  if (k.empty()) throw ConfigError("empty configuration key");
  values_[k] = trim(value);
}

std::optional<std::string> ConfigMap::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

ConfigMap ConfigMap::parse(std::string_view text, const std::string& origin) {
  ConfigMap map;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (line_no == 1 && raw.rfind("\xEF\xBB\xBF", 0) == 0) raw.erase(0, 3);
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section header");
      section = lower(trim(std::string_view(line).substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (const auto hash = value.find(" #"); hash != std::string::npos) value = trim(value.substr(0, hash));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    map.set(section.empty() ? key : section + "." + key, value);
  }
  return map;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void ConfigMap::apply_environment(const std::vector<std::pair<std::string, std::string>>& env) {
  constexpr std::string_view prefix = "STRM_";
  for (const auto& [name, value] : env) {
    if (name.size() <= prefix.size() || name.compare(0, prefix.size(), prefix) != 0) continue;
    std::string rest = lower(name.substr(prefix.size()));
    const auto us = rest.find('_');
    if (us != std::string::npos) rest[us] = '.';
    set(rest, value);
  }
}

void ConfigMap::apply_process_environment() {
  std::vector<std::pair<std::string, std::string>> env;
  for (char** e = environ; e && *e; ++e) {
    std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    env.emplace_back(entry.substr(0, eq), entry.substr(eq + 1));
  }
  apply_environment(env);
}

void ConfigMap::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value, got '" + assignment + "'");
  set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

Schedule parse_schedule(std::string_view name) {
  if (name == "constant") return Schedule::kConstant;
  if (name == "cosine") return Schedule::kCosine;
  if (name == "two-phase") return Schedule::kTwoPhase;
  throw ConfigError("unknown learning-rate schedule '" + std::string(name) + "' (constant, cosine, two-phase)");
}

std::string_view schedule_name(Schedule s) {
  switch (s) {
    case Schedule::kConstant: return "constant";
    case Schedule::kCosine: return "cosine";
    case Schedule::kTwoPhase: return "two-phase";
  }
  return "constant";
}

RunConfig RunConfig::from_map(const ConfigMap& map) {
  RunConfig c;
  // The task picks the architecture defaults that later keys refine.
  if (auto t = map.get("task")) {
    const Task task = parse_task(*t);
    c.model = task == Task::kVos ? ModelConfig::vos_defaults() : ModelConfig::prediction_defaults();
  }
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size_field = [](std::size_t& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = std::size_t(parse_uint(k, v)); };
  };
  auto double_field = [](double& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_double(k, v); };
  };
  auto bool_field = [](bool& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_bool(k, v); };
  };
  auto string_field = [](std::string& f) -> Setter {
    return [&f](const std::string&, const std::string& v) { f = v; };
  };
  std::optional<std::size_t> epochs;

  const std::map<std::string, Setter> setters = {
      {"task", [](const std::string&, const std::string&) {}},
      {"seed", [&c](const std::string& k, const std::string& v) { c.seed = parse_uint(k, v); }},
      {"precision", [&c](const std::string& k, const std::string& v) { c.precision = int(parse_uint(k, v)); }},
      {"model.base_width", size_field(c.model.base_width)},
      {"model.encoder_blocks", size_field(c.model.encoder_blocks)},
      {"model.decoder_blocks", size_field(c.model.decoder_blocks)},
      {"model.downsample", size_field(c.model.downsample)},
      {"model.key_channels", size_field(c.model.key_channels)},
      {"model.value_channels", size_field(c.model.value_channels)},
      {"model.update_key_channels", size_field(c.model.update_key_channels)},
      {"model.k_slots", size_field(c.model.k_slots)},
      {"model.fusion", bool_field(c.model.fusion)},
      {"model.scale_logits", bool_field(c.model.scale_logits)},
      {"model.score_query_feature", bool_field(c.model.score_query_feature)},
      {"model.clip_frames", size_field(c.model.clip_frames)},
      {"memory.policy", [&c](const std::string&, const std::string& v) { c.model.policy = parse_policy(v); }},
      {"gumbel.tau", double_field(c.model.tau)},
      {"train.lr", double_field(c.lr)},
      {"train.schedule", [&c](const std::string&, const std::string& v) { c.schedule = parse_schedule(v); }},
      {"train.finetune_lr", double_field(c.finetune_lr)},
      {"train.lr_min", double_field(c.lr_min)},
      {"train.finetune_start", double_field(c.finetune_start)},
      {"train.steps", size_field(c.steps)},
      {"train.epochs", [&epochs](const std::string& k, const std::string& v) { epochs = std::size_t(parse_uint(k, v)); }},
      {"train.clip_length", size_field(c.clip_length)},
      {"train.checkpoint_every", size_field(c.checkpoint_every)},
      {"train.grad_clip", double_field(c.grad_clip)},
      {"train.random_clips", bool_field(c.random_clips)},
      {"train.pretrain_steps", size_field(c.pretrain_steps)},
      {"train.pretrain_clip_length", size_field(c.pretrain_clip_length)},
      {"train.init", string_field(c.init_checkpoint)},
      {"train.sequences", size_field(c.train_sequences)},
      {"eval.sequences", size_field(c.eval_sequences)},
      {"eval.deterministic", bool_field(c.deterministic_eval)},
      {"eval.context_frames", size_field(c.context_frames)},
      {"data.path", string_field(c.data_path)},
      {"synthetic.height", size_field(c.synthetic.height)},
      {"synthetic.width", size_field(c.synthetic.width)},
      {"synthetic.length", size_field(c.synthetic.length)},
      {"synthetic.objects", [&c](const std::string& k, const std::string& v) { c.synthetic.objects = int(parse_uint(k, v)); }},
      {"synthetic.noise", double_field(c.synthetic.noise)},
      {"synthetic.occluded_object",
       [&c](const std::string& k, const std::string& v) { c.synthetic.occluded_object = int(parse_uint(k, v)); }},
      {"synthetic.switches",
       [&c](const std::string& k, const std::string& v) {
         c.synthetic.appearance_switches.clear();
         for (const auto& item : split(v, ',')) c.synthetic.appearance_switches.push_back(std::size_t(parse_uint(k, item)));
       }},
      {"synthetic.occlusions",
       [&c](const std::string& k, const std::string& v) {
         c.synthetic.occlusions.clear();
         for (const auto& item : split(v, ',')) {
           const auto dash = item.find('-');
           if (dash == std::string::npos) throw ConfigError(k + ": expected start-end intervals, got '" + item + "'");
           c.synthetic.occlusions.push_back({std::size_t(parse_uint(k, trim(item.substr(0, dash)))),
                                             std::size_t(parse_uint(k, trim(item.substr(dash + 1))))});
         }
       }},
      {"paths.checkpoints", string_field(c.checkpoint_dir)},
      {"paths.outputs", string_field(c.output_dir)},
  };

  for (const auto& [key, value] : map.entries()) {
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("unknown configuration key '" + key + "'");
    it->second(key, value);
  }
  if (epochs) c.steps = *epochs * std::max<std::size_t>(1, c.train_sequences);
  return c;
}

ConfigMap RunConfig::to_map() const {
  ConfigMap m;
  m.set("task", task_name(model.task));
  m.set("seed", std::to_string(seed));
  m.set("precision", std::to_string(precision));
  m.set("model.base_width", std::to_string(model.base_width));
  m.set("model.encoder_blocks", std::to_string(model.encoder_blocks));
  m.set("model.decoder_blocks", std::to_string(model.decoder_blocks));
  m.set("model.downsample", std::to_string(model.downsample));
  m.set("model.key_channels", std::to_string(model.dk()));
  m.set("model.value_channels", std::to_string(model.dv()));
  m.set("model.update_key_channels", std::to_string(model.du()));
  m.set("model.k_slots", std::to_string(model.k_slots));
  m.set("model.fusion", model.fusion ? "true" : "false");
  m.set("model.scale_logits", model.scale_logits ? "true" : "false");
  m.set("model.score_query_feature", model.score_query_feature ? "true" : "false");
  m.set("model.clip_frames", std::to_string(model.clip_frames));
  m.set("memory.policy", std::string(policy_name(model.policy)));
  m.set("gumbel.tau", format_double(model.tau));
  m.set("train.lr", format_double(lr));
  m.set("train.schedule", std::string(schedule_name(schedule)));
  m.set("train.finetune_lr", format_double(finetune_lr));
  m.set("train.lr_min", format_double(lr_min));
  m.set("train.finetune_start", format_double(finetune_start));
  m.set("train.steps", std::to_string(steps));
  m.set("train.clip_length", std::to_string(clip_length));
  m.set("train.checkpoint_every", std::to_string(checkpoint_every));
  m.set("train.grad_clip", format_double(grad_clip));
  m.set("train.random_clips", random_clips ? "true" : "false");
  m.set("train.pretrain_steps", std::to_string(pretrain_steps));
  m.set("train.pretrain_clip_length", std::to_string(pretrain_clip_length));
  m.set("train.init", init_checkpoint);
  m.set("train.sequences", std::to_string(train_sequences));
  m.set("eval.sequences", std::to_string(eval_sequences));
  m.set("eval.deterministic", deterministic_eval ? "true" : "false");
  m.set("eval.context_frames", std::to_string(context_frames));
  m.set("data.path", data_path);
  m.set("synthetic.height", std::to_string(synthetic.height));
  m.set("synthetic.width", std::to_string(synthetic.width));
  m.set("synthetic.length", std::to_string(synthetic.length));
  m.set("synthetic.objects", std::to_string(synthetic.objects));
  m.set("synthetic.noise", format_double(synthetic.noise));
  m.set("synthetic.occluded_object", std::to_string(synthetic.occluded_object));
  m.set("synthetic.switches", join_sizes(synthetic.appearance_switches));
  std::string occ;
  for (std::size_t i = 0; i < synthetic.occlusions.size(); ++i)
    occ += (i ? "," : "") + std::to_string(synthetic.occlusions[i].start) + "-" +
           std::to_string(synthetic.occlusions[i].end);
  m.set("synthetic.occlusions", occ);
  m.set("paths.checkpoints", checkpoint_dir);
  m.set("paths.outputs", output_dir);
  return m;
}

void RunConfig::validate() const {
  model.validate();
  if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64, got " + std::to_string(precision));
  if (clip_length < 2) throw ConfigError("train.clip_length must be >= 2, got " + std::to_string(clip_length));
  if (pretrain_steps && pretrain_clip_length < 2)
    throw ConfigError("train.pretrain_clip_length must be >= 2, got " + std::to_string(pretrain_clip_length));
  if (!(lr > 0)) throw ConfigError("train.lr must be positive");
  if (schedule == Schedule::kTwoPhase && (finetune_start < 0 || finetune_start > 1))
    throw ConfigError("train.finetune_start must lie in [0, 1]");
  if (lr_min < 0) throw ConfigError("train.lr_min must be >= 0");
  if (grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
  if (train_sequences == 0) throw ConfigError("train.sequences must be >= 1");
  if (eval_sequences == 0) throw ConfigError("eval.sequences must be >= 1");
  synthetic.validate();
  if (model.task == Task::kPrediction) {
    if (clip_length <= model.clip_frames || (pretrain_steps && pretrain_clip_length <= model.clip_frames))
      throw ConfigError("prediction clips need more than model.clip_frames=" + std::to_string(model.clip_frames) +
                        " frames");
    if (context_frames < model.clip_frames)
      throw ConfigError("eval.context_frames must be >= model.clip_frames");
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::hash() const {
  std::string canonical;
  const ConfigMap map = to_map();
  for (const auto& [k, v] : map.entries()) canonical += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical)));
  return buf;
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<std::string>& overrides, bool use_environment) {
  ConfigMap map = file ? ConfigMap::load(*file) : ConfigMap{};
  if (use_environment) map.apply_process_environment();
  for (const auto& o : overrides) map.apply_override(o);
  RunConfig cfg = RunConfig::from_map(map);
  cfg.validate();
  return cfg;
}

std::vector<SequenceSample> synthetic_split(const RunConfig& cfg, bool evaluation) {
  const std::size_t n = evaluation ? cfg.eval_sequences : cfg.train_sequences;
  const std::uint64_t stream = evaluation ? 0x6576616cULL : 0x747261696eULL;
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    SequenceSample s = gen_moving_shapes(cfg.synthetic, Rng::mix(Rng::mix(cfg.seed, stream), i));
    s.name = std::string(evaluation ? "eval_" : "train_") + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SequenceSample> load_dataset(const RunConfig& cfg, bool evaluation) {
  if (cfg.data_path.empty()) return synthetic_split(cfg, evaluation);
  return load_davis_style(cfg.data_path);
}

}  // namespace strm
