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

// strm: train, evaluate and analyse fixed-capacity space-time memory models.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "strm/errors.hpp"
#include "strm/harness.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFailure = 1;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args, bool required) {
  auto* opt = cmd->add_option("-c,--config", args.path, "key=value configuration file")->check(CLI::ExistingFile);
  if (required) opt->required();
  cmd->add_option("-s,--set", args.overrides, "override, e.g. --set model.k_slots=6 (repeatable)");
}

strm::RunConfig resolve(const ConfigArgs& args) {
  return strm::resolve_config(args.path.empty() ? std::nullopt : std::optional<fs::path>(args.path),
                              args.overrides);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw strm::IoError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw strm::IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(item, &pos);
    if (pos != item.size()) throw strm::ConfigError("not an integer list: '" + list + "'");
    out.push_back(std::size_t(v));
  }
  if (out.empty()) throw strm::ConfigError("empty integer list");
  return out;
}

std::string dump_config(const strm::RunConfig& cfg) {
  std::string out = "# config hash " + cfg.hash() + "\n";
  const strm::ConfigMap map = cfg.to_map();
  for (const auto& [k, v] : map.entries()) out += k + " = " + v + "\n";
  return out;
}

fs::path output_dir(const strm::RunConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return "strm_out";
}

int cmd_train(const ConfigArgs& ca, const std::string& out_flag, const std::string& sweep) {
  strm::RunConfig cfg = resolve(ca);
  const fs::path out = output_dir(cfg, out_flag);
  fs::create_directories(out);
  write_text(out / "config.txt", dump_config(cfg));
  if (!sweep.empty()) {
    const auto rows = strm::sweep_slots(cfg, parse_sizes(sweep));
    std::string csv = "k_slots,J,F\n";
    char buf[96];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", r.k_slots, r.j, r.f);
      csv += buf;
      std::printf("K=%zu  J=%.4f  F=%.4f\n", r.k_slots, r.j, r.f);
    }
    write_text(out / "sweep.csv", csv);
    return 0;
  }
  if (cfg.checkpoint_dir.empty()) cfg.checkpoint_dir = (out / "checkpoints").string();
  const auto data = strm::load_dataset(cfg, false);
  const std::size_t every = std::max<std::size_t>(1, cfg.steps / 10);
  const auto result = strm::train(cfg, data, [&](std::size_t step, double loss) {
    if (step % every == 0 || step + 1 == cfg.steps) std::printf("step %6zu  loss %.6f\n", step, loss);
  });
  strm::write_loss_csv(out / "loss.csv", result.log);
  std::printf("checkpoint %s\n", result.log.checkpoints.back().string().c_str());
  return 0;
}

int cmd_eval(const ConfigArgs& ca, const std::vector<std::string>& checkpoints, const std::string& out_flag,
             double min_ssim) {
  const strm::RunConfig cfg = resolve(ca);
  const fs::path out = output_dir(cfg, out_flag);
  const auto data = strm::load_dataset(cfg, true);
  strm::Checkpoint ckpt;
  if (checkpoints.size() == 1) {
    ckpt = strm::load_checkpoint(checkpoints.front());
  } else {
    std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
    strm::CheckpointSelector sel;
    sel.min_ssim = min_ssim;
    if (cfg.model.task == strm::Task::kPrediction && min_ssim > 0)
      sel.validation_ssim = [&](const strm::Checkpoint& c) { return strm::evaluate(cfg, c, data).aggregate.ssim; };
    ckpt = strm::average_checkpoints(paths, &sel);
    strm::save_checkpoint(out / "averaged.strm", ckpt);
  }
  const auto report = strm::evaluate(cfg, ckpt, data);
  strm::write_report(report, out / "report.csv", out / "report.json");
  write_text(out / "rollout.json", strm::rollout_to_json(report.rollout));
  for (const auto& [video, snap] : report.rollout.final_banks) {
    std::string file = video;
    std::replace(file.begin(), file.end(), '/', '_');
    strm::save_bank_snapshot(out / "banks" / (file + ".strm"), snap);
  }
  const auto& a = report.aggregate;
  if (report.task == strm::Task::kVos)
    std::printf("J %.4f  F %.4f  J&F %.4f  (%zu sequences)\n", a.j, a.f, 0.5 * (a.j + a.f), report.sequences.size());
  else
    std::printf("MSE %.6f  MAE %.6f  SSIM %.4f  PSNR %.2f  (%zu sequences)\n", a.mse, a.mae, a.ssim, a.psnr,
                report.sequences.size());
  return 0;
}

template <typename T>
void predict_all(const strm::RunConfig& cfg, const strm::Checkpoint& ckpt, const std::vector<strm::SequenceSample>& data,
                 const fs::path& out) {
  strm::Model<T> model(cfg.model, strm::Rng::mix(cfg.seed, 1));
  strm::restore_parameters(model.parameters(), ckpt);
  char name[16];
  for (const auto& s : data) {
    if (cfg.model.task == strm::Task::kVos) {
      const auto masks = strm::predict_masks(model, cfg, s);
      for (std::size_t t = 0; t < masks.size(); ++t) {
        std::snprintf(name, sizeof name, "%05zu.png", t);
        strm::LabelMap m = masks[t];
        if (!s.label_values.empty())
          for (int& v : m.labels) v = s.label_values.at(std::size_t(v));
        strm::write_label_png(out / "Masks" / s.name / name, m);
      }
    } else {
      const auto frames = strm::predict_frames(model, cfg, s);
      for (std::size_t i = 0; i < frames.size(); ++i) {
        std::snprintf(name, sizeof name, "%05zu.png", cfg.context_frames + i);
        strm::write_rgb_png(out / "Frames" / s.name / name, frames[i]);
      }
    }
  }
}

int cmd_predict(const ConfigArgs& ca, const std::string& checkpoint, const std::string& out_flag) {
  const strm::RunConfig cfg = resolve(ca);
  const fs::path out = output_dir(cfg, out_flag);
  const auto data = strm::load_dataset(cfg, true);
  const auto ckpt = strm::load_checkpoint(checkpoint);
  if (cfg.precision == 64)
    predict_all<double>(cfg, ckpt, data, out);
  else
    predict_all<float>(cfg, ckpt, data, out);
  std::printf("wrote predictions for %zu sequences to %s\n", data.size(), out.string().c_str());
  return 0;
}

int cmd_bench(const strm::BenchConfig& bc, const std::string& lengths, const std::string& out) {
  const auto result = strm::bench_complexity(bc, parse_sizes(lengths));
  std::printf("%-8s %6s %14s %14s %6s %12s\n", "variant", "T", "read (ms)", "update (ms)", "slots", "bytes");
  for (const auto& p : result.points)
    std::printf("%-8s %6zu %14.4f %14.4f %6zu %12zu\n", p.variant.c_str(), p.length, 1e3 * p.read_latency,
                1e3 * p.update_latency, p.peak_slots, p.peak_bytes);
  if (!out.empty()) write_text(out, strm::bench_to_json(result) + "\n");
  return 0;
}

int cmd_analyze(const std::string& log_path, const std::vector<std::string>& banks, const std::string& out) {
  auto hist = strm::analyze_memory(strm::rollout_from_json(read_text(log_path)));
  for (const auto& b : banks) {
    const auto snap = strm::load_bank_snapshot(b);
    hist.final_banks.emplace_back(fs::path(b).stem().string(), snap.frames);
  }
  std::printf("%8s %10s %10s\n", "distance", "count", "fraction");
  for (const auto& [t, v] : hist.normalized()) std::printf("%8zu %10zu %10.4f\n", t, hist.counts.at(t), v);
  std::printf("mass beyond K=%zu: %.4f\n", hist.capacity, hist.mass_beyond(hist.capacity));
  for (const auto& [video, frames] : hist.final_banks) {
    std::printf("final bank %s:", video.c_str());
    for (auto f : frames) std::printf(" %zu", f);
    std::printf("\n");
  }
  if (!out.empty()) write_text(out, strm::histogram_to_json(hist) + "\n");
  return 0;
}

int cmd_gen_data(const ConfigArgs& ca, std::uint64_t seed, std::size_t count, const std::string& out) {
  strm::RunConfig cfg = resolve(ca);
  std::vector<strm::SequenceSample> samples;
  for (std::size_t i = 0; i < count; ++i) {
    auto s = strm::gen_moving_shapes(cfg.synthetic, strm::Rng::mix(seed, i));
    char name[32];
    std::snprintf(name, sizeof name, "shapes_%03zu", i);
    s.name = name;
    samples.push_back(std::move(s));
  }
  strm::export_davis_style(out, samples);
  std::printf("wrote %zu sequences to %s\n", count, out.c_str());
  return 0;
}

int cmd_gradcheck(int precision, std::uint64_t seed) {
  if (precision != 64)
    throw strm::UnsupportedError("finite-difference checks need 64-bit precision, got --precision " +
                                 std::to_string(precision));
  const auto results = strm::run_gradient_suite(seed);
  bool ok = true;
  std::printf("%-22s %14s  %s\n", "operation", "max rel err", "result");
  for (const auto& r : results) {
    std::printf("%-22s %14.3e  %s\n", r.name.c_str(), r.max_rel_error, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fixed-capacity space-time memory: training, evaluation and analysis", "strm"};
  app.require_subcommand(1);

  ConfigArgs train_cfg, eval_cfg, predict_cfg, gen_cfg;
  std::string train_out, train_sweep;
  auto* train = app.add_subcommand("train", "train a model and write checkpoints + loss series");
  add_config_options(train, train_cfg, true);
  train->add_option("-o,--out", train_out, "output directory");
  train->add_option("--sweep-k", train_sweep, "train+evaluate the learned policy for each K, e.g. 3,4,5,6,7");

  std::vector<std::string> eval_ckpts;
  std::string eval_out;
  double min_ssim = 0.0;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (several are averaged first)");
  add_config_options(eval, eval_cfg, true);
  eval->add_option("--checkpoint", eval_ckpts, "checkpoint file (repeat to average)")->required()->check(CLI::ExistingFile);
  eval->add_option("-o,--out", eval_out, "report directory");
  eval->add_option("--min-ssim", min_ssim, "when averaging prediction checkpoints, keep those above this SSIM");

  std::string predict_ckpt, predict_out;
  auto* predict = app.add_subcommand("predict", "write predicted masks or frames as PNG");
  add_config_options(predict, predict_cfg, true);
  predict->add_option("--checkpoint", predict_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  predict->add_option("-o,--out", predict_out, "output directory");

  strm::BenchConfig bench_cfg;
  std::string bench_lengths = "50,200,500", bench_out;
  auto* bench = app.add_subcommand("bench", "fixed-K memory vs linear-growth memory latency and size");
  bench->add_option("--T", bench_lengths, "comma-separated increasing sequence lengths");
  bench->add_option("--k", bench_cfg.k_slots, "slots of the fixed-capacity memory");
  bench->add_option("--gamma", bench_cfg.gamma, "linear baseline stores every gamma-th frame");
  bench->add_option("--reps", bench_cfg.repetitions, "repetitions per point (median)");
  bench->add_option("--seed", bench_cfg.seed, "feature seed");
  bench->add_option("-o,--out", bench_out, "JSON output file");

  std::string log_path, analyze_out;
  std::vector<std::string> bank_paths;
  auto* analyze = app.add_subcommand("analyze-memory", "histogram of stored-frame distances from a rollout log");
  analyze->add_option("--log", log_path, "rollout JSON written by eval")->required()->check(CLI::ExistingFile);
  analyze->add_option("-o,--out", analyze_out, "JSON output file");
  analyze->add_option("--bank", bank_paths, "bank snapshot written by eval (repeatable)")->check(CLI::ExistingFile);

  std::uint64_t gen_seed = 0;
  std::size_t gen_count = 5;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "write synthetic moving-shapes sequences as Frames/ + Masks/ PNGs");
  add_config_options(gen, gen_cfg, false);
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", gen_count, "number of sequences");
  gen->add_option("-o,--out", gen_out, "output root")->required();

  int precision = 64;
  std::uint64_t grad_seed = 0;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");
  gradcheck->add_option("--precision", precision, "floating-point bits (64)");
  gradcheck->add_option("--seed", grad_seed, "input seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error [usage]: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    std::cerr << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_cfg, train_out, train_sweep);
    if (eval->parsed()) return cmd_eval(eval_cfg, eval_ckpts, eval_out, min_ssim);
    if (predict->parsed()) return cmd_predict(predict_cfg, predict_ckpt, predict_out);
    if (bench->parsed()) return cmd_bench(bench_cfg, bench_lengths, bench_out);
    if (analyze->parsed()) return cmd_analyze(log_path, bank_paths, analyze_out);
    if (gen->parsed()) return cmd_gen_data(gen_cfg, gen_seed, gen_count, gen_out);
    if (gradcheck->parsed()) return cmd_gradcheck(precision, grad_seed);
  } catch (const strm::Error& e) {
    std::cerr << "error [" << e.category() << "]: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error [internal]: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}
