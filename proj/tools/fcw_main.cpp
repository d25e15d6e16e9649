// Copyright 2026 The FCW Authors
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

// fcw: generate / train / calibrate / warn / eval / bench.

#include "fcw/error.hpp"
#include "fcw/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace
{

struct Common
{
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string ablation;
  std::optional<double> lambda;
  std::string mode;
};

void add_common(CLI::App * cmd, Common & c)
{
  cmd->add_option("--config", c.config_path, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Overrides the data and training seeds");
  cmd->add_option("--ablation", c.ablation, "Comma-separated ablation switches");
  cmd->add_option("--lambda", c.lambda, "Threshold sensitivity");
  cmd->add_option("--mode", c.mode, "Driving-mode preset for lambda")
    ->check(CLI::IsMember({"highway", "urban", "default"}));
}

fcw::RunConfig resolve(const Common & c)
{
  fcw::RunConfig cfg = c.config_path.empty() ? fcw::RunConfig{} : fcw::RunConfig::load(c.config_path);
  if (c.seed) {
    cfg.data.seed = *c.seed;
    cfg.train.seed = *c.seed;
  }
  if (!c.ablation.empty()) {
    const fcw::Ablations extra = fcw::Ablations::parse(c.ablation);
    fcw::Ablations & a = cfg.ablations;
    a.no_sam |= extra.no_sam;
    a.no_tam |= extra.no_tam;
    a.single_head |= extra.single_head;
    a.no_cqr |= extra.no_cqr;
    a.no_collision_loss |= extra.no_collision_loss;
    if (extra.fixed_threshold) a.fixed_threshold = extra.fixed_threshold;
  }
  if (!c.mode.empty()) {
    cfg.mode = fcw::parse_mode(c.mode);
  }
  if (c.lambda) {
    cfg.mode.reset();
    cfg.risk.lambda = *c.lambda;
  }
  cfg.validate();
  return cfg;
}

void emit(const std::string & text, const std::string & path)
{
  std::cout << text;
  if (!path.empty()) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) {
      throw fcw::IoError("cannot write '" + path + "'");
    }
  }
}

std::string coverage_line(const char * name, const fcw::CoverageStats & s)
{
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%s coverage %.4f mean width %.4f m (%zu values)\n", name, s.coverage, s.mean_width, s.count);
  return buf;
}

}  // namespace

int main(int argc, char ** argv)
{
  CLI::App app{"Forward collision warning: trajectory prediction, conformal calibration and adaptive risk thresholds"};
  app.require_subcommand(1);

  Common common;

  auto * gen = app.add_subcommand("gen", "Generate a synthetic scenario dataset");
  std::string gen_out;
  std::optional<std::size_t> gen_episodes;
  add_common(gen, common);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--episodes", gen_episodes, "Episodes per family");

  auto * trn = app.add_subcommand("train", "Train the trajectory predictor");
  std::string trn_data, trn_out, trn_resume, trn_log;
  std::optional<std::size_t> trn_epochs;
  std::size_t trn_stop = 0;
  add_common(trn, common);
  trn->add_option("--data", trn_data, "Dataset directory")->required();
  trn->add_option("--out", trn_out, "Checkpoint path")->required();
  trn->add_option("--epochs", trn_epochs, "Training epochs");
  trn->add_option("--resume", trn_resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  trn->add_option("--stop-after", trn_stop, "Stop once this many epochs are complete");
  trn->add_option("--log", trn_log, "Write the epoch log here instead of stdout");

  auto * cal = app.add_subcommand("calibrate", "Fit the conformal correction on the calibration split");
  std::string cal_ckpt, cal_data, cal_out;
  std::optional<double> alpha;
  add_common(cal, common);
  cal->add_option("--checkpoint", cal_ckpt, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  cal->add_option("--data", cal_data, "Dataset directory")->required();
  cal->add_option("--alpha", alpha, "Miscoverage level");
  cal->add_option("--out", cal_out, "Calibration artifact path")->required();

  auto * wrn = app.add_subcommand("warn", "Replay test episodes and write the warning event log");
  std::string wrn_ckpt, wrn_cal, wrn_data, wrn_out, wrn_baseline;
  add_common(wrn, common);
  wrn->add_option("--checkpoint", wrn_ckpt, "Trained checkpoint");
  wrn->add_option("--calibration", wrn_cal, "Calibration artifact");
  wrn->add_option("--data", wrn_data, "Dataset directory")->required();
  wrn->add_option("--out", wrn_out, "Run output directory")->required();
  wrn->add_option("--baseline", wrn_baseline, "Use a baseline predictor")->check(CLI::IsMember({"cv"}));

  auto * evl = app.add_subcommand("eval", "Evaluate a warn run on the test split");
  std::string evl_data, evl_run, evl_ref, evl_out, evl_baseline;
  add_common(evl, common);
  evl->add_option("--data", evl_data, "Dataset directory")->required();
  evl->add_option("--run", evl_run, "Output directory of warn");
  evl->add_option("--reference", evl_ref, "Earlier report to compare against")->check(CLI::ExistingFile);
  evl->add_option("--out", evl_out, "Write the report here too");
  evl->add_option("--baseline", evl_baseline, "Evaluate a baseline predictor end to end")
    ->check(CLI::IsMember({"cv"}));

  auto * bch = app.add_subcommand("bench", "Latency and attention-scaling benchmark");
  std::string bch_ckpt, bch_out;
  std::vector<std::size_t> sizes{10, 20, 40, 80, 120};
  std::size_t repeats = 20;
  add_common(bch, common);
  bch->add_option("--checkpoint", bch_ckpt, "Trained checkpoint (default: untrained model from the config)");
  bch->add_option("--sizes", sizes, "Scene sizes")->delimiter(',');
  bch->add_option("--repeats", repeats, "Forward passes per size");
  bch->add_option("--out", bch_out, "Write the report here too");

  CLI11_PARSE(app, argc, argv);

  try {
    fcw::RunConfig cfg = resolve(common);

    if (gen->parsed()) {
      if (gen_episodes) cfg.data.episodes_per_family = *gen_episodes;
      const auto s = fcw::cmd_gen(cfg, gen_out);
      std::cout << "episodes " << s.episodes << " (danger " << s.danger << ")\nwindows " << s.windows << "\n";
    } else if (trn->parsed()) {
      if (trn_epochs) cfg.train.epochs = *trn_epochs;
      std::ofstream log_file;
      if (!trn_log.empty()) {
        log_file.open(trn_log, std::ios::binary);
        if (!log_file) {
          throw fcw::IoError("cannot write '" + trn_log + "'");
        }
      }
      std::ostream & log = trn_log.empty() ? std::cout : static_cast<std::ostream &>(log_file);
      const auto s = fcw::cmd_train(cfg, trn_data, trn_out, trn_resume, trn_stop, &log);
      std::cout << "epochs completed " << s.epochs_completed << "\ncheckpoint " << trn_out << "\n";
    } else if (cal->parsed()) {
      const auto s = fcw::cmd_calibrate(cfg, cal_ckpt, cal_data, alpha.value_or(cfg.model.alpha), cal_out);
      std::cout << coverage_line("raw", s.raw_calibration) << coverage_line("calibrated", s.corrected_calibration)
                << "calibration " << cal_out << "\n";
    } else if (wrn->parsed()) {
      const auto s = fcw::cmd_warn(cfg, wrn_ckpt, wrn_cal, wrn_data, wrn_out, wrn_baseline == "cv");
      std::cout << "episodes " << s.episodes << "\nticks " << s.events << "\nwarnings " << s.warnings << "\n";
    } else if (evl->parsed()) {
      fcw::EvalReport report;
      if (evl_baseline == "cv") {
        const std::string run = evl_run.empty() ? evl_data + "/cv_run" : evl_run;
        fcw::cmd_warn(cfg, {}, {}, evl_data, run, true);
        report = fcw::cmd_eval(cfg, evl_data, run);
        report.label = "cv";
      } else {
        if (evl_run.empty()) {
          throw std::invalid_argument("eval: --run is required unless --baseline is given");
        }
        report = fcw::cmd_eval(cfg, evl_data, evl_run);
      }
      std::string text = fcw::format_report(report);
      if (!evl_ref.empty()) {
        std::ifstream f(evl_ref, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        text += "\n[comparison]\n" + fcw::format_comparison(fcw::parse_report(ss.str()), report, "reference");
      }
      emit(text, evl_out);
    } else if (bch->parsed()) {
      const fcw::HstanModel model =
        bch_ckpt.empty() ? fcw::HstanModel(cfg.effective_model(), cfg.train.seed) : fcw::load_model(bch_ckpt);
      emit(fcw::format_bench(fcw::run_bench(model, sizes, repeats)), bch_out);
    }
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
