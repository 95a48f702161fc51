// Copyright 2026 The cpnet Authors. All Rights Reserved.
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

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cpnet/cpnet.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;

int exit_code(cpnet_status s) {
  switch (s) {
    case CPNET_OK:
      return kExitOk;
    case CPNET_ERR_NUMERIC:
      return kExitNumeric;
    case CPNET_ERR_IO:
      return kExitIo;
    default:
      return kExitUsage;
  }
}

int report(cpnet_status s) {
  if (s != CPNET_OK) std::fprintf(stderr, "cpnet: %s: %s\n", cpnet_status_name(s), cpnet_last_error());
  return exit_code(s);
}

struct ConfigHandle {
  cpnet_config* ptr = nullptr;
  ~ConfigHandle() { cpnet_config_destroy(ptr); }
};

struct ModelHandle {
  cpnet_model* ptr = nullptr;
  ~ModelHandle() { cpnet_model_destroy(ptr); }
};

int gen_data(const std::string& config, const std::string& out) {
  ConfigHandle cfg;
  if (cpnet_status s = cpnet_config_load(config.c_str(), &cfg.ptr); s != CPNET_OK) return report(s);
  if (cpnet_status s = cpnet_generate_dataset(cfg.ptr, out.c_str()); s != CPNET_OK) return report(s);
  std::printf("wrote dataset to %s\n", out.c_str());
  return kExitOk;
}

void print_step(const cpnet_step_log* l, void* user) {
  const int64_t every = *static_cast<const int64_t*>(user);
  if (every > 0 && l->step % every != 0) return;
  std::printf("step %lld lr %.6g seg %.5f aux %.5f unary %.5f global %.5f total %.5f\n",
              static_cast<long long>(l->step), l->lr, l->seg, l->aux, l->unary, l->global, l->total);
  std::fflush(stdout);
}

int train(const std::string& config, const std::string& out, int64_t log_every) {
  ConfigHandle cfg;
  if (cpnet_status s = cpnet_config_load(config.c_str(), &cfg.ptr); s != CPNET_OK) return report(s);
  if (cpnet_status s = cpnet_train(cfg.ptr, out.c_str(), print_step, &log_every, nullptr); s != CPNET_OK) {
    return report(s);
  }
  std::printf("checkpoint written to %s/checkpoint\n", out.c_str());
  return kExitOk;
}

int eval(const std::string& ckpt, const std::string& data, const std::vector<double>& scales, bool flip) {
  ModelHandle model;
  if (cpnet_status s = cpnet_model_load(ckpt.c_str(), &model.ptr); s != CPNET_OK) return report(s);
  cpnet_metrics m{};
  const cpnet_status s = cpnet_evaluate(model.ptr, data.empty() ? nullptr : data.c_str(),
                                        scales.empty() ? nullptr : scales.data(), scales.size(), flip ? 1 : 0, &m);
  if (s != CPNET_OK) return report(s);
  std::printf("scenes %lld pixels %lld pixAcc %.6f mIoU %.6f\n", static_cast<long long>(m.scenes),
              static_cast<long long>(m.pixels), m.pix_acc, m.mean_iou);
  return kExitOk;
}

void print_grad(const cpnet_grad_report* r, void*) {
  std::printf("%-26s %s  entries %lld  max rel err %.3e\n", r->name, r->passed ? "ok  " : "FAIL",
              static_cast<long long>(r->entries), r->max_rel_error);
  std::fflush(stdout);
}

int grad_check(const std::string& op, bool full) {
  int ok = 0;
  const char* which = full ? "full_model" : (op.empty() ? nullptr : op.c_str());
  if (cpnet_status s = cpnet_grad_check(which, print_grad, nullptr, &ok); s != CPNET_OK) return report(s);
  return ok ? kExitOk : kExitNumeric;
}

int dump_prior(const std::string& ckpt, int64_t scene, const std::string& data, const std::string& out) {
  ModelHandle model;
  if (cpnet_status s = cpnet_model_load(ckpt.c_str(), &model.ptr); s != CPNET_OK) return report(s);
  cpnet_prior_stats st{};
  const cpnet_status s =
      cpnet_dump_prior(model.ptr, scene, data.empty() ? nullptr : data.c_str(), out.c_str(), &st);
  if (s != CPNET_OK) return report(s);
  std::printf("wrote prior maps to %s (P>0.5 agrees with ideal map on %.4f of %lld valid entries)\n", out.c_str(),
              st.agreement, static_cast<long long>(st.valid_entries));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context prior segmentation toolkit"};
  app.require_subcommand(1);

  std::string config, out, ckpt, data, op;
  std::vector<double> scales;
  bool flip = false;
  bool full = false;
  int64_t scene = 0;
  int64_t log_every = 50;

  auto* gen = app.add_subcommand("gen-data", "Write the held-out synthetic scenes as a dataset directory");
  gen->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  tr->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--log-every", log_every, "Print every N steps (0 = every step)")->check(CLI::NonNegativeNumber);

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (pixAcc, mIoU)");
  ev->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", data, "Dataset directory (default: the config's held-out scenes)");
  ev->add_option("--scales", scales, "Comma-separated inference scales")->delimiter(',');
  ev->add_flag("--flip", flip, "Average with horizontally mirrored inputs");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks in float64");
  auto* op_opt = gc->add_option("--op", op, "Single op to check");
  auto* full_opt = gc->add_flag("--full", full, "Check the full toy network loss");
  op_opt->excludes(full_opt);
  bool list = false;
  gc->add_flag("--list", list, "List op names");

  auto* dp = app.add_subcommand("dump-prior", "Write prior / affinity maps for one scene");
  dp->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
  dp->add_option("--scene", scene, "Scene id")->required()->check(CLI::NonNegativeNumber);
  dp->add_option("--data", data, "Dataset directory (default: the config's held-out scenes)");
  dp->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*gen) return gen_data(config, out);
  if (*tr) return train(config, out, log_every);
  if (*ev) return eval(ckpt, data, scales, flip);
  if (*gc) {
    if (list) {
      for (size_t i = 0; i < cpnet_grad_check_op_count(); ++i) std::printf("%s\n", cpnet_grad_check_op_name(i));
      std::printf("full_model\n");
      return kExitOk;
    }
    return grad_check(op, full);
  }
  if (*dp) return dump_prior(ckpt, scene, data, out);
  return kExitUsage;
}
