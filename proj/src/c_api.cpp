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

#include "cpnet/cpnet.h"

#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "cpnet/checkpoint.hpp"
#include "cpnet/config.hpp"
#include "cpnet/data.hpp"
#include "cpnet/error.hpp"
#include "cpnet/gradcheck.hpp"
#include "cpnet/parallel.hpp"
#include "cpnet/trainer.hpp"

struct cpnet_config {
  cpnet::TrainConfig cfg;
};

struct cpnet_model {
  cpnet::TrainConfig cfg;
  int64_t step = 0;
  cpnet::Rng::State rng_state{};
  std::unique_ptr<cpnet::CPNet<float>> net;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
cpnet_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    fn();
    return CPNET_OK;
  } catch (const cpnet::DimensionError& e) {
    g_last_error = e.what();
    return CPNET_ERR_DIMENSION;
  } catch (const cpnet::ValueError& e) {
    g_last_error = e.what();
    return CPNET_ERR_INVALID_ARGUMENT;
  } catch (const cpnet::NumericError& e) {
    g_last_error = e.what();
    return CPNET_ERR_NUMERIC;
  } catch (const cpnet::IoError& e) {
    g_last_error = e.what();
    return CPNET_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CPNET_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CPNET_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CPNET_ERR_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw cpnet::ValueError(what);
}

std::vector<cpnet::SyntheticScene> scenes_for(const cpnet_model& m, const char* data_dir) {
  if (data_dir == nullptr) return cpnet::validation_scenes(m.cfg);
  cpnet::Dataset ds = cpnet::read_dataset(data_dir);
  if (ds.num_classes != m.cfg.num_classes) {
    throw cpnet::ValueError("dataset has " + std::to_string(ds.num_classes) + " classes, model expects " +
                            std::to_string(m.cfg.num_classes));
  }
  return std::move(ds.scenes);
}

}  // namespace

extern "C" {

const char* cpnet_last_error(void) { return g_last_error.c_str(); }

const char* cpnet_status_name(cpnet_status status) {
  switch (status) {
    case CPNET_OK:
      return "ok";
    case CPNET_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case CPNET_ERR_NUMERIC:
      return "numeric failure";
    case CPNET_ERR_IO:
      return "i/o error";
    case CPNET_ERR_DIMENSION:
      return "dimension mismatch";
    case CPNET_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

void cpnet_set_threads(int threads) { cpnet::set_max_threads(threads); }

cpnet_status cpnet_config_create(cpnet_config** out) {
  return guarded([&] {
    require(out != nullptr, "cpnet_config_create: out is NULL");
    *out = new cpnet_config{};
  });
}

cpnet_status cpnet_config_load(const char* path, cpnet_config** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "cpnet_config_load: NULL argument");
    auto c = std::make_unique<cpnet_config>();
    c->cfg = cpnet::load_config(path);
    c->cfg.validate();
    *out = c.release();
  });
}

cpnet_status cpnet_config_set(cpnet_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    require(cfg != nullptr && key != nullptr && value != nullptr, "cpnet_config_set: NULL argument");
    cpnet::config_set(cfg->cfg, key, value);
  });
}

cpnet_status cpnet_config_get(const cpnet_config* cfg, const char* key, char* buf, size_t buf_size, size_t* needed) {
  return guarded([&] {
    require(cfg != nullptr && key != nullptr, "cpnet_config_get: NULL argument");
    const std::string v = cpnet::config_get(cfg->cfg, key);
    if (needed != nullptr) *needed = v.size() + 1;
    if (buf != nullptr && buf_size > v.size()) std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

cpnet_status cpnet_config_save(const cpnet_config* cfg, const char* path) {
  return guarded([&] {
    require(cfg != nullptr && path != nullptr, "cpnet_config_save: NULL argument");
    cpnet::save_config(path, cfg->cfg);
  });
}

void cpnet_config_destroy(cpnet_config* cfg) { delete cfg; }

cpnet_status cpnet_generate_dataset(const cpnet_config* cfg, const char* out_dir) {
  return guarded([&] {
    require(cfg != nullptr && out_dir != nullptr, "cpnet_generate_dataset: NULL argument");
    cfg->cfg.validate();
    const std::vector<cpnet::SyntheticScene> scenes = cpnet::validation_scenes(cfg->cfg);
    cpnet::write_dataset(out_dir, scenes, cfg->cfg.num_classes);
  });
}

cpnet_status cpnet_train(const cpnet_config* cfg, const char* out_dir, cpnet_step_fn on_step, void* user,
                         cpnet_model** model_out) {
  return guarded([&] {
    require(cfg != nullptr && out_dir != nullptr, "cpnet_train: NULL argument");
    cpnet::StepCallback cb;
    if (on_step != nullptr) {
      cb = [on_step, user](const cpnet::StepLog& l) {
        const cpnet_step_log c{l.step, l.lr, l.terms.seg, l.terms.aux, l.terms.unary, l.terms.global, l.terms.total};
        on_step(&c, user);
      };
    }
    cpnet::TrainResult r = cpnet::train(cfg->cfg, out_dir, cb);
    if (model_out != nullptr) {
      auto m = std::make_unique<cpnet_model>();
      m->cfg = cfg->cfg;
      m->step = cfg->cfg.total_iterations;
      m->rng_state = r.rng_state;
      m->net = std::move(r.model);
      *model_out = m.release();
    }
  });
}

cpnet_status cpnet_model_load(const char* checkpoint_dir, cpnet_model** out) {
  return guarded([&] {
    require(checkpoint_dir != nullptr && out != nullptr, "cpnet_model_load: NULL argument");
    cpnet::Checkpoint ck = cpnet::load_checkpoint(checkpoint_dir);
    auto m = std::make_unique<cpnet_model>();
    m->cfg = ck.config;
    m->step = ck.step;
    m->rng_state = ck.rng_state;
    m->net = std::move(ck.model);
    *out = m.release();
  });
}

cpnet_status cpnet_model_save(const cpnet_model* model, const char* checkpoint_dir) {
  return guarded([&] {
    require(model != nullptr && checkpoint_dir != nullptr, "cpnet_model_save: NULL argument");
    cpnet::save_checkpoint(checkpoint_dir, model->cfg, *model->net, model->step, model->rng_state);
  });
}

void cpnet_model_destroy(cpnet_model* model) { delete model; }

cpnet_status cpnet_evaluate(cpnet_model* model, const char* data_dir, const double* scales, size_t n_scales, int flip,
                            cpnet_metrics* out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "cpnet_evaluate: NULL argument");
    require(scales != nullptr || n_scales == 0, "cpnet_evaluate: scales is NULL but n_scales > 0");
    const std::vector<cpnet::SyntheticScene> scenes = scenes_for(*model, data_dir);
    const std::vector<double> s = n_scales > 0 ? std::vector<double>(scales, scales + n_scales) : model->cfg.eval_scales;
    const cpnet::EvalMetrics m = cpnet::evaluate(*model->net, scenes, s, flip != 0);
    *out = cpnet_metrics{m.pix_acc, m.mean_iou, static_cast<int64_t>(scenes.size()), m.confusion.total()};
  });
}

cpnet_status cpnet_dump_prior(cpnet_model* model, int64_t scene_id, const char* data_dir, const char* out_dir,
                              cpnet_prior_stats* stats) {
  return guarded([&] {
    require(model != nullptr && out_dir != nullptr, "cpnet_dump_prior: NULL argument");
    require(scene_id >= 0, "cpnet_dump_prior: scene id must be >= 0");
    cpnet::SyntheticScene scene;
    if (data_dir != nullptr) {
      std::vector<cpnet::SyntheticScene> scenes = scenes_for(*model, data_dir);
      if (scene_id >= static_cast<int64_t>(scenes.size())) {
        throw cpnet::ValueError("scene " + std::to_string(scene_id) + " not in dataset of " +
                                std::to_string(scenes.size()) + " scenes");
      }
      scene = std::move(scenes[static_cast<std::size_t>(scene_id)]);
    } else {
      scene = cpnet::gen_synthetic_scene(cpnet::derive_seed(model->cfg.val_seed, static_cast<uint64_t>(scene_id)),
                                         model->cfg.scene());
    }
    const cpnet::PriorAgreement a = cpnet::dump_prior(*model->net, scene, out_dir);
    if (stats != nullptr) *stats = cpnet_prior_stats{a.valid_entries, a.agreeing, a.fraction()};
  });
}

size_t cpnet_grad_check_op_count(void) { return cpnet::grad_check_op_names().size(); }

const char* cpnet_grad_check_op_name(size_t index) {
  static const std::vector<std::string> names = cpnet::grad_check_op_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

cpnet_status cpnet_grad_check(const char* op, cpnet_grad_fn on_report, void* user, int* all_passed) {
  return guarded([&] {
    std::vector<cpnet::GradCheckCase> cases;
    if (op == nullptr) {
      for (const std::string& n : cpnet::grad_check_op_names()) cases.push_back(cpnet::make_grad_check_case(n));
    } else if (std::strcmp(op, "full_model") == 0) {
      cases.push_back(cpnet::make_full_model_case());
    } else {
      cases.push_back(cpnet::make_grad_check_case(op));
    }
    bool ok = true;
    for (cpnet::GradCheckCase& c : cases) {
      const cpnet::GradCheckReport r = cpnet::run_grad_check(c);
      ok = ok && r.passed;
      if (on_report != nullptr) {
        const cpnet_grad_report rep{r.name.c_str(), r.entries, r.max_rel_error, r.passed ? 1 : 0};
        on_report(&rep, user);
      }
    }
    if (all_passed != nullptr) *all_passed = ok ? 1 : 0;
  });
}

}  // extern "C"
