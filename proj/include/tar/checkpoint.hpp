#pragma once

#include "tar/container.hpp"
#include "tar/optimizer.hpp"

namespace tar {

// Checkpoints are containers holding every parameter (as float32), the Adam
// moment buffers, and a meta block with the step count plus whatever config
// the caller wants echoed back (model/loss config, body model identity).

template <class S>
Container checkpoint_to_container(const ParameterStore<S>& store, const Adam<S>* opt,
                                  nlohmann::json meta) {
  Container c;
  c.kind = "checkpoint";
  meta["step"] = opt ? opt->step_count() : 0;
  c.meta = std::move(meta);
  for (const auto& p : store.all()) {
    NamedBuffer& t = c.add("param." + p->name, p->value.shape());
    for (long i = 0; i < p->value.numel(); ++i) t.data[i] = static_cast<float>(p->value[i]);
  }
  if (opt) {
    auto* mut = const_cast<Adam<S>*>(opt);
    const auto& params = store.all();
    for (size_t pi = 0; pi < params.size(); ++pi) {
      NamedBuffer& m = c.add("adam.m." + params[pi]->name, params[pi]->value.shape());
      NamedBuffer& v = c.add("adam.v." + params[pi]->name, params[pi]->value.shape());
      for (size_t i = 0; i < m.data.size(); ++i) {
        m.data[i] = static_cast<float>(mut->first_moments()[pi][i]);
        v.data[i] = static_cast<float>(mut->second_moments()[pi][i]);
      }
    }
  }
  return c;
}

template <class S>
void save_checkpoint(const std::string& path, const ParameterStore<S>& store, const Adam<S>* opt,
                     nlohmann::json meta) {
  checkpoint_to_container(store, opt, std::move(meta)).save(path);
}

template <class S>
void load_parameters(const Container& c, ParameterStore<S>& store) {
  for (const auto& p : store.all()) {
    const NamedBuffer& t = c.require("param." + p->name);
    if (t.shape != p->value.shape())
      fail_shapes("checkpoint", "shape mismatch for parameter " + p->name, t.shape,
                  p->value.shape());
    for (long i = 0; i < p->value.numel(); ++i) p->value.values()[i] = static_cast<S>(t.data[i]);
  }
}

template <class S>
void load_optimizer(const Container& c, const ParameterStore<S>& store, Adam<S>& opt) {
  const auto& params = store.all();
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const NamedBuffer& m = c.require("adam.m." + params[pi]->name);
    const NamedBuffer& v = c.require("adam.v." + params[pi]->name);
    for (size_t i = 0; i < m.data.size(); ++i) {
      opt.first_moments()[pi][i] = static_cast<S>(m.data[i]);
      opt.second_moments()[pi][i] = static_cast<S>(v.data[i]);
    }
  }
  opt.set_step_count(c.meta.value("step", 0L));
}

}  // namespace tar
