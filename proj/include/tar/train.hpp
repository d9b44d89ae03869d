#pragma once

// Losses on the mid-frame targets, the geometric stage weighting, and the
// training loop: seeded batches, Adam, JSON-lines logging, checkpoints.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "tar/checkpoint.hpp"
#include "tar/eval.hpp"
#include "tar/optimizer.hpp"

namespace tar {

struct LossConfig {
  double lambda_2d = 5.0;
  double lambda_3d = 5.0;
  double lambda_smpl = 1.0;
  double gamma = 0.85;
  long stages = 5;  // refinement stages; stage 0 is the initial estimate
};

inline void validate_loss_config(const LossConfig& c) {
  if (!(c.gamma > 0.0) || c.gamma > 1.0)
    fail("loss config", "gamma must be in (0, 1], got " + std::to_string(c.gamma));
  if (c.stages < 1)
    fail("loss config", "stages must be positive, got " + std::to_string(c.stages));
  if (c.lambda_2d < 0.0 || c.lambda_3d < 0.0 || c.lambda_smpl < 0.0)
    fail("loss config", "loss weights must be non-negative");
}

// Weighted sum of squared errors for one estimate against the mid-frame
// targets: 2D markers in bbox space, root-aligned 3D joints, and the body
// parameters themselves. Mean over the batch.
template <class S>
Tensor<S> stage_loss(const Tensor<S>& phi, const WindowBatch<S>& batch,
                     const BodyTensors<S>& body, const LossConfig& cfg) {
  if (phi.rank() != 2 || phi.dim(1) != kPhiDims)
    fail_shapes("stage_loss", "expected Bx85 estimates", phi.shape(), batch.theta.shape());
  long B = phi.dim(0);
  if (batch.theta.dim(0) != B)
    fail_shapes("stage_loss", "estimate and target batches differ", phi.shape(),
                batch.theta.shape());
  BodyForward<S> fwd = body_forward(body, phi_theta(phi), phi_beta(phi));
  Tensor<S> t = recover_translation(guard_camera_scale(phi_cam(phi)), batch.ctx);
  Tensor<S> j2d = to_bbox_space(project_full(fwd.markers, t, batch.ctx), batch.ctx);
  Tensor<S> d2 = sub(j2d, batch.kp2d);
  Tensor<S> loss_2d = sum(mul(d2, d2));

  Tensor<S> pred_rel = sub(fwd.joints, slice(fwd.joints, 1, 0, 1));
  Tensor<S> gt_rel = sub(batch.joints, slice(batch.joints, 1, 0, 1));
  Tensor<S> d3 = sub(pred_rel, gt_rel);
  Tensor<S> loss_3d = sum(mul(d3, d3));

  Tensor<S> dth = sub(slice(phi, 1, 0, kJoints * 3), reshape(batch.theta, Shape{B, kJoints * 3}));
  Tensor<S> dbe = sub(slice(phi, 1, kJoints * 3, kShapeDims), batch.beta);
  Tensor<S> loss_smpl = add(sum(mul(dth, dth)), sum(mul(dbe, dbe)));

  Tensor<S> total = add(add(mul(loss_2d, static_cast<S>(cfg.lambda_2d)),
                            mul(loss_3d, static_cast<S>(cfg.lambda_3d))),
                        mul(loss_smpl, static_cast<S>(cfg.lambda_smpl)));
  return mul(total, S(1) / static_cast<S>(B));
}

// Stage weights gamma^(L-l), built by repeated multiplication from the last
// stage down so the vector is exactly [gamma^L, ..., gamma, 1] in 64-bit.
inline std::vector<double> total_loss_weights(const LossConfig& cfg) {
  std::vector<double> w(static_cast<size_t>(cfg.stages) + 1);
  double acc = 1.0;
  for (long l = cfg.stages; l >= 0; --l) {
    w[static_cast<size_t>(l)] = acc;
    acc *= cfg.gamma;
  }
  return w;
}

template <class S>
Tensor<S> total_loss(const std::vector<Tensor<S>>& stage_losses, const LossConfig& cfg) {
  if (static_cast<long>(stage_losses.size()) != cfg.stages + 1)
    fail("total_loss", "expected " + std::to_string(cfg.stages + 1) + " stage losses, got " +
                           std::to_string(stage_losses.size()));
  std::vector<double> w = total_loss_weights(cfg);
  Tensor<S> acc = mul(stage_losses[0], static_cast<S>(w[0]));
  for (size_t l = 1; l < stage_losses.size(); ++l)
    acc = add(acc, mul(stage_losses[l], static_cast<S>(w[l])));
  return acc;
}

struct TrainConfig {
  long steps = 100;
  long batch_size = 8;
  double learning_rate = 1e-4;
  long stride = 1;          // window stride when enumerating the dataset
  uint64_t seed = 0;
  long log_every = 1;
  long checkpoint_every = 0;  // extra periodic checkpoints; 0 keeps only the final
  long eval_every = 0;        // holdout metric cadence; 0 disables
  long holdout_every = 0;     // every n-th window held out; 0 trains on everything
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.steps < 1) fail("train config", "steps must be positive, got " + std::to_string(c.steps));
  if (c.batch_size < 1)
    fail("train config", "batch size must be positive, got " + std::to_string(c.batch_size));
  if (c.learning_rate <= 0.0)
    fail("train config", "learning rate must be positive");
  if (c.stride < 1)
    fail("train config", "stride must be positive, got " + std::to_string(c.stride));
  if (c.holdout_every == 1)
    fail("train config", "holding out every window leaves nothing to train on");
}

template <class S>
class Trainer {
 public:
  Trainer(const LoadedDataset& data, const NetworkConfig& ncfg, const LossConfig& lcfg,
          const TrainConfig& tcfg)
      : data_(&data), ncfg_(ncfg), lcfg_(lcfg), tcfg_(tcfg) {
    validate_network_config(ncfg);
    validate_loss_config(lcfg);
    validate_train_config(tcfg);
    if (lcfg.stages != ncfg.rrm.iterations)
      fail("train", "loss schedule covers " + std::to_string(lcfg.stages) +
                        " refinement stages but the refiner runs " +
                        std::to_string(ncfg.rrm.iterations));
    body_ = to_tensors<S>(data.model);
    Rng rng(mix_seed(tcfg.seed, 0x6e6574696e697400ull));
    net_ = TarNetwork<S>(params_, ncfg, rng);
    AdamConfig acfg;
    acfg.learning_rate = tcfg.learning_rate;
    opt_ = std::make_unique<Adam<S>>(params_, acfg);
    auto all = list_windows(data.data, ncfg.gte.frames, tcfg.stride);
    for (size_t i = 0; i < all.size(); ++i) {
      if (tcfg.holdout_every > 0 && static_cast<long>(i) % tcfg.holdout_every == 0)
        holdout_.push_back(all[i]);
      else
        train_.push_back(all[i]);
    }
    if (train_.empty()) fail("train", "dataset yields no training windows");
  }

  void set_checkpoint_meta(nlohmann::json meta) { meta_ = std::move(meta); }
  long step_count() const { return opt_->step_count(); }
  const ParameterStore<S>& params() const { return params_; }
  TarNetwork<S>& network() { return net_; }
  const std::vector<WindowRef>& training_windows() const { return train_; }
  const std::vector<WindowRef>& holdout_windows() const { return holdout_; }

  void resume(const std::string& checkpoint_path) {
    Container c = Container::load(checkpoint_path);
    if (c.kind != "checkpoint")
      fail("train", "file " + checkpoint_path + " holds a '" + c.kind + "', not a checkpoint");
    load_parameters(c, params_);
    load_optimizer(c, params_, *opt_);
  }

  // One optimization step on a seeded batch; returns the log record.
  nlohmann::json step() {
    long index = opt_->step_count();
    std::vector<WindowRef> batch_refs = pick_batch(index);
    std::vector<long> ids;
    for (auto& r : batch_refs)
      ids.push_back(r.sequence * 1000000 + r.window.mid);
    nlohmann::json rec;
    try {
      WindowBatch<S> batch = assemble_windows<S>(data_->data, batch_refs);
      Tape<S> tape;
      double total_value = 0.0;
      std::vector<double> stage_values;
      {
        TapeScope<S> scope(tape);
        NetworkOutput<S> out = network_forward(net_, body_, batch.images, batch.ctx);
        std::vector<Tensor<S>> stages;
        stages.push_back(stage_loss(out.phi_init, batch, body_, lcfg_));
        for (const auto& phi : out.estimates)
          stages.push_back(stage_loss(phi, batch, body_, lcfg_));
        Tensor<S> total = total_loss(stages, lcfg_);
        total_value = static_cast<double>(total[0]);
        if (!std::isfinite(total_value))
          fail("train", "loss is not finite");
        for (const auto& s : stages) stage_values.push_back(static_cast<double>(s[0]));
        backward(total, tape);
      }
      opt_->step();
      rec["step"] = opt_->step_count();
      rec["total"] = total_value;
      rec["stages"] = stage_values;
      rec["windows"] = ids;
    } catch (const Error& e) {
      std::string batch_desc;
      for (size_t i = 0; i < batch_refs.size(); ++i)
        batch_desc += (i ? ", " : "") + std::to_string(batch_refs[i].sequence) + ":" +
                      std::to_string(batch_refs[i].window.mid);
      fail("train", "step " + std::to_string(index + 1) + " aborted on batch [" + batch_desc +
                        "]: " + e.what());
    }
    return rec;
  }

  MetricReport holdout_metrics() {
    EvalOptions opt;
    opt.batch_size = tcfg_.batch_size;
    return evaluate_windows(net_, body_, data_->data, holdout_, opt);
  }

  // The full loop: logging, periodic holdout metrics, checkpoints.
  void run(const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::string log_path = out_dir + "/train_log.jsonl";
    std::ofstream log(log_path, opt_->step_count() > 0 ? std::ios::app : std::ios::trunc);
    if (!log) fail("train", "cannot open log file " + log_path);
    while (opt_->step_count() < tcfg_.steps) {
      nlohmann::json rec = step();
      long n = opt_->step_count();
      if (tcfg_.log_every > 0 && (n % tcfg_.log_every == 0 || n == tcfg_.steps))
        log << rec.dump() << "\n" << std::flush;
      if (tcfg_.eval_every > 0 && n % tcfg_.eval_every == 0 && !holdout_.empty()) {
        nlohmann::json ev;
        ev["step"] = n;
        ev["holdout"] = holdout_metrics().to_json();
        log << ev.dump() << "\n" << std::flush;
      }
      if (tcfg_.checkpoint_every > 0 && n % tcfg_.checkpoint_every == 0 && n < tcfg_.steps)
        save(out_dir + "/checkpoint_step" + std::to_string(n) + ".tarbin");
    }
    save(out_dir + "/checkpoint.tarbin");
  }

  void save(const std::string& path) const {
    save_checkpoint(path, params_, opt_.get(), meta_);
  }

 private:
  std::vector<WindowRef> pick_batch(long step_index) {
    if (static_cast<long>(train_.size()) <= tcfg_.batch_size) return train_;
    Rng rng(mix_seed(tcfg_.seed, 0x626174636800ull + static_cast<uint64_t>(step_index)));
    std::vector<WindowRef> out;
    out.reserve(static_cast<size_t>(tcfg_.batch_size));
    for (long i = 0; i < tcfg_.batch_size; ++i)
      out.push_back(train_[rng.index(static_cast<long>(train_.size()))]);
    return out;
  }

  const LoadedDataset* data_;
  NetworkConfig ncfg_;
  LossConfig lcfg_;
  TrainConfig tcfg_;
  BodyTensors<S> body_;
  ParameterStore<S> params_;
  TarNetwork<S> net_;
  std::unique_ptr<Adam<S>> opt_;
  std::vector<WindowRef> train_, holdout_;
  nlohmann::json meta_;
};

}  // namespace tar
