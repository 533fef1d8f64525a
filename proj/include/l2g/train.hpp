#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "l2g/data.hpp"
#include "l2g/metrics.hpp"
#include "l2g/model.hpp"

namespace l2g {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  /// Rescales the averaged gradient when its global L2 norm exceeds this (0 disables).
  double clip_norm = 0.0;
};

/// First-order optimizer over a fixed parameter list. Reads Parameter::grad.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Parameter*> params);

  void step();
  const OptimizerConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  /// Per-parameter state buffers (velocity for SGD; first and second moments for Adam).
  std::vector<Tensor>& first_moment() { return m_; }
  std::vector<Tensor>& second_moment() { return v_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  OptimizerConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

/// Raised when the training loss or any activation stops being finite.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(int epoch, std::size_t step, const std::string& detail)
      : NumericalError("diverged at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step) + ": " + detail),
        epoch(epoch),
        step(step) {}
  int epoch;
  std::size_t step;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_dsc = 0.0;
  double val_hd = 0.0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  int epochs = 20;
  std::size_t batch_size = 8;
  /// Worker threads for per-sample passes; 0 reads L2G_THREADS (default 1).
  std::size_t threads = 0;
  double percentile = 95.0;
  /// Initialise codebook and anchors from this many training images (0 skips).
  std::size_t warm_start_samples = 16;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Worker count from L2G_THREADS, at least 1.
std::size_t default_thread_count();

/// Per-sample loss and gradients for every model parameter, in parameters() order.
struct SampleGradient {
  double loss = 0.0;
  std::vector<Tensor> grads;
};
SampleGradient sample_gradient(SegModel& model, const SegSample& sample);

/// Runs `options.epochs` epochs starting after `start_epoch` completed ones.
/// Gradients are averaged over each minibatch in sample order, so results do
/// not depend on the thread count.
std::vector<EpochLog> train(SegModel& model, Optimizer& optimizer, const SegDataset& train_set,
                            const SegDataset* val_set, const TrainOptions& options, Rng& rng,
                            int start_epoch = 0);

std::vector<LabelMap> predict_dataset(SegModel& model, const SegDataset& ds, std::size_t threads = 1);
MetricReport evaluate_model(SegModel& model, const SegDataset& ds, double percentile = 95.0,
                            std::size_t threads = 1);

void write_log_header(std::ostream& out);
void write_log_row(std::ostream& out, const EpochLog& row);

struct Checkpoint {
  ModelConfig config;
  OptimizerConfig optimizer;
  std::uint64_t optimizer_steps = 0;
  std::vector<Parameter> parameters;  // values in SegModel::parameters() order
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  Rng::State rng_state{};
  int epoch = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kBadMagic, kVersionMismatch, kTruncated, kMismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// "L2GC", u32 version, u32 length + model config JSON, u32 length + optimizer
/// JSON, u32 block count, named parameter blocks (u32 name length, name, u32
/// rank, u64 dims, little-endian f64 values), the same for optimizer state,
/// u64 optimizer steps, 4 x u64 Rng state, u32 epoch.
void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                     const Optimizer& optimizer, const Rng& rng, int epoch);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model and copies parameter values by name.
SegModel restore_model(const Checkpoint& ckpt);
/// Optimizer over `model` carrying the checkpointed state.
Optimizer restore_optimizer(const Checkpoint& ckpt, SegModel& model);

std::string optimizer_config_to_json(const OptimizerConfig& config);
OptimizerConfig optimizer_config_from_json(const std::string& text);

}  // namespace l2g
