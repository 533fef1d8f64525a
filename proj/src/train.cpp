#include "l2g/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <ostream>
#include <thread>

namespace l2g {

Optimizer::Optimizer(OptimizerConfig config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
  if (!(config_.lr >= 0.0)) throw std::invalid_argument("optimizer: lr must be >= 0");
  if (!(config_.momentum >= 0.0 && config_.momentum < 1.0)) {
    throw std::invalid_argument("optimizer: momentum must be in [0, 1)");
  }
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    if (config_.kind == OptimizerKind::kAdam) v_.emplace_back(p->value.shape());
  }
}

void Optimizer::step() {
  ++steps_;
  double scale = 1.0;
  if (config_.clip_norm > 0.0) {
    double sq = 0.0;
    for (Parameter* p : params_)
      for (double g : p->grad.data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) scale = config_.clip_norm / norm;
  }
  const double lr = config_.lr;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad.shape() != p.value.shape()) continue;
    Tensor& m = m_[k];
    if (config_.kind == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        m[i] = config_.momentum * m[i] + scale * p.grad[i];
        p.value[i] -= lr * m[i];
      }
    } else {
      Tensor& v = v_[k];
      const double t = static_cast<double>(steps_);
      const double c1 = 1.0 - std::pow(config_.beta1, t), c2 = 1.0 - std::pow(config_.beta2, t);
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = scale * p.grad[i];
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
        p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      }
    }
  }
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("L2G_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<std::size_t>(v);
  }
  return 1;
}

namespace {

std::size_t resolve_threads(std::size_t requested) {
  return requested > 0 ? requested : default_thread_count();
}

// Runs fn(i) for i in [0, count) over up to `threads` workers. Each index is
// handled independently, so the outcome does not depend on the schedule.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::min(threads, count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += threads) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

SampleGradient sample_gradient(SegModel& model, const SegSample& sample) {
  Graph g;
  const ForwardResult fr = model.forward(g, sample.image);
  const Var loss = seg_loss(fr.logits, sample.labels, fr.quant_loss, model.config().loss_mode);
  g.backward(loss, false);
  SampleGradient out;
  out.loss = loss.value().item();
  for (Parameter* p : model.parameters()) out.grads.push_back(g.grad(g.parameter(*p)));
  return out;
}

std::vector<LabelMap> predict_dataset(SegModel& model, const SegDataset& ds, std::size_t threads) {
  std::vector<LabelMap> out(ds.size());
  parallel_for(ds.size(), resolve_threads(threads),
               [&](std::size_t i) { out[i] = predict(model, ds.samples[i].image); });
  return out;
}

MetricReport evaluate_model(SegModel& model, const SegDataset& ds, double pct, std::size_t threads) {
  const ModelConfig& c = model.config();
  if (ds.height != c.height || ds.width != c.width || ds.channels != c.channels ||
      ds.classes != c.classes) {
    throw std::invalid_argument("evaluate: dataset " + std::to_string(ds.channels) + "x" +
                                std::to_string(ds.height) + "x" + std::to_string(ds.width) + " with " +
                                std::to_string(ds.classes) + " classes does not match the model");
  }
  std::vector<LabelMap> truth;
  for (const SegSample& s : ds.samples) truth.push_back(s.labels);
  return evaluate_maps(predict_dataset(model, ds, threads), truth, ds.classes, ds.height, ds.width, pct);
}

void write_log_header(std::ostream& out) { out << "epoch,train_loss,val_dsc_mean,val_hd_mean,wall_seconds\n"; }

void write_log_row(std::ostream& out, const EpochLog& r) {
  out << r.epoch << ',' << std::setprecision(10) << r.train_loss << ',' << r.val_dsc << ','
      << r.val_hd << ',' << std::setprecision(4) << r.wall_seconds << '\n';
}

std::vector<EpochLog> train(SegModel& model, Optimizer& optimizer, const SegDataset& train_set,
                            const SegDataset* val_set, const TrainOptions& options, Rng& rng,
                            int start_epoch) {
  if (train_set.size() == 0) throw std::invalid_argument("train: empty training set");
  if (options.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (options.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  const ModelConfig& c = model.config();
  if (train_set.height != c.height || train_set.width != c.width ||
      train_set.channels != c.channels || train_set.classes != c.classes) {
    throw std::invalid_argument("train: dataset shape does not match the model config");
  }
  const std::size_t threads = resolve_threads(options.threads);
  std::vector<Parameter*> params = model.parameters();

  if (start_epoch == 0 && options.warm_start_samples > 0) {
    std::vector<Tensor> images;
    for (std::size_t i = 0; i < std::min(options.warm_start_samples, train_set.size()); ++i)
      images.push_back(train_set.samples[i].image);
    model.warm_start(images, rng);
  }

  std::vector<EpochLog> logs;
  std::vector<std::size_t> order(train_set.size());
  for (int e = 1; e <= options.epochs; ++e) {
    const int epoch = start_epoch + e;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size, ++step) {
      const std::size_t count = std::min(options.batch_size, order.size() - start);
      std::vector<SampleGradient> results(count);
      try {
        parallel_for(count, threads, [&](std::size_t i) {
          results[i] = sample_gradient(model, train_set.samples[order[start + i]]);
        });
      } catch (const NumericalError& err) {
        throw DivergenceError(epoch, step, err.what());
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& g = params[k]->grad;
        g = Tensor(params[k]->value.shape());
        for (const SampleGradient& r : results)
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += r.grads[k][i];
        for (double& v : g.data()) v *= inv;
      }
      for (const SampleGradient& r : results) {
        if (!std::isfinite(r.loss)) throw DivergenceError(epoch, step, "loss is not finite");
        loss_sum += r.loss;
      }
      optimizer.step();
      for (Parameter* p : params) {
        if (!p->value.all_finite()) throw DivergenceError(epoch, step, "parameter '" + p->name + "' is not finite");
      }
    }

    EpochLog row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(order.size());
    if (val_set && val_set->size() > 0) {
      const MetricReport r = evaluate_model(model, *val_set, options.percentile, threads);
      row.val_dsc = r.mean_dsc;
      row.val_hd = r.mean_hd;
    } else {
      row.val_dsc = row.val_hd = std::nan("");
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logs.push_back(row);
    if (options.on_epoch) options.on_epoch(row);
  }
  return logs;
}

}  // namespace l2g
