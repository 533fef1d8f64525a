#include "l2g/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>

#include "l2g/mapper.hpp"
#include "l2g/ops.hpp"
#include "l2g/quantizer.hpp"

namespace l2g {

ModelConfig gradcheck_model_config(GradCheckScale scale) {
  ModelConfig c;
  if (scale == GradCheckScale::kTiny) {
    c.height = c.width = 8;
    c.widths = {4, 4};
    c.groups = 2;
    c.pre_blocks = c.post_blocks = 1;
    c.codes = 8;
    c.code_dim = 4;
    c.anchors = 4;
    c.bins = 2;
  } else {
    c.height = c.width = 16;
    c.widths = {4, 8, 8};
    c.codes = 16;
    c.code_dim = 8;
    c.anchors = 8;
    c.bins = 4;
  }
  c.references = 2;
  // Finite differences see through stop-gradients, so the literal loss is checked.
  c.quant_mode = QuantLossMode::kLiteral;
  return c;
}

namespace {

// A term whose value moves with `p` but whose gradient is cut.
Var hidden_term(Graph& g, Parameter& p) {
  return ops::scale(ops::sum(ops::square(ops::stop_gradient(g.parameter(p)))), 0.5);
}

GradCheckGroup check(const std::string& group, const LossBuilder& loss, const std::vector<Parameter*>& params,
                     double tolerance, bool fault, std::size_t max_probes = 0, double step = 1e-5) {
  LossBuilder builder = loss;
  if (fault) {
    Parameter* target = params.front();
    builder = [loss, target](Graph& g) { return ops::add(loss(g), hidden_term(g, *target)); };
  }
  return {group, grad_check(builder, params, {step, tolerance, max_probes})};
}

}  // namespace

std::vector<GradCheckGroup> run_gradcheck_suite(GradCheckScale scale, std::uint64_t seed, bool fault,
                                                double tolerance_mapper, double tolerance_model) {
  const ModelConfig config = gradcheck_model_config(scale);
  Rng rng(seed);
  std::vector<GradCheckGroup> out;

  {
    Parameter z("z_con", rng.normal_tensor({config.tokens(), config.code_dim}));
    Codebook cb = Codebook::uniform_init(config.codes, config.code_dim, rng);
    for (double& v : cb.embeddings.value.data()) v *= 10.0;
    out.push_back(check(
        "quantizer",
        [&](Graph& g) {
          return quantize(g.parameter(z), g.parameter(cb.embeddings), config.beta, QuantLossMode::kLiteral)
              .quant_loss;
        },
        {&z, &cb.embeddings}, tolerance_mapper, fault));
  }

  {
    Parameter z("z_dis", rng.normal_tensor({config.tokens(), config.code_dim}));
    NystromEmbedding emb = NystromEmbedding::from_batch(z.value, config.anchors, rng);
    ReferenceOptions ro;
    ro.bins = config.bins;
    ro.dim = config.anchors;
    ro.count = config.references;
    ro.sigma_pos = config.sigma_pos;
    ro.epsilon = config.epsilon;
    ro.iterations = config.sinkhorn_iters;
    ReferenceSet refs = init_references(ReferenceInit::kRandomUnit, rng, ro);
    const Tensor probe = rng.normal_tensor({config.references * config.bins, config.anchors});
    std::vector<Parameter*> params = {&z, &emb.anchors, &emb.log_bandwidth};
    for (Parameter& r : refs.references) params.push_back(&r);
    out.push_back(check(
        "mapper",
        [&](Graph& g) {
          return ops::dot(embed_multi_ref(g.parameter(z), refs, emb).embedding, g.constant(probe));
        },
        params, tolerance_mapper, fault));
  }

  {
    SegModel model(config, rng);
    Tensor image({config.channels, config.height, config.width});
    for (double& v : image.data()) v = rng.uniform();
    std::vector<std::uint8_t> labels(config.height * config.width);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(config.classes));
    const FrozenQuantization frozen = model.freeze_quantization(image);
    out.push_back(check(
        "model",
        [&](Graph& g) {
          const ForwardResult r = model.forward(g, image, &frozen);
          return seg_loss(r.logits, labels, r.quant_loss, config.loss_mode);
        },
        // A smaller step crosses fewer ReLU kinks in the conv stack.
        model.parameters(), tolerance_model, fault, 8, 1e-6));
  }
  return out;
}

std::vector<BenchRow> bench_mapper(const BenchOptions& o) {
  Rng rng(o.seed);
  std::vector<BenchRow> rows;
  for (std::size_t t : o.bins) {
    for (std::size_t n : o.sizes) {
      if (n == 0 || t == 0) throw std::invalid_argument("bench: sizes and bins must be positive");
      const Tensor psi = rng.normal_tensor({n, o.anchors}, 1.0 / std::sqrt(double(o.anchors)));
      const Tensor ref = rng.normal_tensor({t, o.anchors}, 1.0 / std::sqrt(double(o.anchors)));
      for (double eps : o.epsilons) {
        for (int iters : o.iterations) {
          BenchRow row{n, t, eps, iters, std::numeric_limits<double>::infinity(), 0.0};
          for (int rep = 0; rep < std::max(1, o.repeats); ++rep) {
            const auto t0 = std::chrono::steady_clock::now();
            const TransportPlan plan = ot_align(psi, ref, eps, iters);
            Tensor weighted = position_weights(n, t, o.sigma_pos);
            for (std::size_t k = 0; k < weighted.size(); ++k) weighted[k] *= plan.plan[k];
            Tensor pooled = ops::matmul_values(ops::transpose_values(weighted), psi);
            for (double& v : pooled.data()) v *= std::sqrt(double(t));
            const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            row.seconds = std::min(row.seconds, dt);
            row.residual = plan.marginal_residual;
          }
          rows.push_back(row);
        }
      }
    }
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "n,t,epsilon,iterations,seconds,residual\n" << std::setprecision(10);
  for (const BenchRow& r : rows)
    out << r.n << ',' << r.t << ',' << r.epsilon << ',' << r.iterations << ',' << r.seconds << ',' << r.residual
        << '\n';
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0 && y[i] > 0.0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= double(x.size());
  my /= double(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace l2g
