#include "l2g/config.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace l2g {

using json = nlohmann::ordered_json;

namespace {

template <typename E>
using EnumNames = std::map<E, std::string>;

const EnumNames<QuantLossMode> kQuantModes = {{QuantLossMode::kStopGradient, "stop_gradient"},
                                              {QuantLossMode::kLiteral, "literal"}};
const EnumNames<BottleneckMerge> kMerges = {{BottleneckMerge::kResidual, "residual"},
                                            {BottleneckMerge::kReplace, "replace"}};
const EnumNames<SegLossMode> kLossModes = {{SegLossMode::kSoftmaxCE, "softmax_ce"},
                                           {SegLossMode::kSigmoidBCE, "sigmoid_bce"}};
const EnumNames<OptimizerKind> kOptimizers = {{OptimizerKind::kSgd, "sgd"}, {OptimizerKind::kAdam, "adam"}};

// Reads typed fields out of a JSON object and remembers which keys were seen,
// so leftovers can be reported as unknown.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {
    if (!doc_.is_object()) throw ConfigError("config: top level must be a JSON object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError("config: '" + key + "' must be a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out, int) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError("config: '" + key + "' must be a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError("config: '" + key + "' must be an integer");
      out = v->get<int>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError("config: '" + key + "' must be a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError("config: '" + key + "' must be a boolean");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError("config: '" + key + "' must be a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError("config: '" + key + "' must be an array");
      out.clear();
      for (const json& e : *v) {
        if (!e.is_number_unsigned()) throw ConfigError("config: '" + key + "' entries must be non-negative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }
  template <typename E>
  void read_enum(const std::string& key, E& out, const EnumNames<E>& names) {
    std::string s;
    read(key, s);
    if (!doc_.contains(key)) return;
    for (const auto& [value, name] : names) {
      if (name == s) {
        out = value;
        return;
      }
    }
    std::string options;
    for (const auto& [value, name] : names) options += (options.empty() ? "" : ", ") + name;
    throw ConfigError("config: '" + key + "' must be one of " + options + " (got '" + s + "')");
  }

  void reject_unknown() const {
    for (auto it = doc_.begin(); it != doc_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& doc_;
  std::set<std::string> seen_;
};

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
}

void model_to(json& j, const ModelConfig& c) {
  j["height"] = c.height;
  j["width"] = c.width;
  j["channels"] = c.channels;
  j["classes"] = c.classes;
  j["widths"] = c.widths;
  j["groups"] = c.groups;
  j["pre_blocks"] = c.pre_blocks;
  j["post_blocks"] = c.post_blocks;
  j["skip_connections"] = c.skip_connections;
  j["codes"] = c.codes;
  j["code_dim"] = c.code_dim;
  j["beta"] = c.beta;
  j["quant_mode"] = kQuantModes.at(c.quant_mode);
  j["anchors"] = c.anchors;
  j["bins"] = c.bins;
  j["references"] = c.references;
  j["sigma_pos"] = c.sigma_pos;
  j["epsilon"] = c.epsilon;
  j["sinkhorn_iters"] = c.sinkhorn_iters;
  j["merge"] = kMerges.at(c.merge);
  j["loss_mode"] = kLossModes.at(c.loss_mode);
}

void model_from(Reader& r, ModelConfig& c) {
  r.read("height", c.height);
  r.read("width", c.width);
  r.read("channels", c.channels);
  r.read("classes", c.classes);
  r.read("widths", c.widths);
  r.read("groups", c.groups);
  r.read("pre_blocks", c.pre_blocks);
  r.read("post_blocks", c.post_blocks);
  r.read("skip_connections", c.skip_connections);
  r.read("codes", c.codes);
  r.read("code_dim", c.code_dim);
  r.read("beta", c.beta);
  r.read_enum("quant_mode", c.quant_mode, kQuantModes);
  r.read("anchors", c.anchors);
  r.read("bins", c.bins);
  r.read("references", c.references);
  r.read("sigma_pos", c.sigma_pos);
  r.read("epsilon", c.epsilon);
  r.read("sinkhorn_iters", c.sinkhorn_iters);
  r.read_enum("merge", c.merge, kMerges);
  r.read_enum("loss_mode", c.loss_mode, kLossModes);
}

// Optimizer keys as they appear in run configs ("optimizer" names the kind).
void optimizer_to(json& j, const OptimizerConfig& c) {
  j["optimizer"] = kOptimizers.at(c.kind);
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.eps;
  j["clip_norm"] = c.clip_norm;
}

void optimizer_from(Reader& r, OptimizerConfig& c) {
  r.read_enum("optimizer", c.kind, kOptimizers);
  r.read("lr", c.lr);
  r.read("momentum", c.momentum);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("adam_eps", c.eps);
  r.read("clip_norm", c.clip_norm);
}

void validate_optimizer(const OptimizerConfig& c) {
  if (!(c.lr >= 0.0)) throw ConfigError("config: 'lr' must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("config: 'momentum' must be in [0, 1)");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw ConfigError("config: 'beta1' must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw ConfigError("config: 'beta2' must be in [0, 1)");
  if (!(c.eps > 0.0)) throw ConfigError("config: 'adam_eps' must be > 0");
  if (!(c.clip_norm >= 0.0)) throw ConfigError("config: 'clip_norm' must be >= 0");
}

void validate_model(const ModelConfig& c) {
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) {
  json j = json::object();
  model_to(j, config);
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  const json doc = parse(text);
  Reader r(doc);
  ModelConfig c;
  model_from(r, c);
  r.reject_unknown();
  validate_model(c);
  return c;
}

std::string optimizer_config_to_json(const OptimizerConfig& config) {
  json j = json::object();
  optimizer_to(j, config);
  return j.dump(2);
}

OptimizerConfig optimizer_config_from_json(const std::string& text) {
  const json doc = parse(text);
  Reader r(doc);
  OptimizerConfig c;
  optimizer_from(r, c);
  r.reject_unknown();
  validate_optimizer(c);
  return c;
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = batch_size;
  o.threads = deterministic ? 1 : threads;
  o.percentile = percentile;
  o.warm_start_samples = warm_start_samples;
  return o;
}

RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  const json doc = parse(text);
  Reader r(doc);
  RunConfig c;
  model_from(r, c.model);
  optimizer_from(r, c.optimizer);
  r.read("seed", c.seed, 0);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  std::string train, val, out;
  r.read("train_data", train);
  r.read("val_data", val);
  r.read("output_dir", out);
  r.read("deterministic", c.deterministic);
  r.read("percentile", c.percentile);
  r.read("threads", c.threads);
  r.read("warm_start_samples", c.warm_start_samples);
  r.reject_unknown();

  validate_model(c.model);
  validate_optimizer(c.optimizer);
  if (c.epochs < 0) throw ConfigError("config: 'epochs' must be >= 0");
  if (c.batch_size < 1) throw ConfigError("config: 'batch_size' must be >= 1");
  if (!(c.percentile > 0.0 && c.percentile <= 100.0)) throw ConfigError("config: 'percentile' must be in (0, 100]");
  if (train.empty()) throw ConfigError("config: 'train_data' is required");
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  c.train_data = resolve(train);
  if (!val.empty()) c.val_data = resolve(val);
  if (!out.empty()) c.output_dir = resolve(out);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return run_config_from_json(text.str(), path.parent_path());
}

std::string run_config_to_json(const RunConfig& c) {
  json j = json::object();
  model_to(j, c.model);
  optimizer_to(j, c.optimizer);
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["train_data"] = c.train_data.string();
  j["val_data"] = c.val_data.string();
  j["output_dir"] = c.output_dir.string();
  j["deterministic"] = c.deterministic;
  j["percentile"] = c.percentile;
  j["threads"] = c.threads;
  j["warm_start_samples"] = c.warm_start_samples;
  return j.dump(2);
}

}  // namespace l2g
