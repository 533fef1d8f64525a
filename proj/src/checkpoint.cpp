#include <array>
#include <bit>
#include <fstream>

#include "l2g/train.hpp"

namespace l2g {

namespace {

constexpr std::array<char, 4> kMagic = {'L', '2', 'G', 'C'};

template <typename T>
void put(std::ostream& out, T v) {
  for (std::size_t b = 0; b < sizeof(T); ++b) out.put(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_block(std::ostream& out, const std::string& name, const Tensor& t) {
  put_string(out, name);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  for (double v : t.data()) put(out, std::bit_cast<std::uint64_t>(v));
}

class Source {
 public:
  Source(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <typename T>
  T get(const char* what) {
    unsigned char bytes[sizeof(T)];
    if (!in_.read(reinterpret_cast<char*>(bytes), sizeof(T))) truncated(what);
    T v = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) v |= static_cast<T>(bytes[b]) << (8 * b);
    return v;
  }

  std::string string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    if (n > (1u << 24)) truncated(what);
    std::string s(n, '\0');
    if (!in_.read(s.data(), n)) truncated(what);
    return s;
  }

  std::pair<std::string, Tensor> block(const char* what) {
    std::string name = string(what);
    const auto rank = get<std::uint32_t>(what);
    if (rank > 8) truncated(what);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(what);
    Tensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<double>(get<std::uint64_t>(what));
    return {std::move(name), std::move(t)};
  }

  [[noreturn]] void truncated(const char* what) const {
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          "load_checkpoint: truncated file " + path_ + " while reading " + what);
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const SegModel& model, const Optimizer& optimizer,
                     const Rng& rng, int epoch) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "save_checkpoint: cannot open " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, model_config_to_json(model.config()));
  put_string(out, optimizer_config_to_json(optimizer.config()));

  const std::vector<const Parameter*> params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) put_block(out, p->name, p->value);

  const auto& m = optimizer.first_moment();
  const auto& v = optimizer.second_moment();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.size() + v.size()));
  for (std::size_t k = 0; k < m.size(); ++k) put_block(out, "opt.m." + params[k]->name, m[k]);
  for (std::size_t k = 0; k < v.size(); ++k) put_block(out, "opt.v." + params[k]->name, v[k]);

  put<std::uint64_t>(out, optimizer.steps());
  for (std::uint64_t s : rng.state()) put<std::uint64_t>(out, s);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(epoch));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "load_checkpoint: cannot open " + path.string());
  Source src(in, path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError(Kind::kBadMagic, "load_checkpoint: bad magic in " + path.string());
  }
  const auto version = src.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch, "load_checkpoint: version mismatch (file " +
                                                      std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.config = model_config_from_json(src.string("model config"));
  c.optimizer = optimizer_config_from_json(src.string("optimizer config"));
  const auto count = src.get<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, value] = src.block("parameter block");
    c.parameters.emplace_back(std::move(name), std::move(value));
  }
  const auto state_count = src.get<std::uint32_t>("optimizer state count");
  for (std::uint32_t i = 0; i < state_count; ++i) {
    auto [name, value] = src.block("optimizer state block");
    (name.rfind("opt.v.", 0) == 0 ? c.second_moment : c.first_moment).push_back(std::move(value));
  }
  c.optimizer_steps = src.get<std::uint64_t>("optimizer steps");
  for (auto& s : c.rng_state) s = src.get<std::uint64_t>("rng state");
  c.epoch = static_cast<int>(src.get<std::uint32_t>("epoch"));
  return c;
}

SegModel restore_model(const Checkpoint& ckpt) {
  Rng scratch(0);
  SegModel model(ckpt.config, scratch);
  std::vector<Parameter*> params = model.parameters();
  if (params.size() != ckpt.parameters.size()) {
    throw CheckpointError(CheckpointError::Kind::kMismatch,
                          "restore_model: checkpoint has " + std::to_string(ckpt.parameters.size()) +
                              " parameters, model expects " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Parameter& saved = ckpt.parameters[k];
    if (saved.name != params[k]->name || saved.value.shape() != params[k]->value.shape()) {
      throw CheckpointError(CheckpointError::Kind::kMismatch,
                            "restore_model: parameter '" + saved.name + "' " + shape_string(saved.value.shape()) +
                                " does not match '" + params[k]->name + "' " +
                                shape_string(params[k]->value.shape()));
    }
    params[k]->value = saved.value;
  }
  return model;
}

Optimizer restore_optimizer(const Checkpoint& ckpt, SegModel& model) {
  Optimizer opt(ckpt.optimizer, model.parameters());
  auto copy = [](std::vector<Tensor>& dst, const std::vector<Tensor>& src, const char* what) {
    if (dst.size() != src.size()) {
      throw CheckpointError(CheckpointError::Kind::kMismatch,
                            std::string("restore_optimizer: ") + what + " state count mismatch");
    }
    for (std::size_t k = 0; k < dst.size(); ++k) {
      if (dst[k].shape() != src[k].shape()) {
        throw CheckpointError(CheckpointError::Kind::kMismatch, std::string("restore_optimizer: ") + what +
                                                                     " state shape mismatch");
      }
      dst[k] = src[k];
    }
  };
  copy(opt.first_moment(), ckpt.first_moment, "first moment");
  copy(opt.second_moment(), ckpt.second_moment, "second moment");
  opt.set_steps(ckpt.optimizer_steps);
  return opt;
}

}  // namespace l2g
