#include "rrwave/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>

#include "json.hpp"
#include "rrwave/binio.hpp"
#include "rrwave/crc32.hpp"

namespace rrwave {

using nlohmann::json;

void ModelConfig::validate() const {
  require(w == 16 || w == 32 || w == 64, Err::InvalidConfig, "window seconds must be 16, 32 or 64");
  require(sr == 50, Err::InvalidConfig, "sampling rate is fixed at 50 Hz");
  require(input_len() % 5 == 0, Err::InvalidConfig, "input length must be divisible by 5");
  for (int k : multiscale_kernels)
    require(k >= 1 && k <= input_len(), Err::InvalidConfig, "multiscale kernel out of range");
  require(multiscale_kernels[0] < multiscale_kernels[1] &&
              multiscale_kernels[1] < multiscale_kernels[2],
          Err::InvalidConfig, "multiscale kernels must be strictly increasing");
  for (int f : residual_filters)
    require(f >= 1, Err::InvalidConfig, "residual filter count must be positive");
  require(residual_kernel >= 1, Err::InvalidConfig, "residual kernel must be >= 1");
  require(head_dims[0] >= 1 && head_dims[1] >= 1 && head_dims[2] == 1, Err::InvalidConfig,
          "head must end in a single output");
  require(plain_kernel >= 1 && plain_stride >= 1, Err::InvalidConfig, "bad plain stem");
}

int64_t ModelConfig::channels_after_block(int i) const {
  int64_t c = trunk_in_channels();
  for (int j = 0; j < i; ++j) c += 2 * residual_filters[static_cast<size_t>(j)];
  return c;
}

std::string ModelConfig::to_json() const {
  const json j = {{"w", w},
                  {"sr", sr},
                  {"multiscale_kernels", multiscale_kernels},
                  {"residual_filters", residual_filters},
                  {"residual_kernel", residual_kernel},
                  {"plain", plain},
                  {"head_dims", head_dims},
                  {"plain_kernel", plain_kernel},
                  {"plain_stride", plain_stride}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    raise(Err::InvalidConfig, std::string("bad model config JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.w = j.value("w", c.w);
    c.sr = j.value("sr", c.sr);
    if (j.contains("multiscale_kernels")) j.at("multiscale_kernels").get_to(c.multiscale_kernels);
    if (j.contains("residual_filters")) j.at("residual_filters").get_to(c.residual_filters);
    c.residual_kernel = j.value("residual_kernel", c.residual_kernel);
    c.plain = j.value("plain", c.plain);
    if (j.contains("head_dims")) j.at("head_dims").get_to(c.head_dims);
    c.plain_kernel = j.value("plain_kernel", c.plain_kernel);
    c.plain_stride = j.value("plain_stride", c.plain_stride);
  } catch (const json::exception& e) {
    raise(Err::InvalidConfig, std::string("bad model config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

Tensor he_uniform(Shape shape, int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor::uniform(shape, -limit, limit, rng, /*requires_grad=*/true);
}

}  // namespace

Model Model::build(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.config = cfg;
  Rng rng(mix_seed(seed, 0x6d6f64656cULL));

  auto make_bn = [](int64_t c) {
    BnLayer bn;
    bn.gamma = Tensor(Shape(c), 1.0, true);
    bn.beta = Tensor(Shape(c), 0.0, true);
    bn.running_mean = Tensor(Shape(c), 0.0);
    bn.running_var = Tensor(Shape(c), 1.0);
    return bn;
  };

  if (cfg.plain) {
    Branch stem;
    stem.conv.w = he_uniform(Shape(cfg.plain_kernel, 1, 1), cfg.plain_kernel, rng);
    stem.conv.b = Tensor(Shape(1), 0.0, true);
    stem.bn = make_bn(1);
    m.branches_.push_back(std::move(stem));
  } else {
    for (int k : cfg.multiscale_kernels) {
      Branch br;
      br.conv.w = he_uniform(Shape(k, 1, 1), k, rng);
      br.conv.b = Tensor(Shape(1), 0.0, true);
      br.bn = make_bn(1);
      m.branches_.push_back(std::move(br));
    }
  }

  int64_t cin = cfg.trunk_in_channels();
  for (int f : cfg.residual_filters) {
    Block blk;
    const int k = cfg.residual_kernel;
    blk.conv1.w = he_uniform(Shape(k, cin, f), static_cast<int64_t>(k) * cin, rng);
    blk.conv1.b = Tensor(Shape(f), 0.0, true);
    blk.bn = make_bn(f);
    blk.conv2.w = he_uniform(Shape(k, f, f), static_cast<int64_t>(k) * f, rng);
    blk.conv2.b = Tensor(Shape(f), 0.0, true);
    m.blocks_.push_back(std::move(blk));
    cin += 2 * f;
  }

  int64_t feat = cin;
  for (int d : cfg.head_dims) {
    DenseLayer fc;
    fc.w = he_uniform(Shape(feat, d), feat, rng);
    fc.b = Tensor(Shape(d), 0.0, true);
    m.head_.push_back(std::move(fc));
    feat = d;
  }
  return m;
}

Tensor Model::forward(Tape* tape, const Tensor& batch, BnMode mode) {
  return forward_impl(tape, batch, mode, nullptr);
}

Tensor Model::forward_impl(Tape* tape, const Tensor& batch, BnMode mode, Audit* audit) {
  require(batch.shape().rank() == 3 && batch.shape()[2] == 1, Err::ShapeMismatch,
          "input must be (batch, length, 1), got " + batch.shape().str());
  require(batch.shape()[1] == config.input_len(), Err::ShapeMismatch,
          "input length " + std::to_string(batch.shape()[1]) + " != 50*W = " +
              std::to_string(config.input_len()));
  auto note = [&](const std::string& name, const Tensor& t) {
    if (audit) audit->stages.emplace_back(name, t.shape());
  };
  note("input", batch);

  Tensor trunk;
  if (config.plain) {
    auto& stem = branches_[0];
    Tensor h = conv1d(tape, batch, stem.conv.w, stem.conv.b, config.plain_stride, Padding::kSame);
    h = batch_norm(tape, h, stem.bn.gamma, stem.bn.beta, stem.bn.running_mean,
                   stem.bn.running_var, mode);
    trunk = relu(tape, h);
    note("stem", trunk);
  } else {
    std::vector<Tensor> outs;
    for (size_t i = 0; i < branches_.size(); ++i) {
      auto& br = branches_[i];
      Tensor h = conv1d(tape, batch, br.conv.w, br.conv.b, 1, Padding::kSame);
      h = batch_norm(tape, h, br.bn.gamma, br.bn.beta, br.bn.running_mean, br.bn.running_var,
                     mode);
      h = relu(tape, h);
      h = max_pool1d(tape, h, 5, 5);
      note("branch" + std::to_string(i), h);
      outs.push_back(h);
    }
    trunk = concat_channels(tape, outs);
    note("multiscale", trunk);
  }

  for (size_t i = 0; i < blocks_.size(); ++i) {
    auto& blk = blocks_[i];
    Tensor a = conv1d(tape, trunk, blk.conv1.w, blk.conv1.b, 1, Padding::kSame);
    a = batch_norm(tape, a, blk.bn.gamma, blk.bn.beta, blk.bn.running_mean, blk.bn.running_var,
                   mode);
    a = relu(tape, a);
    Tensor b = conv1d(tape, a, blk.conv2.w, blk.conv2.b, 1, Padding::kSame);
    std::vector<Tensor> parts{trunk, a, b};
    trunk = concat_channels(tape, parts);
    note("block" + std::to_string(i + 1), trunk);
  }

  Tensor h = global_avg_pool(tape, trunk);
  note("gap", h);
  for (size_t i = 0; i < head_.size(); ++i) {
    h = relu(tape, h);
    h = dense(tape, h, head_[i].w, head_[i].b);
    note("fc" + std::to_string(i + 1), h);
  }

  for (double v : h.data())
    if (!std::isfinite(v)) raise(Err::NonFiniteActivation, "non-finite model output");
  return h;
}

const Shape& Model::Audit::at(const std::string& name) const {
  for (const auto& [n, s] : stages)
    if (n == name) return s;
  raise(Err::Precondition, "no audit stage named " + name);
}

Model::Audit Model::audit_shapes() {
  Audit audit;
  Tensor zeros(Shape(1, config.input_len(), 1));
  forward_impl(nullptr, zeros, BnMode::kInfer, &audit);
  return audit;
}

std::vector<NamedTensor> Model::named_tensors() {
  std::vector<NamedTensor> out;
  auto add = [&out](const std::string& name, const Tensor& t, bool trainable) {
    out.push_back(NamedTensor{name, t, trainable});
  };
  auto add_bn = [&](const std::string& prefix, const BnLayer& bn) {
    add(prefix + ".gamma", bn.gamma, true);
    add(prefix + ".beta", bn.beta, true);
    add(prefix + ".running_mean", bn.running_mean, false);
    add(prefix + ".running_var", bn.running_var, false);
  };
  if (config.plain) {
    add("stem.conv.w", branches_[0].conv.w, true);
    add("stem.conv.b", branches_[0].conv.b, true);
    add_bn("stem.bn", branches_[0].bn);
  } else {
    for (size_t i = 0; i < branches_.size(); ++i) {
      const std::string p = "ms.b" + std::to_string(i);
      add(p + ".conv.w", branches_[i].conv.w, true);
      add(p + ".conv.b", branches_[i].conv.b, true);
      add_bn(p + ".bn", branches_[i].bn);
    }
  }
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i + 1);
    add(p + ".conv1.w", blocks_[i].conv1.w, true);
    add(p + ".conv1.b", blocks_[i].conv1.b, true);
    add_bn(p + ".bn", blocks_[i].bn);
    add(p + ".conv2.w", blocks_[i].conv2.w, true);
    add(p + ".conv2.b", blocks_[i].conv2.b, true);
  }
  for (size_t i = 0; i < head_.size(); ++i) {
    const std::string p = "head.fc" + std::to_string(i + 1);
    add(p + ".w", head_[i].w, true);
    add(p + ".b", head_[i].b, true);
  }
  return out;
}

std::vector<Tensor> Model::trainable_params() {
  std::vector<Tensor> out;
  for (auto& nt : named_tensors())
    if (nt.trainable) out.push_back(nt.tensor);
  return out;
}

int64_t Model::param_count() {
  int64_t n = 0;
  for (auto& nt : named_tensors())
    if (nt.trainable) n += nt.tensor.numel();
  return n;
}

void Model::reset_bn_stats() {
  auto reset = [](BnLayer& bn) {
    std::fill(bn.running_mean.data().begin(), bn.running_mean.data().end(), 0.0);
    std::fill(bn.running_var.data().begin(), bn.running_var.data().end(), 1.0);
  };
  for (auto& br : branches_) reset(br.bn);
  for (auto& blk : blocks_) reset(blk.bn);
}

Model Model::clone() const {
  Model copy;
  copy.config = config;
  copy.meta = meta;
  auto copy_conv = [](const ConvLayer& c) {
    ConvLayer out;
    out.w = c.w.detached_copy();
    out.w.set_requires_grad(true);
    out.b = c.b.detached_copy();
    out.b.set_requires_grad(true);
    return out;
  };
  auto copy_bn = [](const BnLayer& b) {
    BnLayer out;
    out.gamma = b.gamma.detached_copy();
    out.gamma.set_requires_grad(true);
    out.beta = b.beta.detached_copy();
    out.beta.set_requires_grad(true);
    out.running_mean = b.running_mean.detached_copy();
    out.running_var = b.running_var.detached_copy();
    return out;
  };
  for (const auto& br : branches_) {
    Branch nb;
    nb.conv = copy_conv(br.conv);
    nb.bn = copy_bn(br.bn);
    copy.branches_.push_back(std::move(nb));
  }
  for (const auto& blk : blocks_) {
    Block nb;
    nb.conv1 = copy_conv(blk.conv1);
    nb.bn = copy_bn(blk.bn);
    nb.conv2 = copy_conv(blk.conv2);
    copy.blocks_.push_back(std::move(nb));
  }
  for (const auto& fc : head_) {
    DenseLayer nf;
    nf.w = fc.w.detached_copy();
    nf.w.set_requires_grad(true);
    nf.b = fc.b.detached_copy();
    nf.b.set_requires_grad(true);
    copy.head_.push_back(std::move(nf));
  }
  return copy;
}

std::vector<uint8_t> Model::serialize() const {
  ByteWriter wtr;
  wtr.put_bytes("RRWN", 4);
  wtr.put_u32(kCheckpointVersion);
  const json blob = {{"config", json::parse(config.to_json())},
                     {"meta",
                      {{"epoch", meta.epoch},
                       {"best_val_mse", meta.best_val_mse},
                       {"source", meta.source_tag}}}};
  wtr.put_str(blob.dump(), /*u16_len=*/false);

  auto tensors = const_cast<Model*>(this)->named_tensors();
  wtr.put_u32(static_cast<uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    wtr.put_str(nt.name);
    const Shape& s = nt.tensor.shape();
    wtr.put_u8(static_cast<uint8_t>(s.rank()));
    for (int d = 0; d < s.rank(); ++d) wtr.put_u32(static_cast<uint32_t>(s[d]));
    for (double v : nt.tensor.data()) wtr.put_f32(static_cast<float>(v));
  }
  wtr.put_u32(Crc32::of(wtr.bytes().data(), wtr.size()));
  return std::move(wtr.bytes());
}

Model Model::deserialize(const std::vector<uint8_t>& bytes) {
  require(bytes.size() >= 8, Err::BadMagic, "checkpoint too short");
  require(std::memcmp(bytes.data(), "RRWN", 4) == 0, Err::BadMagic, "not a checkpoint file");
  require(bytes.size() >= 12, Err::ChecksumMismatch, "checkpoint truncated");
  const size_t body = bytes.size() - 4;
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[body + i]) << (8 * i);
  require(Crc32::of(bytes.data(), body) == stored, Err::ChecksumMismatch, "checkpoint CRC mismatch");

  ByteReader rdr(bytes.data(), body, Err::ChecksumMismatch);
  char magic[4];
  rdr.get_bytes(magic, 4);
  const uint32_t version = rdr.get_u32();
  require(version == kCheckpointVersion, Err::VersionUnsupported,
          "checkpoint version " + std::to_string(version));
  json blob;
  try {
    blob = json::parse(rdr.get_str(false));
  } catch (const json::exception& e) {
    raise(Err::ChecksumMismatch, std::string("bad checkpoint header: ") + e.what());
  }
  ModelConfig cfg = ModelConfig::from_json(blob.at("config").dump());
  Model m = Model::build(cfg, /*seed=*/0);
  if (blob.contains("meta")) {
    m.meta.epoch = blob["meta"].value("epoch", int64_t{0});
    m.meta.best_val_mse = blob["meta"].value("best_val_mse", -1.0);
    m.meta.source_tag = blob["meta"].value("source", "");
  }

  const uint32_t count = rdr.get_u32();
  std::map<std::string, Tensor> by_name;
  for (auto& nt : m.named_tensors()) by_name.emplace(nt.name, nt.tensor);
  require(count == by_name.size(), Err::ConfigMismatch,
          "checkpoint holds " + std::to_string(count) + " tensors, config expects " +
              std::to_string(by_name.size()));
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = rdr.get_str();
    auto it = by_name.find(name);
    require(it != by_name.end(), Err::ConfigMismatch, "unexpected tensor " + name);
    const int rank = rdr.get_u8();
    require(rank >= 1 && rank <= 3, Err::ConfigMismatch, "bad rank for " + name);
    int64_t dims[3] = {1, 1, 1};
    for (int d = 0; d < rank; ++d) dims[d] = rdr.get_u32();
    Shape s = rank == 1 ? Shape(dims[0]) : rank == 2 ? Shape(dims[0], dims[1])
                                                     : Shape(dims[0], dims[1], dims[2]);
    require(s == it->second.shape(), Err::ConfigMismatch,
            name + " shape " + s.str() + " != expected " + it->second.shape().str());
    auto dst = it->second.data();
    for (int64_t j = 0; j < s.numel(); ++j) dst[static_cast<size_t>(j)] = rdr.get_f32();
  }
  return m;
}

void Model::save(const std::string& path) const { write_file_atomic(path, serialize()); }

Model Model::load(const std::string& path) { return deserialize(read_file_bytes(path)); }

}  // namespace rrwave
