// SPDX-License-Identifier: Apache-2.0
#include "dance/expert_bank.hpp"

#include <algorithm>
#include <string>

#include "dance/binary_io.hpp"
#include "dance/error.hpp"
#include "dance/parallel.hpp"

namespace dance {
namespace {

constexpr char kMagic[4] = {'D', 'C', 'X', 'B'};
constexpr std::uint16_t kVersion = 1;

void write_spec(ByteWriter& w, const ConvNetSpec& s) {
  for (std::size_t v : {s.depth, s.width, s.in_channels, s.image_height, s.image_width, s.classes})
    w.u32(static_cast<std::uint32_t>(v));
}

ConvNetSpec read_spec(ByteReader& r) {
  ConvNetSpec s;
  s.depth = r.u32();
  s.width = r.u32();
  s.in_channels = r.u32();
  s.image_height = r.u32();
  s.image_width = r.u32();
  s.classes = r.u32();
  try {
    s.validate();
  } catch (const ShapeError& e) {
    r.fail(e.what());
  }
  return s;
}

void write_params(ByteWriter& w, const ParamSet<float>& p) {
  w.u32(static_cast<std::uint32_t>(p.size()));
  for (const auto& e : p) {
    w.str16(e.name);
    write_container(w, e.value, {}, 0);
  }
}

ParamSet<float> read_params(ByteReader& r, const ConvNetSpec& spec) {
  const std::uint32_t count = r.u32();
  if (count > 4096) r.fail("implausible tensor count " + std::to_string(count));
  std::vector<NamedTensor<float>> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str16();
    ContainerBody body = read_container(r);
    if (body.raw_u8 || body.classes != 0) r.fail("parameter " + name + " is not an f32 tensor");
    entries.push_back({std::move(name), std::move(body.images)});
  }
  try {
    return ParamSet<float>(spec, std::move(entries));
  } catch (const ShapeError& e) {
    r.fail(std::string("descriptor mismatch: ") + e.what());
  }
}

void write_meta(ByteWriter& w, const ExpertMeta& m) {
  w.u64(m.seed);
  w.u32(m.epochs);
  w.u32(m.batch_size);
  for (double v : {m.lr, m.momentum, m.weight_decay, m.final_loss, m.train_accuracy,
                   m.test_accuracy})
    w.f64(v);
}

ExpertMeta read_meta(ByteReader& r) {
  ExpertMeta m;
  m.seed = r.u64();
  m.epochs = r.u32();
  m.batch_size = r.u32();
  m.lr = r.f64();
  m.momentum = r.f64();
  m.weight_decay = r.f64();
  m.final_loss = r.f64();
  m.train_accuracy = r.f64();
  m.test_accuracy = r.f64();
  return m;
}

}  // namespace

ConvNetSpec spec_for(const RealDataset& ds, std::size_t depth, std::size_t width) {
  ConvNetSpec s;
  s.depth = depth;
  s.width = width;
  s.in_channels = ds.channels();
  s.image_height = ds.height();
  s.image_width = ds.width();
  s.classes = ds.classes;
  s.validate();
  return s;
}

void check_bank_matches(const ExpertBank& bank, const RealDataset& ds) {
  const ConvNetSpec& s = bank.spec;
  if (s.in_channels != ds.channels() || s.image_height != ds.height() ||
      s.image_width != ds.width() || s.classes != ds.classes)
    throw ShapeError("expert bank built for " + s.describe() + " does not match dataset " +
                     shape_str({ds.classes, ds.channels(), ds.height(), ds.width()}) +
                     " (classes, C, H, W)");
}

ExpertEntry pretrain_expert(const RealDataset& train, const RealDataset* test,
                            const ConvNetSpec& spec, std::uint64_t seed, const TrainOptions& opts) {
  if (train.size() == 0) throw ShapeError("pretrain_expert: empty training set");
  ExpertEntry e;
  e.init = build_convnet(spec, seed);
  e.expert = e.init;
  Rng rng = Rng::substream(seed, "expert.train");
  const TrainStats st = train_classifier(e.expert, train.images,
                                         std::span<const std::uint32_t>(train.labels), opts, rng);
  e.meta.seed = seed;
  e.meta.epochs = static_cast<std::uint32_t>(opts.epochs);
  e.meta.batch_size = static_cast<std::uint32_t>(opts.batch_size);
  e.meta.lr = opts.sgd.lr;
  e.meta.momentum = opts.sgd.momentum;
  e.meta.weight_decay = opts.sgd.weight_decay;
  e.meta.final_loss = st.final_loss;
  e.meta.train_accuracy =
      accuracy(e.expert, train.images, std::span<const std::uint32_t>(train.labels));
  if (test && test->size() > 0)
    e.meta.test_accuracy =
        accuracy(e.expert, test->images, std::span<const std::uint32_t>(test->labels));
  return e;
}

ExpertBank build_bank(const RealDataset& train, const RealDataset* test, const ConvNetSpec& spec,
                      std::size_t count, std::uint64_t seed, const TrainOptions& opts,
                      std::size_t threads) {
  if (count == 0) throw ConfigError("expert bank needs at least one expert");
  ExpertBank bank;
  bank.spec = spec;
  bank.entries.resize(count);
  parallel_for(count, threads, [&](std::size_t i) {
    const std::uint64_t s = Rng::substream(seed, "expert:" + std::to_string(i)).next_u64();
    bank.entries[i] = pretrain_expert(train, test, spec, s, opts);
  });
  return bank;
}

void save_bank(const std::filesystem::path& path, const ExpertBank& bank) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  write_spec(w, bank.spec);
  w.u32(static_cast<std::uint32_t>(bank.size()));
  for (const auto& e : bank.entries) {
    if (!(e.init.spec() == bank.spec) || !(e.expert.spec() == bank.spec))
      throw ShapeError("save_bank: entry descriptor differs from bank descriptor");
    write_meta(w, e.meta);
    write_params(w, e.init);
    write_params(w, e.expert);
  }
  write_file_atomic(path, w.take());
}

ExpertBank load_bank(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  ByteReader r(buf, path.string());
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) r.fail("bad magic, not an expert bank");
  const std::uint16_t version = r.u16();
  if (version != kVersion) r.fail("unsupported bank version " + std::to_string(version));
  ExpertBank bank;
  bank.spec = read_spec(r);
  const std::uint32_t n = r.u32();
  if (n == 0) r.fail("bank has no experts");
  for (std::uint32_t i = 0; i < n; ++i) {
    ExpertEntry e;
    e.meta = read_meta(r);
    e.init = read_params(r, bank.spec);
    e.expert = read_params(r, bank.spec);
    bank.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return bank;
}

ParamSet<float> middle_encoder(const ExpertBank& bank, std::size_t n, double lambda) {
  if (n >= bank.size())
    throw ShapeError("expert index " + std::to_string(n) + " out of range for bank of " +
                     std::to_string(bank.size()));
  return interpolate_params(bank.entries[n].init, bank.entries[n].expert, lambda);
}

MiddleEncoder sample_middle_encoder(const ExpertBank& bank, Rng& rng) {
  if (bank.size() == 0) throw ShapeError("sample_middle_encoder: empty bank");
  MiddleEncoder m;
  m.expert = rng.index(bank.size());
  m.lambda = rng.uniform();
  m.params = middle_encoder(bank, m.expert, m.lambda);
  return m;
}

}  // namespace dance
