// SPDX-License-Identifier: Apache-2.0
#include "dance/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "dance/error.hpp"

namespace dance {
namespace {

constexpr char kMagic[4] = {'D', 'C', 'D', 'S'};
constexpr std::uint16_t kVersion = 1;
constexpr char kStatsTag[4] = {'N', 'S', 'T', 'A'};

void require_nchw(const Tensor<float>& t, const char* what) {
  if (t.rank() != 4) throw ShapeError(std::string(what) + ": images must be NCHW, got " +
                                      shape_str(t.shape()));
}

}  // namespace

NormStats compute_stats(const Tensor<float>& pixels01) {
  require_nchw(pixels01, "compute_stats");
  const std::size_t n = pixels01.dim(0), c = pixels01.dim(1);
  const std::size_t plane = pixels01.dim(2) * pixels01.dim(3);
  NormStats s;
  s.mean.resize(c);
  s.std.resize(c);
  const double count = static_cast<double>(n * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pixels01.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) sum += p[j];
    }
    const double mean = count > 0 ? sum / count : 0.0;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* p = pixels01.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j) sq += (p[j] - mean) * (p[j] - mean);
    }
    double sd = count > 0 ? std::sqrt(sq / count) : 1.0;
    if (!(sd > 1e-12)) sd = 1.0;  // constant channel
    s.mean[ch] = static_cast<float>(mean);
    s.std[ch] = static_cast<float>(sd);
  }
  return s;
}

void standardize(Tensor<float>& images, const NormStats& stats) {
  require_nchw(images, "standardize");
  const std::size_t n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  if (stats.channels() != c)
    throw ShapeError("standardize: stats for " + std::to_string(stats.channels()) +
                     " channels, images have " + std::to_string(c));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = images.data() + (i * c + ch) * plane;
      const double m = stats.mean[ch], sd = stats.std[ch];
      for (std::size_t j = 0; j < plane; ++j) p[j] = static_cast<float>((p[j] - m) / sd);
    }
}

Tensor<float> destandardize(const Tensor<float>& images, const NormStats& stats) {
  require_nchw(images, "destandardize");
  Tensor<float> out = images;
  const std::size_t n = images.dim(0), c = images.dim(1), plane = images.dim(2) * images.dim(3);
  if (stats.channels() != c) throw ShapeError("destandardize: channel count mismatch");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = out.data() + (i * c + ch) * plane;
      for (std::size_t j = 0; j < plane; ++j)
        p[j] = static_cast<float>(static_cast<double>(p[j]) * stats.std[ch] + stats.mean[ch]);
    }
  return out;
}

std::vector<std::vector<std::size_t>> build_class_index(std::span<const std::uint32_t> labels,
                                                        std::size_t classes) {
  std::vector<std::vector<std::size_t>> idx(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes)
      throw ShapeError("label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                       " is not below class count " + std::to_string(classes));
    idx[labels[i]].push_back(i);
  }
  return idx;
}

RealDataset wrap_standardized(Tensor<float> images, std::vector<std::uint32_t> labels,
                              std::size_t classes, NormStats stats) {
  require_nchw(images, "dataset");
  if (images.dim(0) != labels.size())
    throw ShapeError("dataset: " + std::to_string(images.dim(0)) + " images but " +
                     std::to_string(labels.size()) + " labels");
  if (stats.channels() != images.dim(1)) throw ShapeError("dataset: stats channel mismatch");
  RealDataset ds;
  ds.class_index = build_class_index(labels, classes);
  ds.images = std::move(images);
  ds.labels = std::move(labels);
  ds.classes = classes;
  ds.stats = std::move(stats);
  return ds;
}

RealDataset make_dataset(Tensor<float> pixels01, std::vector<std::uint32_t> labels,
                         std::size_t classes, const NormStats* stats) {
  NormStats s = stats ? *stats : compute_stats(pixels01);
  standardize(pixels01, s);
  return wrap_standardized(std::move(pixels01), std::move(labels), classes, std::move(s));
}

// ---------------------------------------------------------------------------

RealDataset load_idx(const std::filesystem::path& images_path,
                     const std::filesystem::path& labels_path, const NormStats* stats) {
  const auto ibuf = read_file(images_path);
  const auto lbuf = read_file(labels_path);
  ByteReader ir(ibuf, images_path.string());
  ByteReader lr(lbuf, labels_path.string());

  const std::uint32_t imagic = ir.u32_be();
  if (imagic != 0x00000803) {
    char hex[16];
    std::snprintf(hex, sizeof hex, "%08x", imagic);
    ir.fail(std::string("bad IDX image magic 0x") + hex);
  }
  const std::uint32_t n = ir.u32_be(), h = ir.u32_be(), w = ir.u32_be();
  if (h == 0 || w == 0) ir.fail("zero image extent");

  const std::uint32_t lmagic = lr.u32_be();
  if (lmagic != 0x00000801) lr.fail("bad IDX label magic");
  const std::uint32_t nl = lr.u32_be();
  if (nl != n)
    throw IoError("IDX count mismatch: " + std::to_string(n) + " images in " +
                  images_path.string() + " but " + std::to_string(nl) + " labels in " +
                  labels_path.string());

  const std::size_t count = std::size_t{n} * h * w;
  if (ir.remaining() < count) ir.fail("truncated pixel data");
  if (lr.remaining() < n) lr.fail("truncated label data");

  Tensor<float> px({n, 1, h, w});
  const std::uint8_t* src = ir.cursor();
  for (std::size_t i = 0; i < count; ++i) px[i] = static_cast<float>(src[i]) / 255.0f;
  std::vector<std::uint32_t> labels(n);
  std::uint32_t kmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = lr.cursor()[i];
    kmax = std::max(kmax, labels[i]);
  }
  return make_dataset(std::move(px), std::move(labels), n ? kmax + 1 : 0, stats);
}

// ---------------------------------------------------------------------------

void write_container(ByteWriter& w, const Tensor<float>& images,
                     std::span<const std::uint32_t> labels, std::size_t classes) {
  if (images.rank() == 0 || images.rank() > 255) throw ShapeError("container: bad rank");
  // K = 0 marks an unlabeled tensor; the label array is then absent.
  if (classes == 0 ? !labels.empty() : images.dim(0) != labels.size())
    throw ShapeError("container: label count mismatch");
  w.bytes(kMagic, 4);
  w.u16(kVersion);
  w.u8(0);  // f32
  w.u8(static_cast<std::uint8_t>(images.rank()));
  for (std::size_t d : images.shape()) {
    if (d > 0xFFFFFFFFu) throw ShapeError("container: extent exceeds u32");
    w.u32(static_cast<std::uint32_t>(d));
  }
  w.u32(static_cast<std::uint32_t>(classes));
  for (std::uint32_t l : labels) w.u32(l);
  w.bytes(images.data(), images.size() * sizeof(float));
}

void write_stats(ByteWriter& w, const NormStats& stats) {
  w.bytes(kStatsTag, 4);
  w.u32(static_cast<std::uint32_t>(stats.channels()));
  for (float m : stats.mean) w.f32(m);
  for (float s : stats.std) w.f32(s);
}

ContainerBody read_container(ByteReader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) r.fail("bad magic, not a DCDS container");
  const std::uint16_t version = r.u16();
  if (version != kVersion) r.fail("unsupported container version " + std::to_string(version));
  const std::uint8_t dtype = r.u8();
  if (dtype > 1) r.fail("unknown dtype code " + std::to_string(dtype));
  const std::uint8_t rank = r.u8();
  if (rank == 0) r.fail("rank 0 container");
  Shape shape(rank);
  for (auto& d : shape) d = r.u32();
  ContainerBody body;
  body.classes = r.u32();
  body.labels.resize(body.classes == 0 ? 0 : shape[0]);
  std::uint32_t kmax = 0;
  for (auto& l : body.labels) {
    l = r.u32();
    kmax = std::max(kmax, l + 1);
  }
  if (kmax > body.classes)
    r.fail("label " + std::to_string(kmax - 1) + " exceeds header class count " +
           std::to_string(body.classes));
  const std::size_t n = shape_numel(shape);
  body.images = Tensor<float>(shape);
  if (dtype == 0) {
    r.bytes(body.images.data(), n * sizeof(float));
  } else {
    body.raw_u8 = true;
    if (r.remaining() < n) r.fail("truncated u8 data");
    for (std::size_t i = 0; i < n; ++i) body.images[i] = static_cast<float>(r.u8()) / 255.0f;
  }
  return body;
}

NormStats read_stats(ByteReader& r, std::size_t channels) {
  char tag[4];
  r.bytes(tag, 4);
  if (!std::equal(tag, tag + 4, kStatsTag)) r.fail("bad statistics tag");
  const std::uint32_t c = r.u32();
  if (c != channels)
    r.fail("statistics for " + std::to_string(c) + " channels, data has " +
           std::to_string(channels));
  NormStats s;
  s.mean.resize(c);
  s.std.resize(c);
  for (auto& m : s.mean) m = r.f32();
  for (auto& v : s.std) v = r.f32();
  return s;
}

void save_container(const std::filesystem::path& path, const RealDataset& ds) {
  ByteWriter w;
  write_container(w, ds.images, ds.labels, ds.classes);
  write_stats(w, ds.stats);
  write_file_atomic(path, w.take());
}

RealDataset load_container(const std::filesystem::path& path, const NormStats* stats) {
  const auto buf = read_file(path);
  ByteReader r(buf, path.string());
  ContainerBody body = read_container(r);
  require_nchw(body.images, "load_container");
  if (!body.raw_u8 && r.remaining() > 0) {
    NormStats own = read_stats(r, body.images.dim(1));
    if (r.remaining() != 0) r.fail("trailing bytes after statistics");
    return wrap_standardized(std::move(body.images), std::move(body.labels), body.classes,
                             std::move(own));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after data");
  return make_dataset(std::move(body.images), std::move(body.labels), body.classes, stats);
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> sample_class_indices(const RealDataset& ds, std::size_t c,
                                              std::size_t batch, Rng& rng) {
  if (c >= ds.class_index.size()) throw ShapeError("sample: class " + std::to_string(c) + " out of range");
  const auto& pool = ds.class_index[c];
  if (pool.empty()) throw ShapeError("sample: class " + std::to_string(c) + " has no examples");
  std::vector<std::size_t> out(batch);
  if (batch <= pool.size()) {
    // Partial Fisher-Yates over a copy of the pool.
    std::vector<std::size_t> p = pool;
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t j = i + rng.index(p.size() - i);
      std::swap(p[i], p[j]);
      out[i] = p[i];
    }
  } else {
    for (auto& o : out) o = pool[rng.index(pool.size())];
  }
  return out;
}

Tensor<float> gather_rows(const Tensor<float>& images, std::span<const std::size_t> idx) {
  Shape shape = images.shape();
  const std::size_t row = shape[0] ? images.size() / shape[0] : 0;
  shape[0] = idx.size();
  Tensor<float> out(shape);
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(images.data() + idx[i] * row, row, out.data() + i * row);
  return out;
}

Tensor<float> sample_class_batch(const RealDataset& ds, std::size_t c, std::size_t batch,
                                 Rng& rng) {
  const auto idx = sample_class_indices(ds, c, batch, rng);
  return gather_rows(ds.images, idx);
}

Tensor<float> class_images(const RealDataset& ds, std::size_t c) {
  return gather_rows(ds.images, ds.class_index.at(c));
}

// ---------------------------------------------------------------------------

namespace {

struct Blob {
  double y, x, sigma;
  std::vector<double> amp;  // per channel
};

Blob random_blob(Rng& rng, const GaussianPatchOptions& o, double amp_lo, double amp_hi,
                 double margin) {
  const double r = static_cast<double>(o.resolution);
  Blob b;
  b.y = rng.uniform(margin, r - 1.0 - margin);
  b.x = rng.uniform(margin, r - 1.0 - margin);
  b.sigma = rng.uniform(0.08, 0.18) * r;
  b.amp.resize(o.channels);
  for (auto& a : b.amp) {
    a = rng.uniform(amp_lo, amp_hi);
    if (rng.uniform() < 0.5) a = -a;
  }
  return b;
}

void splat(const Blob& b, double dy, double dx, double gain, const GaussianPatchOptions& o,
           std::vector<double>& canvas) {
  const std::size_t r = o.resolution;
  const double inv = 1.0 / (2.0 * b.sigma * b.sigma);
  for (std::size_t c = 0; c < o.channels; ++c)
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) {
        const double ey = static_cast<double>(y) - (b.y + dy);
        const double ex = static_cast<double>(x) - (b.x + dx);
        canvas[(c * r + y) * r + x] += gain * b.amp[c] * std::exp(-(ey * ey + ex * ex) * inv);
      }
}

void render_split(const std::vector<std::vector<Blob>>& templates, std::size_t per_class,
                  const GaussianPatchOptions& o, Rng& rng, Tensor<float>& px,
                  std::vector<std::uint32_t>& labels) {
  const std::size_t r = o.resolution, plane = o.channels * r * r;
  const std::size_t n = templates.size() * per_class;
  px = Tensor<float>({n, o.channels, r, r});
  labels.resize(n);
  std::vector<double> canvas(plane);
  // Interleave classes so any prefix is roughly balanced.
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % templates.size();
    labels[i] = static_cast<std::uint32_t>(c);
    std::fill(canvas.begin(), canvas.end(), 0.5);
    const double dy = rng.uniform(-o.max_shift, o.max_shift);
    const double dx = rng.uniform(-o.max_shift, o.max_shift);
    const double gain = rng.uniform(0.7, 1.3);
    for (const Blob& b : templates[c]) splat(b, dy, dx, gain * 0.5, o, canvas);
    if (o.distractor > 0.0) splat(random_blob(rng, o, 0.0, o.distractor, 0.0), 0, 0, 0.5, o, canvas);
    float* dst = px.data() + i * plane;
    for (std::size_t j = 0; j < plane; ++j) {
      const double v = canvas[j] + o.noise * rng.normal();
      dst[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
}

}  // namespace

DatasetSplit make_gaussian_patches(const GaussianPatchOptions& o) {
  if (o.classes < 2) throw ConfigError("gaussian patches: need at least 2 classes");
  if (o.resolution < 4 || o.channels == 0 || o.blobs == 0)
    throw ConfigError("gaussian patches: resolution >= 4, channels >= 1 and blobs >= 1 required");
  Rng trng = Rng::substream(o.seed, "patches.templates");
  std::vector<std::vector<Blob>> templates(o.classes);
  const double margin = 0.2 * static_cast<double>(o.resolution);
  for (auto& t : templates)
    for (std::size_t b = 0; b < o.blobs; ++b) t.push_back(random_blob(trng, o, 0.5, 1.0, margin));

  Tensor<float> train_px, test_px;
  std::vector<std::uint32_t> train_l, test_l;
  Rng train_rng = Rng::substream(o.seed, "patches.train");
  Rng test_rng = Rng::substream(o.seed, "patches.test");
  render_split(templates, o.train_per_class, o, train_rng, train_px, train_l);
  render_split(templates, o.test_per_class, o, test_rng, test_px, test_l);

  DatasetSplit split;
  split.train = make_dataset(std::move(train_px), std::move(train_l), o.classes);
  split.test = make_dataset(std::move(test_px), std::move(test_l), o.classes, &split.train.stats);
  return split;
}

}  // namespace dance
