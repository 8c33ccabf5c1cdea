// SPDX-License-Identifier: Apache-2.0
#include "dance/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dance/binary_io.hpp"
#include "dance/error.hpp"
#include "dance/ops.hpp"

namespace dance {

std::vector<std::uint32_t> balanced_labels(std::size_t classes, std::size_t ipc) {
  std::vector<std::uint32_t> labels(classes * ipc);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint32_t>(i / ipc);
  return labels;
}

void validate_synthetic(const SyntheticSet& s) {
  if (s.canvases.rank() != 4) throw ShapeError("synthetic set: canvases must be NCHW");
  if (s.ipc == 0 || s.classes == 0 || s.factor == 0)
    throw ShapeError("synthetic set: classes, IPC and factor must be >= 1");
  if (s.canvases.dim(0) != s.classes * s.ipc || s.labels != balanced_labels(s.classes, s.ipc))
    throw ShapeError("synthetic set: expected " + std::to_string(s.ipc) +
                     " class-sorted canvases for each of " + std::to_string(s.classes) +
                     " classes");
  if (s.height() % s.factor != 0 || s.width() % s.factor != 0)
    throw ShapeError("synthetic set: " + std::to_string(s.height()) + "x" +
                     std::to_string(s.width()) + " canvas not divisible by factor " +
                     std::to_string(s.factor));
  if (s.stats.channels() != s.channels())
    throw ShapeError("synthetic set: statistics channel mismatch");
}

SyntheticSet init_synthetic(const RealDataset& ds, std::size_t ipc, std::size_t factor,
                            std::uint64_t seed) {
  if (ipc == 0 || factor == 0) throw ConfigError("init_synthetic: ipc and factor must be >= 1");
  const std::size_t c = ds.channels(), h = ds.height(), w = ds.width();
  if (h % factor != 0 || w % factor != 0)
    throw ConfigError("init_synthetic: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by factor " + std::to_string(factor));
  SyntheticSet s;
  s.classes = ds.classes;
  s.ipc = ipc;
  s.factor = factor;
  s.stats = ds.stats;
  s.labels = balanced_labels(ds.classes, ipc);
  s.canvases = Tensor<float>({ds.classes * ipc, c, h, w});

  const std::size_t ch = h / factor, cw = w / factor;
  const float inv = 1.0f / static_cast<float>(factor * factor);
  for (std::size_t k = 0; k < ds.classes; ++k) {
    const auto& pool = ds.class_index[k];
    if (pool.empty()) throw ShapeError("init_synthetic: class " + std::to_string(k) + " is empty");
    Rng rng = Rng::substream(seed, "init:" + std::to_string(k));
    std::vector<std::size_t> order;
    std::size_t next = 0;
    for (std::size_t slot = 0; slot < ipc * factor * factor; ++slot) {
      if (next == order.size()) {
        order = pool;
        rng.shuffle(order.begin(), order.end());
        next = 0;
      }
      const std::size_t src = order[next++];
      const std::size_t canvas = k * ipc + slot / (factor * factor);
      const std::size_t cell = slot % (factor * factor);
      const std::size_t gy = cell / factor, gx = cell % factor;
      for (std::size_t p = 0; p < c; ++p)
        for (std::size_t y = 0; y < ch; ++y)
          for (std::size_t x = 0; x < cw; ++x) {
            float acc = 0.0f;
            for (std::size_t dy = 0; dy < factor; ++dy)
              for (std::size_t dx = 0; dx < factor; ++dx)
                acc += ds.images.at(src, p, y * factor + dy, x * factor + dx);
            s.canvases.at(canvas, p, gy * ch + y, gx * cw + x) = acc * inv;
          }
    }
  }
  return s;
}

template <class T>
Var<T> unfactor(const Var<T>& canvases, std::size_t factor) {
  if (factor == 1) return canvases;
  const std::size_t h = canvases.dim(2), w = canvases.dim(3);
  return bilinear_upsample(crop_cells(canvases, factor), h, w);
}

std::vector<std::uint32_t> unfactored_labels(std::span<const std::uint32_t> labels,
                                             std::size_t factor) {
  std::vector<std::uint32_t> out;
  out.reserve(labels.size() * factor * factor);
  for (std::uint32_t l : labels) out.insert(out.end(), factor * factor, l);
  return out;
}

std::pair<Tensor<float>, std::vector<std::uint32_t>> unfactor_all(const SyntheticSet& syn) {
  Tape<float> tape;
  Var<float> x = unfactor(tape.constant(syn.canvases), syn.factor);
  return {x.value(), unfactored_labels(syn.labels, syn.factor)};
}

RealDataset synthetic_as_dataset(const SyntheticSet& syn) {
  auto [images, labels] = unfactor_all(syn);
  return wrap_standardized(std::move(images), std::move(labels), syn.classes, syn.stats);
}

void save_synthetic(const std::filesystem::path& path, const SyntheticSet& syn) {
  validate_synthetic(syn);
  if (syn.factor > 255) throw ShapeError("save_synthetic: factor exceeds u8");
  ByteWriter w;
  write_container(w, syn.canvases, syn.labels, syn.classes);
  w.u8(static_cast<std::uint8_t>(syn.factor));
  w.u32(static_cast<std::uint32_t>(syn.ipc));
  write_stats(w, syn.stats);
  write_file_atomic(path, w.take());
}

SyntheticSet load_synthetic(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  ByteReader r(buf, path.string());
  ContainerBody body = read_container(r);
  if (body.raw_u8) r.fail("synthetic sets are stored as f32");
  if (body.images.rank() != 4) r.fail("synthetic canvases must be rank 4");
  SyntheticSet s;
  s.canvases = std::move(body.images);
  s.labels = std::move(body.labels);
  s.classes = body.classes;
  s.factor = r.u8();
  s.ipc = r.u32();
  s.stats = read_stats(r, s.canvases.dim(1));
  if (r.remaining() != 0) r.fail("trailing bytes");
  try {
    validate_synthetic(s);
  } catch (const ShapeError& e) {
    r.fail(e.what());
  }
  return s;
}

void export_ppm(const std::filesystem::path& path, const SyntheticSet& syn) {
  validate_synthetic(syn);
  const Tensor<float> px = destandardize(syn.canvases, syn.stats);
  const std::size_t c = syn.channels(), h = syn.height(), w = syn.width();
  constexpr std::size_t gap = 1;
  const std::size_t width = syn.ipc * (w + gap) + gap;
  const std::size_t height = syn.classes * (h + gap) + gap;
  std::vector<std::uint8_t> rgb(width * height * 3, 0);
  auto to_byte = [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  };
  for (std::size_t k = 0; k < syn.classes; ++k)
    for (std::size_t i = 0; i < syn.ipc; ++i) {
      const std::size_t n = k * syn.ipc + i;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t oy = gap + k * (h + gap) + y, ox = gap + i * (w + gap) + x;
          std::uint8_t* dst = rgb.data() + (oy * width + ox) * 3;
          for (std::size_t p = 0; p < 3; ++p) dst[p] = to_byte(px.at(n, c >= 3 ? p : 0, y, x));
        }
    }
  std::string header = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), rgb.begin(), rgb.end());
  write_file_atomic(path, bytes);
}

template Var<float> unfactor(const Var<float>&, std::size_t);
template Var<double> unfactor(const Var<double>&, std::size_t);

}  // namespace dance
