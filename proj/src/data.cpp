#include "spdconv/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace spdconv {

namespace {

constexpr int kCifarDim = 32;
constexpr int kCifarRecord = 1 + 3 * kCifarDim * kCifarDim;

const std::vector<std::string>& cifar_class_names() {
  static const std::vector<std::string> names = {
      "airplane", "automobile", "bird",  "cat",  "deer",
      "dog",      "frog",       "horse", "ship", "truck"};
  return names;
}

void read_cifar_file(const std::string& path, std::vector<float>& pixels,
                     std::vector<int>& labels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("missing CIFAR-10 batch file: " + path);
  f.seekg(0, std::ios::end);
  std::streamoff size = f.tellg();
  f.seekg(0);
  if (size <= 0 || size % kCifarRecord != 0)
    throw DataError("corrupt CIFAR-10 batch file (size " +
                    std::to_string(size) + " is not a multiple of " +
                    std::to_string(kCifarRecord) + "): " + path);
  const int records = static_cast<int>(size / kCifarRecord);
  std::vector<unsigned char> raw(kCifarRecord);
  for (int r = 0; r < records; ++r) {
    f.read(reinterpret_cast<char*>(raw.data()), kCifarRecord);
    if (!f) throw DataError("short read in CIFAR-10 batch file: " + path);
    int label = raw[0];
    if (label > 9)
      throw DataError("corrupt CIFAR-10 record (label byte " +
                      std::to_string(label) + "): " + path);
    labels.push_back(label);
    for (int i = 0; i < kCifarRecord - 1; ++i)
      pixels.push_back(float(raw[1 + i]) / 255.0f);
  }
}

}  // namespace

Tensor<float> LabeledDataset::batch(const std::vector<int>& order, int begin,
                                    int count) const {
  const auto& s = images.shape();
  Tensor<float> out(TensorShape{count, s.c, s.h, s.w});
  const std::size_t sample = std::size_t(s.c) * s.h * s.w;
  for (int i = 0; i < count; ++i) {
    const float* src = images.data() + std::size_t(order[begin + i]) * sample;
    std::copy(src, src + sample, out.data() + std::size_t(i) * sample);
  }
  return out;
}

std::vector<int> LabeledDataset::batch_labels(const std::vector<int>& order,
                                              int begin, int count) const {
  std::vector<int> out(count);
  for (int i = 0; i < count; ++i) out[i] = labels[order[begin + i]];
  return out;
}

LabeledDataset LabeledDataset::take_per_class(int per_class) const {
  std::vector<int> counts(num_classes, 0);
  std::vector<int> keep;
  for (int i = 0; i < size(); ++i) {
    if (counts[labels[i]] < per_class) {
      counts[labels[i]]++;
      keep.push_back(i);
    }
  }
  LabeledDataset out;
  out.num_classes = num_classes;
  out.class_names = class_names;
  out.images = batch(keep, 0, static_cast<int>(keep.size()));
  out.labels = batch_labels(keep, 0, static_cast<int>(keep.size()));
  return out;
}

std::pair<LabeledDataset, LabeledDataset> load_cifar10(
    const std::string& directory) {
  namespace fs = std::filesystem;
  std::vector<float> train_pixels, test_pixels;
  std::vector<int> train_labels, test_labels;
  for (int i = 1; i <= 5; ++i) {
    read_cifar_file(
        (fs::path(directory) / ("data_batch_" + std::to_string(i) + ".bin"))
            .string(),
        train_pixels, train_labels);
  }
  read_cifar_file((fs::path(directory) / "test_batch.bin").string(),
                  test_pixels, test_labels);

  auto make = [](std::vector<float> pixels, std::vector<int> labels) {
    LabeledDataset ds;
    const int n = static_cast<int>(labels.size());
    ds.images = Tensor<float>::from_values(
        TensorShape{n, 3, kCifarDim, kCifarDim}, std::move(pixels));
    ds.labels = std::move(labels);
    ds.num_classes = 10;
    ds.class_names = cifar_class_names();
    return ds;
  };
  return {make(std::move(train_pixels), std::move(train_labels)),
          make(std::move(test_pixels), std::move(test_labels))};
}

void write_cifar10_batches(const LabeledDataset& train,
                           const LabeledDataset& test,
                           const std::string& directory) {
  namespace fs = std::filesystem;
  fs::create_directories(directory);
  if (train.images.shape().h != kCifarDim ||
      train.images.shape().w != kCifarDim || train.images.shape().c != 3)
    throw DataError("CIFAR-10 files hold 3x32x32 images, got " +
                    train.images.shape().str());

  auto write_records = [](std::ofstream& f, const LabeledDataset& ds, int begin,
                          int count) {
    const std::size_t plane = kCifarDim * kCifarDim;
    std::vector<unsigned char> rec(kCifarRecord);
    for (int i = begin; i < begin + count; ++i) {
      rec[0] = static_cast<unsigned char>(ds.labels[i]);
      const float* img = ds.images.data() + std::size_t(i) * 3 * plane;
      for (std::size_t j = 0; j < 3 * plane; ++j) {
        float v = img[j] * 255.0f + 0.5f;
        rec[1 + j] = static_cast<unsigned char>(
            std::min(255.0f, std::max(0.0f, v)));
      }
      f.write(reinterpret_cast<const char*>(rec.data()), kCifarRecord);
    }
  };

  const int shard = (train.size() + 4) / 5;
  for (int i = 0; i < 5; ++i) {
    std::ofstream f(fs::path(directory) /
                        ("data_batch_" + std::to_string(i + 1) + ".bin"),
                    std::ios::binary);
    int begin = i * shard;
    int count = std::min(shard, train.size() - begin);
    write_records(f, train, begin, std::max(0, count));
  }
  std::ofstream f(fs::path(directory) / "test_batch.bin", std::ios::binary);
  write_records(f, test, 0, test.size());
}

LabeledDataset downsample(const LabeledDataset& ds, int factor) {
  const auto& s = ds.images.shape();
  if (factor < 1) throw DataError("downsample factor must be >= 1");
  if (s.h % factor != 0 || s.w % factor != 0)
    throw DataError("image size " + std::to_string(s.h) + "x" +
                    std::to_string(s.w) + " not divisible by factor " +
                    std::to_string(factor));
  if (factor == 1) return ds;
  LabeledDataset out;
  out.labels = ds.labels;
  out.num_classes = ds.num_classes;
  out.class_names = ds.class_names;
  out.images =
      Tensor<float>(TensorShape{s.n, s.c, s.h / factor, s.w / factor});
  const float inv = 1.0f / float(factor * factor);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < s.h / factor; ++i)
        for (int j = 0; j < s.w / factor; ++j) {
          float sum = 0;
          for (int di = 0; di < factor; ++di)
            for (int dj = 0; dj < factor; ++dj)
              sum += ds.images.at(n, c, i * factor + di, j * factor + dj);
          out.images.at(n, c, i, j) = sum * inv;
        }
  return out;
}

Tensor<float> augment(const Tensor<float>& batch, const AugmentPolicy& policy,
                      Pcg32& rng) {
  const auto& s = batch.shape();
  Tensor<float> out = batch.clone();
  for (int n = 0; n < s.n; ++n) {
    if (policy.flip_p > 0 && rng.uniform() < policy.flip_p) {
      for (int c = 0; c < s.c; ++c)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w / 2; ++j)
            std::swap(out.at(n, c, i, j), out.at(n, c, i, s.w - 1 - j));
    }
    if (policy.crop_pad > 0) {
      const int p = policy.crop_pad;
      int dy = static_cast<int>(rng.bounded(2 * p + 1));
      int dx = static_cast<int>(rng.bounded(2 * p + 1));
      // crop window [dy, dy+h) x [dx, dx+w) of the zero-padded image
      std::vector<float> tmp(std::size_t(s.c) * s.h * s.w, 0.0f);
      for (int c = 0; c < s.c; ++c)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) {
            int si = i + dy - p;
            int sj = j + dx - p;
            float v = (si >= 0 && si < s.h && sj >= 0 && sj < s.w)
                          ? out.at(n, c, si, sj)
                          : 0.0f;
            tmp[(std::size_t(c) * s.h + i) * s.w + j] = v;
          }
      std::copy(tmp.begin(), tmp.end(), out.data() + out.index(n, 0, 0, 0));
    }
  }
  return out;
}

LabeledDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n < spec.classes)
    throw DataError("synthetic dataset needs at least one sample per class");
  Pcg32 rng(seed);
  LabeledDataset ds;
  ds.num_classes = spec.classes;
  ds.images = Tensor<float>(TensorShape{spec.n, 3, spec.h, spec.w});
  ds.labels.resize(spec.n);

  if (spec.kind == "separable") {
    // class k gets a base color; channel means separate the classes exactly
    // (2-class margin: R-G gap of 0.4 against +-0.1 noise)
    for (int i = 0; i < spec.n; ++i) {
      int label = i % spec.classes;
      ds.labels[i] = label;
      double angle = 2.0 * 3.14159265358979 * label / spec.classes;
      float base[3] = {float(0.5 + 0.2 * std::cos(angle)),
                       float(0.5 + 0.2 * std::sin(angle)),
                       float(0.5 - 0.1 * std::cos(angle))};
      if (spec.classes == 2) {
        base[0] = label == 0 ? 0.7f : 0.3f;
        base[1] = label == 0 ? 0.3f : 0.7f;
        base[2] = 0.5f;
      }
      // a shared blob identical on all channels leaves channel gaps intact
      int bi = int(rng.bounded(std::uint32_t(spec.h)));
      int bj = int(rng.bounded(std::uint32_t(spec.w)));
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < spec.h; ++y)
          for (int x = 0; x < spec.w; ++x) {
            float noise = float(rng.uniform(-0.1, 0.1));
            float blob =
                (std::abs(y - bi) <= 1 && std::abs(x - bj) <= 1) ? 0.15f : 0.0f;
            float v = base[c] + noise + blob;
            ds.images.at(i, c, y, x) = std::min(1.0f, std::max(0.0f, v));
          }
    }
  } else if (spec.kind == "parity-grid") {
    // All classes are translates of one sparse dot grid (period 4); the
    // class is the dot phase modulo 2 in each axis: exactly the 1-pixel
    // information a stride-2 stem skips and an SPD stem moves into
    // channels. Dots land on all three channels; mild noise everywhere.
    if (spec.classes != 4 && spec.classes != 2)
      throw DataError("parity-grid supports 2 or 4 classes");
    for (int i = 0; i < spec.n; ++i) {
      int label = i % spec.classes;
      ds.labels[i] = label;
      int pr = label % 2;
      int pc = (spec.classes == 4) ? (label / 2) : pr;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < spec.h; ++y)
          for (int x = 0; x < spec.w; ++x)
            ds.images.at(i, c, y, x) = float(rng.uniform(0.0, 0.12));
      for (int y = pr; y < spec.h; y += 4)
        for (int x = pc; x < spec.w; x += 4) {
          float bright = float(rng.uniform(0.55, 1.0));
          for (int c = 0; c < 3; ++c) ds.images.at(i, c, y, x) = bright;
        }
    }
  } else if (spec.kind == "cifar-like") {
    // ten classes told apart by a color cast plus an oriented sinusoid,
    // with per-image phase jitter, a distractor blob, and pixel noise
    for (int i = 0; i < spec.n; ++i) {
      int label = i % spec.classes;
      ds.labels[i] = label;
      double hue = 2.0 * 3.14159265358979 * label / spec.classes;
      float base[3] = {float(0.5 + 0.18 * std::cos(hue)),
                       float(0.5 + 0.18 * std::sin(hue)),
                       float(0.5 - 0.12 * std::cos(hue + 1.0))};
      double theta = 3.14159265358979 * label / spec.classes;
      double freq = 0.5 + 0.35 * (label % 5);
      double phase = rng.uniform(0.0, 6.28);
      int bi = int(rng.bounded(std::uint32_t(spec.h)));
      int bj = int(rng.bounded(std::uint32_t(spec.w)));
      float blob_amp = float(rng.uniform(0.1, 0.25));
      for (int y = 0; y < spec.h; ++y)
        for (int x = 0; x < spec.w; ++x) {
          double t = freq * (std::cos(theta) * y + std::sin(theta) * x) + phase;
          float wave = float(0.12 * std::sin(t));
          float blob = (std::abs(y - bi) <= 2 && std::abs(x - bj) <= 2)
                           ? blob_amp
                           : 0.0f;
          for (int c = 0; c < 3; ++c) {
            float noise = float(rng.uniform(-0.06, 0.06));
            float v = base[c] + wave + blob + noise;
            ds.images.at(i, c, y, x) = std::min(1.0f, std::max(0.0f, v));
          }
        }
    }
  } else {
    throw DataError("unknown synthetic dataset kind '" + spec.kind + "'");
  }
  return ds;
}

}  // namespace spdconv
