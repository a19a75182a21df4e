#include "driftlab/tasks.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>

#include "driftlab/error.hpp"
#include "driftlab/rng.hpp"

namespace driftlab {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw FormatError(path.string() + ": truncated header at offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(std::uint32_t magic, std::uint32_t expected, const std::filesystem::path& path) {
  if (magic != expected) {
    std::ostringstream msg;
    msg << path.string() << ": bad magic 0x" << std::hex << magic << " at offset 0, expected 0x" << expected;
    throw FormatError(msg.str());
  }
}

// Trig that is exact on multiples of 90 degrees, so axis-aligned rotations
// move pixels without interpolation blur.
void exact_cos_sin(double angle_deg, double& c, double& s) {
  const double quarter = angle_deg / 90.0;
  if (quarter == std::floor(quarter)) {
    static constexpr double kCos[] = {1, 0, -1, 0};
    static constexpr double kSin[] = {0, 1, 0, -1};
    const auto q = static_cast<long long>(quarter);
    const auto idx = static_cast<std::size_t>(((q % 4) + 4) % 4);
    c = kCos[idx];
    s = kSin[idx];
    return;
  }
  const double rad = angle_deg * std::numbers::pi / 180.0;
  c = std::cos(rad);
  s = std::sin(rad);
}

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(buf), std::end(buf));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(const std::vector<unsigned char>& bytes, std::size_t& offset, const std::filesystem::path& path) {
  if (offset + sizeof(T) > bytes.size()) {
    throw FormatError(path.string() + ": truncated at offset " + std::to_string(offset));
  }
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, bytes.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(std::begin(buf), std::end(buf));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  offset += sizeof(T);
  return value;
}

std::shared_ptr<const Dataset> synthetic_task_data(std::uint64_t stream_seed, std::size_t task,
                                                   const SyntheticOptions& opt) {
  if (opt.classes < 2) throw ConfigError("synthetic streams need at least two classes");
  if (opt.samples_per_class < 5) throw ConfigError("synthetic streams need at least five samples per class");
  Rng rng(mix_seed(mix_seed(stream_seed, "synthetic"), task));
  const std::size_t n = opt.classes * opt.samples_per_class;
  std::vector<double> xs(2 * n);
  std::vector<int> ys(n);
  const double offset = static_cast<double>(task) * opt.rotation_step_deg * std::numbers::pi / 180.0;
  for (std::size_t c = 0; c < opt.classes; ++c) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(opt.classes) + offset;
    const double mx = opt.radius * std::cos(theta);
    const double my = opt.radius * std::sin(theta);
    for (std::size_t i = 0; i < opt.samples_per_class; ++i) {
      const std::size_t row = c * opt.samples_per_class + i;
      xs[2 * row] = mx + opt.noise * rng.normal();
      xs[2 * row + 1] = my + opt.noise * rng.normal();
      ys[row] = static_cast<int>(c);
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);

  const std::size_t n_train = n * 4 / 5;
  auto data = std::make_shared<Dataset>();
  data->num_classes = opt.classes;
  auto fill = [&](LabeledSet& set, std::size_t begin, std::size_t end) {
    set.inputs.assign_zero(end - begin, 2);
    set.labels.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      set.inputs(i - begin, 0) = xs[2 * order[i]];
      set.inputs(i - begin, 1) = xs[2 * order[i] + 1];
      set.labels[i - begin] = ys[order[i]];
    }
  };
  fill(data->train, 0, n_train);
  fill(data->val, n_train, n);
  return data;
}

}  // namespace

LabeledSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (img.empty()) throw FormatError(images_path.string() + ": empty file at offset 0");
  if (lab.empty()) throw FormatError(labels_path.string() + ": empty file at offset 0");

  expect_magic(read_be32(img, 0, images_path), kImageMagic, images_path);
  expect_magic(read_be32(lab, 0, labels_path), kLabelMagic, labels_path);

  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count) {
    throw FormatError(labels_path.string() + ": label count " + std::to_string(label_count) +
                      " at offset 4 does not match image count " + std::to_string(count));
  }
  const std::size_t pixels = rows * cols;
  const std::size_t image_bytes = 16 + count * pixels;
  if (img.size() < image_bytes) {
    throw FormatError(images_path.string() + ": truncated pixel data at offset " + std::to_string(img.size()) +
                      ", expected " + std::to_string(image_bytes) + " bytes");
  }
  if (lab.size() < 8 + count) {
    throw FormatError(labels_path.string() + ": truncated label data at offset " + std::to_string(lab.size()) +
                      ", expected " + std::to_string(8 + count) + " bytes");
  }

  LabeledSet set;
  set.inputs.assign_zero(count, pixels);
  double* out = set.inputs.data();
  for (std::size_t i = 0; i < count * pixels; ++i) out[i] = static_cast<double>(img[16 + i]) / 255.0;
  set.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) set.labels[i] = lab[8 + i];
  return set;
}

namespace {

LabeledSet truncate(LabeledSet set, std::size_t limit) {
  if (limit == 0 || limit >= set.size()) return set;
  LabeledSet out;
  out.inputs = Matrix(limit, set.inputs.cols(),
                      std::vector<double>(set.inputs.data(), set.inputs.data() + limit * set.inputs.cols()));
  out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(limit));
  return out;
}

}  // namespace

Dataset load_mnist(const std::filesystem::path& dir, std::size_t train_limit, std::size_t val_limit) {
  Dataset data;
  data.train = truncate(load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte"), train_limit);
  data.val = truncate(load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte"), val_limit);
  data.num_classes = 10;
  data.image_side = 28;
  for (const auto* set : {&data.train, &data.val}) {
    for (int y : set->labels) {
      if (y < 0 || y >= 10) throw FormatError("MNIST label out of range: " + std::to_string(y));
    }
  }
  return data;
}

std::vector<std::uint32_t> make_permutation(std::uint64_t stream_seed, std::size_t task_index, std::size_t dim) {
  if (dim == 0) throw ConfigError("permutation dimension must be at least 1");
  std::vector<std::uint32_t> perm(dim);
  for (std::size_t i = 0; i < dim; ++i) perm[i] = static_cast<std::uint32_t>(i);
  Rng rng(mix_seed(stream_seed, task_index));
  for (std::size_t i = dim; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(i)]);
  return perm;
}

RotationMap::RotationMap(std::size_t side, double angle_deg) : side_(side), angle_deg_(angle_deg) {
  if (side == 0) throw ConfigError("rotation needs a non-empty image");
  double c = 1.0;
  double s = 0.0;
  exact_cos_sin(angle_deg, c, s);
  const double center = (static_cast<double>(side) - 1.0) / 2.0;
  const auto n = static_cast<std::ptrdiff_t>(side);
  tap_begin_.reserve(side * side + 1);
  tap_begin_.push_back(0);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t col = 0; col < side; ++col) {
      // Destination in a y-up frame, rotated back by -angle to find the source.
      const double x = static_cast<double>(col) - center;
      const double y = center - static_cast<double>(r);
      const double xs = c * x + s * y;
      const double ys = -s * x + c * y;
      const double src_col = center + xs;
      const double src_row = center - ys;
      const double r0f = std::floor(src_row);
      const double c0f = std::floor(src_col);
      const double fr = src_row - r0f;
      const double fc = src_col - c0f;
      const auto r0 = static_cast<std::ptrdiff_t>(r0f);
      const auto c0 = static_cast<std::ptrdiff_t>(c0f);
      const std::ptrdiff_t rr[2] = {r0, r0 + 1};
      const std::ptrdiff_t cc[2] = {c0, c0 + 1};
      const double wr[2] = {1.0 - fr, fr};
      const double wc[2] = {1.0 - fc, fc};
      for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
          const double w = wr[i] * wc[j];
          if (w == 0.0 || rr[i] < 0 || rr[i] >= n || cc[j] < 0 || cc[j] >= n) continue;
          taps_.push_back({static_cast<std::uint32_t>(rr[i] * n + cc[j]), w});
        }
      }
      tap_begin_.push_back(static_cast<std::uint32_t>(taps_.size()));
    }
  }
}

void RotationMap::apply(std::span<const double> in, std::span<double> out) const {
  const std::size_t n = side_ * side_;
  if (in.size() != n || out.size() != n) throw ConfigError("rotation: image size mismatch");
  for (std::size_t p = 0; p < n; ++p) {
    double v = 0.0;
    for (std::uint32_t t = tap_begin_[p]; t < tap_begin_[p + 1]; ++t) v += taps_[t].weight * in[taps_[t].source];
    out[p] = std::clamp(v, 0.0, 1.0);
  }
}

Matrix rotate_image(const Matrix& image, double angle_deg) {
  if (image.rows() != image.cols()) throw ConfigError("rotate_image expects a square image");
  Matrix out(image.rows(), image.cols());
  RotationMap(image.rows(), angle_deg).apply(image.values(), out.values());
  return out;
}

std::size_t Task::size(Split split) const { return split == Split::train ? data->train.size() : data->val.size(); }

void Task::gather(Split split, std::span<const std::size_t> rows, Batch& out) const {
  const LabeledSet& set = split == Split::train ? data->train : data->val;
  const std::size_t dim = set.inputs.cols();
  out.inputs.assign_zero(rows.size(), dim);
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = set.inputs.row(rows[i]);
    auto dst = out.inputs.row(i);
    std::visit(
        [&](const auto& t) {
          using T = std::decay_t<decltype(t)>;
          if constexpr (std::is_same_v<T, IdentityTransform>) {
            std::copy(src.begin(), src.end(), dst.begin());
          } else if constexpr (std::is_same_v<T, PermutationTransform>) {
            for (std::size_t j = 0; j < dim; ++j) dst[j] = src[t.permutation[j]];
          } else {
            t.apply(src, dst);
          }
        },
        transform);
    out.labels[i] = set.labels[rows[i]];
  }
}

Batch Task::slice(Split split, std::size_t offset, std::size_t count) const {
  std::vector<std::size_t> rows(count);
  for (std::size_t i = 0; i < count; ++i) rows[i] = offset + i;
  Batch batch;
  gather(split, rows, batch);
  return batch;
}

StreamKind parse_stream_kind(std::string_view name) {
  if (name == "permuted") return StreamKind::permuted;
  if (name == "rotated") return StreamKind::rotated;
  if (name == "synthetic") return StreamKind::synthetic;
  throw ConfigError("unknown stream kind '" + std::string(name) + "' (expected permuted, rotated or synthetic)");
}

std::string_view to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::permuted: return "permuted";
    case StreamKind::rotated: return "rotated";
    case StreamKind::synthetic: return "synthetic";
  }
  return "?";
}

TaskStream build_stream(StreamKind kind, std::shared_ptr<const Dataset> base, std::size_t tasks,
                        std::uint64_t stream_seed, const SyntheticOptions& synthetic) {
  if (tasks == 0) throw ConfigError("a task stream needs at least one task");
  TaskStream stream;
  stream.kind = kind;
  stream.seed = stream_seed;
  if (kind != StreamKind::synthetic) {
    if (!base) throw ConfigError("image streams need a base dataset");
    if (base->train.size() == 0 || base->val.size() == 0) throw ConfigError("base dataset is empty");
  }
  if (kind == StreamKind::rotated) {
    if (base->image_side == 0 || base->image_side * base->image_side != base->train.inputs.cols()) {
      throw ConfigError("rotated streams need square image inputs");
    }
    Rng rng(mix_seed(stream_seed, "rotation"));
    for (std::size_t t = 0; t < tasks; ++t) stream.angles_deg.push_back(180.0 * rng.uniform());
  }
  for (std::size_t t = 0; t < tasks; ++t) {
    Task task;
    task.index = t;
    switch (kind) {
      case StreamKind::permuted:
        task.data = base;
        task.transform = PermutationTransform{make_permutation(stream_seed, t, base->train.inputs.cols())};
        break;
      case StreamKind::rotated:
        task.data = base;
        task.transform = RotationMap(base->image_side, stream.angles_deg[t]);
        break;
      case StreamKind::synthetic:
        task.data = synthetic_task_data(stream_seed, t, synthetic);
        task.transform = IdentityTransform{};
        break;
    }
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

void write_task_cache(const std::filesystem::path& path, const LabeledSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write("DLTK", 4);
  put_le<std::uint32_t>(out, 1);
  put_le<std::uint64_t>(out, set.inputs.rows());
  put_le<std::uint64_t>(out, set.inputs.cols());
  for (double v : set.inputs.values()) put_le<double>(out, v);
  for (int y : set.labels) put_le<std::int32_t>(out, y);
  if (!out) throw FormatError("failed writing " + path.string());
}

LabeledSet read_task_cache(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "DLTK", 4) != 0) {
    throw FormatError(path.string() + ": bad magic at offset 0, expected DLTK");
  }
  std::size_t offset = 4;
  const auto version = get_le<std::uint32_t>(bytes, offset, path);
  if (version != 1) throw FormatError(path.string() + ": unsupported version " + std::to_string(version) + " at offset 4");
  const auto rows = get_le<std::uint64_t>(bytes, offset, path);
  const auto cols = get_le<std::uint64_t>(bytes, offset, path);
  const std::size_t expected = offset + rows * cols * 8 + rows * 4;
  if (bytes.size() != expected) {
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " does not match header (expected " +
                      std::to_string(expected) + ")");
  }
  LabeledSet set;
  set.inputs.assign_zero(rows, cols);
  for (double& v : set.inputs.values()) v = get_le<double>(bytes, offset, path);
  set.labels.resize(rows);
  for (int& y : set.labels) y = get_le<std::int32_t>(bytes, offset, path);
  return set;
}

}  // namespace driftlab
