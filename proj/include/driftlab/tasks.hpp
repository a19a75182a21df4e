#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "driftlab/matrix.hpp"
#include "driftlab/mlp.hpp"

namespace driftlab {

struct LabeledSet {
  Matrix inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Train and validation examples of one base distribution. The two splits
/// are disjoint by construction (MNIST train vs. t10k files, or a seeded
/// 80/20 split for synthetic data).
struct Dataset {
  LabeledSet train;
  LabeledSet val;
  std::size_t num_classes = 10;
  std::size_t image_side = 0;  // 28 for MNIST, 0 when inputs are not images
};

/// Parses an IDX image file (magic 0x00000803) and label file (magic
/// 0x00000801). Pixels are scaled to [0, 1].
LabeledSet load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Loads train-images-idx3-ubyte / t10k-images-idx3-ubyte (and labels) from
/// `dir`. A limit of 0 keeps every example; otherwise the first `limit`.
Dataset load_mnist(const std::filesystem::path& dir, std::size_t train_limit = 0, std::size_t val_limit = 0);

/// Fisher-Yates shuffle of [0, dim) driven by Rng(mix_seed(stream_seed, task_index)).
std::vector<std::uint32_t> make_permutation(std::uint64_t stream_seed, std::size_t task_index, std::size_t dim);

/// Bilinear resampling map for a counter-clockwise rotation of a square
/// image about ((side-1)/2, (side-1)/2). Samples falling outside the image
/// read as zero.
class RotationMap {
 public:
  RotationMap(std::size_t side, double angle_deg);

  double angle_deg() const { return angle_deg_; }
  std::size_t side() const { return side_; }
  /// out = clamp(rotate(in), 0, 1); both spans hold side*side pixels.
  void apply(std::span<const double> in, std::span<double> out) const;

 private:
  struct Tap {
    std::uint32_t source;
    double weight;
  };
  std::size_t side_;
  double angle_deg_;
  std::vector<std::uint32_t> tap_begin_;  // side*side + 1 offsets into taps_
  std::vector<Tap> taps_;
};

Matrix rotate_image(const Matrix& image, double angle_deg);

/// Per-task input transformation.
struct IdentityTransform {};
struct PermutationTransform {
  std::vector<std::uint32_t> permutation;  // out[j] = in[permutation[j]]
};
using PixelTransform = std::variant<IdentityTransform, PermutationTransform, RotationMap>;

enum class Split { train, val };

/// One task of a stream: a base dataset viewed through a transform.
struct Task {
  std::size_t index = 0;
  std::shared_ptr<const Dataset> data;
  PixelTransform transform;

  std::size_t size(Split split) const;
  std::size_t input_size() const { return data->train.inputs.cols(); }
  std::size_t num_classes() const { return data->num_classes; }

  /// Transformed copies of the given rows.
  void gather(Split split, std::span<const std::size_t> rows, Batch& out) const;
  /// Transformed copy of rows [offset, offset + count).
  Batch slice(Split split, std::size_t offset, std::size_t count) const;
};

enum class StreamKind { permuted, rotated, synthetic };

StreamKind parse_stream_kind(std::string_view name);
std::string_view to_string(StreamKind kind);

struct SyntheticOptions {
  std::size_t classes = 4;
  std::size_t samples_per_class = 250;  // per task, before the 80/20 split
  double radius = 2.0;
  double noise = 0.7;
  double rotation_step_deg = 25.0;      // class means of task t are rotated by t * step
};

struct TaskStream {
  StreamKind kind = StreamKind::synthetic;
  std::uint64_t seed = 0;
  std::vector<Task> tasks;
  std::vector<double> angles_deg;  // rotated streams only, one per task

  std::size_t size() const { return tasks.size(); }
  std::size_t input_size() const { return tasks.front().input_size(); }
  std::size_t num_classes() const { return tasks.front().num_classes(); }
};

/// Builds T tasks. Permuted: every task, task 0 included, gets its own
/// permutation. Rotated: angles uniform in [0, 180], drawn once per stream
/// seed. Synthetic: 2-D Gaussian blobs (base is ignored and may be null).
TaskStream build_stream(StreamKind kind, std::shared_ptr<const Dataset> base, std::size_t tasks,
                        std::uint64_t stream_seed, const SyntheticOptions& synthetic = {});

/// Flat binary cache of a transformed split: "DLTK", u32 version (1),
/// u64 rows, u64 cols, rows*cols f64 row-major, rows i32 labels. All values
/// little-endian.
void write_task_cache(const std::filesystem::path& path, const LabeledSet& set);
LabeledSet read_task_cache(const std::filesystem::path& path);

}  // namespace driftlab
