#pragma once

// Tensor checkpoints in the "u64 header length + JSON header + raw
// little-endian data" container. Values are held as double regardless of the
// on-disk element type; the original dtype tag is kept so a save narrows back.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tvmerge {

enum class DType { F64, F32, F16 };

std::string_view dtype_name(DType dtype);
std::optional<DType> parse_dtype(std::string_view tag);
std::size_t dtype_width(DType dtype);

using Shape = std::vector<std::uint64_t>;

// Product of the dimensions; an empty shape is a scalar with one element.
std::uint64_t element_count(const Shape& shape);

std::string shape_to_string(const Shape& shape);

struct Tensor {
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind {
    kIo,
    kMalformedHeader,
    kUnknownDtype,
    kSizeMismatch,
    kOffsetGap,
    kOffsetOverlap,
    kTruncated,
    kInvalidTensor,
  };

  // `byte_pos` is an absolute position in the file, when one applies.
  CheckpointError(Kind kind, const std::string& what,
                  std::optional<std::uint64_t> byte_pos = std::nullopt);

  Kind kind() const { return kind_; }
  std::optional<std::uint64_t> byte_pos() const { return byte_pos_; }

 private:
  Kind kind_;
  std::optional<std::uint64_t> byte_pos_;
};

class IncompatibleError : public std::runtime_error {
 public:
  IncompatibleError(std::string name, const std::string& what)
      : std::runtime_error(what), name_(std::move(name)) {}

  // Name of the first tensor (in lexicographic order) that diverged.
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

// Named tensors keyed lexicographically, plus the optional string metadata
// block. Every tensor satisfies values.size() == element_count(shape).
class Checkpoint {
 public:
  using TensorMap = std::map<std::string, Tensor, std::less<>>;
  using Metadata = std::map<std::string, std::string, std::less<>>;

  Checkpoint() = default;

  // Throws CheckpointError(kInvalidTensor) on an empty or duplicate name or a
  // value count that disagrees with the shape.
  void insert(std::string name, Tensor tensor);

  const Tensor* find(std::string_view name) const;
  const Tensor& at(std::string_view name) const;

  const TensorMap& tensors() const { return tensors_; }
  TensorMap& mutable_tensors() { return tensors_; }
  const Metadata& metadata() const { return metadata_; }
  Metadata& metadata() { return metadata_; }

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  std::uint64_t parameter_count() const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

 private:
  TensorMap tensors_;
  Metadata metadata_;
};

// Encodes a checkpoint into the container format. Tensors are laid out in
// name order and values are narrowed to each tensor's dtype (round to
// nearest even; overflow becomes +/-inf).
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Writes to a sibling temp file and renames it over `path` on success.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// Succeeds iff both checkpoints have the same names, shapes, and dtypes.
// Throws IncompatibleError naming the first divergent tensor.
void validate_compatible(const Checkpoint& a, const Checkpoint& b);

// Writes `bytes` atomically: temp file in the same directory, then rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tvmerge
