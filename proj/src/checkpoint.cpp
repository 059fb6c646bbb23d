#include "tvmerge/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "tvmerge/half.hpp"

namespace tvmerge {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMetadataKey = "__metadata__";
constexpr std::uint64_t kHeaderPrefix = 8;

std::uint64_t read_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

void append_le(std::vector<std::uint8_t>& out, std::uint64_t bits, int width) {
  for (int i = 0; i < width; ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

double decode_value(DType dtype, const std::uint8_t* p) {
  switch (dtype) {
    case DType::F64: {
      const std::uint64_t bits = read_u64_le(p);
      double v;
      std::memcpy(&v, &bits, sizeof(v));
      return v;
    }
    case DType::F32: {
      std::uint32_t bits = 0;
      for (int i = 3; i >= 0; --i) bits = (bits << 8) | p[i];
      float v;
      std::memcpy(&v, &bits, sizeof(v));
      return static_cast<double>(v);
    }
    case DType::F16: {
      const auto bits = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
      return half_bits_to_double(bits);
    }
  }
  return 0.0;
}

void encode_value(DType dtype, double value, std::vector<std::uint8_t>& out) {
  switch (dtype) {
    case DType::F64: {
      std::uint64_t bits;
      std::memcpy(&bits, &value, sizeof(bits));
      append_le(out, bits, 8);
      return;
    }
    case DType::F32: {
      const auto narrowed = static_cast<float>(value);
      std::uint32_t bits;
      std::memcpy(&bits, &narrowed, sizeof(bits));
      append_le(out, bits, 4);
      return;
    }
    case DType::F16:
      append_le(out, double_to_half_bits(value), 2);
      return;
  }
}

// Best-effort location of a tensor's entry inside the header text.
std::uint64_t key_position(std::string_view header, std::string_view name) {
  const std::string quoted = "\"" + std::string(name) + "\"";
  const auto pos = header.find(quoted);
  return kHeaderPrefix + (pos == std::string_view::npos ? 0 : pos);
}

struct Entry {
  std::string name;
  DType dtype;
  Shape shape;
  std::uint64_t begin;
  std::uint64_t end;
  std::uint64_t header_pos;
};

bool checked_count(const Shape& shape, std::uint64_t& out) {
  std::uint64_t n = 1;
  for (const auto d : shape) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) return false;
    n *= d;
  }
  out = n;
  return true;
}

Entry parse_entry(const std::string& name, const json& desc, std::string_view header) {
  const std::uint64_t pos = key_position(header, name);
  auto malformed = [&](const std::string& why) {
    return CheckpointError(CheckpointError::Kind::kMalformedHeader,
                           "malformed header entry \"" + name + "\": " + why, pos);
  };
  if (!desc.is_object()) throw malformed("entry is not an object");

  const auto dt = desc.find("dtype");
  if (dt == desc.end() || !dt->is_string()) throw malformed("missing dtype");
  const auto dtype = parse_dtype(dt->get_ref<const std::string&>());
  if (!dtype) {
    throw CheckpointError(CheckpointError::Kind::kUnknownDtype,
                          "unknown dtype \"" + dt->get<std::string>() + "\" for tensor \"" +
                              name + "\"",
                          pos);
  }

  const auto sh = desc.find("shape");
  if (sh == desc.end() || !sh->is_array()) throw malformed("missing shape");
  Shape shape;
  for (const auto& d : *sh) {
    if (!d.is_number_unsigned()) throw malformed("shape entries must be non-negative integers");
    shape.push_back(d.get<std::uint64_t>());
  }

  const auto off = desc.find("data_offsets");
  if (off == desc.end() || !off->is_array() || off->size() != 2 ||
      !(*off)[0].is_number_unsigned() || !(*off)[1].is_number_unsigned()) {
    throw malformed("data_offsets must be [begin, end]");
  }
  const auto begin = (*off)[0].get<std::uint64_t>();
  const auto end = (*off)[1].get<std::uint64_t>();
  if (end < begin) throw malformed("data_offsets end precedes begin");

  std::uint64_t count = 0;
  if (!checked_count(shape, count) ||
      count > std::numeric_limits<std::uint64_t>::max() / dtype_width(*dtype)) {
    throw malformed("shape overflows");
  }
  if (end - begin != count * dtype_width(*dtype)) {
    throw CheckpointError(CheckpointError::Kind::kSizeMismatch,
                          "tensor \"" + name + "\" spans " + std::to_string(end - begin) +
                              " bytes but shape " + shape_to_string(shape) + " of " +
                              std::string(dtype_name(*dtype)) + " needs " +
                              std::to_string(count * dtype_width(*dtype)),
                          pos);
  }
  return Entry{name, *dtype, std::move(shape), begin, end, pos};
}

}  // namespace

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::F64: return "F64";
    case DType::F32: return "F32";
    case DType::F16: return "F16";
  }
  return "?";
}

std::optional<DType> parse_dtype(std::string_view tag) {
  if (tag == "F64") return DType::F64;
  if (tag == "F32") return DType::F32;
  if (tag == "F16") return DType::F16;
  return std::nullopt;
}

std::size_t dtype_width(DType dtype) {
  switch (dtype) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16: return 2;
  }
  return 0;
}

std::uint64_t element_count(const Shape& shape) {
  std::uint64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

CheckpointError::CheckpointError(Kind kind, const std::string& what,
                                 std::optional<std::uint64_t> byte_pos)
    : std::runtime_error(byte_pos ? what + " (at byte " + std::to_string(*byte_pos) + ")"
                                  : what),
      kind_(kind),
      byte_pos_(byte_pos) {}

void Checkpoint::insert(std::string name, Tensor tensor) {
  if (name.empty()) {
    throw CheckpointError(CheckpointError::Kind::kInvalidTensor, "tensor name is empty");
  }
  if (name == kMetadataKey) {
    throw CheckpointError(CheckpointError::Kind::kInvalidTensor,
                          "tensor name \"__metadata__\" is reserved");
  }
  if (tensor.values.size() != element_count(tensor.shape)) {
    throw CheckpointError(CheckpointError::Kind::kInvalidTensor,
                          "tensor \"" + name + "\" has " + std::to_string(tensor.values.size()) +
                              " values but shape " + shape_to_string(tensor.shape));
  }
  if (tensors_.contains(name)) {
    throw CheckpointError(CheckpointError::Kind::kInvalidTensor,
                          "duplicate tensor name \"" + name + "\"");
  }
  tensors_.emplace(std::move(name), std::move(tensor));
}

const Tensor* Checkpoint::find(std::string_view name) const {
  const auto it = tensors_.find(name);
  return it == tensors_.end() ? nullptr : &it->second;
}

const Tensor& Checkpoint::at(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw std::out_of_range("no tensor named \"" + std::string(name) + "\"");
}

std::uint64_t Checkpoint::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.values.size();
  return n;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors()) {
    const std::uint64_t bytes = t.values.size() * dtype_width(t.dtype);
    header[name] = {{"dtype", dtype_name(t.dtype)},
                    {"shape", t.shape},
                    {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!ckpt.metadata().empty()) {
    json meta = json::object();
    for (const auto& [k, v] : ckpt.metadata()) meta[k] = v;
    header[std::string(kMetadataKey)] = std::move(meta);
  }

  std::string text;
  try {
    text = header.dump();
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kInvalidTensor,
                          std::string("header is not encodable: ") + e.what());
  }
  // Pad so the data block starts 8-byte aligned.
  while ((text.size() % 8) != 0) text.push_back(' ');

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderPrefix + text.size() + offset);
  append_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [_, t] : ckpt.tensors()) {
    for (const double v : t.values) encode_value(t.dtype, v, out);
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  const std::uint64_t file_size = bytes.size();
  if (file_size < kHeaderPrefix) {
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          "file too short for the header length prefix", file_size);
  }
  const std::uint64_t header_len = read_u64_le(bytes.data());
  if (header_len > file_size - kHeaderPrefix) {
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          "header declares " + std::to_string(header_len) +
                              " bytes but the file ends first",
                          file_size);
  }
  const std::string_view header_text(reinterpret_cast<const char*>(bytes.data()) + kHeaderPrefix,
                                     header_len);

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    const std::uint64_t at = e.byte == 0 ? 0 : e.byte - 1;
    throw CheckpointError(CheckpointError::Kind::kMalformedHeader,
                          std::string("malformed header JSON: ") + e.what(),
                          kHeaderPrefix + std::min<std::uint64_t>(at, header_len));
  }
  if (!header.is_object()) {
    throw CheckpointError(CheckpointError::Kind::kMalformedHeader,
                          "header is not a JSON object", kHeaderPrefix);
  }

  Checkpoint ckpt;
  std::vector<Entry> entries;
  for (const auto& [key, desc] : header.items()) {
    if (key == kMetadataKey) {
      if (!desc.is_object()) {
        throw CheckpointError(CheckpointError::Kind::kMalformedHeader,
                              "__metadata__ must be an object",
                              key_position(header_text, key));
      }
      for (const auto& [mk, mv] : desc.items()) {
        if (!mv.is_string()) {
          throw CheckpointError(CheckpointError::Kind::kMalformedHeader,
                                "__metadata__ value for \"" + mk + "\" is not a string",
                                key_position(header_text, mk));
        }
        ckpt.metadata().emplace(mk, mv.get<std::string>());
      }
      continue;
    }
    if (key.empty()) {
      throw CheckpointError(CheckpointError::Kind::kMalformedHeader, "empty tensor name",
                            kHeaderPrefix);
    }
    entries.push_back(parse_entry(key, desc, header_text));
  }

  // Offsets must tile [0, data_size) exactly.
  const std::uint64_t data_start = kHeaderPrefix + header_len;
  const std::uint64_t data_size = file_size - data_start;
  std::vector<const Entry*> order;
  order.reserve(entries.size());
  for (const auto& e : entries) order.push_back(&e);
  std::sort(order.begin(), order.end(), [](const Entry* a, const Entry* b) {
    return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
  });
  std::uint64_t cursor = 0;
  for (const Entry* e : order) {
    if (e->begin > cursor) {
      throw CheckpointError(CheckpointError::Kind::kOffsetGap,
                            "offset gap of " + std::to_string(e->begin - cursor) +
                                " bytes before tensor \"" + e->name + "\"",
                            data_start + cursor);
    }
    if (e->begin < cursor) {
      throw CheckpointError(CheckpointError::Kind::kOffsetOverlap,
                            "offset overlap: tensor \"" + e->name + "\" begins at " +
                                std::to_string(e->begin) + " inside a preceding tensor",
                            data_start + e->begin);
    }
    cursor = e->end;
  }
  if (cursor > data_size) {
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          "truncated data block: need " + std::to_string(cursor) +
                              " bytes, have " + std::to_string(data_size),
                          file_size);
  }
  if (cursor < data_size) {
    throw CheckpointError(CheckpointError::Kind::kOffsetGap,
                          "offset gap: " + std::to_string(data_size - cursor) +
                              " trailing bytes not covered by any tensor",
                          data_start + cursor);
  }

  for (auto& e : entries) {
    Tensor t;
    t.dtype = e.dtype;
    t.shape = std::move(e.shape);
    const std::size_t width = dtype_width(e.dtype);
    const std::size_t n = static_cast<std::size_t>((e.end - e.begin) / width);
    t.values.resize(n);
    const std::uint8_t* p = bytes.data() + data_start + e.begin;
    for (std::size_t i = 0; i < n; ++i) t.values[i] = decode_value(e.dtype, p + i * width);
    ckpt.insert(std::move(e.name), std::move(t));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(CheckpointError::Kind::kIo, "cannot open " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) {
    throw CheckpointError(CheckpointError::Kind::kIo, "read error on " + path.string());
  }
  return deserialize_checkpoint(bytes);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                           bytes.size()));
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw CheckpointError(CheckpointError::Kind::kIo, "cannot write " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw CheckpointError(CheckpointError::Kind::kIo, "write failed for " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignored;
    std::filesystem::remove(tmp, ignored);
    throw CheckpointError(CheckpointError::Kind::kIo,
                          "cannot rename into " + path.string() + ": " + ec.message());
  }
}

void validate_compatible(const Checkpoint& a, const Checkpoint& b) {
  auto ia = a.tensors().begin();
  auto ib = b.tensors().begin();
  const auto ea = a.tensors().end();
  const auto eb = b.tensors().end();
  while (ia != ea || ib != eb) {
    if (ib == eb || (ia != ea && ia->first < ib->first)) {
      throw IncompatibleError(ia->first, "tensor \"" + ia->first + "\" missing from second checkpoint");
    }
    if (ia == ea || ib->first < ia->first) {
      throw IncompatibleError(ib->first, "tensor \"" + ib->first + "\" missing from first checkpoint");
    }
    const auto& [name, ta] = *ia;
    const auto& tb = ib->second;
    if (ta.shape != tb.shape) {
      throw IncompatibleError(name, "tensor \"" + name + "\" shape " + shape_to_string(ta.shape) +
                                        " vs " + shape_to_string(tb.shape));
    }
    if (ta.dtype != tb.dtype) {
      throw IncompatibleError(name, "tensor \"" + name + "\" dtype " +
                                        std::string(dtype_name(ta.dtype)) + " vs " +
                                        std::string(dtype_name(tb.dtype)));
    }
    ++ia;
    ++ib;
  }
}

}  // namespace tvmerge
