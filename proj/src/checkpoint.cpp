#include "thinsec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace thinsec {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'L', 'C', 'K'};
constexpr char kTensorsMagic[4] = {'F', 'L', 'N', 'T'};
constexpr const char* kNormMean = "_input_norm.mean";
constexpr const char* kNormStd = "_input_norm.std";

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) u64(static_cast<std::uint64_t>(d));
    u8(0);
    bytes(t.ptr(), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(what + " at byte offset " + std::to_string(pos));
  }
  void need(std::size_t n) const {
    if (buf.size() - pos < n) fail("truncated file: need " + std::to_string(n) + " more bytes");
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  void magic(const char (&expect)[4]) {
    need(4);
    if (std::memcmp(buf.data() + pos, expect, 4) != 0) fail("bad magic");
    pos += 4;
  }
  void version() {
    const std::size_t at = pos;
    const std::uint32_t v = u32();
    if (v != kCheckpointVersion) {
      pos = at;
      fail("unsupported version " + std::to_string(v));
    }
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const std::uint32_t ndim = u32();
    if (ndim > 8) fail("implausible tensor rank " + std::to_string(ndim) + " for '" + name + "'");
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const std::uint64_t d = u64();
      if (d == 0 || d > (std::uint64_t{1} << 40)) fail("invalid extent for '" + name + "'");
      count *= d;
      if (count > (std::uint64_t{1} << 40)) fail("tensor '" + name + "' too large");
      shape.push_back(static_cast<std::int64_t>(d));
    }
    const std::size_t dtype_at = pos;
    const std::uint8_t dtype = u8();
    if (dtype != 0) {
      pos = dtype_at;
      fail("unsupported dtype code " + std::to_string(dtype) + " for '" + name + "'");
    }
    need(count * sizeof(float));
    std::vector<float> values(count);
    std::memcpy(values.data(), buf.data() + pos, count * sizeof(float));
    pos += count * sizeof(float);
    return {std::move(name), Tensor::from(std::move(shape), std::move(values))};
  }
  void finish() const {
    if (pos != buf.size()) fail("trailing bytes after last tensor");
  }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

NamedTensors read_tensor_block(Reader& r) {
  const std::uint32_t count = r.u32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos;
    auto [name, t] = r.tensor();
    if (out.contains(name)) {
      r.pos = at;
      r.fail("duplicate tensor '" + name + "'");
    }
    out.insert(name, std::move(t));
  }
  r.finish();
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Model& model) {
  nlohmann::ordered_json header;
  header["spec"] = nlohmann::ordered_json::parse(model.spec.to_json());
  std::vector<bool> trainable(model.trainable.begin(), model.trainable.end());
  header["trainable"] = trainable;
  header["class_names"] = model.class_names;
  header["buffers"] = model.buffers.names();

  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  w.u32(static_cast<std::uint32_t>(model.params.size() + model.buffers.size() + 2));
  for (std::size_t i = 0; i < model.params.size(); ++i) w.tensor(model.params.names()[i], model.params.at(i));
  for (std::size_t i = 0; i < model.buffers.size(); ++i) w.tensor(model.buffers.names()[i], model.buffers.at(i));
  w.tensor(kNormMean, Tensor::from({3}, {model.norm.mean.begin(), model.norm.mean.end()}));
  w.tensor(kNormStd, Tensor::from({3}, {model.norm.std.begin(), model.norm.std.end()}));
  return std::move(w.out);
}

Model deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.magic(kCheckpointMagic);
  r.version();
  const std::size_t header_at = r.pos;
  const std::string text = r.str();
  Model m;
  std::vector<std::string> buffer_names;
  std::vector<bool> trainable;
  try {
    const auto header = nlohmann::json::parse(text);
    m.spec = ModelSpec::from_json(header.at("spec").dump());
    trainable = header.at("trainable").get<std::vector<bool>>();
    m.class_names = header.at("class_names").get<std::vector<std::string>>();
    buffer_names = header.at("buffers").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    r.pos = header_at;
    r.fail(std::string("malformed header: ") + e.what());
  } catch (const SpecError& e) {
    r.pos = header_at;
    r.fail(e.what());
  }
  NamedTensors all = read_tensor_block(r);

  const Model reference = build_model(m.spec, 0);
  for (std::size_t i = 0; i < reference.params.size(); ++i) {
    const std::string& name = reference.params.names()[i];
    if (!all.contains(name)) throw FormatError("checkpoint lacks parameter '" + name + "'");
    if (all.get(name).shape() != reference.params.at(i).shape()) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_str(all.get(name).shape()) +
                        ", spec requires " + shape_str(reference.params.at(i).shape()));
    }
    m.params.insert(name, all.get(name));
  }
  if (trainable.size() != m.params.size()) throw FormatError("trainable mask length does not match parameter count");
  m.trainable = std::move(trainable);
  for (const auto& name : buffer_names) {
    if (!all.contains(name)) throw FormatError("checkpoint lacks buffer '" + name + "'");
    m.buffers.insert(name, all.get(name));
  }
  for (const char* name : {kNormMean, kNormStd}) {
    if (!all.contains(name) || all.get(name).numel() != 3) throw FormatError(std::string("checkpoint lacks ") + name);
  }
  for (int c = 0; c < 3; ++c) {
    m.norm.mean[c] = all.get(kNormMean)[c];
    m.norm.std[c] = all.get(kNormStd)[c];
  }
  if (all.size() != m.params.size() + m.buffers.size() + 2) {
    throw FormatError("checkpoint holds tensors its model spec does not describe");
  }
  return m;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

void save_checkpoint(const Model& model, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file_bytes(path)); }

void save_named_tensors(const NamedTensors& tensors, const std::string& path) {
  Writer w;
  w.bytes(kTensorsMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) w.tensor(tensors.names()[i], tensors.at(i));
  write_file_bytes(path, w.out);
}

NamedTensors read_named_tensors(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  Reader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) == 0) {
    r.pos = 4;
    r.version();
    r.str();
  } else {
    r.magic(kTensorsMagic);
    r.version();
  }
  return read_tensor_block(r);
}

NameMap identity_name_map(const Model& model, const std::vector<std::string>& exclude_prefixes) {
  NameMap map;
  for (const auto& name : model.params.names()) {
    bool skip = false;
    for (const auto& prefix : exclude_prefixes) skip = skip || name.rfind(prefix, 0) == 0;
    if (!skip) map[name] = name;
  }
  return map;
}

ImportResult import_named_tensors(const std::string& path, const Model& model, const NameMap& name_map) {
  const NamedTensors source = read_named_tensors(path);
  ImportResult result{model, {}, {}};
  std::vector<std::string> problems;
  for (const auto& [param, source_name] : name_map) {
    if (!model.params.contains(param)) {
      problems.push_back("'" + param + "' is not a model parameter");
      continue;
    }
    if (!source.contains(source_name)) {
      problems.push_back("missing tensor '" + source_name + "' (for parameter '" + param + "')");
      continue;
    }
    const Tensor& t = source.get(source_name);
    const Shape& want = model.params.get(param).shape();
    if (t.shape() != want) {
      problems.push_back("shape mismatch for '" + param + "': file " + shape_str(t.shape()) + ", model " +
                         shape_str(want));
      continue;
    }
    result.model.params.set(param, t);
    result.imported.push_back(param);
  }
  if (!problems.empty()) {
    std::string msg = "import from '" + path + "' failed:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ImportError(msg);
  }
  for (const auto& name : model.params.names()) {
    if (!name_map.count(name)) result.unmatched.push_back(name);
  }
  // Running statistics travel with the weights whenever the file has them
  // under the model's own names.
  for (const auto& name : model.buffers.names()) {
    if (source.contains(name) && source.get(name).shape() == model.buffers.get(name).shape()) {
      result.model.buffers.set(name, source.get(name));
      result.imported.push_back(name);
    }
  }
  return result;
}

}  // namespace thinsec
