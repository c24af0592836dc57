#include "seld/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "seld/errors.hpp"

namespace seld {
namespace {

constexpr char kMagic[8] = {'S', 'E', 'L', 'D', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::vector<unsigned char>& out, const T& v) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <class T>
void put_array(std::vector<unsigned char>& out, std::span<const T> values) {
  const auto* raw = reinterpret_cast<const unsigned char*>(values.data());
  out.insert(out.end(), raw, raw + values.size_bytes());
}

template <class T>
std::vector<T> take_array(std::span<const unsigned char> blob, std::size_t offset, std::size_t count) {
  if (offset + count * sizeof(T) > blob.size()) throw LengthError("checkpoint: blob truncated");
  std::vector<T> out(count);
  std::memcpy(out.data(), blob.data() + offset, count * sizeof(T));
  return out;
}

}  // namespace

Checkpoint Checkpoint::from_model(const nn::Model<float>& model) {
  Checkpoint c;
  c.spec = model.spec();
  c.parameters.assign(model.parameters().begin(), model.parameters().end());
  return c;
}

nn::Model<float> Checkpoint::model() const {
  nn::Model<float> m(spec);
  if (parameters.size() != m.parameter_count()) throw ShapeError("checkpoint: parameter count does not match spec");
  std::copy(parameters.begin(), parameters.end(), m.parameters().begin());
  return m;
}

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  const auto shapes = nn::infer_shapes(ckpt.spec);
  if (ckpt.parameters.size() != nn::count_parameters(ckpt.spec)) {
    throw ShapeError("checkpoint: parameter count does not match spec");
  }
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["model"] = ckpt.spec;
  header["shapes"] = shapes;
  header["parameter_count"] = ckpt.parameters.size();
  header["blob"] = {{"parameters", {{"offset", 0}, {"count", ckpt.parameters.size()}, {"dtype", "float32"}}}};
  std::size_t offset = ckpt.parameters.size() * sizeof(float);
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    if (o.m.size() != ckpt.parameters.size() || o.v.size() != ckpt.parameters.size()) {
      throw ShapeError("checkpoint: optimizer state size does not match parameters");
    }
    header["optimizer"] = {{"kind", optim::to_string(o.kind)},
                           {"hyper", o.hyper},
                           {"step", o.step},
                           {"first_moment", {{"offset", offset}, {"count", o.m.size()}, {"dtype", "float64"}}},
                           {"second_moment", {{"offset", offset + o.m.size() * 8}, {"count", o.v.size()}, {"dtype", "float64"}}}};
  }
  header["metadata"] = ckpt.metadata;
  const std::string text = header.dump();

  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  put_array<float>(out, ckpt.parameters);
  if (ckpt.optimizer) {
    put_array<double>(out, ckpt.optimizer->m);
    put_array<double>(out, ckpt.optimizer->v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("checkpoint: bad magic");
  std::uint32_t version;
  std::uint64_t header_len;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&header_len, bytes.data() + 12, 8);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint: format version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  if (20 + header_len > bytes.size()) throw LengthError("checkpoint: header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  if (header.value("format_version", -1) != kCheckpointVersion) throw VersionError("checkpoint: header version mismatch");
  const auto blob = bytes.subspan(20 + header_len);

  Checkpoint c;
  try {
    c.spec = header.at("model").get<nn::ModelSpec>();
    const auto stored_shapes = header.at("shapes").get<std::vector<nn::Shape>>();
    if (stored_shapes != nn::infer_shapes(c.spec)) throw ShapeError("checkpoint: stored shapes do not match the model spec");
    const auto count = header.at("parameter_count").get<std::size_t>();
    if (count != nn::count_parameters(c.spec)) throw ShapeError("checkpoint: parameter count does not match the model spec");
    const auto& p = header.at("blob").at("parameters");
    c.parameters = take_array<float>(blob, p.at("offset").get<std::size_t>(), p.at("count").get<std::size_t>());
    if (c.parameters.size() != count) throw ShapeError("checkpoint: parameter blob size mismatch");
    if (header.contains("optimizer")) {
      const auto& o = header.at("optimizer");
      optim::OptimState s;
      s.kind = optim::optimizer_from(o.at("kind").get<std::string>());
      s.hyper = o.at("hyper").get<optim::Hyperparameters>();
      s.step = o.at("step").get<std::int64_t>();
      const auto& m = o.at("first_moment");
      const auto& v = o.at("second_moment");
      s.m = take_array<double>(blob, m.at("offset").get<std::size_t>(), m.at("count").get<std::size_t>());
      s.v = take_array<double>(blob, v.at("offset").get<std::size_t>(), v.at("count").get<std::size_t>());
      c.optimizer = std::move(s);
    }
    c.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace seld
