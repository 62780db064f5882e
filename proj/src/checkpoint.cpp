#include "faster/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/crc.hpp>

#include "json.hpp"
#include "faster/errors.hpp"

namespace faster {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are written in host order");

namespace {

using json = nlohmann::json;

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "tensors.bin";

std::size_t dtype_bytes(DType d) { return d == DType::f32 ? 4 : 8; }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const char* data, std::size_t size) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("checkpoint: cannot write " + tmp);
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw FormatError("checkpoint: write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::uint32_t crc32c(std::span<const std::uint8_t> bytes) {
  boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

std::string rng_state_string(const std::mt19937_64& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::mt19937_64 rng_from_state(const std::string& state) {
  std::mt19937_64 rng;
  std::istringstream in(state);
  in >> rng;
  if (!in) throw FormatError("checkpoint: malformed rng state");
  return rng;
}

template <typename Scalar>
void Checkpoint::put(const std::string& name, const Tensor<Scalar>& tensor) {
  TensorRecord r{name, dtype_of<Scalar>(), tensor.shape(), {}};
  r.bytes.resize(static_cast<std::size_t>(tensor.size()) * sizeof(Scalar));
  if (!r.bytes.empty()) std::memcpy(r.bytes.data(), tensor.data(), r.bytes.size());
  for (auto& existing : records_) {
    if (existing.name == name) {
      existing = std::move(r);
      return;
    }
  }
  records_.push_back(std::move(r));
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return true;
  }
  return false;
}

const TensorRecord& Checkpoint::find(const std::string& name) const {
  for (const auto& r : records_) {
    if (r.name == name) return r;
  }
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

template <typename Scalar>
Tensor<Scalar> Checkpoint::get(const std::string& name) const {
  const auto& r = find(name);
  if (r.dtype != dtype_of<Scalar>()) {
    throw FormatError("checkpoint tensor '" + name + "' is " + dtype_name(r.dtype) + ", requested " +
                      dtype_name(dtype_of<Scalar>()));
  }
  Tensor<Scalar> t(r.shape);
  if (!r.bytes.empty()) std::memcpy(t.data(), r.bytes.data(), r.bytes.size());
  return t;
}

template <typename Scalar>
void Checkpoint::restore(const std::string& name, Tensor<Scalar>& target) const {
  const auto& r = find(name);
  if (r.shape != target.shape()) {
    throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(r.shape) + ", model expects " +
                     shape_string(target.shape()));
  }
  target = get<Scalar>(name);
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint) {
  std::filesystem::create_directories(dir);
  std::vector<char> blob;
  json tensors = json::array();
  for (const auto& r : checkpoint.records()) {
    tensors.push_back({{"name", r.name},
                       {"dtype", dtype_name(r.dtype)},
                       {"shape", r.shape},
                       {"byte_offset", blob.size()},
                       {"byte_length", r.bytes.size()},
                       {"crc32c", crc32c(r.bytes)}});
    blob.insert(blob.end(), r.bytes.begin(), r.bytes.end());
  }
  const auto& m = checkpoint.metadata;
  json manifest = {{"format_version", kCheckpointVersion},
                   {"blob", kBlob},
                   {"tensors", tensors},
                   {"metadata",
                    {{"epoch", m.epoch}, {"rng_state", m.rng_state}, {"config_hash", m.config_hash}, {"extra", m.extra}}}};
  write_file(dir / kBlob, blob.data(), blob.size());
  const std::string text = manifest.dump(2) + "\n";
  write_file(dir / kManifest, text.data(), text.size());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifest));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw VersionError("unsupported checkpoint format_version " + std::to_string(version) + " (expected " +
                         std::to_string(kCheckpointVersion) + ")");
    }
    const std::string blob_text = read_file(dir / manifest.value("blob", std::string(kBlob)));
    Checkpoint c;
    for (const auto& t : manifest.at("tensors")) {
      TensorRecord r;
      r.name = t.at("name").get<std::string>();
      r.dtype = parse_dtype(t.at("dtype").get<std::string>());
      r.shape = t.at("shape").get<Shape>();
      const auto offset = t.at("byte_offset").get<std::uint64_t>();
      const auto length = t.at("byte_length").get<std::uint64_t>();
      for (Index e : r.shape) {
        if (e < 0) throw ShapeError("checkpoint tensor '" + r.name + "' has a negative extent");
      }
      if (static_cast<std::uint64_t>(shape_size(r.shape)) * dtype_bytes(r.dtype) != length) {
        throw ShapeError("checkpoint tensor '" + r.name + "' shape " + shape_string(r.shape) +
                         " does not match its byte length " + std::to_string(length));
      }
      if (offset > blob_text.size() || length > blob_text.size() - offset) {
        throw ChecksumError("checkpoint tensor '" + r.name + "' lies past the end of the blob (truncated?)");
      }
      const auto* begin = reinterpret_cast<const std::uint8_t*>(blob_text.data()) + offset;
      r.bytes.assign(begin, begin + length);
      if (crc32c(r.bytes) != t.at("crc32c").get<std::uint32_t>()) {
        throw ChecksumError("checkpoint tensor '" + r.name + "' fails its CRC32C check");
      }
      c.records().push_back(std::move(r));
    }
    const auto& meta = manifest.at("metadata");
    c.metadata.epoch = meta.at("epoch").get<std::int64_t>();
    c.metadata.rng_state = meta.at("rng_state").get<std::string>();
    c.metadata.config_hash = meta.at("config_hash").get<std::string>();
    c.metadata.extra = meta.value("extra", std::map<std::string, std::string>{});
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is malformed: ") + e.what());
  }
}

template void Checkpoint::put<float>(const std::string&, const Tensor<float>&);
template void Checkpoint::put<double>(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get<float>(const std::string&) const;
template Tensor<double> Checkpoint::get<double>(const std::string&) const;
template void Checkpoint::restore<float>(const std::string&, Tensor<float>&) const;
template void Checkpoint::restore<double>(const std::string&, Tensor<double>&) const;

}  // namespace faster
