#include "faster/dataset_io.hpp"

#include <array>
#include <fstream>
#include <limits>

#include "faster/errors.hpp"

namespace faster {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'V', 'D', 'S'};

template <typename T>
void put(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw TruncatedError(std::string("dataset truncated while reading ") + what);
  }
}

template <typename T>
T get(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  read_exact(in, reinterpret_cast<char*>(bytes.data()), bytes.size(), what);
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<T>(bytes[i]) << (8 * i));
  return value;
}

std::uint16_t narrow16(Index v, const char* what) {
  if (v < 0 || v > std::numeric_limits<std::uint16_t>::max()) {
    throw DataError(std::string("dataset: ") + what + " " + std::to_string(v) + " does not fit 16 bits");
  }
  return static_cast<std::uint16_t>(v);
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& dataset) {
  if (dataset.size() > std::numeric_limits<std::uint32_t>::max()) throw DataError("dataset: too many samples");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.size()));
  for (const auto& s : dataset.samples) {
    if (s.pixels.size() != static_cast<std::size_t>(s.frames) * s.frame_bytes()) {
      throw DataError("dataset: sample " + std::to_string(s.id) + " pixel count does not match its extents");
    }
    put<std::uint32_t>(out, s.id);
    put<std::uint16_t>(out, s.label);
    put<std::uint16_t>(out, narrow16(s.frames, "frame count"));
    put<std::uint16_t>(out, narrow16(s.height, "height"));
    put<std::uint16_t>(out, narrow16(s.width, "width"));
    out.write(reinterpret_cast<const char*>(s.pixels.data()), static_cast<std::streamsize>(s.pixels.size()));
  }
  if (!out) throw FormatError("dataset: write failed");
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_dataset(out, dataset);
}

Dataset read_dataset(std::istream& in, Index num_classes) {
  std::array<char, 4> magic{};
  read_exact(in, magic.data(), magic.size(), "magic");
  if (magic != kMagic) throw FormatError("not a dataset file: bad magic");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kDatasetVersion) {
    throw VersionError("unsupported dataset version " + std::to_string(version) + " (expected " +
                       std::to_string(kDatasetVersion) + ")");
  }
  const auto count = get<std::uint32_t>(in, "sample count");
  Dataset d;
  for (std::uint32_t i = 0; i < count; ++i) {
    VideoSample s;
    s.id = get<std::uint32_t>(in, "sample id");
    s.label = get<std::uint16_t>(in, "label");
    s.frames = get<std::uint16_t>(in, "frame count");
    s.height = get<std::uint16_t>(in, "height");
    s.width = get<std::uint16_t>(in, "width");
    if (num_classes > 0 && Index{s.label} >= num_classes) {
      throw DataError("sample " + std::to_string(s.id) + " has label " + std::to_string(s.label) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
    s.pixels.resize(static_cast<std::size_t>(s.frames) * s.frame_bytes());
    read_exact(in, reinterpret_cast<char*>(s.pixels.data()), s.pixels.size(), "frames");
    d.samples.push_back(std::move(s));
  }
  return d;
}

Dataset read_dataset(const std::filesystem::path& path, Index num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path.string());
  return read_dataset(in, num_classes);
}

}  // namespace faster
