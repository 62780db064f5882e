#pragma once

#include <filesystem>
#include <iosfwd>

#include "faster/synth.hpp"

namespace faster {

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Little-endian binary layout: "FVDS", u32 version, u32 count, then per
/// sample u32 id, u16 label, u16 T, u16 H, u16 W and T*H*W*3 raw bytes.
void write_dataset(std::ostream& out, const Dataset& dataset);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);

/// Throws FormatError (bad magic), VersionError, TruncatedError, and
/// DataError when `num_classes` > 0 and a label is not below it.
Dataset read_dataset(std::istream& in, Index num_classes = 0);
Dataset read_dataset(const std::filesystem::path& path, Index num_classes = 0);

}  // namespace faster
