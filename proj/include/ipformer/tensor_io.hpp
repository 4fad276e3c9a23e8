#pragma once

// IPTF container: the 4 magic bytes "IPTF", a u8 rank, `rank` little-endian
// u32 extents, then the values as little-endian IEEE-754 binary32 in
// row-major order. A file may hold several records back to back.

#include "ipformer/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace ipf::io {

void write_tensor(std::ostream& out, const Tensor<float>& t);

template <typename Scalar>
void write_tensor(std::ostream& out, const Tensor<Scalar>& t)
{
    write_tensor(out, t.template cast<float>());
}

/// Reads one record. Throws InputError on bad magic or truncated data.
Tensor<float> read_tensor(std::istream& in);

/// Writes a single-record file.
void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t);

/// Reads a file that must contain exactly one record.
Tensor<float> read_tensor_file(const std::filesystem::path& path);

/// Reads every record of a multi-record file.
std::vector<Tensor<float>> read_tensor_records(const std::filesystem::path& path);

struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
};

/// Checkpoint = multi-record IPTF file plus `<path>.manifest`, one line per
/// record: name, rank, extents.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint);

} // namespace ipf::io
