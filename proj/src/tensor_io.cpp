#include "ipformer/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace ipf::io {
namespace {

constexpr std::array<char, 4> kMagic{'I', 'P', 'T', 'F'};

void put_u32(std::ostream& out, std::uint32_t v)
{
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(const unsigned char* b)
{
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void read_exact(std::istream& in, void* dst, std::size_t n, const char* what)
{
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw InputError(std::string("IPTF: truncated ") + what);
    }
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return in;
}

bool at_eof(std::istream& in)
{
    return in.peek() == std::char_traits<char>::eof();
}

} // namespace

void write_tensor(std::ostream& out, const Tensor<float>& t)
{
    if (t.rank() < 1 || t.rank() > 255) throw DimensionError("IPTF: rank must be 1..255");
    out.write(kMagic.data(), kMagic.size());
    out.put(static_cast<char>(t.rank()));
    for (Index e : t.shape()) {
        if (e > Index(UINT32_MAX)) throw DimensionError("IPTF: extent exceeds u32");
        put_u32(out, static_cast<std::uint32_t>(e));
    }
    for (float v : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    if (!out) throw InputError("IPTF: write failed");
}

Tensor<float> read_tensor(std::istream& in)
{
    std::array<char, 4> magic{};
    read_exact(in, magic.data(), magic.size(), "magic");
    if (magic != kMagic) throw InputError("IPTF: bad magic");
    unsigned char rank = 0;
    read_exact(in, &rank, 1, "rank");
    if (rank == 0) throw InputError("IPTF: rank 0 is not allowed");

    std::vector<unsigned char> header(std::size_t(rank) * 4);
    read_exact(in, header.data(), header.size(), "extents");
    Shape shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = get_u32(header.data() + 4 * i);
        if (shape[i] == 0) throw InputError("IPTF: zero extent");
    }

    const Index count = shape_product(shape);
    std::vector<unsigned char> raw(static_cast<std::size_t>(count) * 4);
    read_exact(in, raw.data(), raw.size(), "payload");
    std::vector<float> values(static_cast<std::size_t>(count));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = std::bit_cast<float>(get_u32(raw.data() + 4 * i));
    return Tensor<float>(std::move(shape), std::span<const float>(values));
}

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    write_tensor(out, t);
}

Tensor<float> read_tensor_file(const std::filesystem::path& path)
{
    auto in = open_in(path);
    Tensor<float> t = read_tensor(in);
    if (!at_eof(in)) throw InputError("IPTF: trailing bytes after record in " + path.string());
    return t;
}

std::vector<Tensor<float>> read_tensor_records(const std::filesystem::path& path)
{
    auto in = open_in(path);
    std::vector<Tensor<float>> out;
    while (!at_eof(in)) out.push_back(read_tensor(in));
    if (out.empty()) throw InputError("IPTF: no records in " + path.string());
    return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint)
{
    return std::filesystem::path(checkpoint.string() + ".manifest");
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors)
{
    std::ofstream out(path, std::ios::binary);
    std::ofstream manifest(manifest_path(path));
    if (!out || !manifest) throw InputError("cannot write checkpoint " + path.string());
    manifest << "# name rank extents...\n";
    for (const auto& [name, t] : tensors) {
        write_tensor(out, t);
        manifest << name << ' ' << t.rank();
        for (Index e : t.shape()) manifest << ' ' << e;
        manifest << '\n';
    }
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream manifest(manifest_path(path));
    if (!manifest) throw InputError("cannot open manifest " + manifest_path(path).string());
    std::vector<std::pair<std::string, Shape>> entries;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string name;
        Index rank = 0;
        if (!(ls >> name >> rank) || rank < 1) throw InputError("malformed manifest line: " + line);
        Shape shape(static_cast<std::size_t>(rank));
        for (auto& e : shape) {
            if (!(ls >> e)) throw InputError("malformed manifest line: " + line);
        }
        entries.emplace_back(std::move(name), std::move(shape));
    }

    auto records = read_tensor_records(path);
    if (records.size() != entries.size()) {
        throw InputError("checkpoint has " + std::to_string(records.size()) + " records, manifest lists " +
                         std::to_string(entries.size()));
    }
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].shape() != entries[i].second) {
            throw InputError("checkpoint tensor '" + entries[i].first + "' has shape " +
                             shape_string(records[i].shape()) + ", manifest says " +
                             shape_string(entries[i].second));
        }
        out.push_back({entries[i].first, std::move(records[i])});
    }
    return out;
}

} // namespace ipf::io
