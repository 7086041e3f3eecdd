#include "lgpt/numerics/checkpoint.hpp"

#include "lgpt/error.hpp"
#include "lgpt/io/binary.hpp"

#include <fstream>

namespace lgpt {

namespace {
constexpr char kMagic[8] = {'L', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
    io::ByteWriter w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw FormatError("tensor name too long: " + name);
        if (t.rank() > 0xff) throw FormatError("tensor rank too large: " + name);
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (auto e : t.shape()) w.u64(e);
        for (double v : t.values()) w.f32(static_cast<float>(v));
    }
    io::write_file_atomic(path, w.buffer());
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
    const auto data = io::read_file(path);
    io::ByteReader r(data, path.string());
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (!std::equal(magic, magic + 8, kMagic)) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const auto version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(path.string() + ": checkpoint version " + std::to_string(version) + " unsupported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    }
    const auto count = r.u32();
    TensorMap out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto len = r.u16();
        std::string name(len, '\0');
        r.bytes(name.data(), len);
        const auto rank = r.u8();
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<std::size_t>(r.u64());
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = r.f32();
        out.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes after checkpoint");
    return out;
}

TensorMap with_prefix(const TensorMap& tensors, const std::string& prefix) {
    TensorMap out;
    for (const auto& [name, t] : tensors) out.emplace(prefix + name, t);
    return out;
}

TensorMap under_prefix(const TensorMap& tensors, const std::string& prefix) {
    TensorMap out;
    for (const auto& [name, t] : tensors) {
        if (name.compare(0, prefix.size(), prefix) == 0) out.emplace(name.substr(prefix.size()), t);
    }
    return out;
}

} // namespace lgpt
