#include "lgpt/codec/codec.hpp"

#include "lgpt/error.hpp"
#include "lgpt/io/binary.hpp"

#include <cstdio>
#include <cstring>
#include <sstream>

namespace lgpt::codec {

namespace {
constexpr char kMagic[8] = {'L', 'G', 'P', 'T', 'C', 'O', 'D', 'E'};
}

std::string codes_to_text(const CodeFrameSeq& codes, std::size_t codebook_size) {
    std::ostringstream out;
    out << "# Q=" << codes.active_groups << " K=" << codebook_size << " T=" << codes.frames << '\n';
    for (std::size_t t = 0; t < codes.frames; ++t) {
        for (std::size_t g = 0; g < codes.active_groups; ++g) {
            if (g) out << ' ';
            out << codes.at(t, g);
        }
        out << '\n';
    }
    return out.str();
}

CodeFrameSeq codes_from_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("codes text is empty");
    std::size_t Q = 0, K = 0, T = 0;
    if (std::sscanf(line.c_str(), "# Q=%zu K=%zu T=%zu", &Q, &K, &T) != 3 || Q == 0) {
        throw FormatError("codes text header must read '# Q=<n> K=<n> T=<n>', got '" + line + "'");
    }
    CodeFrameSeq codes(T, Q, Q);
    for (std::size_t t = 0; t < T; ++t) {
        if (!std::getline(in, line)) throw FormatError("codes text ends after " + std::to_string(t) + " frames");
        std::istringstream row(line);
        for (std::size_t g = 0; g < Q; ++g) {
            long v = -1;
            if (!(row >> v) || v < 0 || static_cast<std::size_t>(v) >= K) {
                throw FormatError("codes text line " + std::to_string(t + 2) + ": bad index in group " +
                                  std::to_string(g));
            }
            codes.at(t, g) = static_cast<std::uint16_t>(v);
        }
        std::string extra;
        if (row >> extra) throw FormatError("codes text line " + std::to_string(t + 2) + " has extra values");
    }
    return codes;
}

std::vector<std::uint8_t> codes_to_binary(const CodeFrameSeq& codes) {
    io::ByteWriter w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(static_cast<std::uint32_t>(codes.frames));
    w.u16(static_cast<std::uint16_t>(codes.active_groups));
    for (std::size_t t = 0; t < codes.frames; ++t) {
        for (std::size_t g = 0; g < codes.active_groups; ++g) w.u16(codes.at(t, g));
    }
    return w.buffer();
}

CodeFrameSeq codes_from_binary(const std::vector<std::uint8_t>& bytes) {
    io::ByteReader r(bytes, "codes file");
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw FormatError("codes file has a bad magic header");
    const std::size_t T = r.u32(), Q = r.u16();
    if (Q == 0) throw FormatError("codes file declares zero groups");
    CodeFrameSeq codes(T, Q, Q);
    for (auto& v : codes.indices) v = r.u16();
    if (!r.at_end()) throw FormatError("codes file has trailing bytes");
    return codes;
}

void write_codes(const std::filesystem::path& path, const CodeFrameSeq& codes) {
    io::write_file_atomic(path, codes_to_binary(codes));
}

CodeFrameSeq read_codes(const std::filesystem::path& path) { return codes_from_binary(io::read_file(path)); }

} // namespace lgpt::codec
