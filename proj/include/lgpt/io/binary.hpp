#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lgpt::io {

// Little-endian encoder into a growable buffer.
class ByteWriter {
public:
    void bytes(const void* data, std::size_t n);
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i16(std::int16_t v) { u16(static_cast<std::uint16_t>(v)); }
    void f32(float v);

    const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

// Little-endian decoder; throws FormatError on truncation.
class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& data, std::string source) : data_(data), source_(std::move(source)) {}

    void bytes(void* out, std::size_t n);
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    float f32();
    void skip(std::size_t n);

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

private:
    const std::vector<std::uint8_t>& data_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& data);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

} // namespace lgpt::io
