#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lsr {

uint32_t crc32_of(std::span<const uint8_t> bytes);

/// Little-endian byte stream builder.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16le(uint16_t v);
    void u32le(uint32_t v);
    void f32le(float v);
    void raw(const void* p, size_t n);
    void str(const std::string& s) { raw(s.data(), s.size()); }
    /// Appends the CRC-32 of everything written so far.
    void crc_trailer() { u32le(crc32_of(buf_)); }

    const std::vector<uint8_t>& bytes() const { return buf_; }
    size_t size() const { return buf_.size(); }

private:
    std::vector<uint8_t> buf_;
};

/// Little-endian reader over a complete in-memory stream. All reads throw
/// FormatError (with the stream offset) on truncation.
class ByteReader {
public:
    explicit ByteReader(std::span<const uint8_t> bytes) : bytes_(bytes) {}

    uint8_t u8();
    uint16_t u16le();
    uint32_t u32le();
    float f32le();
    std::string str(size_t n);
    void skip(size_t n);

    size_t offset() const { return pos_; }
    size_t remaining() const { return bytes_.size() - pos_; }

    /// Validates the trailing CRC-32 against all preceding bytes and restricts
    /// further reads to the protected region.
    void verify_crc_trailer(const char* what);

private:
    void need(size_t n);
    std::span<const uint8_t> bytes_;
    size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const uint8_t> bytes);

} // namespace lsr
