#include "lsr/serialize.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "lsr/errors.hpp"

namespace lsr {

uint32_t crc32_of(std::span<const uint8_t> bytes) {
    uLong crc = ::crc32(0L, nullptr, 0);
    return static_cast<uint32_t>(::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

void ByteWriter::u16le(uint16_t v) {
    buf_.push_back(static_cast<uint8_t>(v & 0xff));
    buf_.push_back(static_cast<uint8_t>(v >> 8));
}

void ByteWriter::u32le(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f32le(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32le(bits);
}

void ByteWriter::raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

void ByteReader::need(size_t n) {
    if (pos_ + n > bytes_.size())
        throw FormatError("truncated stream at offset " + std::to_string(pos_) + ": need " +
                          std::to_string(n) + " more bytes, have " +
                          std::to_string(bytes_.size() - pos_));
}

uint8_t ByteReader::u8() {
    need(1);
    return bytes_[pos_++];
}

uint16_t ByteReader::u16le() {
    need(2);
    uint16_t v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
}

uint32_t ByteReader::u32le() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

float ByteReader::f32le() {
    const uint32_t bits = u32le();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

std::string ByteReader::str(size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
}

void ByteReader::skip(size_t n) {
    need(n);
    pos_ += n;
}

void ByteReader::verify_crc_trailer(const char* what) {
    if (bytes_.size() < 4)
        throw FormatError(std::string(what) + ": stream too short for CRC trailer");
    const size_t body = bytes_.size() - 4;
    const uint32_t stored = static_cast<uint32_t>(bytes_[body]) |
                            (static_cast<uint32_t>(bytes_[body + 1]) << 8) |
                            (static_cast<uint32_t>(bytes_[body + 2]) << 16) |
                            (static_cast<uint32_t>(bytes_[body + 3]) << 24);
    const uint32_t computed = crc32_of(bytes_.subspan(0, body));
    if (stored != computed) {
        char msg[160];
        std::snprintf(msg, sizeof msg,
                      "%s: CRC mismatch at offset %zu (stored 0x%08x, computed 0x%08x)",
                      what, body, stored, computed);
        throw FormatError(msg);
    }
    bytes_ = bytes_.subspan(0, body);
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw FormatError("failed reading file: " + path);
    return bytes;
}

void write_file(const std::string& path, std::span<const uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot create file: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("failed writing file: " + path);
}

} // namespace lsr
