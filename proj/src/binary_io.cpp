#include "cmrr/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace cmrr {

void ByteReader::expect_magic(std::string_view tag) {
    require(tag.size(), "magic");
    if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
        throw ParseError("bad magic at byte offset " + std::to_string(pos_) + ", expected \"" +
                         std::string(tag) + "\"");
    }
    pos_ += tag.size();
}

void ByteReader::require(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
        throw ParseError(std::string("truncated data: need ") + std::to_string(n) + " bytes for " + what +
                         " at byte offset " + std::to_string(pos_) + ", data ends at byte offset " +
                         std::to_string(data_.size()));
    }
}

void ByteReader::expect_end() const {
    if (!at_end()) {
        throw ParseError("unexpected trailing bytes at byte offset " + std::to_string(pos_));
    }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cmrr
