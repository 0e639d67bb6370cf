#include "blindtrust/digest.h"

namespace blindtrust {

namespace {
constexpr char kHexChars[] = "0123456789abcdef";

int hexNibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}
}  // namespace

std::string toHex(std::span<const std::uint8_t> data) {
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(kHexChars[b >> 4]);
        out.push_back(kHexChars[b & 0x0f]);
    }
    return out;
}

std::optional<Bytes> fromHex(std::string_view hex) {
    if (hex.size() % 2 != 0) return std::nullopt;
    Bytes out;
    out.reserve(hex.size() / 2);
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        int hi = hexNibble(hex[i]);
        int lo = hexNibble(hex[i + 1]);
        if (hi < 0 || lo < 0) return std::nullopt;
        out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
    }
    return out;
}

std::string abbrevHex(std::span<const std::uint8_t> data, std::size_t keep) {
    std::string full = toHex(data);
    if (full.size() <= keep) return full;
    return full.substr(0, keep) + "..";
}

Bytes asBytes(std::string_view text) {
    return Bytes(text.begin(), text.end());
}

}  // namespace blindtrust
