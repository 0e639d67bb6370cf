#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace blindtrust {

// SHA-256 output; the currency of PCR values, policy digests, audit digests
// and key/index names throughout the protocol stack.
using Digest = std::array<std::uint8_t, 32>;

// TPM object name: 2-byte hash algorithm identifier followed by a digest
// over the object's public area.
using Name = std::array<std::uint8_t, 34>;

// Session and challenge nonces.
using Nonce = std::array<std::uint8_t, 16>;

// Symmetric hash key shared between the orchestrator and one agent.
using HmacKey = std::array<std::uint8_t, 32>;

using Bytes = std::vector<std::uint8_t>;

inline constexpr Digest kZeroDigest{};

std::string toHex(std::span<const std::uint8_t> data);
std::optional<Bytes> fromHex(std::string_view hex);

// Fixed-width variant; empty optional when the length or characters are off.
template <std::size_t N>
std::optional<std::array<std::uint8_t, N>> fromHexFixed(std::string_view hex) {
    auto raw = fromHex(hex);
    if (!raw || raw->size() != N) return std::nullopt;
    std::array<std::uint8_t, N> out{};
    std::copy(raw->begin(), raw->end(), out.begin());
    return out;
}

// Abbreviates a hex string for human-readable trace rendering.
std::string abbrevHex(std::span<const std::uint8_t> data, std::size_t keep = 8);

Bytes asBytes(std::string_view text);

}  // namespace blindtrust
