#pragma once

#include <initializer_list>
#include <span>

#include "blindtrust/digest.h"
#include "blindtrust/encoding.h"

namespace blindtrust::crypto {

using Signature = std::array<std::uint8_t, 64>;

Digest sha256(std::span<const std::uint8_t> data);

// H(a || b || ...) without materializing the concatenation.
Digest sha256Cat(std::initializer_list<std::span<const std::uint8_t>> parts);

class Sha256 {
public:
    Sha256();
    Sha256& update(std::span<const std::uint8_t> data);
    Digest finish();

private:
    alignas(8) unsigned char state_[128];
};

Digest hmacSha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data);
Digest hmacSha256Cat(std::span<const std::uint8_t> key,
                     std::initializer_list<std::span<const std::uint8_t>> parts);

// Deterministic Ed25519 signature key pair. Signatures over a fixed message
// are byte-stable across runs, which keeps scenario traces reproducible.
struct SigningKeyPair {
    Bytes publicKey;   // 32 bytes
    Bytes secretKey;   // 64 bytes
    std::uint16_t scheme = kSchemeEd25519;

    static SigningKeyPair fromSeed(std::span<const std::uint8_t> seed32);
};

Signature sign(std::span<const std::uint8_t> secretKey, std::span<const std::uint8_t> message);

// Returns false on forged, malformed, or wrong-key signatures; never throws.
bool verifySig(std::span<const std::uint8_t> publicKey, std::span<const std::uint8_t> message,
               const Signature& sig);

// name = alg-id (0x000B) || H(public area); 34 bytes.
Name computeName(std::span<const std::uint8_t> publicArea);

}  // namespace blindtrust::crypto
