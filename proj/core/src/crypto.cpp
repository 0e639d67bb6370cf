#include "blindtrust/crypto.h"

#include <sodium.h>

#include <cstring>
#include <stdexcept>

namespace blindtrust::crypto {

namespace {
void ensureSodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}
}  // namespace

Digest sha256(std::span<const std::uint8_t> data) {
    ensureSodium();
    Digest out{};
    crypto_hash_sha256(out.data(), data.data(), data.size());
    return out;
}

Digest sha256Cat(std::initializer_list<std::span<const std::uint8_t>> parts) {
    Sha256 h;
    for (const auto& p : parts) h.update(p);
    return h.finish();
}

Sha256::Sha256() {
    ensureSodium();
    static_assert(sizeof(state_) >= sizeof(crypto_hash_sha256_state));
    crypto_hash_sha256_init(reinterpret_cast<crypto_hash_sha256_state*>(state_));
}

Sha256& Sha256::update(std::span<const std::uint8_t> data) {
    crypto_hash_sha256_update(reinterpret_cast<crypto_hash_sha256_state*>(state_), data.data(),
                              data.size());
    return *this;
}

Digest Sha256::finish() {
    Digest out{};
    crypto_hash_sha256_final(reinterpret_cast<crypto_hash_sha256_state*>(state_), out.data());
    return out;
}

Digest hmacSha256(std::span<const std::uint8_t> key, std::span<const std::uint8_t> data) {
    return hmacSha256Cat(key, {data});
}

Digest hmacSha256Cat(std::span<const std::uint8_t> key,
                     std::initializer_list<std::span<const std::uint8_t>> parts) {
    ensureSodium();
    crypto_auth_hmacsha256_state st;
    crypto_auth_hmacsha256_init(&st, key.data(), key.size());
    for (const auto& p : parts) crypto_auth_hmacsha256_update(&st, p.data(), p.size());
    Digest out{};
    crypto_auth_hmacsha256_final(&st, out.data());
    return out;
}

SigningKeyPair SigningKeyPair::fromSeed(std::span<const std::uint8_t> seed32) {
    ensureSodium();
    if (seed32.size() != crypto_sign_SEEDBYTES)
        throw std::invalid_argument("signing key seed must be 32 bytes");
    SigningKeyPair kp;
    kp.publicKey.resize(crypto_sign_PUBLICKEYBYTES);
    kp.secretKey.resize(crypto_sign_SECRETKEYBYTES);
    crypto_sign_seed_keypair(kp.publicKey.data(), kp.secretKey.data(), seed32.data());
    return kp;
}

Signature sign(std::span<const std::uint8_t> secretKey, std::span<const std::uint8_t> message) {
    ensureSodium();
    if (secretKey.size() != crypto_sign_SECRETKEYBYTES)
        throw std::invalid_argument("malformed signing key");
    Signature sig{};
    crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), secretKey.data());
    return sig;
}

bool verifySig(std::span<const std::uint8_t> publicKey, std::span<const std::uint8_t> message,
               const Signature& sig) {
    ensureSodium();
    if (publicKey.size() != crypto_sign_PUBLICKEYBYTES) return false;
    return crypto_sign_verify_detached(sig.data(), message.data(), message.size(),
                                       publicKey.data()) == 0;
}

Name computeName(std::span<const std::uint8_t> publicArea) {
    Digest d = sha256(publicArea);
    Name name{};
    auto alg = be16(kAlgSha256);
    std::memcpy(name.data(), alg.data(), 2);
    std::memcpy(name.data() + 2, d.data(), d.size());
    return name;
}

}  // namespace blindtrust::crypto
