#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "blindtrust/digest.h"

namespace blindtrust {

// TPM 2.0 command codes for the command subset the protocols invoke.
// The numeric values follow TCG Part 2; only self-consistency between the
// producer and the verifier of a digest matters for the protocol math, so
// this table is the single place they are defined.
enum class CommandCode : std::uint32_t {
    GetSessionAuditDigest = 0x0000011D,
    NvUndefineSpaceSpecial = 0x0000011F,
    EvictControl = 0x00000120,
    NvDefineSpace = 0x0000012A,
    NvExtend = 0x00000136,
    PolicyNv = 0x00000149,
    CertifyCreation = 0x0000014A,
    NvRead = 0x0000014E,
    Create = 0x00000153,
    Load = 0x00000157,
    Sign = 0x0000015D,
    PolicySigned = 0x00000160,
    FlushContext = 0x00000165,
    PolicyAuthorize = 0x0000016A,
    PolicyCommandCode = 0x0000016C,
    StartAuthSession = 0x00000176,
    VerifySignature = 0x00000177,
    PolicyPcr = 0x0000017F,
    PcrExtend = 0x00000182,
    NvCertify = 0x00000184,
};

const char* commandName(CommandCode cc);

// Wire constants. All multi-byte integers are big-endian.
inline constexpr std::uint16_t kAlgSha256 = 0x000B;
inline constexpr std::uint32_t kTpmGeneratedMagic = 0xFF544347;
inline constexpr std::uint32_t kRcSuccess = 0x00000000;
inline constexpr std::uint32_t kPlatformHierarchyHandle = 0x4000000C;
inline constexpr std::uint16_t kTagCreation = 0x8021;
inline constexpr std::uint16_t kTagVerified = 0x8022;

// Artifact-local signature scheme identifier (deterministic Ed25519).
inline constexpr std::uint16_t kSchemeEd25519 = 0x0060;

// Key object attribute bits (TCG TPMA_OBJECT values).
inline constexpr std::uint32_t kAttrFixedTpm = 0x00000002;
inline constexpr std::uint32_t kAttrSensitiveDataOrigin = 0x00000020;
inline constexpr std::uint32_t kAttrAdminWithPolicy = 0x00000080;
inline constexpr std::uint32_t kAttrRestricted = 0x00010000;
inline constexpr std::uint32_t kAttrDecrypt = 0x00020000;
inline constexpr std::uint32_t kAttrSign = 0x00040000;

// NV index attribute bits (TCG TPMA_NV values).
inline constexpr std::uint32_t kNvAttrPolicyWrite = 0x00000008;
inline constexpr std::uint32_t kNvAttrExtend = 0x00000040;  // TPM_NT_EXTEND in bits 7:4
inline constexpr std::uint32_t kNvAttrPolicyDelete = 0x00000400;
inline constexpr std::uint32_t kNvAttrAuthRead = 0x00040000;
inline constexpr std::uint32_t kNvAttrNoDa = 0x02000000;
inline constexpr std::uint32_t kNvAttrWritten = 0x20000000;
inline constexpr std::uint32_t kNvAttrPlatformCreate = 0x40000000;

// NV handles live in a reserved range.
inline constexpr std::uint32_t kNvHandleFirst = 0x01000000;
inline constexpr std::uint32_t kNvHandleLast = 0x0100FFFF;

inline constexpr std::size_t kPcrCount = 24;
inline constexpr std::size_t kMaxSessions = 8;

constexpr std::array<std::uint8_t, 2> be16(std::uint16_t v) {
    return {static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

constexpr std::array<std::uint8_t, 4> be32(std::uint32_t v) {
    return {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
            static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

constexpr std::array<std::uint8_t, 8> be64(std::uint64_t v) {
    return {static_cast<std::uint8_t>(v >> 56), static_cast<std::uint8_t>(v >> 48),
            static_cast<std::uint8_t>(v >> 40), static_cast<std::uint8_t>(v >> 32),
            static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
            static_cast<std::uint8_t>(v >> 8),  static_cast<std::uint8_t>(v)};
}

constexpr std::array<std::uint8_t, 4> ccBytes(CommandCode cc) {
    return be32(static_cast<std::uint32_t>(cc));
}

// Append-only builder for canonical byte strings.
class ByteWriter {
public:
    ByteWriter& u8(std::uint8_t v) {
        buf_.push_back(v);
        return *this;
    }
    ByteWriter& u16(std::uint16_t v) { return raw(be16(v)); }
    ByteWriter& u32(std::uint32_t v) { return raw(be32(v)); }
    ByteWriter& u64(std::uint64_t v) { return raw(be64(v)); }
    ByteWriter& cc(CommandCode v) { return raw(ccBytes(v)); }
    ByteWriter& raw(std::span<const std::uint8_t> data) {
        buf_.insert(buf_.end(), data.begin(), data.end());
        return *this;
    }
    // 2-byte length prefix followed by the bytes (TPM2B convention).
    ByteWriter& sized(std::span<const std::uint8_t> data) {
        u16(static_cast<std::uint16_t>(data.size()));
        return raw(data);
    }
    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

// Sequential reader; all accessors fail sticky once out of bounds.
class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    bool raw(std::span<std::uint8_t> out);
    Bytes rawCopy(std::size_t n);
    bool atEnd() const { return ok_ && pos_ == data_.size(); }
    bool ok() const { return ok_; }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    bool ok_ = true;
};

// PCR selection: count byte followed by ascending 4-byte indices. Both the
// policy producer and the vTPM use this encoder so PolicyPCR digests agree.
Bytes encodePcrSelection(std::span<const std::uint32_t> indices);
std::optional<std::vector<std::uint32_t>> parsePcrSelection(std::span<const std::uint8_t> data);

}  // namespace blindtrust
