#include "blindtrust/encoding.h"

#include <algorithm>

namespace blindtrust {

const char* commandName(CommandCode cc) {
    switch (cc) {
        case CommandCode::GetSessionAuditDigest: return "TPM2_GetSessionAuditDigest";
        case CommandCode::NvUndefineSpaceSpecial: return "TPM2_NV_UndefineSpaceSpecial";
        case CommandCode::EvictControl: return "TPM2_EvictControl";
        case CommandCode::NvDefineSpace: return "TPM2_NV_DefineSpace";
        case CommandCode::NvExtend: return "TPM2_NV_Extend";
        case CommandCode::PolicyNv: return "TPM2_PolicyNV";
        case CommandCode::CertifyCreation: return "TPM2_CertifyCreation";
        case CommandCode::NvRead: return "TPM2_NV_Read";
        case CommandCode::Create: return "TPM2_Create";
        case CommandCode::Load: return "TPM2_Load";
        case CommandCode::Sign: return "TPM2_Sign";
        case CommandCode::PolicySigned: return "TPM2_PolicySigned";
        case CommandCode::FlushContext: return "TPM2_FlushContext";
        case CommandCode::PolicyAuthorize: return "TPM2_PolicyAuthorize";
        case CommandCode::PolicyCommandCode: return "TPM2_PolicyCommandCode";
        case CommandCode::StartAuthSession: return "TPM2_StartAuthSession";
        case CommandCode::VerifySignature: return "TPM2_VerifySignature";
        case CommandCode::PolicyPcr: return "TPM2_PolicyPCR";
        case CommandCode::PcrExtend: return "TPM2_PCR_Extend";
        case CommandCode::NvCertify: return "TPM2_NV_Certify";
    }
    return "TPM2_Unknown";
}

std::uint8_t ByteReader::u8() {
    if (!ok_ || pos_ + 1 > data_.size()) {
        ok_ = false;
        return 0;
    }
    return data_[pos_++];
}

std::uint16_t ByteReader::u16() {
    std::uint16_t hi = u8();
    std::uint16_t lo = u8();
    return static_cast<std::uint16_t>((hi << 8) | lo);
}

std::uint32_t ByteReader::u32() {
    std::uint32_t hi = u16();
    std::uint32_t lo = u16();
    return (hi << 16) | lo;
}

std::uint64_t ByteReader::u64() {
    std::uint64_t hi = u32();
    std::uint64_t lo = u32();
    return (hi << 32) | lo;
}

bool ByteReader::raw(std::span<std::uint8_t> out) {
    if (!ok_ || pos_ + out.size() > data_.size()) {
        ok_ = false;
        return false;
    }
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(pos_), out.size(), out.begin());
    pos_ += out.size();
    return true;
}

Bytes ByteReader::rawCopy(std::size_t n) {
    if (!ok_ || pos_ + n > data_.size()) {
        ok_ = false;
        return {};
    }
    Bytes out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
              data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
}

Bytes encodePcrSelection(std::span<const std::uint32_t> indices) {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(indices.size()));
    for (std::uint32_t idx : indices) w.u32(idx);
    return w.take();
}

std::optional<std::vector<std::uint32_t>> parsePcrSelection(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    std::uint8_t count = r.u8();
    std::vector<std::uint32_t> out;
    out.reserve(count);
    for (std::uint8_t i = 0; i < count; ++i) out.push_back(r.u32());
    if (!r.atEnd()) return std::nullopt;
    return out;
}

}  // namespace blindtrust
