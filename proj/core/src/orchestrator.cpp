#include "blindtrust/orchestrator.h"

#include <algorithm>

namespace blindtrust {

const char* rejectReasonName(RejectReason r) {
    switch (r) {
        case RejectReason::None: return "none";
        case RejectReason::UnknownVf: return "unknown-vf";
        case RejectReason::NoPending: return "no-pending";
        case RejectReason::Name: return "name";
        case RejectReason::Magic: return "magic";
        case RejectReason::Template: return "template";
        case RejectReason::Policy: return "policy";
        case RejectReason::Signature: return "signature";
        case RejectReason::NvContents: return "nv-contents";
        case RejectReason::AuditDigest: return "audit-digest";
        case RejectReason::IndexInUse: return "index-in-use";
        case RejectReason::UnknownIndex: return "unknown-index";
    }
    return "unknown";
}

Orchestrator::Orchestrator(const std::array<std::uint8_t, 32>& seedBlock) {
    Digest ekSeed = crypto::sha256Cat({seedBlock, asBytes("orc-ek")});
    ek_ = crypto::SigningKeyPair::fromSeed(ekSeed);
    ekPublicArea_ = encodeKeyPublicArea(
        ek_.scheme, kAttrRestricted | kAttrSign | kAttrFixedTpm | kAttrSensitiveDataOrigin,
        kZeroDigest, ek_.publicKey);
    ekName_ = crypto::computeName(ekPublicArea_);
}

crypto::Signature Orchestrator::signDigest(const Digest& d) const {
    return crypto::sign(ek_.secretKey, d);
}

Digest Orchestrator::flexiblePolicy(const Name& authorizerName) {
    // H(H(0..0 || CC_PolicyAuthorize || name)); the outer hash folds in the
    // empty policyRef. Objects bound to this digest can only be used after a
    // policy signed by the authorizer has been fulfilled.
    Digest inner =
        crypto::sha256Cat({kZeroDigest, ccBytes(CommandCode::PolicyAuthorize), authorizerName});
    return crypto::sha256(inner);
}

Digest Orchestrator::nvDeletionPolicy(const Name& authorizerName) {
    // flexible policy || CC_PolicyCommandCode || CC_NV_UndefineSpaceSpecial:
    // the index is deletable only through an authorized policy that is also
    // locked to the undefine command.
    return crypto::sha256Cat({flexiblePolicy(authorizerName),
                              ccBytes(CommandCode::PolicyCommandCode),
                              ccBytes(CommandCode::NvUndefineSpaceSpecial)});
}

Digest Orchestrator::policySignedPolicy(const Name& authorizerName) {
    // H(H(0..0 || CC_PolicySigned || name)), empty policyRef.
    Digest inner =
        crypto::sha256Cat({kZeroDigest, ccBytes(CommandCode::PolicySigned), authorizerName});
    return crypto::sha256(inner);
}

Digest Orchestrator::accumulatePolicy(std::span<const MockNvEntry> mockNv,
                                      std::span<const MockPcrEntry> mockPcr) {
    Digest hPol = kZeroDigest;
    for (const MockNvEntry& e : mockNv) {
        // args = H(value || offset || operation), both 0x0000
        Digest args = crypto::sha256Cat({e.value, be16(0), be16(0)});
        hPol = crypto::sha256Cat({hPol, ccBytes(CommandCode::PolicyNv), args, e.name});
    }
    if (!mockPcr.empty()) {
        crypto::Sha256 h;
        std::vector<std::uint32_t> indices;
        indices.reserve(mockPcr.size());
        for (const MockPcrEntry& e : mockPcr) {
            h.update(e.value);
            indices.push_back(e.index);
        }
        Digest pcrDigest = h.finish();
        hPol = crypto::sha256Cat({hPol, ccBytes(CommandCode::PolicyPcr),
                                  encodePcrSelection(indices), pcrDigest});
    }
    return hPol;
}

Digest Orchestrator::reconstructAuditDigest(std::uint32_t index, bool nv, const Digest& hUpdate,
                                            std::span<const MockNvEntry> mockNv) {
    Digest cpHash = kZeroDigest;
    Digest rpHash = kZeroDigest;
    if (nv) {
        const MockNvEntry* entry = nullptr;
        for (const MockNvEntry& e : mockNv) {
            if (e.handle == index) entry = &e;
        }
        if (!entry) return kZeroDigest;
        // cpHash = H(CC_NV_Extend || name || name || len(h) || h)
        cpHash = crypto::sha256Cat({ccBytes(CommandCode::NvExtend), entry->name, entry->name,
                                    be16(32), hUpdate});
        rpHash = crypto::sha256Cat({be32(kRcSuccess), ccBytes(CommandCode::NvExtend)});
    } else {
        // cpHash = H(CC_PCR_Extend || idx || idx || authHash || h)
        cpHash = crypto::sha256Cat({ccBytes(CommandCode::PcrExtend), be32(index), be32(index),
                                    be16(kAlgSha256), hUpdate});
        rpHash = crypto::sha256Cat({be32(kRcSuccess), ccBytes(CommandCode::PcrExtend)});
    }
    return crypto::sha256Cat({kZeroDigest, cpHash, rpHash});
}

void Orchestrator::registerVf(const std::string& vfId, Bytes ekPublicArea, const HmacKey& hk) {
    VfRecord rec;
    rec.vfId = vfId;
    rec.ekPublicArea = std::move(ekPublicArea);
    auto parsed = parseKeyPublicArea(rec.ekPublicArea);
    rec.ekPublicKey = parsed ? parsed->publicKey : Bytes{};
    rec.ekName = crypto::computeName(rec.ekPublicArea);
    rec.hk = hk;
    records_[vfId] = std::move(rec);
}

void Orchestrator::assignChain(const std::string& chainId, const std::string& vfId) {
    auto& chain = graph_.chains[chainId];
    if (std::find(chain.begin(), chain.end(), vfId) == chain.end()) chain.push_back(vfId);
}

const VfRecord* Orchestrator::record(const std::string& vfId) const {
    auto it = records_.find(vfId);
    return it == records_.end() ? nullptr : &it->second;
}

VfRecord* Orchestrator::mutableRecord(const std::string& vfId) {
    auto it = records_.find(vfId);
    return it == records_.end() ? nullptr : &it->second;
}

std::optional<AkCreationRequest> Orchestrator::beginEnrollment(const std::string& vfId) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return std::nullopt;
    AkCreationRequest req;
    req.vfId = vfId;
    req.attributes = kAkAttributes;
    req.hPol = flexiblePolicy(ekName_);
    rec->pendingEnrollment = VfRecord::PendingEnrollment{req.hPol, req.attributes};
    return req;
}

VerifyOutcome Orchestrator::verifyAkCertificate(const std::string& vfId,
                                                const CreationCertInfo& certInfo,
                                                const crypto::Signature& sig,
                                                std::span<const std::uint8_t> akPublicArea) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return VerifyOutcome::fail(RejectReason::UnknownVf);
    if (!rec->pendingEnrollment) return VerifyOutcome::fail(RejectReason::NoPending);
    auto pending = *rec->pendingEnrollment;
    rec->pendingEnrollment.reset();  // one shot either way

    auto failWith = [](RejectReason r) { return VerifyOutcome::fail(r); };

    // (1) the certified name must match the presented public area
    if (crypto::computeName(akPublicArea) != certInfo.objName)
        return failWith(RejectReason::Name);

    // (2) TPM-generated structure carrying the requested template
    if (certInfo.magic != kTpmGeneratedMagic) return failWith(RejectReason::Magic);
    auto parsed = parseKeyPublicArea(akPublicArea);
    if (!parsed || parsed->scheme != kSchemeEd25519 || parsed->attributes != pending.attributes ||
        certInfo.attributes != pending.attributes)
        return failWith(RejectReason::Template);

    // (3) the key is locked to the requested flexible policy
    if (certInfo.authPolicy != pending.hPol || parsed->authPolicy != pending.hPol)
        return failWith(RejectReason::Policy);

    // (4) certified by the VF's EK
    if (!crypto::verifySig(rec->ekPublicKey, certInfo.encode(), sig))
        return failWith(RejectReason::Signature);

    rec->akPublicArea = Bytes(akPublicArea.begin(), akPublicArea.end());
    AdvertiseNotice notice = advertisementFor(vfId);
    rec->akSignature = notice.signature;
    graph_.directory[vfId] = DirectoryEntry{*rec->akPublicArea, notice.signature};
    return VerifyOutcome::pass();
}

AdvertiseNotice Orchestrator::advertisementFor(const std::string& vfId) const {
    AdvertiseNotice notice;
    notice.vfId = vfId;
    const VfRecord* rec = record(vfId);
    if (rec && rec->akPublicArea) notice.akPublicArea = *rec->akPublicArea;
    Bytes idBytes = asBytes(vfId);
    ByteWriter w;
    w.sized(idBytes).raw(notice.akPublicArea);
    Digest d = crypto::sha256(w.bytes());
    notice.signature = signDigest(d);
    return notice;
}

RevocationNotice Orchestrator::revoke(const std::string& vfId) {
    graph_.directory.erase(vfId);
    RevocationNotice notice;
    notice.vfId = vfId;
    Bytes idBytes = asBytes(vfId);
    ByteWriter w;
    w.sized(idBytes).raw(asBytes("REVOKED"));
    notice.signature = signDigest(crypto::sha256(w.bytes()));
    return notice;
}

Digest Orchestrator::authenticateMeasurement(const std::string& vfId,
                                             std::span<const std::uint8_t> content) const {
    const VfRecord* rec = record(vfId);
    if (!rec) return kZeroDigest;
    // h_update = HMAC(hk, H(content))
    return crypto::hmacSha256Cat(rec->hk, {crypto::sha256(content)});
}

void Orchestrator::setReference(const std::string& vfId, const std::string& fqpn, Bytes content,
                                std::uint64_t generation, std::uint64_t version) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return;
    rec->referenceConfig[fqpn] = ReferenceObject{std::move(content), generation, version};
}

std::optional<Digest> Orchestrator::referenceMeasurement(const std::string& vfId,
                                                         const std::string& fqpn) const {
    const VfRecord* rec = record(vfId);
    if (!rec) return std::nullopt;
    auto it = rec->referenceConfig.find(fqpn);
    if (it == rec->referenceConfig.end()) return std::nullopt;
    ByteWriter w;
    w.raw(it->second.content).u64(it->second.generation).u64(it->second.version);
    return authenticateMeasurement(vfId, w.bytes());
}

std::optional<UpdateRequest> Orchestrator::composePolicyUpdate(const std::string& vfId,
                                                               std::uint32_t index, bool nv,
                                                               const Digest& hUpdate,
                                                               const std::string& fqpn) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return std::nullopt;

    // Work on copies: the mock state is committed only after the audit digest
    // verifies, so a failed or lost update leaves it untouched.
    std::vector<MockNvEntry> nvCopy = rec->mockNvPcr;
    std::vector<MockPcrEntry> pcrCopy = rec->mockPcr;
    bool found = false;
    if (nv) {
        for (MockNvEntry& e : nvCopy) {
            if (e.handle == index) {
                e.value = crypto::sha256Cat({e.value, hUpdate});
                found = true;
            }
        }
    } else {
        for (MockPcrEntry& e : pcrCopy) {
            if (e.index == index) {
                e.value = crypto::sha256Cat({e.value, hUpdate});
                found = true;
            }
        }
    }
    if (!found) return std::nullopt;

    UpdateRequest req;
    req.vfId = vfId;
    req.fqpn = fqpn;
    req.index = index;
    req.nv = nv;
    req.hPol = accumulatePolicy(nvCopy, pcrCopy);
    req.hPolHashed = crypto::sha256(req.hPol);
    req.signature = signDigest(req.hPolHashed);

    rec->pendingUpdate =
        VfRecord::PendingUpdate{index, nv, hUpdate, req.hPol, req.signature};
    return req;
}

VerifyOutcome Orchestrator::verifyAudit(const std::string& vfId, std::uint32_t index, bool nv,
                                        const Digest& hUpdate, const AuditInfo& auditInfo,
                                        const crypto::Signature& sig) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return VerifyOutcome::fail(RejectReason::UnknownVf);
    if (!rec->pendingUpdate || rec->pendingUpdate->index != index ||
        rec->pendingUpdate->nv != nv || rec->pendingUpdate->hUpdate != hUpdate)
        return VerifyOutcome::fail(RejectReason::NoPending);
    auto pending = *rec->pendingUpdate;
    rec->pendingUpdate.reset();  // rolled back unless every check passes

    if (auditInfo.magic != kTpmGeneratedMagic) return VerifyOutcome::fail(RejectReason::Magic);

    Digest expected = reconstructAuditDigest(index, nv, hUpdate, rec->mockNvPcr);
    if (expected != auditInfo.sessionDigest)
        return VerifyOutcome::fail(RejectReason::AuditDigest);

    if (!crypto::verifySig(rec->ekPublicKey, auditInfo.encode(), sig))
        return VerifyOutcome::fail(RejectReason::Signature);

    // Commit: the mock entry advances by exactly one fold.
    if (nv) {
        for (MockNvEntry& e : rec->mockNvPcr)
            if (e.handle == index) e.value = crypto::sha256Cat({e.value, hUpdate});
    } else {
        for (MockPcrEntry& e : rec->mockPcr)
            if (e.index == index) e.value = crypto::sha256Cat({e.value, hUpdate});
    }
    rec->lastPolicy = std::make_pair(pending.hPol, pending.signature);
    return VerifyOutcome::pass();
}

std::optional<AttachRequest> Orchestrator::requestPcrAttach(const std::string& vfId,
                                                            std::uint32_t index, bool nv,
                                                            const Digest& iv) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return std::nullopt;

    AttachRequest req;
    req.vfId = vfId;
    req.index = index;
    req.nv = nv;
    req.iv = iv;

    if (!nv) {
        for (const MockPcrEntry& e : rec->mockPcr)
            if (e.index == index) return std::nullopt;  // index-in-use
        MockPcrEntry entry{index, crypto::sha256Cat({kZeroDigest, iv})};
        auto pos = std::lower_bound(
            rec->mockPcr.begin(), rec->mockPcr.end(), entry,
            [](const MockPcrEntry& a, const MockPcrEntry& b) { return a.index < b.index; });
        rec->mockPcr.insert(pos, entry);
        return req;
    }

    for (const MockNvEntry& e : rec->mockNvPcr)
        if (e.handle == index) return std::nullopt;  // index-in-use
    if (rec->pendingAttach && rec->pendingAttach->handle == index) return std::nullopt;

    NvTemplate tpl;
    tpl.hashAlg = kAlgSha256;
    tpl.attributes = kNvPcrAttributes;
    tpl.authPolicy = nvDeletionPolicy(ekName_);
    req.nvTemplate = tpl;
    // The mock entry is added only after the creation certificate verifies.
    rec->pendingAttach = VfRecord::PendingAttach{index, tpl, iv};
    return req;
}

VerifyOutcome Orchestrator::verifyNvPcrCertificate(const std::string& vfId,
                                                   const NvCertInfo& certInfo,
                                                   const crypto::Signature& sig) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return VerifyOutcome::fail(RejectReason::UnknownVf);
    if (!rec->pendingAttach) return VerifyOutcome::fail(RejectReason::NoPending);
    auto pending = *rec->pendingAttach;
    rec->pendingAttach.reset();

    if (certInfo.magic != kTpmGeneratedMagic) return VerifyOutcome::fail(RejectReason::Magic);

    // nvContents = H(0..0 || IV): the index was created and seeded correctly
    Digest expectedContents = crypto::sha256Cat({kZeroDigest, pending.iv});
    if (certInfo.nvContents != expectedContents)
        return VerifyOutcome::fail(RejectReason::NvContents);

    // objName over the template plus the WRITTEN attribute: the index carries
    // the requested attributes and is bound to the deletion policy
    Name expectedName =
        crypto::computeName(encodeNvPublicArea(pending.handle, pending.tpl, true));
    if (certInfo.objName != expectedName) return VerifyOutcome::fail(RejectReason::Name);

    if (!crypto::verifySig(rec->ekPublicKey, certInfo.encode(), sig))
        return VerifyOutcome::fail(RejectReason::Signature);

    rec->mockNvPcr.push_back(MockNvEntry{pending.handle, expectedContents, certInfo.objName});
    return VerifyOutcome::pass();
}

std::optional<DeletionGrant> Orchestrator::authorizeNvDeletion(const std::string& vfId,
                                                               std::uint32_t index,
                                                               const Nonce& sessionNonce) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return std::nullopt;
    const MockNvEntry* entry = nullptr;
    for (const MockNvEntry& e : rec->mockNvPcr)
        if (e.handle == index) entry = &e;
    if (!entry) return std::nullopt;

    DeletionGrant grant;
    grant.vfId = vfId;
    grant.index = index;
    grant.hPol = policySignedPolicy(ekName_);
    grant.hPolHashed = crypto::sha256(grant.hPol);
    grant.hPolSignature = signDigest(grant.hPolHashed);
    // h_cp = H(CC_NV_UndefineSpaceSpecial || name(idx) || platform handle):
    // the grant deletes this index and no other.
    grant.hCp = crypto::sha256Cat({ccBytes(CommandCode::NvUndefineSpaceSpecial), entry->name,
                                   be32(kPlatformHierarchyHandle)});
    // aHash = H(nonce || expiration(0) || h_cp)
    Digest aHash = crypto::sha256Cat({sessionNonce, be32(0), grant.hCp});
    grant.aHashSignature = signDigest(aHash);

    std::erase_if(rec->mockNvPcr, [&](const MockNvEntry& e) { return e.handle == index; });
    return grant;
}

std::optional<DetachRequest> Orchestrator::requestPcrDetach(const std::string& vfId,
                                                            std::uint32_t index) {
    VfRecord* rec = mutableRecord(vfId);
    if (!rec) return std::nullopt;
    auto before = rec->mockPcr.size();
    std::erase_if(rec->mockPcr, [&](const MockPcrEntry& e) { return e.index == index; });
    if (rec->mockPcr.size() == before) return std::nullopt;  // unknown-index
    DetachRequest req;
    req.vfId = vfId;
    req.index = index;
    req.nv = false;
    return req;
}

nlohmann::json Orchestrator::exportRecords() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [id, rec] : records_) {
        nlohmann::json j;
        j["ek_name"] = toHex(rec.ekName);
        j["enrolled"] = rec.akPublicArea.has_value();
        nlohmann::json mpcr = nlohmann::json::array();
        for (const auto& e : rec.mockPcr)
            mpcr.push_back({{"index", e.index}, {"value", toHex(e.value)}});
        j["mock_pcr"] = mpcr;
        nlohmann::json mnv = nlohmann::json::array();
        for (const auto& e : rec.mockNvPcr)
            mnv.push_back({{"handle", e.handle},
                           {"value", toHex(e.value)},
                           {"name", toHex(e.name)}});
        j["mock_nvpcr"] = mnv;
        if (rec.lastPolicy) j["last_policy"] = toHex(rec.lastPolicy->first);
        out[id] = j;
    }
    return out;
}

}  // namespace blindtrust
