#include "blindtrust/vtpm.h"

#include <algorithm>
#include <chrono>

namespace blindtrust {

const char* tpmErrorName(TpmError e) {
    switch (e) {
        case TpmError::SessionSlotsExhausted: return "session-slots-exhausted";
        case TpmError::BadIndex: return "bad-index";
        case TpmError::BadHandleRange: return "bad-handle-range";
        case TpmError::IndexCollision: return "index-collision";
        case TpmError::NvUndefined: return "nv-undefined";
        case TpmError::NvUnwritten: return "nv-unwritten";
        case TpmError::NvMismatch: return "nv-mismatch";
        case TpmError::BadParent: return "bad-parent";
        case TpmError::WrongParent: return "wrong-parent";
        case TpmError::UnknownHandle: return "unknown-handle";
        case TpmError::NoSecret: return "no-secret";
        case TpmError::TicketMismatch: return "ticket-mismatch";
        case TpmError::BadSignature: return "bad-signature";
        case TpmError::BadSelection: return "bad-selection";
        case TpmError::PolicyMismatch: return "policy-mismatch";
        case TpmError::PolicyUnsatisfied: return "policy-unsatisfied";
        case TpmError::CommandCodeMismatch: return "command-code-mismatch";
        case TpmError::CpHashMismatch: return "cp-hash-mismatch";
        case TpmError::RestrictedKeyRefusal: return "restricted-key-refusal";
        case TpmError::WrongSessionKind: return "wrong-session-kind";
    }
    return "unknown-error";
}

Bytes KeyTemplate::encode() const {
    ByteWriter w;
    w.u16(scheme).u32(attributes).raw(authPolicy);
    return w.take();
}

Bytes encodeKeyPublicArea(std::uint16_t scheme, std::uint32_t attributes,
                          const Digest& authPolicy, std::span<const std::uint8_t> publicKey) {
    ByteWriter w;
    w.u16(scheme).u32(attributes).raw(authPolicy).raw(publicKey);
    return w.take();
}

Bytes encodeNvPublicArea(std::uint32_t handle, const NvTemplate& tpl, bool written) {
    std::uint32_t attrs = tpl.attributes;
    if (written) attrs |= kNvAttrWritten;
    ByteWriter w;
    w.u32(handle).u16(tpl.hashAlg).u32(attrs).raw(tpl.authPolicy).u16(32);
    return w.take();
}

std::optional<KeyPublicArea> parseKeyPublicArea(std::span<const std::uint8_t> area) {
    ByteReader r(area);
    KeyPublicArea out;
    out.scheme = r.u16();
    out.attributes = r.u32();
    if (!r.raw(out.authPolicy)) return std::nullopt;
    out.publicKey = r.rawCopy(32);
    if (!r.atEnd()) return std::nullopt;
    return out;
}

std::optional<NvPublicArea> parseNvPublicArea(std::span<const std::uint8_t> area) {
    ByteReader r(area);
    NvPublicArea out;
    out.handle = r.u32();
    out.hashAlg = r.u16();
    out.attributes = r.u32();
    if (!r.raw(out.authPolicy)) return std::nullopt;
    out.dataSize = r.u16();
    if (!r.atEnd()) return std::nullopt;
    return out;
}

Bytes CreationCertInfo::encode() const {
    ByteWriter w;
    w.u32(magic).raw(objName).raw(authPolicy).u32(attributes);
    return w.take();
}

std::optional<CreationCertInfo> CreationCertInfo::parse(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    CreationCertInfo out;
    out.magic = r.u32();
    if (!r.raw(out.objName)) return std::nullopt;
    if (!r.raw(out.authPolicy)) return std::nullopt;
    out.attributes = r.u32();
    if (!r.atEnd()) return std::nullopt;
    return out;
}

Bytes NvCertInfo::encode() const {
    ByteWriter w;
    w.u32(magic).raw(objName).sized(nvContents);
    return w.take();
}

std::optional<NvCertInfo> NvCertInfo::parse(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    NvCertInfo out;
    out.magic = r.u32();
    if (!r.raw(out.objName)) return std::nullopt;
    if (r.u16() != 32) return std::nullopt;
    if (!r.raw(out.nvContents)) return std::nullopt;
    if (!r.atEnd()) return std::nullopt;
    return out;
}

Bytes AuditInfo::encode() const {
    ByteWriter w;
    w.u32(magic).raw(sessionDigest);
    return w.take();
}

std::optional<AuditInfo> AuditInfo::parse(std::span<const std::uint8_t> data) {
    ByteReader r(data);
    AuditInfo out;
    out.magic = r.u32();
    if (!r.raw(out.sessionDigest)) return std::nullopt;
    if (!r.atEnd()) return std::nullopt;
    return out;
}

Digest witness(const Digest& audit, CommandCode cc, std::span<const Bytes> handleNames,
               std::span<const std::uint8_t> params, std::uint32_t rc,
               std::span<const std::uint8_t> rparams) {
    // cpHash = H(CC || name_0 || ... || name_n || params)
    crypto::Sha256 cp;
    cp.update(ccBytes(cc));
    for (const Bytes& n : handleNames) cp.update(n);
    cp.update(params);
    Digest cpHash = cp.finish();

    // rpHash = H(RC || CC || rparams)
    Digest rpHash = crypto::sha256Cat({be32(rc), ccBytes(cc), rparams});

    // audit' = H(audit || cpHash || rpHash)
    return crypto::sha256Cat({audit, cpHash, rpHash});
}

// ---------------------------------------------------------------------------

class VTpm::CommandTimer {
public:
    CommandTimer(VTpm& tpm, const char* name) : tpm_(tpm), name_(name) {
        if (tpm_.sink_) start_ = std::chrono::steady_clock::now();
    }
    ~CommandTimer() {
        if (tpm_.sink_) {
            auto end = std::chrono::steady_clock::now();
            double ms = std::chrono::duration<double, std::milli>(end - start_).count();
            tpm_.sink_(name_, ms);
        }
    }

private:
    VTpm& tpm_;
    const char* name_;
    std::chrono::steady_clock::time_point start_{};
};

Bytes VTpm::LoadedObject::publicArea() const {
    return encodeKeyPublicArea(scheme, attributes, authPolicy, publicKey);
}

Name VTpm::LoadedObject::name() const {
    return crypto::computeName(publicArea());
}

VTpm::VTpm(const std::array<std::uint8_t, 32>& seedBlock) {
    pps_ = crypto::sha256Cat({seedBlock, asBytes("pps")});
    hierarchyProof_ = crypto::sha256Cat({seedBlock, asBytes("proof")});
    Digest rngSeed = crypto::sha256Cat({seedBlock, asBytes("rng")});
    std::uint64_t s = 0;
    for (int i = 0; i < 8; ++i) s = (s << 8) | rngSeed[static_cast<std::size_t>(i)];
    rng_.seed(s);
}

Digest VTpm::nextSeed32() {
    Digest out{};
    fillRandom(out);
    return out;
}

void VTpm::fillRandom(std::span<std::uint8_t> out) {
    std::size_t i = 0;
    while (i < out.size()) {
        std::uint64_t word = rng_();
        for (int b = 7; b >= 0 && i < out.size(); --b)
            out[i++] = static_cast<std::uint8_t>(word >> (b * 8));
    }
}

Digest VTpm::sealKeyFor(const Name& parentName) const {
    return crypto::hmacSha256Cat(pps_, {asBytes("seal"), parentName});
}

const VTpm::LoadedObject* VTpm::findObject(std::uint32_t handle) const {
    if (auto it = transient_.find(handle); it != transient_.end()) return &it->second;
    if (auto it = persistent_.find(handle); it != persistent_.end()) return &it->second;
    return nullptr;
}

VTpm::Session* VTpm::findSession(std::uint32_t handle) {
    auto it = sessions_.find(handle);
    return it == sessions_.end() ? nullptr : &it->second;
}

const VTpm::Session* VTpm::findSession(std::uint32_t handle) const {
    auto it = sessions_.find(handle);
    return it == sessions_.end() ? nullptr : &it->second;
}

TpmResult<StartSessionOut> VTpm::startAuthSession(SessionKind kind) {
    CommandTimer t(*this, "TPM2_StartAuthSession");
    if (sessions_.size() >= kMaxSessions) return TpmError::SessionSlotsExhausted;
    Session s;
    s.handle = nextSession_++;
    s.kind = kind;
    fillRandom(s.nonceTpm);
    sessions_[s.handle] = s;
    return StartSessionOut{s.handle, s.nonceTpm};
}

TpmResult<void> VTpm::auditExtend(std::uint32_t session, CommandCode cc,
                                  std::span<const Bytes> names,
                                  std::span<const std::uint8_t> params) {
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Hmac) return TpmError::WrongSessionKind;
    s->auditDigest = witness(s->auditDigest, cc, names, params, kRcSuccess, {});
    return {};
}

TpmResult<void> VTpm::pcrExtend(std::uint32_t idx, const Digest& d,
                                std::optional<std::uint32_t> auditSession) {
    CommandTimer t(*this, "TPM2_PCR_Extend");
    if (idx >= kPcrCount) return TpmError::BadIndex;
    if (auditSession) {
        const Session* s = findSession(*auditSession);
        if (!s) return TpmError::UnknownHandle;
        if (s->kind != SessionKind::Hmac) return TpmError::WrongSessionKind;
    }

    // PCR' = H(PCR || d)
    pcrs_[idx] = crypto::sha256Cat({pcrs_[idx], d});

    if (auditSession) {
        // A PCR handle's name is the handle value itself.
        auto idxBytes = be32(idx);
        Bytes idxName(idxBytes.begin(), idxBytes.end());
        std::vector<Bytes> names{idxName, idxName};
        ByteWriter params;
        params.u16(kAlgSha256).raw(d);
        return auditExtend(*auditSession, CommandCode::PcrExtend, names, params.bytes());
    }
    return {};
}

TpmResult<Digest> VTpm::pcrRead(std::uint32_t idx) const {
    if (idx >= kPcrCount) return TpmError::BadIndex;
    return pcrs_[idx];
}

TpmResult<void> VTpm::nvDefineSpace(std::uint32_t handle, const NvTemplate& tpl) {
    CommandTimer t(*this, "TPM2_NV_DefineSpace");
    if (handle < kNvHandleFirst || handle > kNvHandleLast) return TpmError::BadHandleRange;
    if (nv_.contains(handle)) return TpmError::IndexCollision;
    NvIndexState st;
    st.tpl = tpl;
    st.handle = handle;
    nv_[handle] = st;
    return {};
}

TpmResult<void> VTpm::nvExtend(std::uint32_t handle, const Digest& d,
                               std::optional<std::uint32_t> auditSession) {
    CommandTimer t(*this, "TPM2_NV_Extend");
    auto it = nv_.find(handle);
    if (it == nv_.end()) return TpmError::NvUndefined;
    if (auditSession) {
        const Session* s = findSession(*auditSession);
        if (!s) return TpmError::UnknownHandle;
        if (s->kind != SessionKind::Hmac) return TpmError::WrongSessionKind;
    }

    NvIndexState& st = it->second;
    // Name at command entry; the WRITTEN attribute is part of the public area.
    Name entryName = st.name();

    // value' = H(value || d); unwritten indices start the chain from the
    // zero digest and become written on the first extend.
    st.value = crypto::sha256Cat({st.written ? st.value : kZeroDigest, d});
    st.written = true;

    if (auditSession) {
        Bytes nameBytes(entryName.begin(), entryName.end());
        std::vector<Bytes> names{nameBytes, nameBytes};
        ByteWriter params;
        params.sized(d);
        return auditExtend(*auditSession, CommandCode::NvExtend, names, params.bytes());
    }
    return {};
}

TpmResult<Digest> VTpm::nvRead(std::uint32_t handle) const {
    auto it = nv_.find(handle);
    if (it == nv_.end()) return TpmError::NvUndefined;
    if (!it->second.written) return TpmError::NvUnwritten;
    return it->second.value;
}

TpmResult<Name> VTpm::nvName(std::uint32_t handle) const {
    auto it = nv_.find(handle);
    if (it == nv_.end()) return TpmError::NvUndefined;
    return it->second.name();
}

TpmResult<NvCertifyOut> VTpm::nvCertify(std::uint32_t handle, std::uint32_t ekHandle) {
    CommandTimer t(*this, "TPM2_NV_Certify");
    auto it = nv_.find(handle);
    if (it == nv_.end()) return TpmError::NvUndefined;
    if (!it->second.written) return TpmError::NvUnwritten;
    const LoadedObject* ek = findObject(ekHandle);
    if (!ek) return TpmError::UnknownHandle;
    if (!ek->secretKey) return TpmError::NoSecret;

    NvCertifyOut out;
    out.certInfo.magic = kTpmGeneratedMagic;
    out.certInfo.objName = it->second.name();
    out.certInfo.nvContents = it->second.value;
    out.signature = signInternal(*ek, out.certInfo.encode());
    return out;
}

TpmResult<std::uint32_t> VTpm::createPrimary(ObjectKind kind) {
    CommandTimer t(*this, "TPM2_CreatePrimary");
    LoadedObject obj;
    obj.kind = kind;
    obj.scheme = kSchemeEd25519;
    switch (kind) {
        case ObjectKind::StorageKey:
            obj.attributes = kAttrRestricted | kAttrDecrypt | kAttrFixedTpm |
                             kAttrSensitiveDataOrigin;
            break;
        case ObjectKind::EndorsementKey:
            obj.attributes = kAttrRestricted | kAttrSign | kAttrFixedTpm |
                             kAttrSensitiveDataOrigin;
            break;
        default:
            return TpmError::BadParent;
    }
    obj.authPolicy = kZeroDigest;
    auto kp = crypto::SigningKeyPair::fromSeed(nextSeed32());
    obj.publicKey = kp.publicKey;
    obj.secretKey = kp.secretKey;
    std::uint32_t handle = nextTransient_++;
    transient_[handle] = obj;
    return handle;
}

TpmResult<std::uint32_t> VTpm::loadExternal(std::span<const std::uint8_t> publicArea) {
    CommandTimer t(*this, "TPM2_LoadExternal");
    auto parsed = parseKeyPublicArea(publicArea);
    if (!parsed) return TpmError::UnknownHandle;
    LoadedObject obj;
    obj.kind = ObjectKind::ExternalPublic;
    obj.scheme = parsed->scheme;
    obj.attributes = parsed->attributes;
    obj.authPolicy = parsed->authPolicy;
    obj.publicKey = parsed->publicKey;
    std::uint32_t handle = nextTransient_++;
    transient_[handle] = obj;
    return handle;
}

TpmResult<CreateOut> VTpm::create(std::uint32_t parentHandle, const KeyTemplate& tpl) {
    CommandTimer t(*this, "TPM2_Create");
    const LoadedObject* parent = findObject(parentHandle);
    if (!parent || parent->kind != ObjectKind::StorageKey || !parent->secretKey)
        return TpmError::BadParent;

    auto kp = crypto::SigningKeyPair::fromSeed(nextSeed32());

    LoadedObject obj;
    obj.kind = ObjectKind::AttestationKey;
    obj.scheme = tpl.scheme;
    obj.attributes = tpl.attributes;
    obj.authPolicy = tpl.authPolicy;
    obj.publicKey = kp.publicKey;
    Name objName = obj.name();

    // Seal the secret under the parent. The stream and the binding MAC are
    // keyed from the platform seed and the parent's name, so the blob loads
    // only under the same parent on the same TPM.
    Digest sealKey = sealKeyFor(parent->name());
    ObjectBlob blob;
    blob.publicArea = obj.publicArea();
    blob.encSecret = kp.secretKey;
    for (std::size_t block = 0; block * 32 < blob.encSecret.size(); ++block) {
        Digest pad = crypto::hmacSha256Cat(sealKey, {be32(static_cast<std::uint32_t>(block))});
        for (std::size_t i = 0; i < 32 && block * 32 + i < blob.encSecret.size(); ++i)
            blob.encSecret[block * 32 + i] ^= pad[i];
    }
    blob.mac = crypto::hmacSha256Cat(sealKey, {blob.publicArea, blob.encSecret});

    // creationDigest = H(parent name || template || creation clock)
    Digest creationDigest =
        crypto::sha256Cat({parent->name(), tpl.encode(), be64(creationClock_++)});

    CreateOut out;
    out.blob = blob;
    out.publicArea = blob.publicArea;
    out.creationDigest = creationDigest;
    // ticket = HMAC(proof, CREATION || name || creationDigest)
    out.creationTicket.tag = kTagCreation;
    out.creationTicket.value = crypto::hmacSha256Cat(
        hierarchyProof_, {be16(kTagCreation), objName, creationDigest});
    return out;
}

TpmResult<LoadOut> VTpm::load(std::uint32_t parentHandle, const ObjectBlob& blob) {
    CommandTimer t(*this, "TPM2_Load");
    const LoadedObject* parent = findObject(parentHandle);
    if (!parent || parent->kind != ObjectKind::StorageKey || !parent->secretKey)
        return TpmError::BadParent;

    Digest sealKey = sealKeyFor(parent->name());
    Digest mac = crypto::hmacSha256Cat(sealKey, {blob.publicArea, blob.encSecret});
    if (mac != blob.mac) return TpmError::WrongParent;

    auto parsed = parseKeyPublicArea(blob.publicArea);
    if (!parsed) return TpmError::WrongParent;

    Bytes secret = blob.encSecret;
    for (std::size_t block = 0; block * 32 < secret.size(); ++block) {
        Digest pad = crypto::hmacSha256Cat(sealKey, {be32(static_cast<std::uint32_t>(block))});
        for (std::size_t i = 0; i < 32 && block * 32 + i < secret.size(); ++i)
            secret[block * 32 + i] ^= pad[i];
    }

    LoadedObject obj;
    if ((parsed->attributes & kAttrRestricted) && (parsed->attributes & kAttrDecrypt))
        obj.kind = ObjectKind::StorageKey;
    else if ((parsed->attributes & kAttrRestricted) && (parsed->attributes & kAttrSign))
        obj.kind = ObjectKind::EndorsementKey;
    else
        obj.kind = ObjectKind::AttestationKey;
    obj.scheme = parsed->scheme;
    obj.attributes = parsed->attributes;
    obj.authPolicy = parsed->authPolicy;
    obj.publicKey = parsed->publicKey;
    obj.secretKey = std::move(secret);

    std::uint32_t handle = nextTransient_++;
    transient_[handle] = obj;
    return LoadOut{handle, transient_[handle].name()};
}

TpmResult<std::uint32_t> VTpm::evictControl(std::uint32_t handle) {
    CommandTimer t(*this, "TPM2_EvictControl");
    auto it = transient_.find(handle);
    if (it == transient_.end()) return TpmError::UnknownHandle;
    std::uint32_t persistentHandle = nextPersistent_++;
    persistent_[persistentHandle] = it->second;
    return persistentHandle;
}

TpmResult<void> VTpm::flushContext(std::uint32_t handle) {
    CommandTimer t(*this, "TPM2_FlushContext");
    if (transient_.erase(handle) > 0) return {};
    if (sessions_.erase(handle) > 0) return {};
    return TpmError::UnknownHandle;
}

TpmResult<CertifyCreationOut> VTpm::certifyCreation(std::uint32_t objHandle,
                                                    std::uint32_t ekHandle,
                                                    const Digest& creationDigest,
                                                    const Ticket& ticket) {
    CommandTimer t(*this, "TPM2_CertifyCreation");
    const LoadedObject* obj = findObject(objHandle);
    if (!obj) return TpmError::UnknownHandle;
    const LoadedObject* ek = findObject(ekHandle);
    if (!ek) return TpmError::UnknownHandle;
    if (!ek->secretKey) return TpmError::NoSecret;

    // t' = HMAC(proof, CREATION || name(obj) || creationDigest); require t' = t
    Digest expected = crypto::hmacSha256Cat(hierarchyProof_,
                                            {be16(kTagCreation), obj->name(), creationDigest});
    if (ticket.tag != kTagCreation || ticket.value != expected) return TpmError::TicketMismatch;

    CertifyCreationOut out;
    out.certInfo.magic = kTpmGeneratedMagic;
    out.certInfo.objName = obj->name();
    out.certInfo.authPolicy = obj->authPolicy;
    out.certInfo.attributes = obj->attributes;
    out.signature = signInternal(*ek, out.certInfo.encode());
    return out;
}

TpmResult<Ticket> VTpm::verifySignature(std::uint32_t keyHandle, const Digest& digest,
                                        const crypto::Signature& sig) {
    CommandTimer t(*this, "TPM2_VerifySignature");
    const LoadedObject* key = findObject(keyHandle);
    if (!key) return TpmError::UnknownHandle;
    if (!crypto::verifySig(key->publicKey, digest, sig)) return TpmError::BadSignature;

    // ticket = HMAC(proof, VERIFIED || digest || name(key))
    Ticket ticket;
    ticket.tag = kTagVerified;
    ticket.value =
        crypto::hmacSha256Cat(hierarchyProof_, {be16(kTagVerified), digest, key->name()});
    return ticket;
}

TpmResult<void> VTpm::policyNv(std::uint32_t session, std::uint32_t nvHandle,
                               const Digest& expected) {
    CommandTimer t(*this, "TPM2_PolicyNV");
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;
    auto it = nv_.find(nvHandle);
    if (it == nv_.end()) return TpmError::NvUndefined;
    if (!it->second.written) return TpmError::NvUnwritten;
    // On mismatch the session digest stays untouched.
    if (it->second.value != expected) return TpmError::NvMismatch;

    // args = H(operand || offset || operation), offset = operation = 0x0000
    Digest args = crypto::sha256Cat({expected, be16(0), be16(0)});
    // policyDigest' = H(policyDigest || CC_PolicyNV || args || name(idx))
    s->policyDigest = crypto::sha256Cat(
        {s->policyDigest, ccBytes(CommandCode::PolicyNv), args, it->second.name()});
    return {};
}

TpmResult<void> VTpm::policyPcr(std::uint32_t session, std::span<const std::uint32_t> selection) {
    CommandTimer t(*this, "TPM2_PolicyPCR");
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;
    if (selection.empty()) return TpmError::BadSelection;
    for (std::size_t i = 0; i < selection.size(); ++i) {
        if (selection[i] >= kPcrCount) return TpmError::BadSelection;
        if (i > 0 && selection[i] <= selection[i - 1]) return TpmError::BadSelection;
    }

    crypto::Sha256 h;
    for (std::uint32_t idx : selection) h.update(pcrs_[idx]);
    Digest pcrDigest = h.finish();

    // policyDigest' = H(policyDigest || CC_PolicyPCR || selection || H(PCR values))
    s->policyDigest = crypto::sha256Cat({s->policyDigest, ccBytes(CommandCode::PolicyPcr),
                                         encodePcrSelection(selection), pcrDigest});
    return {};
}

TpmResult<void> VTpm::policySigned(std::uint32_t session, std::uint32_t keyHandle,
                                   const crypto::Signature& sig, const Digest& cpHash) {
    CommandTimer t(*this, "TPM2_PolicySigned");
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;
    const LoadedObject* key = findObject(keyHandle);
    if (!key) return TpmError::UnknownHandle;

    // aHash = H(nonceTPM || expiration || cpHash), expiration pinned to 0.
    // A signature minted for another session fails here through the nonce.
    Digest aHash = crypto::sha256Cat({s->nonceTpm, be32(0), cpHash});
    if (!crypto::verifySig(key->publicKey, aHash, sig)) return TpmError::BadSignature;

    // policyDigest' = H(H(policyDigest || CC_PolicySigned || name(key))), the
    // second hash folding in the empty policyRef.
    Digest inner =
        crypto::sha256Cat({s->policyDigest, ccBytes(CommandCode::PolicySigned), key->name()});
    s->policyDigest = crypto::sha256(inner);
    s->cpHash = cpHash;
    return {};
}

TpmResult<void> VTpm::policyCommandCode(std::uint32_t session, CommandCode cc) {
    CommandTimer t(*this, "TPM2_PolicyCommandCode");
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;
    s->commandLocked = cc;
    // policyDigest' = H(policyDigest || CC_PolicyCommandCode || CC)
    s->policyDigest =
        crypto::sha256Cat({s->policyDigest, ccBytes(CommandCode::PolicyCommandCode), ccBytes(cc)});
    return {};
}

TpmResult<void> VTpm::policyAuthorize(std::uint32_t session, const Digest& approvedPolicy,
                                      const Ticket& ticket, const Name& signerName) {
    CommandTimer t(*this, "TPM2_PolicyAuthorize");
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;
    if (s->policyDigest != approvedPolicy) return TpmError::PolicyMismatch;

    // The ticket must match what VerifySignature minted on this TPM for
    // H(approvedPolicy) under the signer's name.
    Digest hashedPolicy = crypto::sha256(approvedPolicy);
    Digest expected = crypto::hmacSha256Cat(hierarchyProof_,
                                            {be16(kTagVerified), hashedPolicy, signerName});
    if (ticket.tag != kTagVerified || ticket.value != expected) return TpmError::TicketMismatch;

    // policyDigest' = H(H(0..0 || CC_PolicyAuthorize || signerName)); the
    // nested form with the empty policyRef matches the policy objects are
    // created with, which is what lets them become usable afterwards.
    Digest inner =
        crypto::sha256Cat({kZeroDigest, ccBytes(CommandCode::PolicyAuthorize), signerName});
    s->policyDigest = crypto::sha256(inner);
    return {};
}

crypto::Signature VTpm::signInternal(const LoadedObject& key,
                                     std::span<const std::uint8_t> msg) {
    return crypto::sign(*key.secretKey, msg);
}

TpmResult<crypto::Signature> VTpm::sign(std::uint32_t keyHandle,
                                        std::span<const std::uint8_t> message,
                                        std::optional<std::uint32_t> session) {
    CommandTimer t(*this, "TPM2_Sign");
    const LoadedObject* key = findObject(keyHandle);
    if (!key) return TpmError::UnknownHandle;
    if (!key->secretKey) return TpmError::NoSecret;
    // Restricted keys sign TPM-generated structures only; externally supplied
    // buffers are refused outright.
    if (key->restricted()) return TpmError::RestrictedKeyRefusal;

    if (key->authPolicy != kZeroDigest) {
        if (!session) return TpmError::PolicyUnsatisfied;
        Session* s = findSession(*session);
        if (!s) return TpmError::PolicyUnsatisfied;
        if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;
        if (s->commandLocked && *s->commandLocked != CommandCode::Sign)
            return TpmError::CommandCodeMismatch;
        if (s->policyDigest != key->authPolicy) return TpmError::PolicyUnsatisfied;
        crypto::Signature sig = signInternal(*key, message);
        sessions_.erase(*session);  // a satisfied session authorizes exactly once
        return sig;
    }
    return signInternal(*key, message);
}

TpmResult<AuditOut> VTpm::getSessionAuditDigest(std::uint32_t ekHandle, std::uint32_t session) {
    CommandTimer t(*this, "TPM2_GetSessionAuditDigest");
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Hmac) return TpmError::WrongSessionKind;
    const LoadedObject* ek = findObject(ekHandle);
    if (!ek) return TpmError::UnknownHandle;
    if (!ek->secretKey) return TpmError::NoSecret;

    AuditOut out;
    out.auditInfo.magic = kTpmGeneratedMagic;
    out.auditInfo.sessionDigest = s->auditDigest;
    out.signature = signInternal(*ek, out.auditInfo.encode());
    return out;
}

TpmResult<void> VTpm::nvUndefineSpaceSpecial(std::uint32_t handle, std::uint32_t session) {
    CommandTimer t(*this, "TPM2_NV_UndefineSpaceSpecial");
    auto it = nv_.find(handle);
    if (it == nv_.end()) return TpmError::NvUndefined;
    Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    if (s->kind != SessionKind::Policy) return TpmError::WrongSessionKind;

    if (s->policyDigest != it->second.tpl.authPolicy) return TpmError::PolicyUnsatisfied;
    if (!s->commandLocked || *s->commandLocked != CommandCode::NvUndefineSpaceSpecial)
        return TpmError::CommandCodeMismatch;

    // The session must be parameter-locked to exactly this index:
    // cpHash = H(CC || name(idx) || platform hierarchy handle)
    Digest expectedCp = crypto::sha256Cat({ccBytes(CommandCode::NvUndefineSpaceSpecial),
                                           it->second.name(), be32(kPlatformHierarchyHandle)});
    if (!s->cpHash || *s->cpHash != expectedCp) return TpmError::CpHashMismatch;

    nv_.erase(it);
    sessions_.erase(session);
    return {};
}

TpmResult<Name> VTpm::objectName(std::uint32_t handle) const {
    const LoadedObject* obj = findObject(handle);
    if (!obj) return TpmError::UnknownHandle;
    return obj->name();
}

TpmResult<Bytes> VTpm::objectPublicArea(std::uint32_t handle) const {
    const LoadedObject* obj = findObject(handle);
    if (!obj) return TpmError::UnknownHandle;
    return obj->publicArea();
}

TpmResult<Bytes> VTpm::objectPublicKey(std::uint32_t handle) const {
    const LoadedObject* obj = findObject(handle);
    if (!obj) return TpmError::UnknownHandle;
    return obj->publicKey;
}

TpmResult<Digest> VTpm::sessionPolicyDigest(std::uint32_t session) const {
    const Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    return s->policyDigest;
}

TpmResult<Digest> VTpm::sessionAuditDigest(std::uint32_t session) const {
    const Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    return s->auditDigest;
}

TpmResult<Nonce> VTpm::sessionNonce(std::uint32_t session) const {
    const Session* s = findSession(session);
    if (!s) return TpmError::UnknownHandle;
    return s->nonceTpm;
}

bool VTpm::nvDefined(std::uint32_t handle) const {
    return nv_.contains(handle);
}

nlohmann::json VTpm::debugDump() const {
    nlohmann::json j;
    nlohmann::json pcrs = nlohmann::json::object();
    for (std::size_t i = 0; i < kPcrCount; ++i) {
        if (pcrs_[i] != kZeroDigest) pcrs[std::to_string(i)] = toHex(pcrs_[i]);
    }
    j["pcrs"] = pcrs;

    nlohmann::json nv = nlohmann::json::object();
    for (const auto& [handle, st] : nv_) {
        nv[toHex(be32(handle))] = {
            {"written", st.written},
            {"value", st.written ? toHex(st.value) : ""},
            {"name", toHex(st.name())},
        };
    }
    j["nv"] = nv;

    auto dumpObjects = [](const std::map<std::uint32_t, LoadedObject>& objs) {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& [handle, obj] : objs) {
            out[toHex(be32(handle))] = {
                {"name", toHex(obj.name())},
                {"attributes", obj.attributes},
            };
        }
        return out;
    };
    j["transient"] = dumpObjects(transient_);
    j["persistent"] = dumpObjects(persistent_);
    j["sessions"] = sessions_.size();
    return j;
}

}  // namespace blindtrust
