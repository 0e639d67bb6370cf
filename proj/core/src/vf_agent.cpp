#include "blindtrust/vf_agent.h"

#include <algorithm>

namespace blindtrust {

const char* agentErrorName(AgentError e) {
    switch (e) {
        case AgentError::UnknownPath: return "unknown-path";
        case AgentError::NoAk: return "no-ak";
        case AgentError::AkExists: return "ak-exists";
        case AgentError::NoPolicy: return "no-policy";
        case AgentError::BadOrchestratorSignature: return "bad-orchestrator-signature";
        case AgentError::AttestationFailed: return "attestation-failed";
        case AgentError::TpmFailure: return "tpm-failure";
        case AgentError::InvalidRequest: return "invalid-request";
        case AgentError::UnknownPeer: return "unknown-peer";
        case AgentError::NoPendingDetach: return "no-pending-detach";
    }
    return "unknown";
}

std::pair<std::uint64_t, std::uint64_t> Tracer::write(const std::string& fqpn, Bytes content) {
    Entry& e = store_[fqpn];
    e.content = std::move(content);
    e.generation += 1;
    e.version += 1;
    return {e.generation, e.version};
}

std::optional<Bytes> Tracer::measuredBytes(const std::string& fqpn) const {
    auto it = store_.find(fqpn);
    if (it == store_.end()) return std::nullopt;
    ByteWriter w;
    w.raw(it->second.content).u64(it->second.generation).u64(it->second.version);
    return w.take();
}

bool Tracer::loadManifest(const nlohmann::json& manifest) {
    if (!manifest.is_object()) return false;
    for (auto it = manifest.begin(); it != manifest.end(); ++it) {
        if (!it->is_string()) return false;
        auto content = fromHex(it->get<std::string>());
        if (!content) return false;
        write(it.key(), *content);
    }
    return true;
}

VfAgent::VfAgent(std::string vfId, const std::array<std::uint8_t, 32>& seedBlock,
                 const HmacKey& hk)
    : vfId_(std::move(vfId)),
      tpm_(crypto::sha256Cat({seedBlock, asBytes("tpm")})),
      hk_(hk) {
    Digest rngSeed = crypto::sha256Cat({seedBlock, asBytes("agent-rng")});
    std::uint64_t s = 0;
    for (int i = 0; i < 8; ++i) s = (s << 8) | rngSeed[static_cast<std::size_t>(i)];
    rng_.seed(s);

    // Three persistent handles from day one: the storage key, the VF's EK,
    // and (installed later) the orchestrator's public EK.
    auto sk = tpm_.createPrimary(ObjectKind::StorageKey);
    auto ek = tpm_.createPrimary(ObjectKind::EndorsementKey);
    skHandle_ = tpm_.evictControl(sk.value()).value();
    ekHandle_ = tpm_.evictControl(ek.value()).value();
    tpm_.flushContext(sk.value());
    tpm_.flushContext(ek.value());
    ekPublicArea_ = tpm_.objectPublicArea(ekHandle_).value();
}

void VfAgent::installOrchestratorKey(std::span<const std::uint8_t> publicArea) {
    auto handle = tpm_.loadExternal(publicArea);
    orcEkHandle_ = tpm_.evictControl(handle.value()).value();
    tpm_.flushContext(handle.value());
    orcEkName_ = crypto::computeName(publicArea);
}

AgentResult<AkCertificateResponse> VfAgent::runAkCreation(const AkCreationRequest& req) {
    if (akHandle_) return AgentError::AkExists;

    KeyTemplate tpl;
    tpl.scheme = kSchemeEd25519;
    tpl.attributes = req.attributes;
    tpl.authPolicy = req.hPol;

    auto created = tpm_.create(skHandle_, tpl);
    if (!created) return AgentError::TpmFailure;

    auto loaded = tpm_.load(skHandle_, created.value().blob);
    if (!loaded) return AgentError::TpmFailure;
    std::uint32_t transientAk = loaded.value().handle;

    auto cert = tpm_.certifyCreation(transientAk, ekHandle_, created.value().creationDigest,
                                     created.value().creationTicket);
    if (!cert) {
        tpm_.flushContext(transientAk);
        return AgentError::TpmFailure;
    }

    auto persistent = tpm_.evictControl(transientAk);
    if (!persistent) {
        tpm_.flushContext(transientAk);
        return AgentError::TpmFailure;
    }
    tpm_.flushContext(transientAk);
    akHandle_ = persistent.value();

    AkCertificateResponse resp;
    resp.vfId = vfId_;
    resp.certInfo = cert.value().certInfo;
    resp.signature = cert.value().signature;
    resp.akPublicArea = created.value().publicArea;
    return resp;
}

AgentResult<Digest> VfAgent::measure(const std::string& fqpn) {
    auto bytes = tracer_.measuredBytes(fqpn);
    if (!bytes) return AgentError::UnknownPath;
    return crypto::hmacSha256Cat(hk_, {crypto::sha256(*bytes)});
}

AgentResult<AuditResponse> VfAgent::runMeasurementUpdate(const UpdateRequest& req) {
    auto measured = measure(req.fqpn);
    if (!measured) return measured.error();
    Digest hFqpn = measured.value();

    // The policy digest must be orchestrator-signed before anything is
    // extended. The returned ticket later feeds PolicyAuthorize.
    auto ticket = tpm_.verifySignature(orcEkHandle_, req.hPolHashed, req.signature);
    if (!ticket) return AgentError::BadOrchestratorSignature;

    auto session = tpm_.startAuthSession(SessionKind::Hmac);
    if (!session) return AgentError::TpmFailure;
    std::uint32_t hs = session.value().handle;

    if (req.nv) {
        auto it = std::find_if(nvpcrs_.begin(), nvpcrs_.end(),
                               [&](const auto& p) { return p.first == req.index; });
        if (it == nvpcrs_.end()) {
            tpm_.flushContext(hs);
            return AgentError::InvalidRequest;
        }
        // Fold the tracked value first, then extend; undo the fold if the
        // extend fails so local knowledge never runs ahead of the TPM.
        Digest previous = it->second;
        it->second = crypto::sha256Cat({it->second, hFqpn});
        auto rc = tpm_.nvExtend(req.index, hFqpn, hs);
        if (!rc) {
            it->second = previous;
            tpm_.flushContext(hs);
            return AgentError::TpmFailure;
        }
    } else {
        auto rc = tpm_.pcrExtend(req.index, hFqpn, hs);
        if (!rc) {
            tpm_.flushContext(hs);
            return AgentError::TpmFailure;
        }
        Digest& logged = pcrLog_[req.index];
        logged = crypto::sha256Cat({logged, hFqpn});
    }

    // P <- policy digest, T <- ticket
    PolicyRecord record;
    record.policy = req.hPol;
    record.ticket = ticket.value();
    record.nvSnapshot = nvpcrs_;
    record.pcrSnapshot = pcrs_;
    currentPolicy_ = record;
    policyHistory_.push_back(record);

    auto audit = tpm_.getSessionAuditDigest(ekHandle_, hs);
    tpm_.flushContext(hs);
    if (!audit) return AgentError::TpmFailure;

    AuditResponse resp;
    resp.vfId = vfId_;
    resp.index = req.index;
    resp.nv = req.nv;
    resp.auditInfo = audit.value().auditInfo;
    resp.signature = audit.value().signature;
    return resp;
}

AgentResult<crypto::Signature> VfAgent::proveWith(
    std::span<const std::pair<std::uint32_t, Digest>> nvSelection,
    const std::set<std::uint32_t>& pcrSelection, const Digest& policy, const Ticket& ticket,
    std::span<const std::uint8_t> nonce) {
    if (!akHandle_) return AgentError::NoAk;

    auto session = tpm_.startAuthSession(SessionKind::Policy);
    if (!session) return AgentError::TpmFailure;
    std::uint32_t ps = session.value().handle;
    auto abort = [&]() {
        tpm_.flushContext(ps);
        return AgentError::AttestationFailed;
    };

    for (const auto& [handle, expected] : nvSelection) {
        if (!tpm_.policyNv(ps, handle, expected)) return abort();
    }
    if (!pcrSelection.empty()) {
        std::vector<std::uint32_t> selection(pcrSelection.begin(), pcrSelection.end());
        if (!tpm_.policyPcr(ps, selection)) return abort();
    }
    if (!tpm_.policyAuthorize(ps, policy, ticket, orcEkName_)) return abort();

    auto sig = tpm_.sign(*akHandle_, nonce, ps);
    if (!sig) return abort();
    return sig.value();
}

AgentResult<crypto::Signature> VfAgent::runOraProver(std::span<const std::uint8_t> nonce) {
    if (!currentPolicy_) return AgentError::NoPolicy;
    return proveWith(nvpcrs_, pcrs_, currentPolicy_->policy, currentPolicy_->ticket, nonce);
}

AgentResult<crypto::Signature> VfAgent::runOraProverWithPolicy(
    const PolicyRecord& record, std::span<const std::uint8_t> nonce) {
    return proveWith(record.nvSnapshot, record.pcrSnapshot, record.policy, record.ticket, nonce);
}

AgentResult<std::optional<NvCertResponse>> VfAgent::runAttach(const AttachRequest& req) {
    if (!req.nv) {
        if (pcrs_.contains(req.index)) return AgentError::InvalidRequest;
        // Seed the fresh PCR with the IV so the tracked value starts from
        // H(0..0 || IV), matching the orchestrator's mock entry.
        if (!tpm_.pcrExtend(req.index, req.iv)) return AgentError::TpmFailure;
        Digest& logged = pcrLog_[req.index];
        logged = crypto::sha256Cat({logged, req.iv});
        pcrs_.insert(req.index);
        return std::optional<NvCertResponse>{};
    }

    if (!req.nvTemplate) return AgentError::InvalidRequest;
    auto defined = tpm_.nvDefineSpace(req.index, *req.nvTemplate);
    if (!defined) return AgentError::TpmFailure;

    // A fresh index cannot be certified until written; extend the IV first.
    if (!tpm_.nvExtend(req.index, req.iv)) return AgentError::TpmFailure;

    auto cert = tpm_.nvCertify(req.index, ekHandle_);
    if (!cert) return AgentError::TpmFailure;

    nvpcrs_.emplace_back(req.index, crypto::sha256Cat({kZeroDigest, req.iv}));

    NvCertResponse resp;
    resp.vfId = vfId_;
    resp.index = req.index;
    resp.certInfo = cert.value().certInfo;
    resp.signature = cert.value().signature;
    return std::optional<NvCertResponse>{resp};
}

void VfAgent::runNormalDetach(std::uint32_t index) {
    pcrs_.erase(index);
    // The PCR itself keeps its value; only the tracking stops.
}

AgentResult<DetachNonce> VfAgent::beginNvDetach(std::uint32_t index) {
    auto it = std::find_if(nvpcrs_.begin(), nvpcrs_.end(),
                           [&](const auto& p) { return p.first == index; });
    if (it == nvpcrs_.end()) return AgentError::InvalidRequest;

    // An abandoned earlier attempt must not pin a session slot.
    if (pendingDetach_) {
        tpm_.flushContext(pendingDetach_->session);
        pendingDetach_.reset();
    }

    auto session = tpm_.startAuthSession(SessionKind::Policy);
    if (!session) return AgentError::TpmFailure;
    pendingDetach_ = PendingDetach{index, session.value().handle};

    DetachNonce out;
    out.vfId = vfId_;
    out.index = index;
    out.nonce = session.value().nonceTpm;
    return out;
}

AgentResult<void> VfAgent::completeNvDetach(const DeletionGrant& grant) {
    if (!pendingDetach_ || pendingDetach_->index != grant.index)
        return AgentError::NoPendingDetach;
    std::uint32_t ps = pendingDetach_->session;
    auto abort = [&](AgentError e) {
        tpm_.flushContext(ps);
        pendingDetach_.reset();
        return e;
    };

    // Any failure below leaves the NV index and the tracked entry intact.
    auto ticket = tpm_.verifySignature(orcEkHandle_, grant.hPolHashed, grant.hPolSignature);
    if (!ticket) return abort(AgentError::BadOrchestratorSignature);

    if (!tpm_.policySigned(ps, orcEkHandle_, grant.aHashSignature, grant.hCp))
        return abort(AgentError::TpmFailure);
    if (!tpm_.policyAuthorize(ps, grant.hPol, ticket.value(), orcEkName_))
        return abort(AgentError::TpmFailure);
    if (!tpm_.policyCommandCode(ps, CommandCode::NvUndefineSpaceSpecial))
        return abort(AgentError::TpmFailure);
    if (!tpm_.nvUndefineSpaceSpecial(grant.index, ps)) return abort(AgentError::TpmFailure);

    // The session was consumed by the undefine.
    std::erase_if(nvpcrs_, [&](const auto& p) { return p.first == grant.index; });
    pendingDetach_.reset();
    return {};
}

bool VfAgent::verifyOraResponse(std::span<const std::uint8_t> akPublicKey,
                                std::span<const std::uint8_t> nonce,
                                const crypto::Signature& sig) {
    return crypto::verifySig(akPublicKey, nonce, sig);
}

Nonce VfAgent::issueChallenge(const std::string& proverId) {
    Nonce nonce{};
    std::size_t i = 0;
    while (i < nonce.size()) {
        std::uint64_t word = rng_();
        for (int b = 7; b >= 0 && i < nonce.size(); --b)
            nonce[i++] = static_cast<std::uint8_t>(word >> (b * 8));
    }
    challenges_[proverId] = PendingChallenge{nonce, std::nullopt};
    return nonce;
}

bool VfAgent::receiveOraResponse(const std::string& proverId, const crypto::Signature& sig) {
    auto challenge = challenges_.find(proverId);
    if (challenge == challenges_.end()) return false;
    auto peer = peers_.find(proverId);
    bool ok = peer != peers_.end() &&
              verifyOraResponse(peer->second, challenge->second.nonce, sig);
    challenge->second.outcome = ok;
    return ok;
}

void VfAgent::timeoutChallenge(const std::string& proverId) {
    auto it = challenges_.find(proverId);
    if (it != challenges_.end() && !it->second.outcome) it->second.outcome = false;
}

std::optional<bool> VfAgent::challengeOutcome(const std::string& proverId) const {
    auto it = challenges_.find(proverId);
    if (it == challenges_.end()) return std::nullopt;
    return it->second.outcome;
}

bool VfAgent::handleAdvertise(const AdvertiseNotice& notice,
                              std::span<const std::uint8_t> orcEkPublicKey) {
    Bytes idBytes = asBytes(notice.vfId);
    ByteWriter w;
    w.sized(idBytes).raw(notice.akPublicArea);
    Digest d = crypto::sha256(w.bytes());
    if (!crypto::verifySig(orcEkPublicKey, d, notice.signature)) return false;
    auto parsed = parseKeyPublicArea(notice.akPublicArea);
    if (!parsed) return false;
    peers_[notice.vfId] = parsed->publicKey;
    return true;
}

std::optional<Bytes> VfAgent::peerAk(const std::string& vfId) const {
    auto it = peers_.find(vfId);
    if (it == peers_.end()) return std::nullopt;
    return it->second;
}

bool VfAgent::localStateInSync() const {
    for (const auto& [handle, expected] : nvpcrs_) {
        auto actual = tpm_.nvRead(handle);
        if (!actual || actual.value() != expected) return false;
    }
    for (std::uint32_t idx : pcrs_) {
        auto logged = pcrLog_.find(idx);
        auto actual = tpm_.pcrRead(idx);
        if (logged == pcrLog_.end() || !actual || actual.value() != logged->second) return false;
    }
    return true;
}

nlohmann::json VfAgent::debugDump() const {
    nlohmann::json j;
    j["vf_id"] = vfId_;
    j["has_ak"] = akHandle_.has_value();
    nlohmann::json pcrs = nlohmann::json::array();
    for (std::uint32_t idx : pcrs_) pcrs.push_back(idx);
    j["pcrs"] = pcrs;
    nlohmann::json nvs = nlohmann::json::array();
    for (const auto& [handle, expected] : nvpcrs_)
        nvs.push_back({{"handle", handle}, {"expected", toHex(expected)}});
    j["nvpcrs"] = nvs;
    j["policies"] = policyHistory_.size();
    if (currentPolicy_) j["current_policy"] = toHex(currentPolicy_->policy);
    j["tpm"] = tpm_.debugDump();
    return j;
}

}  // namespace blindtrust
