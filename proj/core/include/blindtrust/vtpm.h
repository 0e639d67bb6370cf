#pragma once

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>

#include "blindtrust/crypto.h"
#include "blindtrust/digest.h"
#include "blindtrust/encoding.h"
#include "blindtrust/result.h"

#include "json.hpp"

namespace blindtrust {

enum class ObjectKind {
    StorageKey,
    EndorsementKey,
    AttestationKey,
    ExternalPublic,
};

enum class SessionKind { Policy, Hmac };

// Creation template for a key object.
struct KeyTemplate {
    std::uint16_t scheme = kSchemeEd25519;
    std::uint32_t attributes = 0;
    Digest authPolicy = kZeroDigest;

    Bytes encode() const;
};

// Creation template for an NV index.
struct NvTemplate {
    std::uint16_t hashAlg = kAlgSha256;
    std::uint32_t attributes = 0;
    Digest authPolicy = kZeroDigest;
};

// Canonical public area encodings. Names are digests over these, so both
// sides of every protocol must produce identical bytes.
Bytes encodeKeyPublicArea(std::uint16_t scheme, std::uint32_t attributes,
                          const Digest& authPolicy, std::span<const std::uint8_t> publicKey);
Bytes encodeNvPublicArea(std::uint32_t handle, const NvTemplate& tpl, bool written);

struct KeyPublicArea {
    std::uint16_t scheme;
    std::uint32_t attributes;
    Digest authPolicy;
    Bytes publicKey;
};
std::optional<KeyPublicArea> parseKeyPublicArea(std::span<const std::uint8_t> area);

struct NvPublicArea {
    std::uint32_t handle;
    std::uint16_t hashAlg;
    std::uint32_t attributes;
    Digest authPolicy;
    std::uint16_t dataSize;
};
std::optional<NvPublicArea> parseNvPublicArea(std::span<const std::uint8_t> area);

// HMAC under a TPM-internal proof value; vouches that this TPM performed a
// creation or a signature verification. Only the minting TPM accepts it.
struct Ticket {
    std::uint16_t tag = 0;
    Digest value = kZeroDigest;
};

// Key blob as returned by Create: public area in the clear, secret sealed
// under the parent. Loading under any other parent fails the integrity check.
struct ObjectBlob {
    Bytes publicArea;
    Bytes encSecret;
    Digest mac = kZeroDigest;
};

struct CreationCertInfo {
    std::uint32_t magic = 0;
    Name objName{};
    Digest authPolicy = kZeroDigest;
    std::uint32_t attributes = 0;

    Bytes encode() const;
    static std::optional<CreationCertInfo> parse(std::span<const std::uint8_t> data);
};

struct NvCertInfo {
    std::uint32_t magic = 0;
    Name objName{};
    Digest nvContents = kZeroDigest;

    Bytes encode() const;
    static std::optional<NvCertInfo> parse(std::span<const std::uint8_t> data);
};

struct AuditInfo {
    std::uint32_t magic = 0;
    Digest sessionDigest = kZeroDigest;

    Bytes encode() const;
    static std::optional<AuditInfo> parse(std::span<const std::uint8_t> data);
};

// Audit accumulation rule shared by the vTPM and the orchestrator-side
// reconstruction:
//   cpHash = H(CC || names... || params)
//   rpHash = H(RC || CC || rparams)
//   audit' = H(audit || cpHash || rpHash)
Digest witness(const Digest& audit, CommandCode cc, std::span<const Bytes> handleNames,
               std::span<const std::uint8_t> params, std::uint32_t rc,
               std::span<const std::uint8_t> rparams);

struct StartSessionOut {
    std::uint32_t handle;
    Nonce nonceTpm;
};

struct CreateOut {
    ObjectBlob blob;
    Bytes publicArea;
    Digest creationDigest;
    Ticket creationTicket;
};

struct LoadOut {
    std::uint32_t handle;
    Name name;
};

struct CertifyCreationOut {
    CreationCertInfo certInfo;
    crypto::Signature signature;
};

struct NvCertifyOut {
    NvCertInfo certInfo;
    crypto::Signature signature;
};

struct AuditOut {
    AuditInfo auditInfo;
    crypto::Signature signature;
};

// One party's emulated TPM 2.0 subset: PCR bank, NV store, object store and
// policy/HMAC sessions, with digest accumulation matching the protocol math.
// Single-owner; all commands execute serially against one instance.
class VTpm {
public:
    using CommandSink = std::function<void(const char* command, double millis)>;

    // All internal secrets and randomness derive from the seed block, so a
    // fixed scenario seed reproduces nonces and keys byte for byte.
    explicit VTpm(const std::array<std::uint8_t, 32>& seedBlock);

    TpmResult<StartSessionOut> startAuthSession(SessionKind kind);
    TpmResult<void> pcrExtend(std::uint32_t idx, const Digest& d,
                              std::optional<std::uint32_t> auditSession = {});
    TpmResult<Digest> pcrRead(std::uint32_t idx) const;

    TpmResult<void> nvDefineSpace(std::uint32_t handle, const NvTemplate& tpl);
    TpmResult<void> nvExtend(std::uint32_t handle, const Digest& d,
                             std::optional<std::uint32_t> auditSession = {});
    TpmResult<Digest> nvRead(std::uint32_t handle) const;
    TpmResult<Name> nvName(std::uint32_t handle) const;
    TpmResult<NvCertifyOut> nvCertify(std::uint32_t handle, std::uint32_t ekHandle);
    TpmResult<void> nvUndefineSpaceSpecial(std::uint32_t handle, std::uint32_t session);

    TpmResult<std::uint32_t> createPrimary(ObjectKind kind);
    TpmResult<std::uint32_t> loadExternal(std::span<const std::uint8_t> publicArea);
    TpmResult<CreateOut> create(std::uint32_t parentHandle, const KeyTemplate& tpl);
    TpmResult<LoadOut> load(std::uint32_t parentHandle, const ObjectBlob& blob);
    TpmResult<std::uint32_t> evictControl(std::uint32_t handle);
    TpmResult<void> flushContext(std::uint32_t handle);
    TpmResult<CertifyCreationOut> certifyCreation(std::uint32_t objHandle, std::uint32_t ekHandle,
                                                  const Digest& creationDigest,
                                                  const Ticket& ticket);
    TpmResult<Ticket> verifySignature(std::uint32_t keyHandle, const Digest& digest,
                                      const crypto::Signature& sig);

    TpmResult<void> policyNv(std::uint32_t session, std::uint32_t nvHandle,
                             const Digest& expected);
    TpmResult<void> policyPcr(std::uint32_t session, std::span<const std::uint32_t> selection);
    TpmResult<void> policySigned(std::uint32_t session, std::uint32_t keyHandle,
                                 const crypto::Signature& sig, const Digest& cpHash);
    TpmResult<void> policyCommandCode(std::uint32_t session, CommandCode cc);
    TpmResult<void> policyAuthorize(std::uint32_t session, const Digest& approvedPolicy,
                                    const Ticket& ticket, const Name& signerName);

    TpmResult<crypto::Signature> sign(std::uint32_t keyHandle,
                                      std::span<const std::uint8_t> message,
                                      std::optional<std::uint32_t> session = {});
    TpmResult<AuditOut> getSessionAuditDigest(std::uint32_t ekHandle, std::uint32_t session);

    TpmResult<Name> objectName(std::uint32_t handle) const;
    TpmResult<Bytes> objectPublicArea(std::uint32_t handle) const;
    TpmResult<Bytes> objectPublicKey(std::uint32_t handle) const;
    TpmResult<Digest> sessionPolicyDigest(std::uint32_t session) const;
    TpmResult<Digest> sessionAuditDigest(std::uint32_t session) const;
    TpmResult<Nonce> sessionNonce(std::uint32_t session) const;
    bool nvDefined(std::uint32_t handle) const;
    std::size_t liveSessionCount() const { return sessions_.size(); }

    // State dump for trace checkpoints; secrets redacted.
    nlohmann::json debugDump() const;

    void setCommandSink(CommandSink sink) { sink_ = std::move(sink); }

private:
    struct LoadedObject {
        ObjectKind kind;
        std::uint16_t scheme;
        std::uint32_t attributes;
        Digest authPolicy;
        Bytes publicKey;
        std::optional<Bytes> secretKey;

        Bytes publicArea() const;
        Name name() const;
        bool restricted() const { return (attributes & kAttrRestricted) != 0; }
    };

    struct NvIndexState {
        NvTemplate tpl;
        std::uint32_t handle;
        Digest value = kZeroDigest;
        bool written = false;

        Bytes publicArea() const { return encodeNvPublicArea(handle, tpl, written); }
        Name name() const { return crypto::computeName(publicArea()); }
    };

    struct Session {
        std::uint32_t handle;
        SessionKind kind;
        Digest policyDigest = kZeroDigest;
        Digest auditDigest = kZeroDigest;
        std::optional<Digest> cpHash;
        std::optional<CommandCode> commandLocked;
        Nonce nonceTpm{};
    };

    class CommandTimer;

    const LoadedObject* findObject(std::uint32_t handle) const;
    Session* findSession(std::uint32_t handle);
    const Session* findSession(std::uint32_t handle) const;
    TpmResult<void> auditExtend(std::uint32_t session, CommandCode cc,
                                std::span<const Bytes> names,
                                std::span<const std::uint8_t> params);
    crypto::Signature signInternal(const LoadedObject& key, std::span<const std::uint8_t> msg);
    Digest nextSeed32();
    void fillRandom(std::span<std::uint8_t> out);
    Digest sealKeyFor(const Name& parentName) const;

    std::array<Digest, kPcrCount> pcrs_{};
    std::map<std::uint32_t, NvIndexState> nv_;
    std::map<std::uint32_t, LoadedObject> transient_;
    std::map<std::uint32_t, LoadedObject> persistent_;
    std::map<std::uint32_t, Session> sessions_;

    Digest pps_;             // platform primary seed; never serialized
    Digest hierarchyProof_;  // hierarchy proof value; never serialized
    std::mt19937_64 rng_;
    std::uint64_t creationClock_ = 0;
    std::uint32_t nextTransient_ = 0x80000000;
    std::uint32_t nextPersistent_ = 0x81000000;
    std::uint32_t nextSession_ = 0x03000000;
    CommandSink sink_;
};

}  // namespace blindtrust
