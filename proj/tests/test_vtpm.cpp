#include "doctest.h"

#include <set>

#include "blindtrust/vtpm.h"

#include "helpers.h"

using namespace blindtrust;

namespace {

std::array<std::uint8_t, 32> seed(const char* tag) {
    return crypto::sha256(asBytes(tag));
}

struct TpmFixture {
    VTpm tpm;
    std::uint32_t sk;
    std::uint32_t ek;

    explicit TpmFixture(const char* tag = "tpm-fixture") : tpm(seed(tag)) {
        sk = tpm.createPrimary(ObjectKind::StorageKey).value();
        ek = tpm.createPrimary(ObjectKind::EndorsementKey).value();
    }
};

// Test-side policy fold helpers, independent of the session code under test.
Digest oraclePolicyNv(const Digest& pd, const Digest& value, const Name& name) {
    Digest args = crypto::sha256Cat({value, be16(0), be16(0)});
    return crypto::sha256Cat({pd, ccBytes(CommandCode::PolicyNv), args, name});
}

Digest oraclePolicyPcr(const Digest& pd, std::span<const std::uint32_t> sel,
                       std::span<const Digest> values) {
    crypto::Sha256 h;
    for (const Digest& v : values) h.update(v);
    return crypto::sha256Cat({pd, ccBytes(CommandCode::PolicyPcr), encodePcrSelection(sel),
                              h.finish()});
}

}  // namespace

TEST_CASE("sessions are fresh, zeroed, and reproducible under a fixed seed") {
    VTpm tpm(seed("sessions"));
    auto s1 = tpm.startAuthSession(SessionKind::Policy).value();
    auto s2 = tpm.startAuthSession(SessionKind::Policy).value();
    CHECK(s1.handle != s2.handle);
    CHECK(s1.nonceTpm != s2.nonceTpm);
    CHECK(tpm.sessionPolicyDigest(s1.handle).value() == kZeroDigest);
    CHECK(tpm.sessionAuditDigest(s1.handle).value() == kZeroDigest);

    VTpm replica(seed("sessions"));
    auto r1 = replica.startAuthSession(SessionKind::Policy).value();
    CHECK(r1.nonceTpm == s1.nonceTpm);
}

TEST_CASE("session slots are bounded") {
    VTpm tpm(seed("slots"));
    std::vector<std::uint32_t> handles;
    for (std::size_t i = 0; i < kMaxSessions; ++i)
        handles.push_back(tpm.startAuthSession(SessionKind::Policy).value().handle);
    auto overflow = tpm.startAuthSession(SessionKind::Policy);
    REQUIRE_FALSE(overflow.ok());
    CHECK(overflow.error() == TpmError::SessionSlotsExhausted);
    CHECK(tpm.flushContext(handles[0]).ok());
    CHECK(tpm.startAuthSession(SessionKind::Hmac).ok());
}

TEST_CASE("pcr extend accumulation") {
    VTpm tpm(seed("pcr"));
    Digest d = crypto::sha256(asBytes("m"));
    REQUIRE(tpm.pcrExtend(3, d).ok());
    CHECK(tpm.pcrRead(3).value() == crypto::sha256Cat({kZeroDigest, d}));

    // Order sensitivity of the hash chain.
    VTpm a(seed("pcr-a")), b(seed("pcr-a"));
    Digest x = crypto::sha256(asBytes("x")), y = crypto::sha256(asBytes("y"));
    a.pcrExtend(0, x);
    a.pcrExtend(0, y);
    b.pcrExtend(0, y);
    b.pcrExtend(0, x);
    CHECK(a.pcrRead(0).value() != b.pcrRead(0).value());

    auto bad = tpm.pcrExtend(24, d);
    REQUIRE_FALSE(bad.ok());
    CHECK(bad.error() == TpmError::BadIndex);
}

TEST_CASE("boot chain fixture reproduces the reference fold") {
    auto fixture = testutil::loadFixture("crypto_vectors.json");
    VTpm tpm(seed("boot"));
    for (const auto& hexValue : fixture["boot_chain"]["extends_hex"]) {
        Digest v = fromHexFixed<32>(hexValue.get<std::string>()).value();
        REQUIRE(tpm.pcrExtend(0, v).ok());
    }
    CHECK(toHex(tpm.pcrRead(0).value()) == fixture["boot_chain"]["final_hex"].get<std::string>());
}

TEST_CASE("nv lifecycle: define, unwritten reads, first extend") {
    VTpm tpm(seed("nv"));
    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    tpl.authPolicy = crypto::sha256(asBytes("del-policy"));
    REQUIRE(tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());

    // Fresh indices cannot be read or certified until written.
    auto read = tpm.nvRead(kNvHandleFirst);
    REQUIRE_FALSE(read.ok());
    CHECK(read.error() == TpmError::NvUnwritten);

    auto again = tpm.nvDefineSpace(kNvHandleFirst, tpl);
    REQUIRE_FALSE(again.ok());
    CHECK(again.error() == TpmError::IndexCollision);

    auto outOfRange = tpm.nvDefineSpace(0x00000001, tpl);
    REQUIRE_FALSE(outOfRange.ok());
    CHECK(outOfRange.error() == TpmError::BadHandleRange);

    Digest iv = kZeroDigest;
    REQUIRE(tpm.nvExtend(kNvHandleFirst, iv).ok());
    CHECK(tpm.nvRead(kNvHandleFirst).value() == crypto::sha256Cat({kZeroDigest, iv}));

    // The deletion policy is part of the index name.
    NvTemplate other = tpl;
    other.authPolicy = crypto::sha256(asBytes("other-policy"));
    REQUIRE(tpm.nvDefineSpace(kNvHandleFirst + 1, other).ok());
    REQUIRE(tpm.nvExtend(kNvHandleFirst + 1, iv).ok());
    CHECK(tpm.nvName(kNvHandleFirst).value() != tpm.nvName(kNvHandleFirst + 1).value());

    auto undefined = tpm.nvExtend(kNvHandleFirst + 7, iv);
    REQUIRE_FALSE(undefined.ok());
    CHECK(undefined.error() == TpmError::NvUndefined);
}

TEST_CASE("nv extend chain matches a brute-force fold") {
    VTpm tpm(seed("nv-chain"));
    NvTemplate tpl;
    tpl.attributes = kNvAttrExtend;
    REQUIRE(tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());

    std::mt19937_64 rng(99);
    Digest oracle = kZeroDigest;
    for (int i = 0; i < 10; ++i) {
        Digest d = testutil::randomDigest(rng);
        REQUIRE(tpm.nvExtend(kNvHandleFirst, d).ok());
        oracle = crypto::sha256Cat({oracle, d});
        CHECK(tpm.nvRead(kNvHandleFirst).value() == oracle);
    }
}

TEST_CASE("audited nv extend produces the two-hash witness digest") {
    TpmFixture f("audit-nv");
    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    REQUIRE(f.tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());
    REQUIRE(f.tpm.nvExtend(kNvHandleFirst, kZeroDigest).ok());  // write once, unaudited

    Name name = f.tpm.nvName(kNvHandleFirst).value();
    auto session = f.tpm.startAuthSession(SessionKind::Hmac).value();
    Digest d = crypto::sha256(asBytes("update"));
    REQUIRE(f.tpm.nvExtend(kNvHandleFirst, d, session.handle).ok());

    // cpHash = H(CC || name || name || len(d) || d); rpHash = H(RC || CC)
    Digest cpHash =
        crypto::sha256Cat({ccBytes(CommandCode::NvExtend), name, name, be16(32), d});
    Digest rpHash = crypto::sha256Cat({be32(kRcSuccess), ccBytes(CommandCode::NvExtend)});
    Digest expected = crypto::sha256Cat({kZeroDigest, cpHash, rpHash});
    CHECK(f.tpm.sessionAuditDigest(session.handle).value() == expected);

    auto audit = f.tpm.getSessionAuditDigest(f.ek, session.handle).value();
    CHECK(audit.auditInfo.sessionDigest == expected);
    CHECK(audit.auditInfo.magic == kTpmGeneratedMagic);
}

TEST_CASE("unaudited session audit digest stays zero") {
    TpmFixture f("audit-zero");
    auto session = f.tpm.startAuthSession(SessionKind::Hmac).value();
    auto audit = f.tpm.getSessionAuditDigest(f.ek, session.handle).value();
    CHECK(audit.auditInfo.sessionDigest == kZeroDigest);

    auto policySession = f.tpm.startAuthSession(SessionKind::Policy).value();
    auto wrong = f.tpm.getSessionAuditDigest(f.ek, policySession.handle);
    REQUIRE_FALSE(wrong.ok());
    CHECK(wrong.error() == TpmError::WrongSessionKind);
}

TEST_CASE("audit signature tampering is detectable") {
    TpmFixture f("audit-tamper");
    auto session = f.tpm.startAuthSession(SessionKind::Hmac).value();
    REQUIRE(f.tpm.pcrExtend(4, crypto::sha256(asBytes("x")), session.handle).ok());
    auto audit = f.tpm.getSessionAuditDigest(f.ek, session.handle).value();
    Bytes ekPub = f.tpm.objectPublicKey(f.ek).value();
    CHECK(crypto::verifySig(ekPub, audit.auditInfo.encode(), audit.signature));
    audit.auditInfo.sessionDigest[0] ^= 1;
    CHECK_FALSE(crypto::verifySig(ekPub, audit.auditInfo.encode(), audit.signature));
}

TEST_CASE("nv certify carries contents and a verifiable EK signature") {
    TpmFixture f("certify");
    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    REQUIRE(f.tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());

    auto unwritten = f.tpm.nvCertify(kNvHandleFirst, f.ek);
    REQUIRE_FALSE(unwritten.ok());
    CHECK(unwritten.error() == TpmError::NvUnwritten);

    Digest iv = kZeroDigest;
    REQUIRE(f.tpm.nvExtend(kNvHandleFirst, iv).ok());
    auto cert = f.tpm.nvCertify(kNvHandleFirst, f.ek).value();
    CHECK(cert.certInfo.magic == kTpmGeneratedMagic);
    CHECK(cert.certInfo.nvContents == crypto::sha256Cat({kZeroDigest, iv}));
    CHECK(cert.certInfo.objName == f.tpm.nvName(kNvHandleFirst).value());

    Bytes ekPub = f.tpm.objectPublicKey(f.ek).value();
    CHECK(crypto::verifySig(ekPub, cert.certInfo.encode(), cert.signature));

    NvCertInfo tampered = cert.certInfo;
    tampered.nvContents[5] ^= 0xFF;
    CHECK_FALSE(crypto::verifySig(ekPub, tampered.encode(), cert.signature));
}

TEST_CASE("create, load, and creation certification") {
    TpmFixture f("create");
    KeyTemplate tpl;
    tpl.attributes = Orchestrator::kAkAttributes;
    tpl.authPolicy = crypto::sha256(asBytes("ak-policy"));

    auto created = f.tpm.create(f.sk, tpl).value();
    auto parsed = parseKeyPublicArea(created.publicArea);
    REQUIRE(parsed.has_value());
    CHECK(parsed->authPolicy == tpl.authPolicy);

    auto loaded = f.tpm.load(f.sk, created.blob).value();
    CHECK(loaded.name == crypto::computeName(created.publicArea));

    auto cert = f.tpm.certifyCreation(loaded.handle, f.ek, created.creationDigest,
                                      created.creationTicket).value();
    CHECK(cert.certInfo.magic == kTpmGeneratedMagic);
    CHECK(cert.certInfo.objName == loaded.name);
    CHECK(cert.certInfo.authPolicy == tpl.authPolicy);
    CHECK(cert.certInfo.attributes == tpl.attributes);

    // Forged ticket is refused.
    Ticket forged = created.creationTicket;
    forged.value[0] ^= 1;
    auto bad = f.tpm.certifyCreation(loaded.handle, f.ek, created.creationDigest, forged);
    REQUIRE_FALSE(bad.ok());
    CHECK(bad.error() == TpmError::TicketMismatch);

    // Non-storage parent refuses creation.
    auto notParent = f.tpm.create(f.ek, tpl);
    REQUIRE_FALSE(notParent.ok());
    CHECK(notParent.error() == TpmError::BadParent);
}

TEST_CASE("creation tickets do not transfer between TPMs") {
    TpmFixture a("tpm-a"), b("tpm-b");
    KeyTemplate tpl;
    tpl.attributes = Orchestrator::kAkAttributes;

    auto created = a.tpm.create(a.sk, tpl).value();

    // The sealed blob does not load under another TPM's parent.
    auto foreignLoad = b.tpm.load(b.sk, created.blob);
    REQUIRE_FALSE(foreignLoad.ok());
    CHECK(foreignLoad.error() == TpmError::WrongParent);

    // Even with the object re-created locally, a foreign ticket is useless.
    auto local = b.tpm.create(b.sk, tpl).value();
    auto loaded = b.tpm.load(b.sk, local.blob).value();
    auto cross = b.tpm.certifyCreation(loaded.handle, b.ek, created.creationDigest,
                                       created.creationTicket);
    REQUIRE_FALSE(cross.ok());
    CHECK(cross.error() == TpmError::TicketMismatch);
}

TEST_CASE("evict then flush keeps the persistent handle usable") {
    TpmFixture f("evict");
    KeyTemplate tpl;
    tpl.attributes = Orchestrator::kAkAttributes;  // policy-free variant for this test
    tpl.authPolicy = kZeroDigest;
    auto created = f.tpm.create(f.sk, tpl).value();
    auto loaded = f.tpm.load(f.sk, created.blob).value();
    std::uint32_t persistent = f.tpm.evictControl(loaded.handle).value();
    REQUIRE(f.tpm.flushContext(loaded.handle).ok());
    CHECK_FALSE(f.tpm.sign(loaded.handle, asBytes("gone")).ok());
    CHECK(f.tpm.sign(persistent, asBytes("still here")).ok());

    auto unknown = f.tpm.flushContext(0xDEAD);
    REQUIRE_FALSE(unknown.ok());
    CHECK(unknown.error() == TpmError::UnknownHandle);
}

TEST_CASE("verify signature mints a ticket tied to this TPM") {
    TpmFixture f("verify-sig");
    auto kp = crypto::SigningKeyPair::fromSeed(crypto::sha256(asBytes("external-signer")));
    Bytes area = encodeKeyPublicArea(kp.scheme, kAttrSign, kZeroDigest, kp.publicKey);
    std::uint32_t keyHandle = f.tpm.loadExternal(area).value();

    Digest payload = crypto::sha256(asBytes("policy digest"));
    auto sig = crypto::sign(kp.secretKey, payload);
    auto ticket = f.tpm.verifySignature(keyHandle, payload, sig).value();
    CHECK(ticket.tag == kTagVerified);

    auto wrong = f.tpm.verifySignature(keyHandle, crypto::sha256(asBytes("other")), sig);
    REQUIRE_FALSE(wrong.ok());
    CHECK(wrong.error() == TpmError::BadSignature);
}

TEST_CASE("policy nv fold and mismatch behavior") {
    VTpm tpm(seed("pol-nv"));
    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    REQUIRE(tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());
    Digest iv = kZeroDigest;
    REQUIRE(tpm.nvExtend(kNvHandleFirst, iv).ok());
    Digest value = crypto::sha256Cat({kZeroDigest, iv});
    Name name = tpm.nvName(kNvHandleFirst).value();

    auto session = tpm.startAuthSession(SessionKind::Policy).value();
    REQUIRE(tpm.policyNv(session.handle, kNvHandleFirst, value).ok());
    CHECK(tpm.sessionPolicyDigest(session.handle).value() ==
          oraclePolicyNv(kZeroDigest, value, name));

    // Stale expected value after a further extend: error, digest untouched.
    Digest before = tpm.sessionPolicyDigest(session.handle).value();
    REQUIRE(tpm.nvExtend(kNvHandleFirst, crypto::sha256(asBytes("more"))).ok());
    auto stale = tpm.policyNv(session.handle, kNvHandleFirst, value);
    REQUIRE_FALSE(stale.ok());
    CHECK(stale.error() == TpmError::NvMismatch);
    CHECK(tpm.sessionPolicyDigest(session.handle).value() == before);
}

TEST_CASE("policy pcr fold, selection rules") {
    VTpm tpm(seed("pol-pcr"));
    auto session = tpm.startAuthSession(SessionKind::Policy).value();

    // Single selected PCR still at its reset value.
    std::uint32_t sel1[] = {5};
    REQUIRE(tpm.policyPcr(session.handle, sel1).ok());
    Digest values1[] = {kZeroDigest};
    CHECK(tpm.sessionPolicyDigest(session.handle).value() ==
          oraclePolicyPcr(kZeroDigest, sel1, values1));

    std::uint32_t unsorted[] = {5, 3};
    auto bad = tpm.policyPcr(session.handle, unsorted);
    REQUIRE_FALSE(bad.ok());
    CHECK(bad.error() == TpmError::BadSelection);
    std::uint32_t dup[] = {3, 3};
    CHECK_FALSE(tpm.policyPcr(session.handle, dup).ok());
    CHECK_FALSE(tpm.policyPcr(session.handle, {}).ok());

    // Different selections diverge even over identical register values.
    VTpm tpmB(seed("pol-pcr-b"));
    auto sA = tpmB.startAuthSession(SessionKind::Policy).value();
    auto sB = tpmB.startAuthSession(SessionKind::Policy).value();
    std::uint32_t selA[] = {1, 2};
    std::uint32_t selB[] = {1, 3};
    REQUIRE(tpmB.policyPcr(sA.handle, selA).ok());
    REQUIRE(tpmB.policyPcr(sB.handle, selB).ok());
    CHECK(tpmB.sessionPolicyDigest(sA.handle).value() !=
          tpmB.sessionPolicyDigest(sB.handle).value());
}

TEST_CASE("policy command code locks the session") {
    VTpm tpm(seed("pol-cc"));
    auto session = tpm.startAuthSession(SessionKind::Policy).value();
    REQUIRE(tpm.policyCommandCode(session.handle, CommandCode::NvUndefineSpaceSpecial).ok());
    CHECK(tpm.sessionPolicyDigest(session.handle).value() ==
          crypto::sha256Cat({kZeroDigest, ccBytes(CommandCode::PolicyCommandCode),
                             ccBytes(CommandCode::NvUndefineSpaceSpecial)}));
}

TEST_CASE("witness chaining is order sensitive and matches recomputation") {
    std::vector<Bytes> names{Bytes{1, 2}, Bytes{3, 4}};
    Bytes params{9, 9, 9};
    Digest one = witness(kZeroDigest, CommandCode::NvExtend, names, params, kRcSuccess, {});

    // Byte-level recomputation.
    crypto::Sha256 cp;
    cp.update(ccBytes(CommandCode::NvExtend));
    cp.update(names[0]);
    cp.update(names[1]);
    cp.update(params);
    Digest cpHash = cp.finish();
    Digest rpHash = crypto::sha256Cat({be32(kRcSuccess), ccBytes(CommandCode::NvExtend), {}});
    CHECK(one == crypto::sha256Cat({kZeroDigest, cpHash, rpHash}));

    Digest ab = witness(one, CommandCode::PcrExtend, names, params, kRcSuccess, {});
    Digest b = witness(kZeroDigest, CommandCode::PcrExtend, names, params, kRcSuccess, {});
    Digest ba = witness(b, CommandCode::NvExtend, names, params, kRcSuccess, {});
    CHECK(ab != ba);
}

TEST_CASE("restricted keys refuse externally supplied data") {
    TpmFixture f("restricted");
    auto refusal = f.tpm.sign(f.ek, asBytes("adversary bytes"));
    REQUIRE_FALSE(refusal.ok());
    CHECK(refusal.error() == TpmError::RestrictedKeyRefusal);

    // Even data that mimics the TPM-generated magic prefix is refused.
    ByteWriter fake;
    fake.u32(kTpmGeneratedMagic).raw(asBytes("forged cert"));
    auto refusal2 = f.tpm.sign(f.ek, fake.bytes());
    REQUIRE_FALSE(refusal2.ok());
    CHECK(refusal2.error() == TpmError::RestrictedKeyRefusal);
}

TEST_CASE("policy-gated signing requires a satisfied session and consumes it") {
    TpmFixture f("gated");
    // Policy: a single PCR in a known state.
    Digest m = crypto::sha256(asBytes("boot"));
    REQUIRE(f.tpm.pcrExtend(2, m).ok());
    Digest pcrValue = f.tpm.pcrRead(2).value();
    std::uint32_t sel[] = {2};
    Digest values[] = {pcrValue};
    Digest policy = oraclePolicyPcr(kZeroDigest, sel, values);

    KeyTemplate tpl;
    tpl.attributes = Orchestrator::kAkAttributes;
    tpl.authPolicy = policy;
    auto created = f.tpm.create(f.sk, tpl).value();
    auto loaded = f.tpm.load(f.sk, created.blob).value();

    // No session at all.
    auto noSession = f.tpm.sign(loaded.handle, asBytes("n"));
    REQUIRE_FALSE(noSession.ok());
    CHECK(noSession.error() == TpmError::PolicyUnsatisfied);

    // Unsatisfied session.
    auto empty = f.tpm.startAuthSession(SessionKind::Policy).value();
    CHECK(f.tpm.sign(loaded.handle, asBytes("n"), empty.handle).error() ==
          TpmError::PolicyUnsatisfied);
    f.tpm.flushContext(empty.handle);

    // Satisfied session signs exactly once.
    auto session = f.tpm.startAuthSession(SessionKind::Policy).value();
    REQUIRE(f.tpm.policyPcr(session.handle, sel).ok());
    auto sig = f.tpm.sign(loaded.handle, asBytes("n"), session.handle);
    REQUIRE(sig.ok());
    CHECK(crypto::verifySig(f.tpm.objectPublicKey(loaded.handle).value(), asBytes("n"),
                            sig.value()));
    auto reuse = f.tpm.sign(loaded.handle, asBytes("n2"), session.handle);
    REQUIRE_FALSE(reuse.ok());
    CHECK(reuse.error() == TpmError::PolicyUnsatisfied);

    // A session locked to another command code refuses signing.
    auto locked = f.tpm.startAuthSession(SessionKind::Policy).value();
    REQUIRE(f.tpm.policyPcr(locked.handle, sel).ok());
    REQUIRE(f.tpm.policyCommandCode(locked.handle, CommandCode::NvUndefineSpaceSpecial).ok());
    auto refused = f.tpm.sign(loaded.handle, asBytes("n"), locked.handle);
    REQUIRE_FALSE(refused.ok());
    CHECK(refused.error() == TpmError::CommandCodeMismatch);
}

TEST_CASE("policy authorize closes against a verified ticket") {
    TpmFixture f("authorize");
    auto authorizer = crypto::SigningKeyPair::fromSeed(crypto::sha256(asBytes("authority")));
    Bytes area = encodeKeyPublicArea(authorizer.scheme, kAttrRestricted | kAttrSign, kZeroDigest,
                                     authorizer.publicKey);
    std::uint32_t keyHandle = f.tpm.loadExternal(area).value();
    Name signerName = crypto::computeName(area);

    // Approved policy over one extended PCR.
    REQUIRE(f.tpm.pcrExtend(1, crypto::sha256(asBytes("cfg"))).ok());
    std::uint32_t sel[] = {1};
    Digest values[] = {f.tpm.pcrRead(1).value()};
    Digest approved = oraclePolicyPcr(kZeroDigest, sel, values);

    Digest approvedHashed = crypto::sha256(approved);
    auto sig = crypto::sign(authorizer.secretKey, approvedHashed);
    Ticket ticket = f.tpm.verifySignature(keyHandle, approvedHashed, sig).value();

    auto session = f.tpm.startAuthSession(SessionKind::Policy).value();
    REQUIRE(f.tpm.policyPcr(session.handle, sel).ok());
    REQUIRE(f.tpm.policyAuthorize(session.handle, approved, ticket, signerName).ok());

    // The post-digest equals the double-hash flexible policy form, so an
    // object created under that policy becomes usable.
    CHECK(f.tpm.sessionPolicyDigest(session.handle).value() ==
          Orchestrator::flexiblePolicy(signerName));

    // Session digest off by one extend.
    auto s2 = f.tpm.startAuthSession(SessionKind::Policy).value();
    auto mismatch = f.tpm.policyAuthorize(s2.handle, approved, ticket, signerName);
    REQUIRE_FALSE(mismatch.ok());
    CHECK(mismatch.error() == TpmError::PolicyMismatch);

    // Ticket for a different approved policy.
    REQUIRE(f.tpm.policyPcr(s2.handle, sel).ok());
    Ticket wrong = ticket;
    wrong.value[3] ^= 2;
    auto badTicket = f.tpm.policyAuthorize(s2.handle, approved, wrong, signerName);
    REQUIRE_FALSE(badTicket.ok());
    CHECK(badTicket.error() == TpmError::TicketMismatch);

    // A ticket replayed on a different TPM is rejected there.
    TpmFixture g("authorize-other");
    std::uint32_t foreignKey = g.tpm.loadExternal(area).value();
    (void)foreignKey;
    REQUIRE(g.tpm.pcrExtend(1, crypto::sha256(asBytes("cfg"))).ok());
    auto gs = g.tpm.startAuthSession(SessionKind::Policy).value();
    REQUIRE(g.tpm.policyPcr(gs.handle, sel).ok());
    auto foreign = g.tpm.policyAuthorize(gs.handle, approved, ticket, signerName);
    REQUIRE_FALSE(foreign.ok());
    CHECK(foreign.error() == TpmError::TicketMismatch);
}

TEST_CASE("policy signed binds the session nonce and records the cp hash") {
    TpmFixture f("pol-signed");
    auto authorizer = crypto::SigningKeyPair::fromSeed(crypto::sha256(asBytes("signer")));
    Bytes area = encodeKeyPublicArea(authorizer.scheme, kAttrSign, kZeroDigest,
                                     authorizer.publicKey);
    std::uint32_t keyHandle = f.tpm.loadExternal(area).value();
    Name signerName = crypto::computeName(area);

    auto session = f.tpm.startAuthSession(SessionKind::Policy).value();
    Digest cpHash = crypto::sha256(asBytes("restriction"));
    Digest aHash = crypto::sha256Cat({session.nonceTpm, be32(0), cpHash});
    auto sig = crypto::sign(authorizer.secretKey, aHash);

    REQUIRE(f.tpm.policySigned(session.handle, keyHandle, sig, cpHash).ok());
    // Digest: H(H(0 || CC_PolicySigned || name)), then the cpHash sticks.
    Digest expected = crypto::sha256(
        crypto::sha256Cat({kZeroDigest, ccBytes(CommandCode::PolicySigned), signerName}));
    CHECK(f.tpm.sessionPolicyDigest(session.handle).value() == expected);

    // The same signed payload fails against a fresh session (new nonce).
    auto other = f.tpm.startAuthSession(SessionKind::Policy).value();
    auto replay = f.tpm.policySigned(other.handle, keyHandle, sig, cpHash);
    REQUIRE_FALSE(replay.ok());
    CHECK(replay.error() == TpmError::BadSignature);
}

TEST_CASE("authorized nv deletion and its failure modes") {
    TpmFixture f("nv-del");
    auto authorizer = crypto::SigningKeyPair::fromSeed(crypto::sha256(asBytes("orc")));
    Bytes area = encodeKeyPublicArea(authorizer.scheme, kAttrRestricted | kAttrSign, kZeroDigest,
                                     authorizer.publicKey);
    std::uint32_t keyHandle = f.tpm.loadExternal(area).value();
    Name signerName = crypto::computeName(area);

    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    tpl.authPolicy = Orchestrator::nvDeletionPolicy(signerName);
    REQUIRE(f.tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());
    REQUIRE(f.tpm.nvDefineSpace(kNvHandleFirst + 1, tpl).ok());
    REQUIRE(f.tpm.nvExtend(kNvHandleFirst, kZeroDigest).ok());
    REQUIRE(f.tpm.nvExtend(kNvHandleFirst + 1, kZeroDigest).ok());

    auto runDeletion = [&](std::uint32_t target, std::uint32_t grantFor) -> TpmResult<void> {
        auto session = f.tpm.startAuthSession(SessionKind::Policy).value();
        Name grantName = f.tpm.nvName(grantFor).value();
        Digest hPol = Orchestrator::policySignedPolicy(signerName);
        Digest hPolHashed = crypto::sha256(hPol);
        auto polSig = crypto::sign(authorizer.secretKey, hPolHashed);
        Digest hCp = crypto::sha256Cat({ccBytes(CommandCode::NvUndefineSpaceSpecial), grantName,
                                        be32(kPlatformHierarchyHandle)});
        Digest aHash = crypto::sha256Cat({session.nonceTpm, be32(0), hCp});
        auto aSig = crypto::sign(authorizer.secretKey, aHash);

        Ticket ticket = f.tpm.verifySignature(keyHandle, hPolHashed, polSig).value();
        auto r = f.tpm.policySigned(session.handle, keyHandle, aSig, hCp);
        if (!r) return r;
        r = f.tpm.policyAuthorize(session.handle, hPol, ticket, signerName);
        if (!r) return r;
        r = f.tpm.policyCommandCode(session.handle, CommandCode::NvUndefineSpaceSpecial);
        if (!r) return r;
        return f.tpm.nvUndefineSpaceSpecial(target, session.handle);
    };

    // Grant minted for one index cannot delete another.
    auto cross = runDeletion(kNvHandleFirst + 1, kNvHandleFirst);
    REQUIRE_FALSE(cross.ok());
    CHECK(cross.error() == TpmError::CpHashMismatch);
    CHECK(f.tpm.nvDefined(kNvHandleFirst + 1));

    // Honest deletion works and destroys the index.
    REQUIRE(runDeletion(kNvHandleFirst, kNvHandleFirst).ok());
    CHECK_FALSE(f.tpm.nvDefined(kNvHandleFirst));

    // A plain (unlocked) policy session is refused.
    auto session = f.tpm.startAuthSession(SessionKind::Policy).value();
    auto plain = f.tpm.nvUndefineSpaceSpecial(kNvHandleFirst + 1, session.handle);
    REQUIRE_FALSE(plain.ok());
    CHECK(plain.error() == TpmError::PolicyUnsatisfied);
}

TEST_CASE("undefine requires the session to be command-locked") {
    // An index whose deletion policy omits the command-code step: the policy
    // digest can be satisfied, but the unlocked session is still refused.
    TpmFixture f("nv-del-nolock");
    auto authorizer = crypto::SigningKeyPair::fromSeed(crypto::sha256(asBytes("auth2")));
    Bytes area = encodeKeyPublicArea(authorizer.scheme, kAttrSign, kZeroDigest,
                                     authorizer.publicKey);
    std::uint32_t keyHandle = f.tpm.loadExternal(area).value();
    Name signerName = crypto::computeName(area);

    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    tpl.authPolicy = Orchestrator::policySignedPolicy(signerName);  // no CC lock folded in
    REQUIRE(f.tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());
    REQUIRE(f.tpm.nvExtend(kNvHandleFirst, kZeroDigest).ok());

    auto session = f.tpm.startAuthSession(SessionKind::Policy).value();
    Digest hCp = crypto::sha256Cat({ccBytes(CommandCode::NvUndefineSpaceSpecial),
                                    f.tpm.nvName(kNvHandleFirst).value(),
                                    be32(kPlatformHierarchyHandle)});
    Digest aHash = crypto::sha256Cat({session.nonceTpm, be32(0), hCp});
    auto sig = crypto::sign(authorizer.secretKey, aHash);
    REQUIRE(f.tpm.policySigned(session.handle, keyHandle, sig, hCp).ok());
    REQUIRE(f.tpm.sessionPolicyDigest(session.handle).value() == tpl.authPolicy);

    auto refused = f.tpm.nvUndefineSpaceSpecial(kNvHandleFirst, session.handle);
    REQUIRE_FALSE(refused.ok());
    CHECK(refused.error() == TpmError::CommandCodeMismatch);
    CHECK(f.tpm.nvDefined(kNvHandleFirst));
}

TEST_CASE("nv pcr values never regress without an authorized deletion") {
    // Random command fuzzing: nothing in the ordinary command set may shrink
    // the extend chain or remove the index.
    VTpm tpm(seed("fuzz"));
    NvTemplate tpl;
    tpl.attributes = Orchestrator::kNvPcrAttributes;
    tpl.authPolicy = crypto::sha256(asBytes("deletion-policy"));
    REQUIRE(tpm.nvDefineSpace(kNvHandleFirst, tpl).ok());
    REQUIRE(tpm.nvExtend(kNvHandleFirst, kZeroDigest).ok());

    std::mt19937_64 rng(1234);
    std::vector<Digest> chain{crypto::sha256Cat({kZeroDigest, kZeroDigest})};
    for (int i = 0; i < 500; ++i) {
        switch (rng() % 6) {
            case 0: {
                Digest d = testutil::randomDigest(rng);
                if (tpm.nvExtend(kNvHandleFirst, d).ok())
                    chain.push_back(crypto::sha256Cat({chain.back(), d}));
                break;
            }
            case 1:
                (void)tpm.nvRead(kNvHandleFirst);
                break;
            case 2: {
                auto s = tpm.startAuthSession(static_cast<SessionKind>(rng() % 2));
                if (s.ok() && (rng() % 2) == 0) tpm.flushContext(s.value().handle);
                break;
            }
            case 3: {
                auto s = tpm.startAuthSession(SessionKind::Policy);
                if (s.ok()) {
                    (void)tpm.nvUndefineSpaceSpecial(kNvHandleFirst, s.value().handle);
                    tpm.flushContext(s.value().handle);
                }
                break;
            }
            case 4: {
                auto s = tpm.startAuthSession(SessionKind::Policy);
                if (s.ok()) {
                    (void)tpm.policyCommandCode(s.value().handle,
                                                CommandCode::NvUndefineSpaceSpecial);
                    (void)tpm.nvUndefineSpaceSpecial(kNvHandleFirst, s.value().handle);
                    tpm.flushContext(s.value().handle);
                }
                break;
            }
            case 5:
                (void)tpm.pcrExtend(static_cast<std::uint32_t>(rng() % 24),
                                    testutil::randomDigest(rng));
                break;
        }
        REQUIRE(tpm.nvDefined(kNvHandleFirst));
        REQUIRE(tpm.nvRead(kNvHandleFirst).value() == chain.back());
    }
}

TEST_CASE("debug dump never exposes secrets") {
    auto block = seed("dump");
    VTpm tpm(block);
    tpm.createPrimary(ObjectKind::StorageKey);
    tpm.createPrimary(ObjectKind::EndorsementKey);
    std::string dump = tpm.debugDump().dump();

    // Recompute the internal secrets from the known derivation and scan.
    Digest pps = crypto::sha256Cat({block, asBytes("pps")});
    Digest proof = crypto::sha256Cat({block, asBytes("proof")});
    CHECK(dump.find(toHex(pps)) == std::string::npos);
    CHECK(dump.find(toHex(proof)) == std::string::npos);
}
