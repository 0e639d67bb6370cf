#include "doctest.h"

#include "blindtrust/encoding.h"
#include "blindtrust/vtpm.h"

#include "helpers.h"

using namespace blindtrust;

TEST_CASE("integer encodings are big-endian") {
    auto b16 = be16(0x0102);
    CHECK(b16[0] == 0x01);
    CHECK(b16[1] == 0x02);
    auto b32 = be32(0x01020304);
    CHECK(b32[0] == 0x01);
    CHECK(b32[3] == 0x04);
    auto b64 = be64(0x0102030405060708ull);
    CHECK(b64[0] == 0x01);
    CHECK(b64[7] == 0x08);
}

TEST_CASE("command codes carry the TCG values") {
    auto cc = ccBytes(CommandCode::PolicyAuthorize);
    CHECK(toHex(cc) == "0000016a");
    CHECK(toHex(ccBytes(CommandCode::PolicyNv)) == "00000149");
    CHECK(toHex(ccBytes(CommandCode::PolicyPcr)) == "0000017f");
    CHECK(toHex(ccBytes(CommandCode::NvUndefineSpaceSpecial)) == "0000011f");
    CHECK(toHex(ccBytes(CommandCode::PcrExtend)) == "00000182");
    CHECK(toHex(ccBytes(CommandCode::NvExtend)) == "00000136");
    CHECK(toHex(ccBytes(CommandCode::PolicySigned)) == "00000160");
}

TEST_CASE("response code success is four zero bytes") {
    CHECK(toHex(be32(kRcSuccess)) == "00000000");
}

TEST_CASE("sha256 algorithm id is 0x000B") {
    CHECK(toHex(be16(kAlgSha256)) == "000b");
}

TEST_CASE("hex round trip") {
    std::mt19937_64 rng(21);
    for (int i = 0; i < 100; ++i) {
        Bytes data = testutil::randomBytes(rng, rng() % 64);
        auto parsed = fromHex(toHex(data));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == data);
    }
    CHECK_FALSE(fromHex("abc").has_value());   // odd length
    CHECK_FALSE(fromHex("zz").has_value());    // bad characters
    CHECK(fromHex("").has_value());
}

TEST_CASE("pcr selection encoding") {
    std::vector<std::uint32_t> sel{0, 7, 23};
    Bytes enc = encodePcrSelection(sel);
    CHECK(enc.size() == 1 + 3 * 4);
    CHECK(enc[0] == 3);
    CHECK(toHex(std::span(enc).subspan(1, 4)) == "00000000");
    CHECK(toHex(std::span(enc).subspan(9, 4)) == "00000017");

    auto parsed = parsePcrSelection(enc);
    REQUIRE(parsed.has_value());
    CHECK(*parsed == sel);

    // Different selections encode differently.
    std::vector<std::uint32_t> sel2{0, 7, 22};
    CHECK(encodePcrSelection(sel2) != enc);
}

TEST_CASE("encoded structures parse back to themselves") {
    std::mt19937_64 rng(31);
    for (int i = 0; i < 200; ++i) {
        CreationCertInfo cert;
        cert.magic = kTpmGeneratedMagic;
        Digest d = testutil::randomDigest(rng);
        cert.objName = crypto::computeName(d);
        cert.authPolicy = testutil::randomDigest(rng);
        cert.attributes = static_cast<std::uint32_t>(rng());
        auto back = CreationCertInfo::parse(cert.encode());
        REQUIRE(back.has_value());
        CHECK(back->magic == cert.magic);
        CHECK(back->objName == cert.objName);
        CHECK(back->authPolicy == cert.authPolicy);
        CHECK(back->attributes == cert.attributes);

        NvCertInfo nv;
        nv.magic = kTpmGeneratedMagic;
        nv.objName = cert.objName;
        nv.nvContents = testutil::randomDigest(rng);
        auto nvBack = NvCertInfo::parse(nv.encode());
        REQUIRE(nvBack.has_value());
        CHECK(nvBack->objName == nv.objName);
        CHECK(nvBack->nvContents == nv.nvContents);

        AuditInfo audit;
        audit.magic = kTpmGeneratedMagic;
        audit.sessionDigest = testutil::randomDigest(rng);
        auto auditBack = AuditInfo::parse(audit.encode());
        REQUIRE(auditBack.has_value());
        CHECK(auditBack->sessionDigest == audit.sessionDigest);

        std::uint16_t scheme = kSchemeEd25519;
        std::uint32_t attrs = static_cast<std::uint32_t>(rng());
        Digest pol = testutil::randomDigest(rng);
        Bytes pk = testutil::randomBytes(rng, 32);
        auto keyBack = parseKeyPublicArea(encodeKeyPublicArea(scheme, attrs, pol, pk));
        REQUIRE(keyBack.has_value());
        CHECK(keyBack->scheme == scheme);
        CHECK(keyBack->attributes == attrs);
        CHECK(keyBack->authPolicy == pol);
        CHECK(keyBack->publicKey == pk);

        NvTemplate tpl;
        tpl.attributes = static_cast<std::uint32_t>(rng()) & ~kNvAttrWritten;
        tpl.authPolicy = testutil::randomDigest(rng);
        bool written = (rng() & 1) != 0;
        std::uint32_t handle = kNvHandleFirst + static_cast<std::uint32_t>(rng() % 0x10000);
        auto nvArea = parseNvPublicArea(encodeNvPublicArea(handle, tpl, written));
        REQUIRE(nvArea.has_value());
        CHECK(nvArea->handle == handle);
        CHECK((nvArea->attributes & kNvAttrWritten) == (written ? kNvAttrWritten : 0u));
        CHECK(nvArea->authPolicy == tpl.authPolicy);
    }
}

TEST_CASE("parsers reject truncated and oversized input") {
    CreationCertInfo cert;
    cert.magic = kTpmGeneratedMagic;
    Bytes enc = cert.encode();
    enc.pop_back();
    CHECK_FALSE(CreationCertInfo::parse(enc).has_value());
    enc.push_back(0);
    enc.push_back(0);
    CHECK_FALSE(CreationCertInfo::parse(enc).has_value());
    CHECK_FALSE(AuditInfo::parse(Bytes{}).has_value());
    CHECK_FALSE(parseKeyPublicArea(Bytes(10, 0)).has_value());
}

TEST_CASE("byte reader is sticky on overrun") {
    Bytes data{1, 2};
    ByteReader r(data);
    CHECK(r.u16() == 0x0102);
    CHECK(r.u32() == 0);
    CHECK_FALSE(r.ok());
}
