#include <doctest.h>

#include "aurora/aead.hpp"

using namespace aurora;

// AES-256-GCM known-answer vectors (McGrew & Viega GCM test cases 13-16).
// These gate the cipher before any channel test runs.

namespace {

struct Kat {
    const char* key;
    const char* iv;
    const char* aad;
    const char* plaintext;
    const char* ciphertext;
    const char* tag;
};

const Kat kKats[] = {
    {"0000000000000000000000000000000000000000000000000000000000000000",
     "000000000000000000000000", "", "", "", "530f8afbc74536b9a963b4f1c4cb738b"},
    {"0000000000000000000000000000000000000000000000000000000000000000",
     "000000000000000000000000", "", "00000000000000000000000000000000",
     "cea7403d4d606b6e074ec5d3baf39d18", "d0d1c8a799996bf0265b98b5d48ab919"},
    {"feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308",
     "cafebabefacedbaddecaf888", "",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255",
     "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa"
     "8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662898015ad",
     "b094dac5d93471bdec1a502270e3cc6c"},
    {"feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308",
     "cafebabefacedbaddecaf888", "feedfacedeadbeeffeedfacedeadbeefabaddad2",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39",
     "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa"
     "8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662",
     "76fc6ece0f4e1768cddf8853bb2d551b"},
};

crypto::Key key_of(const Kat& k) {
    crypto::Key out{};
    Bytes b = from_hex(k.key);
    std::copy(b.begin(), b.end(), out.begin());
    return out;
}

crypto::Nonce nonce_of(const Kat& k) {
    crypto::Nonce out{};
    Bytes b = from_hex(k.iv);
    std::copy(b.begin(), b.end(), out.begin());
    return out;
}

}  // namespace

TEST_CASE("aes-256-gcm known-answer vectors") {
    for (const Kat& kat : kKats) {
        Bytes pt = from_hex(kat.plaintext);
        Bytes aad = from_hex(kat.aad);
        crypto::Tag tag{};
        Bytes ct = crypto::aes256gcm_encrypt(key_of(kat), nonce_of(kat), pt, aad, tag);
        CHECK(to_hex(ct) == kat.ciphertext);
        CHECK(to_hex(tag) == kat.tag);

        Bytes back;
        REQUIRE(crypto::aes256gcm_decrypt(key_of(kat), nonce_of(kat), ct, aad, tag, back));
        CHECK(back == pt);
    }
}

TEST_CASE("gcm rejects a flipped ciphertext or tag bit") {
    const Kat& kat = kKats[2];
    Bytes pt = from_hex(kat.plaintext);
    crypto::Tag tag{};
    Bytes ct = crypto::aes256gcm_encrypt(key_of(kat), nonce_of(kat), pt, {}, tag);

    Bytes out;
    Bytes ct_bad = ct;
    ct_bad[7] ^= 0x01;
    CHECK_FALSE(crypto::aes256gcm_decrypt(key_of(kat), nonce_of(kat), ct_bad, {}, tag, out));

    crypto::Tag tag_bad = tag;
    tag_bad[0] ^= 0x80;
    CHECK_FALSE(crypto::aes256gcm_decrypt(key_of(kat), nonce_of(kat), ct, {}, tag_bad, out));
}

TEST_CASE("sha256 matches the empty-string and abc digests") {
    CHECK(to_hex(crypto::sha256({})) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    Bytes abc = {'a', 'b', 'c'};
    CHECK(to_hex(crypto::sha256(abc)) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
