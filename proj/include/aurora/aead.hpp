#pragma once

#include <array>

#include "aurora/common.hpp"

namespace aurora::crypto {

constexpr size_t kKeyLen = 32;
constexpr size_t kNonceLen = 12;
constexpr size_t kTagLen = 16;

using Key = std::array<uint8_t, kKeyLen>;
using Nonce = std::array<uint8_t, kNonceLen>;
using Tag = std::array<uint8_t, kTagLen>;

// AES-256-GCM. ciphertext has the same length as plaintext; the tag is
// carried separately. aad may be empty.
Bytes aes256gcm_encrypt(const Key& key, const Nonce& nonce, ByteSpan plaintext,
                        ByteSpan aad, Tag& tag_out);

// Returns false on tag mismatch; plaintext_out is untouched in that case.
bool aes256gcm_decrypt(const Key& key, const Nonce& nonce, ByteSpan ciphertext,
                       ByteSpan aad, const Tag& tag, Bytes& plaintext_out);

std::array<uint8_t, 32> sha256(ByteSpan data);

}  // namespace aurora::crypto
