#include "aurora/aead.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <memory>
#include <stdexcept>

namespace aurora::crypto {

namespace {

struct CtxDeleter {
    void operator()(EVP_CIPHER_CTX* c) const { EVP_CIPHER_CTX_free(c); }
};
using CtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CtxDeleter>;

CtxPtr make_ctx() {
    CtxPtr ctx(EVP_CIPHER_CTX_new());
    if (!ctx) throw std::runtime_error("EVP_CIPHER_CTX_new failed");
    return ctx;
}

}  // namespace

Bytes aes256gcm_encrypt(const Key& key, const Nonce& nonce, ByteSpan plaintext,
                        ByteSpan aad, Tag& tag_out) {
    CtxPtr ctx = make_ctx();
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1)
        throw std::runtime_error("gcm encrypt init failed");

    int len = 0;
    if (!aad.empty() &&
        EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
        throw std::runtime_error("gcm aad failed");

    Bytes ciphertext(plaintext.size());
    if (!plaintext.empty() &&
        EVP_EncryptUpdate(ctx.get(), ciphertext.data(), &len, plaintext.data(),
                          static_cast<int>(plaintext.size())) != 1)
        throw std::runtime_error("gcm encrypt failed");

    if (EVP_EncryptFinal_ex(ctx.get(), ciphertext.data() + plaintext.size(), &len) != 1)
        throw std::runtime_error("gcm encrypt final failed");
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, kTagLen, tag_out.data()) != 1)
        throw std::runtime_error("gcm get tag failed");
    return ciphertext;
}

bool aes256gcm_decrypt(const Key& key, const Nonce& nonce, ByteSpan ciphertext,
                       ByteSpan aad, const Tag& tag, Bytes& plaintext_out) {
    CtxPtr ctx = make_ctx();
    if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, key.data(), nonce.data()) != 1)
        throw std::runtime_error("gcm decrypt init failed");

    int len = 0;
    if (!aad.empty() &&
        EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
        throw std::runtime_error("gcm aad failed");

    Bytes plaintext(ciphertext.size());
    if (!ciphertext.empty() &&
        EVP_DecryptUpdate(ctx.get(), plaintext.data(), &len, ciphertext.data(),
                          static_cast<int>(ciphertext.size())) != 1)
        return false;

    Tag tag_copy = tag;
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, kTagLen, tag_copy.data()) != 1)
        throw std::runtime_error("gcm set tag failed");
    if (EVP_DecryptFinal_ex(ctx.get(), plaintext.data() + plaintext.size(), &len) != 1)
        return false;

    plaintext_out = std::move(plaintext);
    return true;
}

std::array<uint8_t, 32> sha256(ByteSpan data) {
    std::array<uint8_t, 32> out{};
    SHA256(data.data(), data.size(), out.data());
    return out;
}

}  // namespace aurora::crypto
