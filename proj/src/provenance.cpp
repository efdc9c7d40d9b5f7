#include "cxdi/provenance.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <memory>

#include "cxdi/volume_io.hpp"

namespace cxdi {

std::string git_blob_sha1(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    std::array<unsigned char, 20> digest{};
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &len) != 1 || len != digest.size()) {
        throw Error(Errc::IoFailure, "SHA-1 digest failed");
    }
    std::string hex(2 * digest.size(), '0');
    for (std::size_t i = 0; i < digest.size(); ++i) std::snprintf(&hex[2 * i], 3, "%02x", digest[i]);
    return hex;
}

std::string file_blob_sha1(const std::filesystem::path& path) { return git_blob_sha1(read_file(path)); }

}  // namespace cxdi
