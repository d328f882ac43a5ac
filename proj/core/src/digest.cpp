#include "l2mac/digest.hpp"

#include <array>
#include <cstdio>

#include <openssl/evp.h>

namespace l2mac {

std::string sha256_hex(std::string_view data)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr);

    std::string hex;
    hex.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i)
    {
        char buf[3];
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex.append(buf, 2);
    }
    return hex;
}

} // namespace l2mac
