#include "aerialgen/core/base64.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include "aerialgen/core/error.hpp"

namespace aerialgen {

namespace it = boost::archive::iterators;

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    using Encoder = it::base64_from_binary<it::transform_width<std::vector<std::uint8_t>::const_iterator, 6, 8>>;
    std::string out(Encoder(bytes.begin()), Encoder(bytes.end()));
    out.append((3 - bytes.size() % 3) % 3, '=');
    return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text) {
        if (c == '\n' || c == '\r' || c == ' ') continue;
        const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' ||
                        c == '/' || c == '=';
        if (!ok) throw IoError("invalid base64 character");
        clean.push_back(c);
    }
    std::size_t pad = 0;
    while (!clean.empty() && clean.back() == '=') {
        clean.pop_back();
        ++pad;
    }
    if (pad > 2) throw IoError("invalid base64 padding");
    using Decoder = it::transform_width<it::binary_from_base64<std::string::const_iterator>, 8, 6>;
    std::vector<std::uint8_t> out(Decoder(clean.begin()), Decoder(clean.end()));
    // Drop the partial byte produced by the final sextet group.
    const std::size_t expected = clean.size() * 6 / 8;
    out.resize(expected);
    return out;
}

}  // namespace aerialgen
