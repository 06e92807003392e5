#include "heartbert/utf8.hpp"

#include "heartbert/errors.hpp"

namespace heartbert {

std::vector<uint32_t> utf8_decode(std::string_view text) {
    std::vector<uint32_t> out;
    out.reserve(text.size());
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        uint32_t cp = 0;
        int extra = 0;
        if (c < 0x80) {
            cp = c;
        } else if ((c & 0xe0) == 0xc0) {
            cp = c & 0x1f;
            extra = 1;
        } else if ((c & 0xf0) == 0xe0) {
            cp = c & 0x0f;
            extra = 2;
        } else if ((c & 0xf8) == 0xf0) {
            cp = c & 0x07;
            extra = 3;
        } else {
            fail(ErrorKind::Format, "invalid UTF-8 lead byte");
        }
        if (i + static_cast<size_t>(extra) >= text.size() && extra > 0) {
            fail(ErrorKind::Format, "truncated UTF-8 sequence");
        }
        for (int k = 1; k <= extra; ++k) {
            unsigned char cc = static_cast<unsigned char>(text[i + k]);
            if ((cc & 0xc0) != 0x80) fail(ErrorKind::Format, "invalid UTF-8 continuation byte");
            cp = (cp << 6) | (cc & 0x3f);
        }
        static constexpr uint32_t kMinForLen[4] = {0, 0x80, 0x800, 0x10000};
        if (extra > 0 && cp < kMinForLen[extra]) {
            fail(ErrorKind::Format, "overlong UTF-8 encoding");
        }
        if (cp > 0x10ffff || (cp >= 0xd800 && cp <= 0xdfff)) {
            fail(ErrorKind::Format, "UTF-8 sequence decodes outside Unicode scalar values");
        }
        out.push_back(cp);
        i += 1 + extra;
    }
    return out;
}

void utf8_append(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
        out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
}

std::string utf8_encode(const std::vector<uint32_t>& codepoints) {
    std::string out;
    out.reserve(codepoints.size());
    for (uint32_t cp : codepoints) utf8_append(out, cp);
    return out;
}

size_t utf8_length(std::string_view text) {
    size_t n = 0;
    for (unsigned char c : text) {
        if ((c & 0xc0) != 0x80) ++n;
    }
    return n;
}

}  // namespace heartbert
