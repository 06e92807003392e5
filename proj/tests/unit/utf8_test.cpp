#include "doctest.h"

#include <string>
#include <vector>

#include "heartbert/errors.hpp"
#include "heartbert/rng.hpp"
#include "heartbert/utf8.hpp"

using heartbert::utf8_decode;
using heartbert::utf8_encode;
using heartbert::utf8_length;

TEST_CASE("ascii round-trips unchanged") {
    std::string text = "Hello, quantizer 42!";
    auto cps = utf8_decode(text);
    CHECK(cps.size() == text.size());
    CHECK(utf8_encode(cps) == text);
    CHECK(utf8_length(text) == text.size());
}

TEST_CASE("multi-byte code points encode to the expected bytes") {
    // U+00A1 INVERTED EXCLAMATION MARK -> C2 A1
    std::string s;
    heartbert::utf8_append(s, 0x00a1);
    CHECK(s.size() == 2);
    CHECK(static_cast<unsigned char>(s[0]) == 0xc2);
    CHECK(static_cast<unsigned char>(s[1]) == 0xa1);
    CHECK(utf8_decode(s) == std::vector<uint32_t>{0x00a1});
    CHECK(utf8_length(s) == 1);
}

TEST_CASE("random code points survive encode/decode") {
    auto rng = heartbert::Rng::substream(5, "utf8-roundtrip");
    std::vector<uint32_t> cps;
    for (int i = 0; i < 2000; ++i) {
        uint32_t cp;
        do {
            cp = static_cast<uint32_t>(rng.uniform_index(0x10ffff + 1));
        } while (cp >= 0xd800 && cp <= 0xdfff);  // skip surrogates
        cps.push_back(cp);
    }
    CHECK(utf8_decode(utf8_encode(cps)) == cps);
}

TEST_CASE("malformed input is rejected") {
    CHECK_THROWS_AS(utf8_decode("\xff"), heartbert::Error);
    CHECK_THROWS_AS(utf8_decode("\xc2"), heartbert::Error);        // truncated 2-byte
    CHECK_THROWS_AS(utf8_decode("\xe0\xa0"), heartbert::Error);    // truncated 3-byte
    CHECK_THROWS_AS(utf8_decode("\xc2\x20"), heartbert::Error);    // bad continuation
    CHECK_THROWS_AS(utf8_decode("\xc0\xaf"), heartbert::Error);    // overlong
    CHECK_THROWS_AS(utf8_decode("\xed\xa0\x80"), heartbert::Error);  // surrogate
}
