#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <string>

#include "heartbert/errors.hpp"
#include "heartbert/sha256.hpp"

using heartbert::Sha256;

TEST_CASE("sha256 matches the published test vectors") {
    CHECK(Sha256::hex_digest("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(Sha256::hex_digest("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(Sha256::hex_digest("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    CHECK(Sha256::hex_digest(std::string(1000000, 'a')) ==
          "cdc76e5c9914fb9281a1c7e284d73e67f1809a48a497200e046d39ccc7112cd0");
}

TEST_CASE("incremental updates equal one-shot hashing") {
    Sha256 h;
    h.update("abcdbcdecdefdefgefghfghi");
    h.update("ghijhijkijkljklmklmnlmnomnopnopq");
    CHECK(heartbert::to_hex(h.finish()) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("file digest matches in-memory digest") {
    const std::string path = "sha256_test_tmp.bin";
    const std::string payload = "heartbeats\n";
    {
        std::ofstream out(path, std::ios::binary);
        out << payload;
    }
    CHECK(Sha256::hex_digest_file(path) == Sha256::hex_digest(payload));
    std::remove(path.c_str());

    CHECK_THROWS_AS(Sha256::hex_digest_file("does_not_exist.bin"), heartbert::Error);
}
