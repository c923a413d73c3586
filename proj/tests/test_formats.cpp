#include <catch2/catch_amalgamated.hpp>

#include "attnlab/io_util.hpp"
#include "attnlab/rng.hpp"
#include "attnlab/trace_io.hpp"

using namespace attnlab;

TEST_CASE("trace container round-trips including spans", "[formats]") {
    AttentionTrace t;
    t.init(2, 3, 8);
    t.kinds = {"rope-swa", "nope-full"};
    Rng rng(1);
    for (auto& x : t.w) x = rng.uniform();
    t.spans = TraceSpans{3, 5, 6};
    const std::string bytes = serialize_trace(t);
    auto back = parse_trace(bytes);
    CHECK(back.n_layers == 2);
    CHECK(back.n_heads == 3);
    CHECK(back.seq_len == 8);
    CHECK(back.kinds == t.kinds);
    REQUIRE(back.spans.has_value());
    CHECK(back.spans->needle_begin == 3);
    CHECK(back.spans->needle_end == 5);
    CHECK(back.spans->query_begin == 6);
    CHECK(back.w == t.w);  // bitwise
    CHECK(serialize_trace(back) == bytes);
}

TEST_CASE("trace parser rejects corrupt input", "[formats]") {
    AttentionTrace t;
    t.init(1, 1, 4);
    std::string bytes = serialize_trace(t);
    CHECK_THROWS(parse_trace(bytes.substr(0, bytes.size() - 8)));
    CHECK_THROWS(parse_trace("garbage\n{}\n"));
}

TEST_CASE("csv writer quotes per RFC 4180 and embeds metadata", "[formats]") {
    CsvWriter w("niah", "deadbeefdeadbeef");
    w.header({"a", "b"});
    w.row({"plain", "with,comma"});
    w.row({"quote\"inside", "line\nbreak"});
    const std::string s = w.str();
    CHECK(s.find("# attnlab v") == 0);
    CHECK(s.find("config_hash=deadbeefdeadbeef") != std::string::npos);
    CHECK(s.find("\"with,comma\"") != std::string::npos);
    CHECK(s.find("\"quote\"\"inside\"") != std::string::npos);
    CHECK(s.find("\"line\nbreak\"") != std::string::npos);
}

TEST_CASE("atomic write leaves no temp file behind", "[formats]") {
    const auto dir = std::filesystem::temp_directory_path() / "attnlab_fmt_test";
    std::filesystem::remove_all(dir);
    const auto path = dir / "x.csv";
    atomic_write(path, "hello");
    CHECK(read_file(path) == "hello");
    CHECK_FALSE(std::filesystem::exists(dir / "x.csv.tmp"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("config hash is stable", "[formats]") {
    CHECK(config_hash_of("abc") == config_hash_of("abc"));
    CHECK(config_hash_of("abc") != config_hash_of("abd"));
    CHECK(config_hash_of("x").size() == 16);
}
