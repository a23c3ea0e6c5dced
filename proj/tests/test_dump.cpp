#include <doctest.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "tmpdir.hpp"
#include "toolgap/dump.hpp"
#include "toolgap/rng.hpp"

using namespace toolgap;

namespace {

DumpHeader make_header(std::size_t samples, std::size_t layers, std::size_t dim, bool decisions) {
  DumpHeader h;
  h.model = "test-model";
  h.dim = dim;
  h.n_layers = layers;
  for (std::size_t i = 0; i < samples; ++i) h.sample_ids.push_back("s" + std::to_string(i));
  h.decision_included = decisions;
  return h;
}

std::vector<float> random_body(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform01() * 200.0 - 100.0);
  return v;
}

// Independent little-endian writer with no header padding.
void write_raw(const std::filesystem::path& p, const std::string& header, const std::vector<float>& floats) {
  std::string out = "HSD1";
  const auto len = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) out += static_cast<char>((len >> (8 * i)) & 0xff);
  out += header;
  for (const float f : floats) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) out += static_cast<char>((bits >> (8 * i)) & 0xff);
  }
  std::ofstream(p, std::ios::binary) << out;
}

std::string positions_json() {
  std::string s = "[";
  for (int o = -20; o <= -1; ++o) s += std::to_string(o) + (o == -1 ? "]" : ",");
  return s;
}

}  // namespace

TEST_CASE("position offsets") {
  CHECK(offset_of(0) == -20);
  CHECK(offset_of(19) == -1);
  CHECK(position_index_of(-1) == 19);
  CHECK(position_index_of(-20) == 0);
}

TEST_CASE("round trip is bit exact across shapes") {
  TempDir dir;
  struct Shape {
    std::size_t samples, layers, dim;
  };
  for (const auto s : {Shape{1, 1, 1}, Shape{3, 2, 5}, Shape{7, 4, 16}}) {
    CAPTURE(s.dim);
    const auto h = make_header(s.samples, s.layers, s.dim, false);
    const auto body = random_body(s.samples * s.layers * kPositions * s.dim, s.dim);
    write_dump(dir / "d.hsd", h, body);
    const auto d = HiddenStateDump::open(dir / "d.hsd");
    CHECK(d.samples() == s.samples);
    CHECK(d.layers() == s.layers);
    CHECK(d.dim() == s.dim);
    CHECK(d.header().model == "test-model");
    CHECK(d.header().sample_ids == h.sample_ids);

    // Body length is samples * layers * 20 * dim * 4 bytes after the header.
    std::ifstream in(dir / "d.hsd", std::ios::binary);
    unsigned char prefix[8];
    in.read(reinterpret_cast<char*>(prefix), 8);
    const std::uint32_t hlen = prefix[4] | (prefix[5] << 8) | (prefix[6] << 16) | (prefix[7] << 24);
    CHECK((8 + hlen) % 4 == 0);
    CHECK(std::filesystem::file_size(dir / "d.hsd") == 8 + hlen + 4 * s.samples * s.layers * 20 * s.dim);

    for (std::size_t i = 0; i < s.samples; ++i) {
      const auto t = d.tensor(i);
      REQUIRE(t.size() == h.floats_per_sample());
      CHECK(std::memcmp(t.data(), body.data() + i * t.size(), t.size() * 4) == 0);
      for (std::size_t l = 0; l < s.layers; ++l)
        for (std::size_t p = 0; p < kPositions; ++p) {
          const auto v = d.vector(i, l, p);
          REQUIRE(v.size() == s.dim);
          CHECK(v[0] == body[((i * s.layers + l) * kPositions + p) * s.dim]);
        }
      CHECK_FALSE(d.decision(i).has_value());
    }
    CHECK(d.index_of("s0") == 0u);
    CHECK_FALSE(d.index_of("missing").has_value());
  }
}

TEST_CASE("decision trailer and extra keys") {
  TempDir dir;
  auto h = make_header(3, 2, 4, true);
  h.extra["position_convention"] = "rendered prompt";
  h.extra["layer_names"] = {"a", "b"};
  const auto body = random_body(3 * 2 * 20 * 4, 9);
  const std::vector<Decision> dec{{0.5, 0.25}, {0.125, 0.75}, {0.0, 1.0}};
  write_dump(dir / "d.hsd", h, body, dec);
  const auto d = HiddenStateDump::open(dir / "d.hsd");
  CHECK(d.header().extra == h.extra);
  for (std::size_t i = 0; i < 3; ++i) CHECK(d.decision(i) == dec[i]);
  CHECK(std::filesystem::file_size(dir / "d.hsd") % 4 == 0);

  CHECK_THROWS_AS(write_dump(dir / "x.hsd", h, body), std::invalid_argument);
  CHECK_THROWS_AS(write_dump(dir / "x.hsd", h, std::span<const float>(body).subspan(1), dec), std::invalid_argument);
}

TEST_CASE("unaligned bodies are read by copy") {
  TempDir dir;
  // Header length 5 mod 4 leaves the body misaligned.
  std::string header = R"({"model":"m","dim":2,"n_layers":1,"positions":)" + positions_json() +
                       R"(,"dtype":"f32","sample_ids":["a","b"]})";
  while ((8 + header.size()) % 4 != 1) header += ' ';
  const auto body = random_body(2 * 20 * 2, 4);
  write_raw(dir / "u.hsd", header, body);
  const auto d = HiddenStateDump::open(dir / "u.hsd");
  REQUIRE(d.samples() == 2);
  CHECK(std::memcmp(d.tensor(1).data(), body.data() + 40, 40 * 4) == 0);
  CHECK(d.vector(0, 0, 19)[1] == body[39]);
}

TEST_CASE("malformed files") {
  TempDir dir;
  const std::string header = R"({"model":"m","dim":2,"n_layers":1,"positions":)" + positions_json() +
                             R"(,"dtype":"f32","sample_ids":["a"]})";
  const auto body = random_body(40, 1);

  write_raw(dir / "ok.hsd", header, body);
  CHECK_NOTHROW(HiddenStateDump::open(dir / "ok.hsd"));

  {
    std::string bytes;
    std::ifstream in(dir / "ok.hsd", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
    bytes[3] = '2';
    std::ofstream(dir / "magic.hsd", std::ios::binary) << bytes;
  }
  CHECK_THROWS_WITH_AS(HiddenStateDump::open(dir / "magic.hsd"), doctest::Contains("magic"), DumpFormatError);

  write_raw(dir / "short.hsd", header, std::vector<float>(body.begin(), body.end() - 1));
  CHECK_THROWS_WITH_AS(HiddenStateDump::open(dir / "short.hsd"), doctest::Contains("bytes"), DumpFormatError);
  write_raw(dir / "long.hsd", header, std::vector<float>(41, 0.0f));
  CHECK_THROWS_AS(HiddenStateDump::open(dir / "long.hsd"), DumpFormatError);

  write_raw(dir / "dtype.hsd",
            R"({"model":"m","dim":2,"n_layers":1,"positions":)" + positions_json() +
                R"(,"dtype":"f16","sample_ids":["a"]})",
            body);
  CHECK_THROWS_AS(HiddenStateDump::open(dir / "dtype.hsd"), DumpFormatError);
  write_raw(dir / "pos.hsd", R"({"model":"m","dim":2,"n_layers":1,"positions":[-1],"sample_ids":["a"]})", body);
  CHECK_THROWS_AS(HiddenStateDump::open(dir / "pos.hsd"), DumpFormatError);
  write_raw(dir / "json.hsd", "{nope", body);
  CHECK_THROWS_AS(HiddenStateDump::open(dir / "json.hsd"), DumpFormatError);
  write_raw(dir / "dup.hsd",
            R"({"model":"m","dim":2,"n_layers":1,"positions":)" + positions_json() + R"(,"sample_ids":["a","a"]})",
            random_body(80, 2));
  CHECK_THROWS_WITH_AS(HiddenStateDump::open(dir / "dup.hsd"), doctest::Contains("duplicate"), DumpFormatError);
  std::ofstream(dir / "tiny.hsd", std::ios::binary) << "HSD";
  CHECK_THROWS_AS(HiddenStateDump::open(dir / "tiny.hsd"), DumpFormatError);
  CHECK_THROWS(HiddenStateDump::open(dir / "absent.hsd"));
}
