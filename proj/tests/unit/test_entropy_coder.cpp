#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "sthq/entropy_coder.hpp"
#include "sthq/rng.hpp"

using namespace sthq;

namespace {

SymbolStream random_stream(Rng& rng, std::uint32_t alphabet, std::size_t n, bool skewed) {
  SymbolStream s{{}, alphabet};
  s.symbols.reserve(n);
  std::vector<double> w(alphabet, 1.0);
  if (skewed)
    for (std::uint32_t i = 0; i < alphabet; ++i) w[i] = std::exp(-0.3 * i);
  std::discrete_distribution<std::uint32_t> dist(w.begin(), w.end());
  for (std::size_t i = 0; i < n; ++i) s.symbols.push_back(dist(rng.engine()));
  return s;
}

}  // namespace

TEST_CASE("frequency table floors and rescales") {
  const std::vector<std::uint64_t> small{0, 5, 3};
  const FrequencyTable t = freq_table(small);
  CHECK(t.freqs() == std::vector<std::uint32_t>{1, 5, 3});
  CHECK(t.total() == 9);
  CHECK(t.lookup(0) == 0);
  CHECK(t.lookup(1) == 1);
  CHECK(t.lookup(5) == 1);
  CHECK(t.lookup(6) == 2);
  CHECK(t.lookup(8) == 2);

  const std::vector<std::uint64_t> big{4000000, 2000000, 2000000, 0};
  const FrequencyTable r = freq_table(big);
  CHECK(r.total() <= kMaxFrequencyTotal);
  CHECK(r.freq(3) >= 1);
  CHECK(static_cast<double>(r.freq(0)) / r.total() == doctest::Approx(0.5).epsilon(0.01));
  CHECK(static_cast<double>(r.freq(1)) / r.total() == doctest::Approx(0.25).epsilon(0.01));

  CHECK_THROWS(FrequencyTable({0, 1}));
  CHECK_THROWS(FrequencyTable({kMaxFrequencyTotal, 1}));
}

TEST_CASE("bit writer and reader") {
  BitWriter w;
  w.bits(0b1011, 4);
  w.bit(true);
  CHECK(w.bit_count() == 5);
  CHECK(w.bytes() == std::vector<std::uint8_t>{0b10111000});
  BitReader r(w.bytes(), w.bit_count());
  const bool expect[] = {1, 0, 1, 1, 1, 0};
  for (bool b : expect) CHECK(r.bit() == b);
  CHECK(r.overrun() == 1);
}

TEST_CASE("arithmetic payload near entropy") {
  Rng rng(7, "coder");
  SymbolStream s{{}, 3};
  s.symbols.insert(s.symbols.end(), 5000, 0);
  s.symbols.insert(s.symbols.end(), 2500, 1);
  s.symbols.insert(s.symbols.end(), 2500, 2);
  std::shuffle(s.symbols.begin(), s.symbols.end(), rng.engine());
  const FrequencyTable t({2, 1, 1});
  CHECK(t.cross_entropy_bits(s) == doctest::Approx(15000.0));
  const Payload p = arith_encode(s, t);
  CHECK(p.bits >= 15000);
  CHECK(p.bits <= 15064);
  CHECK(p.bytes.size() == (p.bits + 7) / 8);
  CHECK(arith_decode(p, t, s.symbols.size()) == s);
}

TEST_CASE("degenerate stream costs almost nothing") {
  SymbolStream s{std::vector<std::uint32_t>(10000, 0), 2};
  const std::vector<std::uint64_t> counts{10000, 0};
  const FrequencyTable t = freq_table(counts);
  const double h = t.cross_entropy_bits(s);
  CHECK(h < 2.0);
  const Payload p = arith_encode(s, t);
  CHECK(static_cast<double>(p.bits) <= h + 32);
  CHECK(arith_decode(p, t, 10000) == s);
}

TEST_CASE("round trips across alphabets") {
  Rng rng(11, "roundtrip");
  for (std::uint32_t alphabet : {2u, 3u, 16u, 75u, 256u, 1000u}) {
    for (int rep = 0; rep < 8; ++rep) {
      const std::size_t n = rng.index(3000);
      const SymbolStream s = random_stream(rng, alphabet, n, rep % 2 == 0);
      const FrequencyTable t = freq_table(s);
      const double h = t.cross_entropy_bits(s);

      const Payload a = arith_encode(s, t);
      CHECK(arith_decode(a, t, n) == s);
      CHECK(static_cast<double>(a.bits) <= h + 32);

      const Payload hu = huffman_encode(s, t);
      CHECK(huffman_decode(hu, t, n) == s);
      CHECK(static_cast<double>(hu.bits) <= h + static_cast<double>(n));
    }
  }
}

TEST_CASE("empty stream") {
  const SymbolStream s{{}, 4};
  const FrequencyTable t({1, 1, 1, 1});
  CHECK(arith_decode(arith_encode(s, t), t, 0) == s);
  CHECK(huffman_decode(huffman_encode(s, t), t, 0) == s);
}

TEST_CASE("huffman example") {
  const FrequencyTable t({2, 1, 1});
  CHECK(huffman_code_lengths(t) == std::vector<unsigned>{1, 2, 2});
  const SymbolStream s{{0, 1, 2, 0}, 3};
  const Payload p = huffman_encode(s, t);
  CHECK(p.bits == 6);
  CHECK(huffman_decode(p, t, 4) == s);
  CHECK(huffman_code_lengths(FrequencyTable({7})) == std::vector<unsigned>{1});
}

TEST_CASE("huffman lengths satisfy kraft equality") {
  Rng rng(3, "kraft");
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<std::uint32_t> f(2 + rng.index(200));
    for (auto& v : f) v = 1 + static_cast<std::uint32_t>(rng.index(300));
    const auto lengths = huffman_code_lengths(FrequencyTable(f));
    double kraft = 0;
    for (unsigned l : lengths) kraft += std::ldexp(1.0, -static_cast<int>(l));
    CHECK(kraft == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("container round trip") {
  Rng rng(5, "container");
  const SymbolStream s = random_stream(rng, 16, 2000, true);
  const FrequencyTable t = freq_table(s);
  std::vector<float> centers(32);
  for (std::size_t i = 0; i < centers.size(); ++i) centers[i] = 0.125f * static_cast<float>(i) - 1.0f;
  for (CoderId coder : {CoderId::arithmetic, CoderId::huffman}) {
    const Bitstream b = encode_stream(s, t, coder, centers, 2);
    const auto bytes = b.serialize();
    CHECK(bytes.size() * 8 == b.total_bits());
    CHECK(bytes.size() == 26 + 4 * centers.size() + 4 * 16 + b.payload.bytes.size());
    std::size_t consumed = 0;
    const Bitstream back = Bitstream::parse(bytes, &consumed);
    CHECK(consumed == bytes.size());
    CHECK(back.coder == coder);
    CHECK(back.dim == 2);
    CHECK(back.centers == centers);
    CHECK(back.freqs == t.freqs());
    CHECK(decode_stream(back) == s);
  }
}

TEST_CASE("corrupt input never decodes silently") {
  Rng rng(9, "corrupt");
  const SymbolStream s = random_stream(rng, 8, 500, true);
  const FrequencyTable t = freq_table(s);
  const std::vector<float> centers(8, 0.0f);
  for (CoderId coder : {CoderId::arithmetic, CoderId::huffman}) {
    const auto bytes = encode_stream(s, t, coder, centers, 1).serialize();

    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() - 1})
      CHECK_THROWS_AS(Bitstream::parse(std::span(bytes).first(cut)), FormatError);

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(Bitstream::parse(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(Bitstream::parse(bad_version), FormatError);

    auto bad_coder = bytes;
    bad_coder[5] = 7;
    CHECK_THROWS_AS(Bitstream::parse(bad_coder), FormatError);
    auto zero_dim = bytes;
    zero_dim[8] = 0;
    zero_dim[9] = 0;
    CHECK_THROWS_AS(Bitstream::parse(zero_dim), FormatError);

    const std::size_t freq_at = 18 + 4 * centers.size();
    auto zero_freq = bytes;
    std::fill_n(zero_freq.begin() + static_cast<std::ptrdiff_t>(freq_at), 4, std::uint8_t{0});
    CHECK_THROWS_AS(decode_stream(Bitstream::parse(zero_freq)), FormatError);

    auto long_bits = bytes;
    long_bits[freq_at + 4 * 8] ^= 0x80;  // payload length now exceeds the bytes present
    CHECK_THROWS_AS(Bitstream::parse(long_bits), FormatError);

    auto more_symbols = bytes;
    more_symbols[10] += 50;  // m no longer matches the payload
    CHECK_THROWS_AS(decode_stream(Bitstream::parse(more_symbols)), FormatError);

    Bitstream b = Bitstream::parse(bytes);
    b.payload.bits -= 1;
    b.payload.bytes.resize((b.payload.bits + 7) / 8);
    CHECK_THROWS_AS(decode_stream(b), FormatError);
  }
}

TEST_CASE("compression factor") {
  CHECK(compression_factor(1000, 2, 1, 32000, 0) == doctest::Approx(32000.0 / 32064.0));
  const std::uint64_t w = 464154;
  const double total = w * 32 / 20.15;
  CHECK(compression_factor(w, 2, 1, static_cast<std::uint64_t>(std::llround(total)) - 64, 0) ==
        doctest::Approx(20.15).epsilon(1e-5));
  const double f1 = compression_factor(1000000, 4, 1, 100000, 200);
  const double f2 = compression_factor(1000000, 4, 1, 200000, 200);
  CHECK(f1 / f2 == doctest::Approx(2.0).epsilon(0.01));
}
