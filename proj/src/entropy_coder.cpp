#include "sthq/entropy_coder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <stdexcept>
#include <string>
#include <tuple>

namespace sthq {

// ---------------------------------------------------------------------------
// Frequency model

FrequencyTable::FrequencyTable(std::vector<std::uint32_t> freqs) : freqs_(std::move(freqs)) {
  if (freqs_.empty()) throw std::invalid_argument("frequency table needs at least one symbol");
  cum_.assign(freqs_.size() + 1, 0);
  std::uint64_t total = 0;
  for (std::size_t s = 0; s < freqs_.size(); ++s) {
    if (freqs_[s] == 0) throw std::invalid_argument("frequency of symbol " + std::to_string(s) + " is zero");
    total += freqs_[s];
    if (total > kMaxFrequencyTotal) {
      throw std::invalid_argument("frequency total exceeds " + std::to_string(kMaxFrequencyTotal));
    }
    cum_[s + 1] = static_cast<std::uint32_t>(total);
  }
}

std::size_t FrequencyTable::lookup(std::uint32_t target) const {
  auto it = std::upper_bound(cum_.begin(), cum_.end(), target);
  return static_cast<std::size_t>(it - cum_.begin()) - 1;
}

double FrequencyTable::cross_entropy_bits(const SymbolStream& stream) const {
  double bits = 0.0;
  const double total = static_cast<double>(this->total());
  for (std::uint32_t s : stream.symbols) bits -= std::log2(static_cast<double>(freqs_.at(s)) / total);
  return bits;
}

FrequencyTable freq_table(std::span<const std::uint64_t> counts) {
  if (counts.empty()) throw std::invalid_argument("freq_table: empty alphabet");
  if (counts.size() > kMaxFrequencyTotal) throw std::invalid_argument("freq_table: alphabet too large");
  std::vector<std::uint64_t> floored(counts.begin(), counts.end());
  for (auto& c : floored) c = std::max<std::uint64_t>(c, 1);
  const std::uint64_t total = std::accumulate(floored.begin(), floored.end(), std::uint64_t{0});
  std::vector<std::uint32_t> freqs(floored.size());
  if (total <= kMaxFrequencyTotal) {
    std::transform(floored.begin(), floored.end(), freqs.begin(), [](std::uint64_t c) { return static_cast<std::uint32_t>(c); });
  } else {
    // Scaled values sum to at most (max - L); the floor of 1 adds at most L.
    const double factor = static_cast<double>(kMaxFrequencyTotal - floored.size()) / static_cast<double>(total);
    for (std::size_t s = 0; s < floored.size(); ++s) {
      const auto scaled = static_cast<std::uint64_t>(std::floor(static_cast<double>(floored[s]) * factor));
      freqs[s] = static_cast<std::uint32_t>(std::max<std::uint64_t>(scaled, 1));
    }
  }
  return FrequencyTable(std::move(freqs));
}

FrequencyTable freq_table(const SymbolStream& stream) {
  validate(stream);
  std::vector<std::uint64_t> counts(stream.alphabet, 0);
  for (std::uint32_t s : stream.symbols) ++counts[s];
  return freq_table(counts);
}

// ---------------------------------------------------------------------------
// Bit I/O

void BitWriter::bit(bool b) {
  if (count_ % 8 == 0) bytes_.push_back(0);
  if (b) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (count_ % 8));
  ++count_;
}

void BitWriter::bits(std::uint64_t value, unsigned count) {
  for (unsigned i = count; i-- > 0;) bit((value >> i) & 1u);
}

bool BitReader::bit() {
  const std::uint64_t p = pos_++;
  if (p >= limit_ || p / 8 >= bytes_.size()) return false;
  return (bytes_[p / 8] >> (7 - p % 8)) & 1u;
}

// ---------------------------------------------------------------------------
// Arithmetic coder: 32-bit integer interval coder emitting bits, with
// pending (underflow) bits resolved once the interval leaves the middle half.

namespace {

constexpr std::uint64_t kTop = (std::uint64_t{1} << 32) - 1;
constexpr std::uint64_t kHalf = std::uint64_t{1} << 31;
constexpr std::uint64_t kQuarter = std::uint64_t{1} << 30;
constexpr std::uint64_t kThreeQuarters = kHalf + kQuarter;

// Zero padding after the final two bits still lands inside the interval, so
// the decoder may read at most this many bits past the payload end.
constexpr std::uint64_t kMaxOverrun = 32;

void check_table_covers(const SymbolStream& stream, const FrequencyTable& table) {
  if (stream.alphabet != table.size()) {
    throw std::invalid_argument("stream alphabet " + std::to_string(stream.alphabet) + " != table size " +
                                std::to_string(table.size()));
  }
  validate(stream);
}

class PendingWriter {
 public:
  explicit PendingWriter(BitWriter& out) : out_(out) {}
  void emit(bool b) {
    out_.bit(b);
    for (; pending_ > 0; --pending_) out_.bit(!b);
  }
  void defer() { ++pending_; }

 private:
  BitWriter& out_;
  std::uint64_t pending_ = 0;
};

}  // namespace

Payload arith_encode(const SymbolStream& stream, const FrequencyTable& table) {
  check_table_covers(stream, table);
  BitWriter out;
  PendingWriter writer(out);
  std::uint64_t low = 0, high = kTop;
  const std::uint64_t total = table.total();
  for (std::uint32_t s : stream.symbols) {
    const std::uint64_t range = high - low + 1;
    high = low + range * table.cumulative(s + 1) / total - 1;
    low = low + range * table.cumulative(s) / total;
    for (;;) {
      if (high < kHalf) {
        writer.emit(false);
      } else if (low >= kHalf) {
        writer.emit(true);
        low -= kHalf;
        high -= kHalf;
      } else if (low >= kQuarter && high < kThreeQuarters) {
        writer.defer();
        low -= kQuarter;
        high -= kQuarter;
      } else {
        break;
      }
      low <<= 1;
      high = (high << 1) | 1;
    }
  }
  writer.defer();
  writer.emit(low >= kQuarter);
  Payload p;
  p.bits = out.bit_count();
  p.bytes = out.take();
  return p;
}

SymbolStream arith_decode(const Payload& payload, const FrequencyTable& table, std::uint64_t count) {
  if (payload.bytes.size() != (payload.bits + 7) / 8) throw FormatError("arithmetic payload: byte count does not match bit length");
  BitReader in(payload.bytes, payload.bits);
  std::uint64_t value = 0;
  for (int i = 0; i < 32; ++i) value = (value << 1) | static_cast<std::uint64_t>(in.bit());
  std::uint64_t low = 0, high = kTop;
  const std::uint64_t total = table.total();
  SymbolStream out{{}, static_cast<std::uint32_t>(table.size())};
  out.symbols.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t range = high - low + 1;
    if (value < low || value > high) throw FormatError("arithmetic payload: decoder state out of range");
    const std::uint64_t scaled = ((value - low + 1) * total - 1) / range;
    if (scaled >= total) throw FormatError("arithmetic payload: corrupt data");
    const std::size_t s = table.lookup(static_cast<std::uint32_t>(scaled));
    out.symbols.push_back(static_cast<std::uint32_t>(s));
    high = low + range * table.cumulative(s + 1) / total - 1;
    low = low + range * table.cumulative(s) / total;
    for (;;) {
      if (high < kHalf) {
      } else if (low >= kHalf) {
        low -= kHalf;
        high -= kHalf;
        value -= kHalf;
      } else if (low >= kQuarter && high < kThreeQuarters) {
        low -= kQuarter;
        high -= kQuarter;
        value -= kQuarter;
      } else {
        break;
      }
      low <<= 1;
      high = (high << 1) | 1;
      value = (value << 1) | static_cast<std::uint64_t>(in.bit());
    }
    if (in.overrun() > kMaxOverrun) throw FormatError("arithmetic payload: truncated");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Canonical Huffman

std::vector<unsigned> huffman_code_lengths(const FrequencyTable& table) {
  const std::size_t n = table.size();
  if (n == 1) return {1};
  // Nodes 0..n-1 are leaves; ties are broken by node id for determinism.
  using Item = std::tuple<std::uint64_t, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  std::vector<std::size_t> parent(2 * n - 1, 0);
  for (std::size_t s = 0; s < n; ++s) heap.emplace(table.freq(s), s);
  std::size_t next = n;
  while (heap.size() > 1) {
    auto [wa, a] = heap.top();
    heap.pop();
    auto [wb, b] = heap.top();
    heap.pop();
    parent[a] = parent[b] = next;
    heap.emplace(wa + wb, next++);
  }
  const std::size_t root = next - 1;
  std::vector<unsigned> depth(2 * n - 1, 0);
  for (std::size_t node = root; node-- > 0;) depth[node] = depth[parent[node]] + 1;
  return {depth.begin(), depth.begin() + static_cast<std::ptrdiff_t>(n)};
}

namespace {

struct CanonicalCode {
  std::vector<unsigned> lengths;
  std::vector<std::uint64_t> codes;
  std::vector<std::uint32_t> sorted;        // symbols ordered by (length, symbol)
  std::vector<std::uint64_t> first_code;    // per length
  std::vector<std::uint64_t> count;         // per length
  std::vector<std::uint64_t> offset;        // index into `sorted` per length
  unsigned max_length = 0;
};

CanonicalCode build_canonical(const FrequencyTable& table) {
  CanonicalCode c;
  c.lengths = huffman_code_lengths(table);
  const std::size_t n = c.lengths.size();
  c.max_length = *std::max_element(c.lengths.begin(), c.lengths.end());
  if (c.max_length > 63) throw std::logic_error("huffman code longer than 63 bits");
  c.sorted.resize(n);
  std::iota(c.sorted.begin(), c.sorted.end(), 0u);
  std::stable_sort(c.sorted.begin(), c.sorted.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return c.lengths[a] < c.lengths[b]; });
  c.codes.assign(n, 0);
  c.first_code.assign(c.max_length + 2, 0);
  c.count.assign(c.max_length + 2, 0);
  c.offset.assign(c.max_length + 2, 0);
  std::uint64_t code = 0;
  unsigned prev = c.lengths[c.sorted[0]];
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t s = c.sorted[i];
    const unsigned len = c.lengths[s];
    code <<= (len - prev);
    prev = len;
    if (c.count[len] == 0) {
      c.first_code[len] = code;
      c.offset[len] = i;
    }
    ++c.count[len];
    c.codes[s] = code++;
  }
  return c;
}

}  // namespace

Payload huffman_encode(const SymbolStream& stream, const FrequencyTable& table) {
  check_table_covers(stream, table);
  const CanonicalCode code = build_canonical(table);
  BitWriter out;
  for (std::uint32_t s : stream.symbols) out.bits(code.codes[s], code.lengths[s]);
  Payload p;
  p.bits = out.bit_count();
  p.bytes = out.take();
  return p;
}

SymbolStream huffman_decode(const Payload& payload, const FrequencyTable& table, std::uint64_t count) {
  if (payload.bytes.size() != (payload.bits + 7) / 8) throw FormatError("huffman payload: byte count does not match bit length");
  const CanonicalCode code = build_canonical(table);
  BitReader in(payload.bytes, payload.bits);
  SymbolStream out{{}, static_cast<std::uint32_t>(table.size())};
  out.symbols.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t value = 0;
    bool found = false;
    for (unsigned len = 1; len <= code.max_length; ++len) {
      value = (value << 1) | static_cast<std::uint64_t>(in.bit());
      if (code.count[len] && value >= code.first_code[len] && value - code.first_code[len] < code.count[len]) {
        out.symbols.push_back(code.sorted[code.offset[len] + (value - code.first_code[len])]);
        found = true;
        break;
      }
    }
    if (!found) throw FormatError("huffman payload: invalid code");
    if (in.overrun() > 0) throw FormatError("huffman payload: truncated");
  }
  if (in.position() != payload.bits) throw FormatError("huffman payload: trailing bits");
  return out;
}

// ---------------------------------------------------------------------------
// Container

std::vector<std::uint8_t> Bitstream::serialize() const {
  if (freqs.size() > 0xffff) throw std::length_error("alphabet too large for container");
  if (centers.size() != freqs.size() * dim) throw std::invalid_argument("container: center count does not match L*dim");
  ByteWriter w;
  w.tag("STHQ");
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(coder));
  w.u16(static_cast<std::uint16_t>(freqs.size()));
  w.u16(dim);
  w.u64(symbol_count);
  for (float c : centers) w.f32(c);
  for (std::uint32_t f : freqs) w.u32(f);
  w.u64(payload.bits);
  w.raw(payload.bytes);
  return w.take();
}

Bitstream Bitstream::parse(std::span<const std::uint8_t> bytes, std::size_t* consumed) {
  ByteReader r(bytes);
  r.expect_tag("STHQ", "container");
  if (const auto v = r.u8(); v != kVersion) throw FormatError("container: unsupported version " + std::to_string(v));
  Bitstream b;
  const auto coder = r.u8();
  if (coder > 1) throw FormatError("container: unknown coder id " + std::to_string(coder));
  b.coder = static_cast<CoderId>(coder);
  const std::size_t alphabet = r.u16();
  b.dim = r.u16();
  if (alphabet == 0 || b.dim == 0) throw FormatError("container: empty alphabet or zero dimension");
  b.symbol_count = r.u64();
  b.centers.resize(alphabet * b.dim);
  for (float& c : b.centers) c = r.f32();
  b.freqs.resize(alphabet);
  for (auto& f : b.freqs) f = r.u32();
  b.payload.bits = r.u64();
  const std::uint64_t payload_bytes = (b.payload.bits + 7) / 8;
  if (payload_bytes > r.remaining()) throw FormatError("container: payload truncated");
  auto raw = r.raw(static_cast<std::size_t>(payload_bytes));
  b.payload.bytes.assign(raw.begin(), raw.end());
  if (consumed) *consumed = r.position();
  return b;
}

std::uint64_t Bitstream::total_bits() const {
  return 8 * (26 + 4 * centers.size() + 4 * freqs.size() + (payload.bits + 7) / 8);
}

Bitstream encode_stream(const SymbolStream& stream, const FrequencyTable& table, CoderId coder,
                        std::span<const float> centers, std::uint16_t dim) {
  Bitstream b;
  b.coder = coder;
  b.dim = dim;
  b.symbol_count = stream.size();
  b.centers.assign(centers.begin(), centers.end());
  b.freqs = table.freqs();
  if (b.centers.size() != b.freqs.size() * dim) throw std::invalid_argument("encode_stream: centers must hold L*dim values");
  b.payload = coder == CoderId::arithmetic ? arith_encode(stream, table) : huffman_encode(stream, table);
  return b;
}

SymbolStream decode_stream(const Bitstream& bitstream) {
  FrequencyTable table = [&] {
    try {
      return FrequencyTable(bitstream.freqs);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("container: bad frequency table: ") + e.what());
    }
  }();
  SymbolStream out = bitstream.coder == CoderId::arithmetic
                         ? arith_decode(bitstream.payload, table, bitstream.symbol_count)
                         : huffman_decode(bitstream.payload, table, bitstream.symbol_count);
  const Payload again = bitstream.coder == CoderId::arithmetic ? arith_encode(out, table) : huffman_encode(out, table);
  if (again.bits != bitstream.payload.bits || again.bytes != bitstream.payload.bytes) {
    throw FormatError("container: payload is not a valid encoding of " + std::to_string(bitstream.symbol_count) + " symbols");
  }
  return out;
}

double compression_factor(std::uint64_t weights, std::size_t alphabet, std::size_t dim, std::uint64_t payload_bits,
                          std::uint64_t header_bits) {
  if (weights == 0 || alphabet == 0 || dim == 0) throw std::invalid_argument("compression_factor: counts must be positive");
  const double coded = static_cast<double>(alphabet * dim * 32) + static_cast<double>(payload_bits) +
                       static_cast<double>(header_bits);
  return static_cast<double>(weights) * 32.0 / coded;
}

}  // namespace sthq
