#pragma once

// Lossless coding of symbol streams with a static frequency model:
// an integer arithmetic coder and a canonical Huffman coder, plus the
// "STHQ" container that carries centers, model and payload together.
//
// Container layout (little-endian):
//   "STHQ" | version u8 = 1 | coder u8 (0 arith, 1 huffman) | L u16 | dim u16 |
//   m u64 | centers L*dim f32 | frequencies L u32 | payload bits u64 |
//   payload bytes (MSB-first, zero padded to a byte boundary)

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sthq/byte_io.hpp"
#include "sthq/symbols.hpp"

namespace sthq {

/// Largest total a frequency table may have.
inline constexpr std::uint32_t kMaxFrequencyTotal = 1u << 16;

class FrequencyTable {
 public:
  /// Every entry must be >= 1 and the total must not exceed kMaxFrequencyTotal.
  explicit FrequencyTable(std::vector<std::uint32_t> freqs);

  std::size_t size() const noexcept { return freqs_.size(); }
  std::uint32_t freq(std::size_t s) const { return freqs_[s]; }
  std::uint32_t cumulative(std::size_t s) const { return cum_[s]; }
  std::uint32_t total() const noexcept { return cum_.back(); }
  const std::vector<std::uint32_t>& freqs() const noexcept { return freqs_; }

  /// Symbol s with cumulative(s) <= target < cumulative(s + 1).
  std::size_t lookup(std::uint32_t target) const;

  /// Ideal code length of `stream` under this model, in bits.
  double cross_entropy_bits(const SymbolStream& stream) const;

 private:
  std::vector<std::uint32_t> freqs_;
  std::vector<std::uint32_t> cum_;
};

/// Counts floored at 1, then rescaled so the total fits kMaxFrequencyTotal.
FrequencyTable freq_table(std::span<const std::uint64_t> counts);
FrequencyTable freq_table(const SymbolStream& stream);

class BitWriter {
 public:
  void bit(bool b);
  void bits(std::uint64_t value, unsigned count);  // MSB first
  std::uint64_t bit_count() const noexcept { return count_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
  std::vector<std::uint8_t> take() noexcept { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t count_ = 0;
};

/// Reads bits MSB first; bits past `bit_count` read as zero and are counted.
class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_count) : bytes_(bytes), limit_(bit_count) {}
  bool bit();
  std::uint64_t position() const noexcept { return pos_; }
  std::uint64_t overrun() const noexcept { return pos_ > limit_ ? pos_ - limit_ : 0; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t limit_;
  std::uint64_t pos_ = 0;
};

struct Payload {
  std::vector<std::uint8_t> bytes;
  std::uint64_t bits = 0;
};

Payload arith_encode(const SymbolStream& stream, const FrequencyTable& table);
/// Throws FormatError on a payload that does not decode to exactly `count` symbols.
SymbolStream arith_decode(const Payload& payload, const FrequencyTable& table, std::uint64_t count);

/// Canonical Huffman code lengths; a one-letter alphabet gets length 1.
std::vector<unsigned> huffman_code_lengths(const FrequencyTable& table);
Payload huffman_encode(const SymbolStream& stream, const FrequencyTable& table);
SymbolStream huffman_decode(const Payload& payload, const FrequencyTable& table, std::uint64_t count);

enum class CoderId : std::uint8_t { arithmetic = 0, huffman = 1 };

struct Bitstream {
  static constexpr std::uint8_t kVersion = 1;

  CoderId coder = CoderId::arithmetic;
  std::uint16_t dim = 1;
  std::uint64_t symbol_count = 0;
  std::vector<float> centers;  // alphabet * dim, center by center
  std::vector<std::uint32_t> freqs;
  Payload payload;

  std::size_t alphabet() const noexcept { return freqs.size(); }
  std::vector<std::uint8_t> serialize() const;
  static Bitstream parse(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr);
  /// Serialized size in bits (payload padded to whole bytes).
  std::uint64_t total_bits() const;
};

Bitstream encode_stream(const SymbolStream& stream, const FrequencyTable& table, CoderId coder,
                        std::span<const float> centers, std::uint16_t dim);
/// Decodes and re-encodes to confirm the payload is the canonical encoding
/// of the result; any mismatch raises FormatError.
SymbolStream decode_stream(const Bitstream& bitstream);

/// Uncompressed float cost over total coded cost:
/// (weights * 32) / (L * dim * 32 + payload_bits + header_bits).
double compression_factor(std::uint64_t weights, std::size_t alphabet, std::size_t dim, std::uint64_t payload_bits,
                          std::uint64_t header_bits);

}  // namespace sthq
