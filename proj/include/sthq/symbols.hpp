#pragma once

#include <cstdint>
#include <vector>

namespace sthq {

/// Sequence of symbols over an alphabet of `alphabet` letters.
/// Symbols are 0-based internally: symbol j names center j.
struct SymbolStream {
  std::vector<std::uint32_t> symbols;
  std::uint32_t alphabet = 0;

  std::size_t size() const noexcept { return symbols.size(); }
  bool operator==(const SymbolStream&) const = default;
};

/// Throws std::invalid_argument if a symbol falls outside the alphabet.
void validate(const SymbolStream& stream);

}  // namespace sthq
