#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hdcs {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed category string; offset is the byte position of the failure.
struct SyntaxError : Error {
  SyntaxError(const std::string& msg, std::size_t offset)
      : Error(msg + " (at byte " + std::to_string(offset) + ")"), offset(offset) {}
  std::size_t offset;
};

// Atom not present in a closed symbol table (strict parsing).
struct UnknownSymbol : Error {
  explicit UnknownSymbol(const std::string& name)
      : Error("unknown symbol: " + name), name(name) {}
  std::string name;
};

// Modality marker with no adjacent binary operator to fuse with.
struct MarkerPlacement : Error {
  explicit MarkerPlacement(const std::string& msg) : Error(msg) {}
};

// Incompatible tensor shapes; message carries the op name and shapes.
struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct DimensionMismatch : Error {
  DimensionMismatch(std::size_t expected, std::size_t actual)
      : Error("vector dimension mismatch: expected " + std::to_string(expected) +
              ", got " + std::to_string(actual)),
        expected(expected),
        actual(actual) {}
  std::size_t expected;
  std::size_t actual;
};

// Remote encoder unreachable after retries.
struct TransportError : Error {
  explicit TransportError(const std::string& msg) : Error(msg) {}
};

// Response or file does not match the documented schema.
struct SchemaError : Error {
  explicit SchemaError(const std::string& msg) : Error(msg) {}
};

// Corpus failed to load within the configured error budget.
struct CorpusError : Error {
  explicit CorpusError(const std::string& msg) : Error(msg) {}
};

// Training loss became NaN or infinite.
struct NonFiniteLoss : Error {
  explicit NonFiniteLoss(std::size_t batch_id)
      : Error("non-finite loss in batch " + std::to_string(batch_id)), batch_id(batch_id) {}
  std::size_t batch_id;
};

// Checkpoint and corpus disagree on the primitive inventory.
struct SymbolTableMismatch : Error {
  explicit SymbolTableMismatch(const std::string& msg) : Error(msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

}  // namespace hdcs
