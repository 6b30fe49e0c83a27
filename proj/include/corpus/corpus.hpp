#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nncore/rng.hpp"

namespace corpus {

/// Character-level tokenizer over a fixed 61-character alphabet plus BOS,
/// EOS and PAD, for a vocabulary of exactly 64 ids. Both models share it by
/// construction.
class Tokenizer {
 public:
  Tokenizer();

  int vocab_size() const { return 64; }
  int bos() const { return 0; }
  int eos() const { return 1; }
  int pad() const { return 2; }

  bool in_alphabet(char c) const;
  const std::string& alphabet() const { return alphabet_; }

  /// Throws ValidationError on characters outside the alphabet.
  std::vector<int> encode(std::string_view text) const;

  /// Inverse of encode on alphabet characters; special ids are skipped.
  std::string decode(std::span<const int> ids) const;

 private:
  std::string alphabet_;
  int char_to_id_[256];
};

struct SelectionMeta {
  double aggregate_score = 0.0;
  double rho = 0.0;
  double budget_fraction = 0.0;
  std::uint64_t basis_hash = 0;

  bool operator==(const SelectionMeta&) const = default;
};

struct CorpusSample {
  std::int64_t sample_id = 0;
  std::string domain_tag;
  std::vector<int> prompt_tokens;  // starts with BOS
  std::vector<int> answer_tokens;  // ends with EOS
  std::optional<SelectionMeta> selection_meta;
  std::string hidden_trace_ref;  // relative sidecar path; empty when absent

  std::vector<int> full_tokens() const;
  bool operator==(const CorpusSample&) const = default;
};

enum class GeneratorKind { base_text, arithmetic, bracket_code };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_from_string(const std::string& s);

struct CorpusSpec {
  GeneratorKind generator = GeneratorKind::base_text;
  int size = 0;
  std::uint64_t seed = 0;
  // Length knobs, interpreted per generator: words per sentence for
  // base_text, walk length for bracket_code.
  int min_length = 4;
  int max_length = 10;
  // Operand range for arithmetic.
  int min_operand = 0;
  int max_operand = 99;

  bool operator==(const CorpusSpec&) const = default;
};

/// Identical spec => byte-identical corpus.
std::vector<CorpusSample> generate_corpus(const CorpusSpec& spec, const Tokenizer& tok);

std::vector<CorpusSample> gen_base_corpus(const CorpusSpec& spec, const Tokenizer& tok);
std::vector<CorpusSample> gen_domain_corpus(const CorpusSpec& spec, const Tokenizer& tok);

void save_jsonl(std::span<const CorpusSample> samples, const std::filesystem::path& path);
std::vector<CorpusSample> load_jsonl(const std::filesystem::path& path);

}  // namespace corpus
