#include "corpus/corpus.hpp"

#include <fstream>

#include <json.hpp>

#include "common/errors.hpp"

namespace corpus {

namespace {

using nlohmann::json;

// 26 letters + 10 digits + space + punctuation + operators + brackets +
// "QA#&_" = 61 characters; with BOS/EOS/PAD the vocabulary is 64.
constexpr std::string_view kAlphabet =
    "abcdefghijklmnopqrstuvwxyz"
    "0123456789"
    " .,:;?!"
    "+-*/="
    "()[]{}<>"
    "QA#&_";

const char* const kSubjects[] = {"cat",  "dog",  "bird", "fox",   "girl", "boy",
                                 "king", "frog", "wolf", "mouse", "crow", "lion"};
const char* const kVerbs[] = {"sees", "likes", "finds", "takes", "holds", "wants",
                              "gives", "hides", "moves", "paints"};
const char* const kObjects[] = {"ball", "stone", "leaf", "book", "cup",  "hat",
                                "coin", "apple", "door", "tree", "boat", "lamp"};
const char* const kAdjectives[] = {"red", "big", "old", "tiny", "warm", "cold", "green", "soft"};

template <std::size_t N>
const char* pick(const char* const (&bank)[N], nncore::Rng& rng) {
  return bank[rng.next_int(static_cast<int>(N))];
}

CorpusSample make_sample(std::int64_t id, const std::string& tag, const Tokenizer& tok,
                         std::string_view prompt_text, std::string_view answer_text) {
  CorpusSample s;
  s.sample_id = id;
  s.domain_tag = tag;
  s.prompt_tokens.push_back(tok.bos());
  for (int t : tok.encode(prompt_text)) s.prompt_tokens.push_back(t);
  s.answer_tokens = tok.encode(answer_text);
  s.answer_tokens.push_back(tok.eos());
  return s;
}

std::string base_sentence(nncore::Rng& rng) {
  // Statement templates over the word bank; roughly a third carry numerals
  // so digits are familiar text for the base distribution.
  std::string text;
  const int form = rng.next_int(3);
  if (form == 0) {
    text = std::string("the ") + pick(kSubjects, rng) + " " + pick(kVerbs, rng) + " the " +
           pick(kAdjectives, rng) + " " + pick(kObjects, rng) + " .";
  } else if (form == 1) {
    text = std::string("the ") + pick(kAdjectives, rng) + " " + pick(kSubjects, rng) + " " +
           pick(kVerbs, rng) + " a " + pick(kObjects, rng) + " .";
  } else {
    const int count = 2 + rng.next_int(98);
    text = std::string("the ") + pick(kSubjects, rng) + " " + pick(kVerbs, rng) + " " +
           std::to_string(count) + " " + pick(kAdjectives, rng) + " " + pick(kObjects, rng) +
           "s .";
  }
  return text;
}

std::vector<CorpusSample> gen_base_text(const CorpusSpec& spec, const Tokenizer& tok) {
  std::vector<CorpusSample> out;
  out.reserve(static_cast<std::size_t>(spec.size));
  for (int i = 0; i < spec.size; ++i) {
    nncore::Rng rng = nncore::Rng(spec.seed).derive(static_cast<std::uint64_t>(i));
    std::string text = base_sentence(rng);
    const int n_sentences = spec.min_length >= 1
                                ? 1 + rng.next_int(std::max(1, spec.max_length / 6))
                                : 1;
    for (int s = 1; s < n_sentences; ++s) text += " " + base_sentence(rng);
    const std::size_t split = text.size() / 2;
    out.push_back(make_sample(i, "base_text", tok, std::string_view(text).substr(0, split),
                              std::string_view(text).substr(split)));
  }
  return out;
}

std::vector<CorpusSample> gen_arithmetic(const CorpusSpec& spec, const Tokenizer& tok) {
  if (spec.min_operand > spec.max_operand) {
    throw err::ConfigError("arithmetic corpus: min_operand > max_operand");
  }
  std::vector<CorpusSample> out;
  out.reserve(static_cast<std::size_t>(spec.size));
  const int span = spec.max_operand - spec.min_operand + 1;
  for (int i = 0; i < spec.size; ++i) {
    nncore::Rng rng = nncore::Rng(spec.seed).derive(static_cast<std::uint64_t>(i));
    const int a = spec.min_operand + rng.next_int(span);
    const int b = spec.min_operand + rng.next_int(span);
    const int op = rng.next_int(3);
    char op_char = '+';
    long long result = 0;
    if (op == 0) {
      op_char = '+';
      result = static_cast<long long>(a) + b;
    } else if (op == 1) {
      op_char = '-';
      result = static_cast<long long>(a) - b;
    } else {
      op_char = '*';
      result = static_cast<long long>(a) * b;
    }
    const std::string prompt =
        "Q:" + std::to_string(a) + op_char + std::to_string(b) + "= A:";
    out.push_back(make_sample(i, "arithmetic", tok, prompt, std::to_string(result)));
  }
  return out;
}

std::vector<CorpusSample> gen_bracket_code(const CorpusSpec& spec, const Tokenizer& tok) {
  constexpr std::string_view kOpen = "([{<";
  constexpr std::string_view kClose = ")]}>";
  const int max_depth = 6;
  std::vector<CorpusSample> out;
  out.reserve(static_cast<std::size_t>(spec.size));
  for (int i = 0; i < spec.size; ++i) {
    nncore::Rng rng = nncore::Rng(spec.seed).derive(static_cast<std::uint64_t>(i));
    const int steps =
        spec.min_length + rng.next_int(std::max(1, spec.max_length - spec.min_length + 1));
    std::string prefix;
    std::vector<int> stack;
    for (int s = 0; s < steps; ++s) {
      const bool must_open = stack.empty();
      const bool must_close = static_cast<int>(stack.size()) >= max_depth;
      const bool open = must_open || (!must_close && rng.next_double() < 0.62);
      if (open) {
        const int kind = rng.next_int(4);
        stack.push_back(kind);
        prefix.push_back(kOpen[static_cast<std::size_t>(kind)]);
      } else {
        prefix.push_back(kClose[static_cast<std::size_t>(stack.back())]);
        stack.pop_back();
      }
    }
    if (stack.empty()) {
      const int kind = rng.next_int(4);
      stack.push_back(kind);
      prefix.push_back(kOpen[static_cast<std::size_t>(kind)]);
    }
    std::string closing;
    for (std::size_t s = stack.size(); s-- > 0;) {
      closing.push_back(kClose[static_cast<std::size_t>(stack[s])]);
    }
    out.push_back(make_sample(i, "bracket_code", tok, prefix, closing));
  }
  return out;
}

}  // namespace

Tokenizer::Tokenizer() : alphabet_(kAlphabet) {
  for (int& v : char_to_id_) v = -1;
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    char_to_id_[static_cast<unsigned char>(alphabet_[i])] = static_cast<int>(i) + 3;
  }
}

bool Tokenizer::in_alphabet(char c) const { return char_to_id_[static_cast<unsigned char>(c)] >= 0; }

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const int id = char_to_id_[static_cast<unsigned char>(c)];
    if (id < 0) {
      throw err::ValidationError(std::string("tokenizer: character '") + c +
                                 "' is outside the alphabet");
    }
    ids.push_back(id);
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string text;
  text.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) {
      throw err::ValidationError("tokenizer: id " + std::to_string(id) + " out of range");
    }
    if (id >= 3) text.push_back(alphabet_[static_cast<std::size_t>(id - 3)]);
  }
  return text;
}

std::vector<int> CorpusSample::full_tokens() const {
  std::vector<int> t = prompt_tokens;
  t.insert(t.end(), answer_tokens.begin(), answer_tokens.end());
  return t;
}

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::base_text: return "base_text";
    case GeneratorKind::arithmetic: return "arithmetic";
    case GeneratorKind::bracket_code: return "bracket_code";
  }
  return "unknown";
}

GeneratorKind generator_from_string(const std::string& s) {
  if (s == "base_text") return GeneratorKind::base_text;
  if (s == "arithmetic") return GeneratorKind::arithmetic;
  if (s == "bracket_code") return GeneratorKind::bracket_code;
  throw err::ConfigError("unknown corpus generator '" + s + "'");
}

std::vector<CorpusSample> generate_corpus(const CorpusSpec& spec, const Tokenizer& tok) {
  if (spec.size < 1) throw err::ValidationError("corpus spec: size must be >= 1");
  switch (spec.generator) {
    case GeneratorKind::base_text: return gen_base_text(spec, tok);
    case GeneratorKind::arithmetic: return gen_arithmetic(spec, tok);
    case GeneratorKind::bracket_code: return gen_bracket_code(spec, tok);
  }
  throw err::ConfigError("corpus spec: unknown generator");
}

std::vector<CorpusSample> gen_base_corpus(const CorpusSpec& spec, const Tokenizer& tok) {
  CorpusSpec s = spec;
  s.generator = GeneratorKind::base_text;
  return generate_corpus(s, tok);
}

std::vector<CorpusSample> gen_domain_corpus(const CorpusSpec& spec, const Tokenizer& tok) {
  if (spec.generator == GeneratorKind::base_text) {
    throw err::ConfigError("gen_domain_corpus: base_text is not a domain generator");
  }
  return generate_corpus(spec, tok);
}

void save_jsonl(std::span<const CorpusSample> samples, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw err::IoError("cannot open for writing: " + path.string());
  for (const CorpusSample& s : samples) {
    json j;
    j["sample_id"] = s.sample_id;
    j["domain_tag"] = s.domain_tag;
    j["prompt_tokens"] = s.prompt_tokens;
    j["answer_tokens"] = s.answer_tokens;
    if (s.selection_meta) {
      j["selection_meta"] = {{"aggregate_score", s.selection_meta->aggregate_score},
                             {"rho", s.selection_meta->rho},
                             {"budget_fraction", s.selection_meta->budget_fraction},
                             {"basis_hash", s.selection_meta->basis_hash}};
    }
    if (!s.hidden_trace_ref.empty()) j["hidden_trace_ref"] = s.hidden_trace_ref;
    out << j.dump() << "\n";
  }
  if (!out) throw err::IoError("failed while writing: " + path.string());
}

std::vector<CorpusSample> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw err::IoError("cannot open for reading: " + path.string());
  std::vector<CorpusSample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw err::ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      CorpusSample s;
      s.sample_id = j.at("sample_id").get<std::int64_t>();
      s.domain_tag = j.at("domain_tag").get<std::string>();
      s.prompt_tokens = j.at("prompt_tokens").get<std::vector<int>>();
      s.answer_tokens = j.at("answer_tokens").get<std::vector<int>>();
      if (j.contains("selection_meta")) {
        const json& m = j.at("selection_meta");
        s.selection_meta = SelectionMeta{m.at("aggregate_score").get<double>(),
                                         m.at("rho").get<double>(),
                                         m.at("budget_fraction").get<double>(),
                                         m.at("basis_hash").get<std::uint64_t>()};
      }
      if (j.contains("hidden_trace_ref")) {
        s.hidden_trace_ref = j.at("hidden_trace_ref").get<std::string>();
      }
      samples.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw err::ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace corpus
