#include "lm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "common/errors.hpp"

namespace lm {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'D', 'C', 'K', 'P', 'T'};

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw err::ParseError("checkpoint: unexpected end of file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw err::ParseError("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

struct IndexEntry {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::uint64_t offset = 0;  // in doubles, into the data block
};

void save_core(const std::filesystem::path& path, const TransformerCore& core,
               std::uint64_t manifest_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw err::IoError("cannot open checkpoint for writing: " + path.string());

  auto named = const_cast<TransformerCore&>(core).named_parameters();

  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kCheckpointVersion);
  write_u64(out, manifest_hash);
  const ModelConfig& cfg = core.cfg;
  write_u32(out, static_cast<std::uint32_t>(cfg.vocab_size));
  write_u32(out, static_cast<std::uint32_t>(cfg.model_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.ffn_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
  write_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
  write_u32(out, static_cast<std::uint32_t>(cfg.max_seq_len));
  write_u32(out, cfg.role == ModelRole::target ? 0u : 1u);

  write_u32(out, static_cast<std::uint32_t>(named.size()));
  std::uint64_t offset = 0;
  for (auto& [name, p] : named) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(p->value.rows));
    write_u32(out, static_cast<std::uint32_t>(p->value.cols));
    write_u64(out, offset);
    offset += p->value.size();
  }
  write_u64(out, offset);
  for (auto& [name, p] : named) {
    for (double v : p->value.values) write_f64(out, v);
  }
  if (!out) throw err::IoError("failed while writing checkpoint: " + path.string());
}

struct LoadedCheckpoint {
  ModelConfig cfg;
  std::uint64_t manifest_hash = 0;
  std::map<std::string, nncore::Matrix2D> tensors;
};

LoadedCheckpoint load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw err::IoError("cannot open checkpoint for reading: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw err::ParseError("not a checkpoint file: " + path.string());
  }
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw err::ParseError("unsupported checkpoint version " + std::to_string(version) +
                          " in " + path.string());
  }

  LoadedCheckpoint loaded;
  loaded.manifest_hash = read_u64(in);
  loaded.cfg.vocab_size = static_cast<int>(read_u32(in));
  loaded.cfg.model_dim = static_cast<int>(read_u32(in));
  loaded.cfg.ffn_dim = static_cast<int>(read_u32(in));
  loaded.cfg.n_layers = static_cast<int>(read_u32(in));
  loaded.cfg.n_heads = static_cast<int>(read_u32(in));
  loaded.cfg.max_seq_len = static_cast<int>(read_u32(in));
  loaded.cfg.role = read_u32(in) == 0 ? ModelRole::target : ModelRole::draft;

  const std::uint32_t n_tensors = read_u32(in);
  std::vector<IndexEntry> index(n_tensors);
  for (IndexEntry& e : index) {
    const std::uint32_t name_len = read_u32(in);
    e.name.resize(name_len);
    in.read(e.name.data(), name_len);
    e.rows = static_cast<int>(read_u32(in));
    e.cols = static_cast<int>(read_u32(in));
    e.offset = read_u64(in);
  }
  const std::uint64_t total = read_u64(in);
  std::vector<double> data(total);
  for (double& v : data) v = read_f64(in);
  if (!in) throw err::ParseError("checkpoint data truncated: " + path.string());

  for (const IndexEntry& e : index) {
    const std::uint64_t n = static_cast<std::uint64_t>(e.rows) * static_cast<std::uint64_t>(e.cols);
    if (e.offset + n > total) {
      throw err::ParseError("checkpoint index entry '" + e.name + "' is out of bounds");
    }
    nncore::Matrix2D m(e.rows, e.cols);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(e.offset),
              data.begin() + static_cast<std::ptrdiff_t>(e.offset + n), m.values.begin());
    loaded.tensors.emplace(e.name, std::move(m));
  }
  return loaded;
}

void fill_core(TransformerCore& core, LoadedCheckpoint& loaded,
               const std::filesystem::path& path) {
  for (auto& [name, p] : core.named_parameters()) {
    auto it = loaded.tensors.find(name);
    if (it == loaded.tensors.end()) {
      throw err::ParseError("checkpoint " + path.string() + " is missing tensor '" + name + "'");
    }
    if (it->second.rows != p->value.rows || it->second.cols != p->value.cols) {
      throw err::ParseError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    p->value = std::move(it->second);
    p->grad = nncore::Matrix2D(p->value.rows, p->value.cols);
    loaded.tensors.erase(it);
  }
  if (!loaded.tensors.empty()) {
    throw err::ParseError("checkpoint " + path.string() + " holds unexpected tensor '" +
                          loaded.tensors.begin()->first + "'");
  }
}

}  // namespace

void save_target(const std::filesystem::path& path, const TargetModel& model,
                 std::uint64_t manifest_hash) {
  save_core(path, model.core, manifest_hash);
}

void save_draft(const std::filesystem::path& path, const DraftModel& model,
                std::uint64_t manifest_hash) {
  save_core(path, model.core, manifest_hash);
}

TargetModel load_target(const std::filesystem::path& path) {
  LoadedCheckpoint loaded = load_file(path);
  if (loaded.cfg.role != ModelRole::target) {
    throw err::ConfigError("checkpoint " + path.string() + " does not hold a target model");
  }
  nncore::Rng scratch_rng(0);
  TargetModel model = TargetModel::create(loaded.cfg, scratch_rng);
  fill_core(model.core, loaded, path);
  return model;
}

DraftModel load_draft(const std::filesystem::path& path) {
  LoadedCheckpoint loaded = load_file(path);
  if (loaded.cfg.role != ModelRole::draft) {
    throw err::ConfigError("checkpoint " + path.string() + " does not hold a draft model");
  }
  nncore::Rng scratch_rng(0);
  DraftModel model = DraftModel::create_plain(loaded.cfg, scratch_rng);
  // Gated drafts are recognized by the presence of routing tensors.
  if (loaded.tensors.count("block0.ffn.gate.w_shared") != 0) {
    model = build_gated_draft_from_pretrained(model);
  }
  fill_core(model.core, loaded, path);
  return model;
}

std::uint64_t checkpoint_manifest_hash(const std::filesystem::path& path) {
  return load_file(path).manifest_hash;
}

}  // namespace lm
