#include "corpus/traces.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "common/errors.hpp"

namespace corpus {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'A', 'D', 'T', 'R', 'C', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw err::ParseError("trace sidecar: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

const nncore::Matrix2D& HiddenTraces::rows_for(std::int64_t sample_id) const {
  auto it = by_sample.find(sample_id);
  if (it == by_sample.end()) {
    throw err::ValidationError("no hidden trace recorded for sample " +
                               std::to_string(sample_id));
  }
  return it->second;
}

void save_traces(const HiddenTraces& traces, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw err::IoError("cannot open trace sidecar for writing: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, 1);  // format version
  write_u64(out, static_cast<std::uint64_t>(traces.width));
  write_u64(out, traces.by_sample.size());
  std::uint64_t offset = 0;
  for (const auto& [id, m] : traces.by_sample) {
    if (m.cols != traces.width) {
      throw err::ShapeError("trace sidecar: sample " + std::to_string(id) +
                            " has width " + std::to_string(m.cols) + ", expected " +
                            std::to_string(traces.width));
    }
    write_u64(out, static_cast<std::uint64_t>(id));
    write_u64(out, offset);
    write_u64(out, static_cast<std::uint64_t>(m.rows));
    offset += m.values.size();
  }
  write_u64(out, offset);
  for (const auto& [id, m] : traces.by_sample) {
    for (double v : m.values) write_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw err::IoError("failed while writing trace sidecar: " + path.string());
}

HiddenTraces load_traces(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw err::IoError("cannot open trace sidecar for reading: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw err::ParseError("not a trace sidecar: " + path.string());
  }
  const std::uint64_t version = read_u64(in);
  if (version != 1) {
    throw err::ParseError("unsupported trace sidecar version " + std::to_string(version));
  }
  HiddenTraces traces;
  traces.width = static_cast<int>(read_u64(in));
  const std::uint64_t n = read_u64(in);
  struct Entry {
    std::int64_t id;
    std::uint64_t offset;
    std::uint64_t rows;
  };
  std::vector<Entry> index(n);
  for (Entry& e : index) {
    e.id = static_cast<std::int64_t>(read_u64(in));
    e.offset = read_u64(in);
    e.rows = read_u64(in);
  }
  const std::uint64_t total = read_u64(in);
  std::vector<double> data(total);
  for (double& v : data) v = std::bit_cast<double>(read_u64(in));
  if (!in) throw err::ParseError("trace sidecar data truncated: " + path.string());
  for (const Entry& e : index) {
    const std::uint64_t count = e.rows * static_cast<std::uint64_t>(traces.width);
    if (e.offset + count > total) {
      throw err::ParseError("trace sidecar index out of bounds for sample " +
                            std::to_string(e.id));
    }
    nncore::Matrix2D m(static_cast<int>(e.rows), traces.width);
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(e.offset),
              data.begin() + static_cast<std::ptrdiff_t>(e.offset + count), m.values.begin());
    traces.by_sample.emplace(e.id, std::move(m));
  }
  return traces;
}

}  // namespace corpus
