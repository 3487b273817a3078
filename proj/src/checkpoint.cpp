#include "treerank/checkpoint.hpp"

#include <fstream>

#include "treerank/binio.hpp"
#include "treerank/errors.hpp"

namespace treerank {

namespace {
constexpr char kMagic[4] = {'T', 'R', 'C', 'K'};
}

void save_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, 4);
  binio::write_le(out, kCheckpointVersion);
  binio::write_le(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    binio::write_string(out, nt.name);
    binio::write_le(out, static_cast<std::uint64_t>(nt.tensor.rows()));
    binio::write_le(out, static_cast<std::uint64_t>(nt.tensor.cols()));
    for (Scalar v : nt.tensor.values()) binio::write_f64(out, v);
  }
  if (!out) throw FormatError("failed writing checkpoint: " + path.string());
}

std::vector<NamedTensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4)) throw FormatError("not a checkpoint file: " + path.string());
  const auto version = binio::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = binio::read_le<std::uint32_t>(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = binio::read_string(in);
    const auto rows = binio::read_le<std::uint64_t>(in);
    const auto cols = binio::read_le<std::uint64_t>(in);
    if (rows * cols > (1ull << 32)) throw FormatError("tensor '" + nt.name + "' too large");
    nt.tensor = Tensor(rows, cols);
    for (auto& v : nt.tensor.values()) v = binio::read_f64(in);
    tensors.push_back(std::move(nt));
  }
  return tensors;
}

}  // namespace treerank
