#include "cal/model.hpp"

#include <fstream>
#include <vector>

#include "cal/binary_io.hpp"

namespace cal {

namespace {
constexpr char kCheckpointMagic[] = "CALCKPT1\n";
}

void save_checkpoint(const CalModelF& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, 9);
  binary::write_u32(out, kCheckpointVersion);
  binary::write_u32(out, static_cast<std::uint32_t>(model.d));
  binary::write_u32(out, static_cast<std::uint32_t>(model.hidden));
  binary::write_f32(out, model.alpha_logit);
  model.for_each_tensor([&](std::string_view name, const float* p, Eigen::Index n, bool) {
    if (name == "alpha_logit") return;
    binary::write_u32(out, static_cast<std::uint32_t>(n));
    binary::write_f32_array(out, p, static_cast<std::size_t>(n));
  });
  if (!out) throw IoError("write failed for '" + path + "'");
}

CalModelF load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  binary::expect_magic(in, kCheckpointMagic);
  const std::uint32_t version = binary::read_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t d = binary::read_u32(in, "d");
  const std::uint32_t hidden = binary::read_u32(in, "hidden");
  if (d == 0 || hidden == 0 || d > (1u << 20) || hidden > (1u << 16)) {
    throw FormatError("implausible checkpoint dimensions");
  }
  CalModelF model(static_cast<int>(d), static_cast<int>(hidden));
  model.alpha_logit = binary::read_f32(in, "alpha_logit");
  model.for_each_tensor([&](std::string_view name, float* p, Eigen::Index n, bool) {
    if (name == "alpha_logit") return;
    const std::uint32_t len = binary::read_u32(in, "tensor length");
    if (len != static_cast<std::uint32_t>(n)) {
      throw FormatError("tensor '" + std::string(name) + "' has length " + std::to_string(len) +
                        ", expected " + std::to_string(n));
    }
    binary::read_f32_array(in, p, static_cast<std::size_t>(n), "tensor data");
  });
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in checkpoint");
  return model;
}

}  // namespace cal
