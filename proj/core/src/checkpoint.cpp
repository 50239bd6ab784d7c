#include "mts3/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "mts3/dataset_io.hpp"
#include "mts3/errors.hpp"

namespace mts3 {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'T', 'S', '3', 'C', 'K', 'P', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void append(std::vector<double>& blob, const Matrix& m) {
  // Row-major order in the file.
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) blob.push_back(m(r, c));
}

Matrix extract(const std::vector<double>& blob, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  const std::size_t n = static_cast<std::size_t>(rows * cols);
  if (offset % sizeof(double) != 0 || offset / sizeof(double) + n > blob.size()) {
    throw DataError("checkpoint: tensor outside the data blob");
  }
  Matrix m(rows, cols);
  std::size_t i = offset / sizeof(double);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = blob[i++];
  return m;
}

}  // namespace

std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<double> blob;
  json tensors = json::array();
  const bool with_adam = !ckpt.adam_m.empty();
  if (with_adam && (ckpt.adam_m.size() != static_cast<std::size_t>(ckpt.params.size()) ||
                    ckpt.adam_v.size() != ckpt.adam_m.size())) {
    throw DataError("checkpoint: optimizer state does not match the parameters");
  }
  for (int i = 0; i < ckpt.params.size(); ++i) {
    const ad::Parameter& p = ckpt.params[i];
    json t{{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"offset", blob.size() * sizeof(double)}};
    append(blob, p.value);
    if (with_adam) {
      t["adam_m_offset"] = blob.size() * sizeof(double);
      append(blob, ckpt.adam_m[static_cast<std::size_t>(i)]);
      t["adam_v_offset"] = blob.size() * sizeof(double);
      append(blob, ckpt.adam_v[static_cast<std::size_t>(i)]);
    }
    tensors.push_back(std::move(t));
  }
  json manifest{{"format", "MTS3CKP1"},
                {"config", json::parse(config_to_json(ckpt.config, -1))},
                {"obs_dim", ckpt.obs_dim},
                {"act_dim", ckpt.act_dim},
                {"tensors", tensors},
                {"adam_steps", ckpt.adam_steps},
                {"has_adam", with_adam},
                {"rng_state", ckpt.rng_state},
                {"epoch", ckpt.epoch},
                {"best_val", ckpt.best_val},
                {"best_epoch", ckpt.best_epoch},
                {"bad_epochs", ckpt.bad_epochs},
                {"blob_bytes", blob.size() * sizeof(double)}};
  if (!ckpt.norm.empty()) manifest["normalization"] = json::parse(norm_stats_to_json(ckpt.norm));
  const std::string text = manifest.dump();

  std::vector<char> out(kMagic, kMagic + 8);
  const std::uint64_t len = text.size();
  const char* lp = reinterpret_cast<const char*>(&len);
  out.insert(out.end(), lp, lp + sizeof(len));
  out.insert(out.end(), text.begin(), text.end());
  const char* bp = reinterpret_cast<const char*>(blob.data());
  out.insert(out.end(), bp, bp + blob.size() * sizeof(double));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw DataError("checkpoint: bad magic (not an MTS3CKP1 file)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (bytes.size() - 16 < len) throw DataError("checkpoint: truncated manifest");
  Checkpoint ckpt;
  try {
    const json m = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    const std::size_t blob_bytes = m.at("blob_bytes").get<std::size_t>();
    const std::size_t start = 16 + len;
    if (bytes.size() - start != blob_bytes || blob_bytes % sizeof(double) != 0) {
      throw DataError("checkpoint: data blob size mismatch");
    }
    std::vector<double> blob(blob_bytes / sizeof(double));
    std::memcpy(blob.data(), bytes.data() + start, blob_bytes);

    ckpt.config = parse_config(m.at("config").dump());
    ckpt.obs_dim = m.at("obs_dim").get<int>();
    ckpt.act_dim = m.at("act_dim").get<int>();
    ckpt.config.model.obs_dim = ckpt.obs_dim;
    ckpt.config.model.act_dim = ckpt.act_dim;
    const bool with_adam = m.at("has_adam").get<bool>();
    for (const json& t : m.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>(), cols = t.at("shape").at(1).get<Eigen::Index>();
      ckpt.params.add(t.at("name").get<std::string>(), extract(blob, t.at("offset").get<std::size_t>(), rows, cols));
      if (with_adam) {
        ckpt.adam_m.push_back(extract(blob, t.at("adam_m_offset").get<std::size_t>(), rows, cols));
        ckpt.adam_v.push_back(extract(blob, t.at("adam_v_offset").get<std::size_t>(), rows, cols));
      }
    }
    ckpt.adam_steps = m.at("adam_steps").get<long>();
    ckpt.rng_state = m.at("rng_state").get<std::string>();
    ckpt.epoch = m.at("epoch").get<int>();
    ckpt.best_val = m.at("best_val").get<double>();
    ckpt.best_epoch = m.at("best_epoch").get<int>();
    ckpt.bad_epochs = m.at("bad_epochs").get<int>();
    if (m.contains("normalization")) ckpt.norm = norm_stats_from_json(m.at("normalization").dump());
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::vector<char> bytes = encode_checkpoint(ckpt);
  // Write to a sibling file first so an interrupted save never truncates a good checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw DataError("cannot move checkpoint into '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void restore_params(const ad::ParameterStore& src, ad::ParameterStore& dst) {
  for (ad::Parameter& p : dst) {
    if (!src.contains(p.name)) throw DataError("checkpoint: missing tensor '" + p.name + "'");
    const Matrix& v = src[src.index(p.name)].value;
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
      throw DataError("checkpoint: shape mismatch for tensor '" + p.name + "'");
    }
    p.value = v;
  }
}

}  // namespace mts3
