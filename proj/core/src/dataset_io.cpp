#include "mts3/dataset_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "mts3/errors.hpp"

namespace mts3 {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'T', 'S', '3', 'D', 'A', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

template <class T>
void put(std::vector<char>& out, T v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<char>& b) : bytes_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("dataset: file truncated");
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

json stats_json(const NormStats& s) {
  return {{"obs_mean", s.obs_mean}, {"obs_std", s.obs_std}, {"act_mean", s.act_mean}, {"act_std", s.act_std}};
}

NormStats stats_from(const json& j) {
  NormStats s;
  j.at("obs_mean").get_to(s.obs_mean);
  j.at("obs_std").get_to(s.obs_std);
  j.at("act_mean").get_to(s.act_mean);
  j.at("act_std").get_to(s.act_std);
  return s;
}

json meta_json(const DatasetMeta& m) {
  json regimes = json::array();
  for (const RegimeSchedule& s : m.regimes) {
    json segs = json::array();
    for (const RegimeSegment& seg : s) segs.push_back({{"start", seg.start}, {"params", seg.params}});
    regimes.push_back(segs);
  }
  json j{{"dt", m.dt}, {"generator", m.generator}, {"seed", m.seed}, {"param_names", m.param_names},
         {"regimes", regimes}};
  if (!m.normalization.empty()) j["normalization"] = stats_json(m.normalization);
  return j;
}

DatasetMeta meta_from(const json& j) {
  DatasetMeta m;
  j.at("dt").get_to(m.dt);
  j.at("generator").get_to(m.generator);
  j.at("seed").get_to(m.seed);
  if (j.contains("param_names")) j.at("param_names").get_to(m.param_names);
  if (j.contains("regimes")) {
    for (const json& segs : j.at("regimes")) {
      RegimeSchedule s;
      for (const json& seg : segs) s.push_back({seg.at("start").get<long>(), seg.at("params").get<std::vector<double>>()});
      m.regimes.push_back(std::move(s));
    }
  }
  if (j.contains("normalization")) m.normalization = stats_from(j.at("normalization"));
  return m;
}

}  // namespace

std::string norm_stats_to_json(const NormStats& s) { return stats_json(s).dump(); }

NormStats norm_stats_from_json(const std::string& text) {
  try {
    return stats_from(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("normalization stats: ") + e.what());
  }
}

std::vector<char> encode_dataset(const TrajectoryBatch& batch) {
  batch.validate();
  std::vector<char> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kDatasetVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.batch));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.steps));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.obs_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.act_dim));
  for (double v : batch.obs) put<float>(out, static_cast<float>(v));
  for (double v : batch.acts) put<float>(out, static_cast<float>(v));
  for (std::uint8_t f : batch.valid) put<std::uint8_t>(out, f);
  const std::string meta = meta_json(batch.meta).dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  return out;
}

TrajectoryBatch decode_dataset(const std::vector<char>& bytes) {
  Reader r(bytes);
  if (r.take(8) != std::string(kMagic, 8)) throw DataError("dataset: bad magic (not an MTS3DAT1 file)");
  const auto version = r.get<std::uint32_t>();
  if (version != kDatasetVersion) throw DataError("dataset: unsupported version " + std::to_string(version));
  const auto b = r.get<std::uint32_t>(), t = r.get<std::uint32_t>();
  const auto d_o = r.get<std::uint32_t>(), d_a = r.get<std::uint32_t>();
  const std::size_t n = static_cast<std::size_t>(b) * t;
  if (d_o == 0 || r.remaining() < n * (4 * (d_o + d_a) + 1)) throw DataError("dataset: file truncated");
  TrajectoryBatch out(b, t, static_cast<int>(d_o), static_cast<int>(d_a));
  for (double& v : out.obs) v = r.get<float>();
  for (double& v : out.acts) v = r.get<float>();
  for (std::uint8_t& f : out.valid) f = r.get<std::uint8_t>();
  const auto len = r.get<std::uint32_t>();
  try {
    out.meta = meta_from(json::parse(r.take(len)));
  } catch (const json::exception& e) {
    throw DataError(std::string("dataset: bad metadata: ") + e.what());
  }
  if (r.remaining() != 0) throw DataError("dataset: trailing bytes after metadata");
  out.validate();
  return out;
}

void write_dataset(const std::string& path, const TrajectoryBatch& batch) {
  const std::vector<char> bytes = encode_dataset(batch);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write to '" + path + "' failed");
}

TrajectoryBatch read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

}  // namespace mts3
