#pragma once

// Checkpoint container: versioned header followed by (name, shape, raw
// little-endian f64) records. Round trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ctckd/common.hpp"
#include "ctckd/nn.hpp"
#include "ctckd/tensor.hpp"

namespace ctckd {

namespace detail {

constexpr char kCheckpointMagic[8] = {'C', 'T', 'C', 'K', 'D', 'C', 'P', '1'};
constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T* v, const std::string& path) {
  is.read(reinterpret_cast<char*>(v), sizeof(T));
  check_state(is.good(), "checkpoint: truncated file ", path);
}

}  // namespace detail

inline void save_checkpoint(const ParamMap& params, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  check_state(os.good(), "checkpoint: cannot open ", path, " for writing");
  os.write(detail::kCheckpointMagic, sizeof(detail::kCheckpointMagic));
  detail::write_pod(os, detail::kCheckpointVersion);
  detail::write_pod(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params.items()) {
    detail::write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) detail::write_pod(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(sizeof(double) * t.numel()));
  }
  check_state(os.good(), "checkpoint: write failed on ", path);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check_state(is.good(), "checkpoint: cannot open ", path);
  char magic[8];
  is.read(magic, sizeof(magic));
  check_state(is.good() && std::memcmp(magic, detail::kCheckpointMagic, 8) == 0,
              "checkpoint: bad magic in ", path);
  uint32_t version = 0;
  detail::read_pod(is, &version, path);
  check_state(version == detail::kCheckpointVersion, "checkpoint: version ", version,
              " unsupported (expected ", detail::kCheckpointVersion, ") in ", path);
  uint32_t count = 0;
  detail::read_pod(is, &count, path);
  std::map<std::string, Tensor> out;
  for (uint32_t i = 0; i < count; i++) {
    uint32_t name_len = 0;
    detail::read_pod(is, &name_len, path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    check_state(is.good(), "checkpoint: truncated file ", path);
    uint32_t ndim = 0;
    detail::read_pod(is, &ndim, path);
    Shape shape(ndim);
    for (uint32_t d = 0; d < ndim; d++) detail::read_pod(is, &shape[d], path);
    std::vector<double> values(static_cast<size_t>(shape_numel(shape)));
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(sizeof(double) * values.size()));
    check_state(is.good(), "checkpoint: truncated file ", path);
    check_state(out.find(name) == out.end(), "checkpoint: duplicate record '", name,
                "' in ", path);
    out.emplace(name, Tensor::from_values(std::move(shape), std::move(values)));
  }
  return out;
}

// Copies loaded records into live parameters. Every record must match an
// existing parameter by name and shape, and every parameter must be covered.
inline void assign_params(ParamMap& params, const std::map<std::string, Tensor>& loaded,
                          const std::string& origin = "checkpoint") {
  for (const auto& [name, t] : loaded)
    check_state(params.find(name) != nullptr, origin, ": unknown parameter '", name, "'");
  for (auto& [name, t] : params.items()) {
    auto it = loaded.find(name);
    check_state(it != loaded.end(), origin, ": missing parameter '", name, "'");
    check_state(it->second.shape() == t.shape(), origin, ": shape mismatch for '", name,
                "': ", shape_str(it->second.shape()), " vs ", shape_str(t.shape()));
    std::copy_n(it->second.data(), t.numel(), t.mutable_data());
  }
}

}  // namespace ctckd
