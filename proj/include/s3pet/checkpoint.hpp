#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s3pet/nn.hpp"

namespace s3pet {

/// Named flat parameter tensors plus a manifest; payload is f32
/// little-endian, entries contiguous in manifest order.
struct Checkpoint {
  struct Entry {
    std::string name;
    int rows = 0, cols = 0;
    std::int64_t offset = 0;  // float index into payload
  };

  std::string stage;    // "I" or "II"
  std::string dose;     // "L"/"S" for stage I, "-" otherwise
  std::string variant;  // stage-II wiring name, "-" for stage I
  std::string config_hash;
  std::int64_t steps = 0;
  int d = 0, t_blocks = 0, h = 0, p = 0, slice = 0;

  std::vector<Entry> entries;
  std::vector<float> payload;

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::uint64_t fnv1a64(const std::string& s);
std::string hash_hex(const std::string& s);

/// Snapshot every registry tensor (params and buffers) into the checkpoint
/// in registry order, row-major, cast to f32.
template <typename T>
void export_params(const ParamRegistry<T>& reg, Checkpoint& ckpt) {
  ckpt.entries.clear();
  ckpt.payload.clear();
  for (const auto& e : reg.entries()) {
    Checkpoint::Entry entry;
    entry.name = e.name;
    entry.rows = static_cast<int>(e.value->rows());
    entry.cols = static_cast<int>(e.value->cols());
    entry.offset = static_cast<std::int64_t>(ckpt.payload.size());
    for (int i = 0; i < entry.rows; ++i)
      for (int j = 0; j < entry.cols; ++j)
        ckpt.payload.push_back(static_cast<float>((*e.value)(i, j)));
    ckpt.entries.push_back(std::move(entry));
  }
}

/// Load one registry tensor from checkpoint entry `src_name`.
template <typename T>
void import_entry(const Checkpoint& ckpt, const std::string& src_name,
                  const ParamRef<T>& dst) {
  const Checkpoint::Entry* e = ckpt.find(src_name);
  if (!e) throw FormatError("checkpoint: missing entry " + src_name);
  if (e->rows != dst.value->rows() || e->cols != dst.value->cols()) {
    throw FormatError("checkpoint: shape mismatch for " + src_name);
  }
  std::int64_t k = e->offset;
  for (int i = 0; i < e->rows; ++i)
    for (int j = 0; j < e->cols; ++j)
      (*dst.value)(i, j) = static_cast<T>(ckpt.payload[static_cast<std::size_t>(k++)]);
}

/// Strict import: every registry tensor loads from its same-named entry and
/// the checkpoint may not contain extras.
template <typename T>
void import_params(const Checkpoint& ckpt, ParamRegistry<T>& reg) {
  if (ckpt.entries.size() != reg.entries().size()) {
    throw FormatError("checkpoint: entry count " + std::to_string(ckpt.entries.size()) +
                      " != model tensor count " + std::to_string(reg.entries().size()));
  }
  for (const auto& e : reg.entries()) import_entry(ckpt, e.name, e);
}

/// Loads every registry entry under `dst_prefix` from the checkpoint entry
/// named without that prefix (stage-I -> stage-II encoder initialization).
template <typename T>
void import_prefixed(const Checkpoint& ckpt, const std::string& dst_prefix,
                     ParamRegistry<T>& reg) {
  for (const auto& e : reg.entries()) {
    if (e.name.rfind(dst_prefix, 0) != 0) continue;
    import_entry(ckpt, e.name.substr(dst_prefix.size()), e);
  }
}

}  // namespace s3pet
