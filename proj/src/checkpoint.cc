// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "recfound/harness/checkpoint.h"

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "recfound/error.h"

namespace recfound {

static_assert(sizeof(float) == 4, "float32 required");

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

constexpr const char* kFormat = "recfound-ckpt/1";

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::uint64_t to_u64(const std::string& v, const std::string& what) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) throw IoError("checkpoint: bad " + what + " '" + v + "'");
  return out;
}

Shape parse_shape(const std::string& tok) {
  Shape s;
  std::stringstream ss(tok);
  for (std::string d; std::getline(ss, d, 'x');) s.push_back(to_u64(d, "shape"));
  if (s.empty()) throw IoError("checkpoint: empty shape");
  return s;
}

std::vector<unsigned char> to_le_bytes(const ParamStore<float>& params) {
  std::vector<unsigned char> out;
  out.reserve(params.scalar_count() * 4);
  for (const auto& e : params.entries()) {
    for (float v : e.value.data()) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  }
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::filesystem::create_directories(dir);
  const auto blob = to_le_bytes(ckpt.params);
  std::ostringstream m;
  m << "format = " << kFormat << "\n";
  m << "label = " << ckpt.label << "\n";
  m << "step = " << ckpt.step << "\n";
  m << "seed = " << ckpt.seed << "\n";
  for (const auto& [k, v] : ckpt.config) m << "config." << k << " = " << v << "\n";
  m << "tensors = " << ckpt.params.size() << "\n";
  std::size_t offset = 0;
  std::size_t i = 0;
  for (const auto& e : ckpt.params.entries()) {
    m << "tensor." << i++ << " = " << e.name << " " << shape_token(e.value.shape()) << " " << offset << " "
      << (e.trainable ? 1 : 0) << "\n";
    offset += e.value.size() * 4;
  }
  m << "blob_bytes = " << blob.size() << "\n";
  m << "blob_fnv1a64 = " << hex64(fnv1a64(blob.data(), blob.size())) << "\n";

  std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write " + (dir / "tensors.bin").string());
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  if (!bin) throw IoError("write failed for " + (dir / "tensors.bin").string());
  std::ofstream man(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  if (!man) throw IoError("cannot write " + (dir / "manifest.txt").string());
  man << m.str();
  if (!man) throw IoError("write failed for " + (dir / "manifest.txt").string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.txt", std::ios::binary);
  if (!man) throw IoError("cannot open checkpoint manifest " + (dir / "manifest.txt").string());
  Checkpoint ckpt;
  std::map<std::string, std::string> kv;
  std::vector<std::string> tensor_lines;
  std::string line;
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw IoError("checkpoint manifest: malformed line '" + line + "'");
    std::string key = line.substr(0, eq), value = line.substr(eq + 3);
    if (key.rfind("config.", 0) == 0) {
      ckpt.config.emplace_back(key.substr(7), value);
    } else if (key.rfind("tensor.", 0) == 0) {
      tensor_lines.push_back(value);
    } else {
      kv[key] = value;
    }
  }
  if (kv["format"] != kFormat) throw IoError("unsupported checkpoint format '" + kv["format"] + "'");
  ckpt.label = kv["label"];
  ckpt.step = to_u64(kv["step"], "step");
  ckpt.seed = to_u64(kv["seed"], "seed");
  const std::size_t count = to_u64(kv["tensors"], "tensor count");
  const std::size_t bytes = to_u64(kv["blob_bytes"], "blob size");
  if (tensor_lines.size() != count) throw IoError("checkpoint manifest lists a wrong number of tensors");

  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw IoError("cannot open " + (dir / "tensors.bin").string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  if (blob.size() != bytes) {
    throw IoError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                  std::to_string(bytes));
  }
  if (hex64(fnv1a64(blob.data(), blob.size())) != kv["blob_fnv1a64"]) throw IoError("checkpoint blob hash mismatch");

  for (const auto& tl : tensor_lines) {
    std::istringstream ts(tl);
    std::string name, shape, offset, trainable;
    if (!(ts >> name >> shape >> offset >> trainable)) throw IoError("checkpoint manifest: bad tensor line '" + tl + "'");
    Shape s = parse_shape(shape);
    const std::size_t off = to_u64(offset, "offset");
    Tensor<float> t(s);
    if (off + t.size() * 4 > blob.size()) throw IoError("checkpoint tensor '" + name + "' runs past the blob");
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(blob[off + 4 * i + b]) << (8 * b);
      t[i] = std::bit_cast<float>(bits);
    }
    ckpt.params.add(name, std::move(t), trainable == "1");
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ParamStore<float>& params, const RunConfig& cfg, std::size_t step,
                           std::string label) {
  Checkpoint c;
  c.params = params;
  c.step = step;
  c.seed = cfg.seed;
  c.label = std::move(label);
  for (const auto& k : config_keys()) c.config.emplace_back(k.name, k.get(cfg));
  return c;
}

RunConfig checkpoint_config(const Checkpoint& ckpt) {
  RunConfig cfg;
  for (const auto& [k, v] : ckpt.config) set_config_value(cfg, k, v);
  return cfg;
}

}  // namespace recfound
