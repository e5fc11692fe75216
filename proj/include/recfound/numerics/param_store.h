// Copyright (c) 2026, The RecFound-Desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "recfound/numerics/tensor.h"

namespace recfound {

// Named parameter container. Iteration follows insertion order, which is
// also the on-disk order of a checkpoint blob.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    bool trainable = false;
  };

  void add(const std::string& name, Tensor<T> value, bool trainable) {
    if (index_.count(name)) throw StateError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back(Entry{name, std::move(value), trainable});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Entry& entry(const std::string& name) const { return entries_[lookup(name)]; }
  Entry& entry(const std::string& name) { return entries_[lookup(name)]; }

  const Tensor<T>& get(const std::string& name) const { return entry(name).value; }
  Tensor<T>& get(const std::string& name) { return entry(name).value; }
  bool trainable(const std::string& name) const { return entry(name).trainable; }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::vector<std::string> names(bool trainable_only = false) const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (!trainable_only || e.trainable) out.push_back(e.name);
    }
    return out;
  }

  std::size_t scalar_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& e : entries_) {
      if (!trainable_only || e.trainable) n += e.value.size();
    }
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.trainable);
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace recfound
