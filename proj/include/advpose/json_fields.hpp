#ifndef ADVPOSE_JSON_FIELDS_HPP
#define ADVPOSE_JSON_FIELDS_HPP

#include <set>
#include <string>

#include "json.hpp"

#include "advpose/errors.hpp"

namespace advpose {

using json = nlohmann::json;

/// Strict reader for one JSON object: every key must be consumed, and type
/// errors report the dotted field path.
class FieldReader {
 public:
  FieldReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw InvalidConfig(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <class T>
  bool optional(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return false;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw InvalidConfig(field(key), e.what());
    }
    return true;
  }

  template <class T>
  void required(const char* key, T& out) {
    if (!optional(key, out)) throw InvalidConfig(field(key), "required field is missing");
  }

  bool has(const char* key) const { return obj_.contains(key); }

  FieldReader child(const char* key) {
    seen_.insert(key);
    return FieldReader(obj_.at(key), field(key));
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Rejects keys that were never read.
  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw InvalidConfig(field(it.key().c_str()), "unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace advpose

#endif
