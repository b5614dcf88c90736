#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ptree.hpp>

namespace icl {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// INI document addressed as "section.key". Later sources override earlier ones:
// built-in defaults < config file < --set overrides < dedicated CLI flags.
class Config {
 public:
  Config() = default;
  explicit Config(boost::property_tree::ptree tree) : tree_(std::move(tree)) {}

  static Config load(const std::filesystem::path& path);
  static Config parse(std::istream& in);

  // "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  // Comma-separated, surrounding blanks trimmed, empty items dropped.
  std::vector<std::string> get_list(const std::string& key, const std::vector<std::string>& fallback) const;
  std::vector<std::uint64_t> get_uint_list(const std::string& key, const std::vector<std::uint64_t>& fallback) const;

  // Sections and keys in sorted order, one "key = value" per line.
  std::string canonical() const;
  void write(std::ostream& out) const;

  const boost::property_tree::ptree& tree() const { return tree_; }

 private:
  std::string raw(const std::string& key) const;
  boost::property_tree::ptree tree_;
};

std::vector<std::string> split_list(const std::string& text);

// 64-bit FNV-1a, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

}  // namespace icl
