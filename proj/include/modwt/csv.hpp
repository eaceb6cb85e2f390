#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace modwt::csv {

using Record = std::vector<std::string>;

// RFC 4180 reader: quoted fields, doubled quotes, embedded CR/LF, CRLF or LF
// record separators. A trailing newline does not produce an empty record.
std::vector<Record> parse(std::string_view text);

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  Writer& field(std::string_view s);
  Writer& field(const char* s) { return field(std::string_view(s)); }
  Writer& field(const std::string& s) { return field(std::string_view(s)); }
  Writer& field(double v);
  Writer& field(long long v);
  Writer& field(int v) { return field(static_cast<long long>(v)); }
  Writer& field(std::size_t v) { return field(static_cast<long long>(v)); }
  Writer& field(std::int64_t v) { return field(static_cast<long long>(v)); }
  Writer& field(bool v) { return field(std::string_view(v ? "1" : "0")); }
  void end_row();

  template <typename... Ts>
  void row(const Ts&... cells) {
    (field(cells), ...);
    end_row();
  }

 private:
  std::ostream& out_;
  bool first_ = true;
};

// Shortest round-trippable text for a double; "NA" for NaN.
std::string format_double(double v);

}  // namespace modwt::csv
