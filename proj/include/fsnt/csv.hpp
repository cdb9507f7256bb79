#pragma once

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace fsnt::csv {

// Streaming RFC-4180 reader: quoted fields, doubled quotes, embedded
// separators/newlines, CRLF or LF line endings.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  // Reads the next record into `fields`. Returns false at end of input.
  bool next(std::vector<std::string>& fields);
  // 1-based physical line where the last returned record started.
  std::size_t line() const { return record_line_; }

 private:
  std::istream& in_;
  std::size_t line_ = 1;
  std::size_t record_line_ = 0;
};

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace fsnt::csv
