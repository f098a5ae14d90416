#ifndef PRICELAB_CSV_HPP_
#define PRICELAB_CSV_HPP_

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace pricelab::csv {

// Reads RFC 4180 records: quoted fields may contain commas, doubled quotes
// and newlines. Returns false at end of input.
bool read_record(std::istream& in, std::vector<std::string>& fields);

// Quotes the field only when it contains a separator, quote or newline.
std::string escape(std::string_view field);

void write_record(std::ostream& out, const std::vector<std::string>& fields);

// Shortest representation that round-trips to the same double.
std::string format_double(double v);

// Index of `name` in `header`, or -1.
int column_index(const std::vector<std::string>& header, std::string_view name);

}  // namespace pricelab::csv

#endif  // PRICELAB_CSV_HPP_
