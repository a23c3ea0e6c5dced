#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace toolgap::csv {

/// RFC 4180 reader: quoted fields may contain commas, doubled quotes and
/// line breaks. Returns rows of fields; a trailing empty line is dropped.
std::vector<std::vector<std::string>> parse(std::string_view text);

/// Quotes a field when it contains a delimiter, quote or newline.
std::string escape(std::string_view field);

}  // namespace toolgap::csv
