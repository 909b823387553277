// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal comma-separated reader for the numeric tables this project writes.
// No quoting; surrounding whitespace in fields is ignored.

#ifndef DERTS_CSV_HPP_
#define DERTS_CSV_HPP_

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace derts::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find_column(const std::string& name) const;
  // Throws InputError when absent.
  std::size_t column(const std::string& name) const;
};

Table read(std::istream& in);
Table read_file(const std::string& path);

std::size_t to_size(const std::string& field);
double to_double(const std::string& field);

}  // namespace derts::csv

#endif  // DERTS_CSV_HPP_
