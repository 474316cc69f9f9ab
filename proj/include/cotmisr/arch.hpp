#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace cotmisr {

// 'c' is one LRCA block, 't' one T-Block.
enum class BlockKind : char { lrca = 'c', tblock = 't' };

// Architecture strings:
//   seq   := item+
//   item  := [count] ('c' | 't')  |  '(' seq ')' ('x' | 'X' | '*' | "×") count
//   count := positive decimal integer
// Whitespace may separate tokens but not split a count. "(2c1t)x4" expands to c c t c c t c c t c c t.
struct ArchItem {
  std::size_t count = 1;
  BlockKind kind = BlockKind::lrca;  // used when group is empty
  std::vector<ArchItem> group;       // non-empty for a parenthesized group

  bool is_group() const { return !group.empty(); }
  bool operator==(const ArchItem&) const = default;
};

struct Architecture {
  std::vector<ArchItem> items;
  bool operator==(const Architecture&) const = default;
};

// Throws ConfigError with the offending position on malformed input.
Architecture parse_architecture(std::string_view text);
// Canonical form: every letter carries its count ("1c"), groups use 'x', and
// a group count is followed by a space when a plain item comes next.
std::string to_string(const Architecture& arch);
std::vector<BlockKind> expand(const Architecture& arch);

}  // namespace cotmisr
