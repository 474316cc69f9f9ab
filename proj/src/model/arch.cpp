#include "cotmisr/arch.hpp"

#include <cctype>

#include "cotmisr/errors.hpp"

namespace cotmisr {

namespace {

constexpr std::size_t kMaxBlocks = 100000;

class Parser {
 public:
  // Whitespace separates tokens but may not split a count.
  explicit Parser(std::string_view text) : text_(text), original_(text) {}

  Architecture parse() {
    Architecture arch;
    arch.items = sequence(0);
    if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return arch;
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  std::vector<ArchItem> sequence(int depth) {
    std::vector<ArchItem> items;
    skip_space();
    while (pos_ < text_.size() && text_[pos_] != ')') {
      items.push_back(item(depth));
      skip_space();
    }
    if (items.empty()) fail("empty block sequence");
    return items;
  }

  ArchItem item(int depth) {
    ArchItem it;
    if (text_[pos_] == '(') {
      ++pos_;
      it.group = sequence(depth + 1);
      if (pos_ >= text_.size() || text_[pos_] != ')') fail("missing ')'");
      ++pos_;
      skip_space();
      if (!repeat_marker()) fail("expected 'x' and a count after ')'");
      skip_space();
      it.count = count(true);
      return it;
    }
    it.count = count(false);
    skip_space();
    if (pos_ >= text_.size()) fail("expected 'c' or 't'");
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(text_[pos_])));
    if (c == 'c') it.kind = BlockKind::lrca;
    else if (c == 't') it.kind = BlockKind::tblock;
    else fail("expected 'c' or 't', got '" + std::string(1, text_[pos_]) + "'");
    ++pos_;
    return it;
  }

  bool repeat_marker() {
    if (pos_ < text_.size() && (text_[pos_] == 'x' || text_[pos_] == 'X' || text_[pos_] == '*')) {
      ++pos_;
      return true;
    }
    static const std::string times = "\xc3\x97";  // U+00D7
    if (text_.compare(pos_, times.size(), times) == 0) {
      pos_ += times.size();
      return true;
    }
    return false;
  }

  std::size_t count(bool required) {
    std::size_t value = 0, digits = 0;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      value = value * 10 + static_cast<std::size_t>(text_[pos_] - '0');
      if (value > kMaxBlocks) fail("count too large");
      ++pos_;
      ++digits;
    }
    if (digits == 0) {
      if (required) fail("expected a count");
      return 1;
    }
    if (value == 0) fail("counts must be positive");
    return value;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("architecture '" + original_ + "': " + what + " at position " + std::to_string(pos_));
  }

  std::string text_;
  std::string original_;
  std::size_t pos_ = 0;
};

void print_items(const std::vector<ArchItem>& items, std::string& out) {
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.is_group()) {
      out += '(';
      print_items(it.group, out);
      out += ")x" + std::to_string(it.count);
      // keeps the repeat count from running into the next item's count
      if (i + 1 < items.size() && !items[i + 1].is_group()) out += ' ';
    } else {
      out += std::to_string(it.count) + static_cast<char>(it.kind);
    }
  }
}

void expand_items(const std::vector<ArchItem>& items, std::vector<BlockKind>& out) {
  for (const auto& it : items)
    for (std::size_t r = 0; r < it.count; ++r) {
      if (it.is_group()) expand_items(it.group, out);
      else out.push_back(it.kind);
      if (out.size() > kMaxBlocks) throw ConfigError("architecture expands to too many blocks");
    }
}

}  // namespace

Architecture parse_architecture(std::string_view text) { return Parser(text).parse(); }

std::string to_string(const Architecture& arch) {
  std::string out;
  print_items(arch.items, out);
  return out;
}

std::vector<BlockKind> expand(const Architecture& arch) {
  std::vector<BlockKind> out;
  expand_items(arch.items, out);
  return out;
}

}  // namespace cotmisr
