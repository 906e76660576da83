#include "xbatch/xml.hpp"

#include <cctype>
#include <sstream>

namespace xbatch::xml {

namespace {

struct Cursor {
  const std::string& s;
  size_t pos = 0;
  int line = 1;
  int col = 1;

  bool eof() const { return pos >= s.size(); }
  char peek() const { return s[pos]; }
  bool peek_is(const std::string& lit) const { return s.compare(pos, lit.size(), lit) == 0; }

  char get() {
    char c = s[pos++];
    if (c == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
    return c;
  }

  void expect(char c, const char* what) {
    if (eof() || peek() != c) fail(std::string("expected '") + c + "' " + what);
    get();
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, line, col); }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) get();
  }
};

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':';
}

bool is_name_char(char c) {
  return is_name_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.';
}

std::string read_name(Cursor& c) {
  if (c.eof() || !is_name_start(c.peek())) c.fail("expected name");
  std::string out;
  while (!c.eof() && is_name_char(c.peek())) out += c.get();
  return out;
}

std::string decode_entity(Cursor& c) {
  // cursor is past '&'
  std::string ent;
  while (!c.eof() && c.peek() != ';') {
    ent += c.get();
    if (ent.size() > 10) c.fail("unterminated entity reference");
  }
  if (c.eof()) c.fail("unterminated entity reference");
  c.get();  // ';'
  if (ent == "amp") return "&";
  if (ent == "lt") return "<";
  if (ent == "gt") return ">";
  if (ent == "quot") return "\"";
  if (ent == "apos") return "'";
  if (!ent.empty() && ent[0] == '#') {
    int base = 10;
    std::string digits = ent.substr(1);
    if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X')) {
      base = 16;
      digits = digits.substr(1);
    }
    char* end = nullptr;
    long code = std::strtol(digits.c_str(), &end, base);
    if (digits.empty() || end != digits.c_str() + digits.size() || code <= 0 || code > 0x10FFFF)
      c.fail("bad character reference '&" + ent + ";'");
    // encode as UTF-8
    std::string out;
    unsigned cp = static_cast<unsigned>(code);
    if (cp < 0x80) {
      out += static_cast<char>(cp);
    } else if (cp < 0x800) {
      out += static_cast<char>(0xC0 | (cp >> 6));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      out += static_cast<char>(0xE0 | (cp >> 12));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      out += static_cast<char>(0xF0 | (cp >> 18));
      out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (cp & 0x3F));
    }
    return out;
  }
  c.fail("unknown entity '&" + ent + ";'");
}

std::string read_attr_value(Cursor& c) {
  if (c.eof() || (c.peek() != '"' && c.peek() != '\'')) c.fail("expected quoted attribute value");
  char quote = c.get();
  std::string out;
  while (true) {
    if (c.eof()) c.fail("unterminated attribute value");
    char ch = c.peek();
    if (ch == quote) {
      c.get();
      return out;
    }
    if (ch == '<') c.fail("'<' in attribute value");
    if (ch == '&') {
      c.get();
      out += decode_entity(c);
    } else {
      out += c.get();
    }
  }
}

void skip_comment(Cursor& c) {
  // cursor at "<!--"
  c.get();
  c.get();
  c.get();
  c.get();
  while (!c.eof()) {
    if (c.peek_is("-->")) {
      c.get();
      c.get();
      c.get();
      return;
    }
    c.get();
  }
  c.fail("unterminated comment");
}

void skip_misc(Cursor& c) {
  // whitespace, comments, and processing instructions between markup
  while (true) {
    c.skip_ws();
    if (c.peek_is("<!--")) {
      skip_comment(c);
    } else if (c.peek_is("<?")) {
      while (!c.eof() && !c.peek_is("?>")) c.get();
      if (c.eof()) c.fail("unterminated processing instruction");
      c.get();
      c.get();
    } else {
      return;
    }
  }
}

Element parse_element(Cursor& c) {
  c.expect('<', "to open element");
  Element el;
  el.name = read_name(c);
  // attributes
  while (true) {
    c.skip_ws();
    if (c.eof()) c.fail("unterminated start tag for <" + el.name + ">");
    if (c.peek() == '/' || c.peek() == '>') break;
    std::string key = read_name(c);
    c.skip_ws();
    c.expect('=', "after attribute name");
    c.skip_ws();
    std::string value = read_attr_value(c);
    if (el.find_attr(key)) c.fail("duplicate attribute '" + key + "' on <" + el.name + ">");
    el.attrs.emplace_back(key, value);
  }
  if (c.peek() == '/') {
    c.get();
    c.expect('>', "after '/'");
    return el;
  }
  c.get();  // '>'
  // content
  std::string text;
  while (true) {
    if (c.eof()) c.fail("unterminated element <" + el.name + ">");
    if (c.peek() == '<') {
      if (c.peek_is("<!--")) {
        skip_comment(c);
        continue;
      }
      if (c.peek_is("<![CDATA[")) c.fail("CDATA sections are not supported");
      if (c.peek_is("<!")) c.fail("DTD markup is not supported");
      if (c.peek_is("<?")) {
        while (!c.eof() && !c.peek_is("?>")) c.get();
        if (c.eof()) c.fail("unterminated processing instruction");
        c.get();
        c.get();
        continue;
      }
      if (c.peek_is("</")) {
        c.get();
        c.get();
        std::string close = read_name(c);
        if (close != el.name)
          c.fail("mismatched close tag </" + close + "> for <" + el.name + ">");
        c.skip_ws();
        c.expect('>', "to close tag");
        el.text = trim(text);
        return el;
      }
      el.children.push_back(parse_element(c));
    } else if (c.peek() == '&') {
      c.get();
      text += decode_entity(c);
    } else {
      text += c.get();
    }
  }
}

void escape_text(const std::string& s, std::string& out) {
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
}

void escape_attr(const std::string& s, std::string& out) {
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
}

void serialize_element(const Element& el, int depth, std::string& out) {
  std::string indent(static_cast<size_t>(depth) * 2, ' ');
  out += indent;
  out += '<';
  out += el.name;
  for (const auto& [k, v] : el.attrs) {
    out += ' ';
    out += k;
    out += "=\"";
    escape_attr(v, out);
    out += '"';
  }
  if (el.children.empty() && el.text.empty()) {
    out += "/>\n";
    return;
  }
  out += '>';
  if (el.children.empty()) {
    escape_text(el.text, out);
    out += "</";
    out += el.name;
    out += ">\n";
    return;
  }
  out += '\n';
  if (!el.text.empty()) {
    out += std::string(static_cast<size_t>(depth + 1) * 2, ' ');
    escape_text(el.text, out);
    out += '\n';
  }
  for (const Element& child : el.children) serialize_element(child, depth + 1, out);
  out += indent;
  out += "</";
  out += el.name;
  out += ">\n";
}

struct PathStep {
  std::string name;
  int index = -1;  // -1: must be unique
};

std::vector<PathStep> parse_path(const std::string& path) {
  std::vector<PathStep> steps;
  for (const std::string& raw : split(path, '/')) {
    if (raw.empty()) continue;
    PathStep step;
    size_t br = raw.find('[');
    if (br == std::string::npos) {
      step.name = raw;
    } else {
      if (raw.back() != ']') throw PathError("bad path component '" + raw + "' in '" + path + "'");
      step.name = raw.substr(0, br);
      auto idx = parse_int(raw.substr(br + 1, raw.size() - br - 2));
      if (!idx || *idx < 0)
        throw PathError("bad index in path component '" + raw + "' in '" + path + "'");
      step.index = static_cast<int>(*idx);
    }
    if (step.name.empty()) throw PathError("empty name in path '" + path + "'");
    steps.push_back(step);
  }
  if (steps.empty()) throw PathError("empty path");
  return steps;
}

Element* resolve_impl(Element& root, const std::string& path) {
  auto steps = parse_path(path);
  // first step names the root
  if (steps[0].name != root.name || steps[0].index > 0) return nullptr;
  Element* cur = &root;
  for (size_t i = 1; i < steps.size(); ++i) {
    const PathStep& step = steps[i];
    std::vector<Element*> matches;
    for (Element& child : cur->children)
      if (child.name == step.name) matches.push_back(&child);
    if (matches.empty()) return nullptr;
    if (step.index < 0) {
      if (matches.size() > 1)
        throw PathError("ambiguous path '" + path + "': " + std::to_string(matches.size()) +
                        " children named '" + step.name + "' (use [k])");
      cur = matches[0];
    } else {
      if (static_cast<size_t>(step.index) >= matches.size()) return nullptr;
      cur = matches[static_cast<size_t>(step.index)];
    }
  }
  return cur;
}

} // namespace

const std::string* Element::find_attr(const std::string& key) const {
  for (const auto& [k, v] : attrs)
    if (k == key) return &v;
  return nullptr;
}

void Element::set_attr(const std::string& key, const std::string& value) {
  for (auto& [k, v] : attrs) {
    if (k == key) {
      v = value;
      return;
    }
  }
  attrs.emplace_back(key, value);
}

bool Element::remove_attr(const std::string& key) {
  for (auto it = attrs.begin(); it != attrs.end(); ++it) {
    if (it->first == key) {
      attrs.erase(it);
      return true;
    }
  }
  return false;
}

Element parse(const std::string& content) {
  Cursor c{content};
  skip_misc(c);
  if (c.eof()) c.fail("no root element");
  Element root = parse_element(c);
  skip_misc(c);
  if (!c.eof()) c.fail("content after root element");
  return root;
}

Element parse_file(const fs::path& path) {
  return parse(read_file(path));
}

std::string serialize(const Element& root) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  serialize_element(root, 0, out);
  return out;
}

Element* resolve(Element& root, const std::string& path) {
  return resolve_impl(root, path);
}

const Element* resolve(const Element& root, const std::string& path) {
  return resolve_impl(const_cast<Element&>(root), path);
}

const char* change_op_name(ChangeOp op) {
  switch (op) {
    case ChangeOp::set_attr: return "set_attr";
    case ChangeOp::add_elem: return "add_elem";
    case ChangeOp::remove_elem: return "remove_elem";
    case ChangeOp::set_text: return "set_text";
  }
  return "?";
}

ChangeOp change_op_from_name(const std::string& s) {
  if (s == "set_attr") return ChangeOp::set_attr;
  if (s == "add_elem") return ChangeOp::add_elem;
  if (s == "remove_elem") return ChangeOp::remove_elem;
  if (s == "set_text") return ChangeOp::set_text;
  throw ConfigError("unknown change op '" + s + "'");
}

Element apply_changeset(const Element& tree, const AttributeChangeSet& cs) {
  Element out = tree;
  for (size_t i = 0; i < cs.size(); ++i) {
    const Change& ch = cs[i];
    Element* target = resolve(out, ch.path);
    if (!target)
      throw PathError("change #" + std::to_string(i) + " (" + change_op_name(ch.op) +
                      "): path '" + ch.path + "' not found");
    switch (ch.op) {
      case ChangeOp::set_attr:
        target->set_attr(ch.name, ch.value);
        break;
      case ChangeOp::add_elem: {
        Element child;
        child.name = ch.name;
        child.text = ch.value;
        target->children.push_back(std::move(child));
        break;
      }
      case ChangeOp::remove_elem: {
        // the path names the element itself; detach it from its parent
        auto steps = split(ch.path, '/');
        while (!steps.empty() && steps.front().empty()) steps.erase(steps.begin());
        if (steps.size() < 2)
          throw PathError("change #" + std::to_string(i) + ": cannot remove the root element");
        std::string parent_path = join({steps.begin(), steps.end() - 1}, "/");
        Element* parent = resolve(out, parent_path);
        for (auto it = parent->children.begin(); it != parent->children.end(); ++it) {
          if (&*it == target) {
            parent->children.erase(it);
            break;
          }
        }
        break;
      }
      case ChangeOp::set_text:
        target->text = ch.value;
        break;
    }
  }
  return out;
}

std::string find_conflict(const AttributeChangeSet& merged) {
  for (size_t i = 0; i < merged.size(); ++i) {
    for (size_t j = i + 1; j < merged.size(); ++j) {
      const Change& a = merged[i];
      const Change& b = merged[j];
      if (a.path != b.path) continue;
      bool same_slot = false;
      if (a.op == ChangeOp::set_attr && b.op == ChangeOp::set_attr && a.name == b.name)
        same_slot = true;
      if (a.op == ChangeOp::set_text && b.op == ChangeOp::set_text) same_slot = true;
      if (same_slot && a.value != b.value) return a.path;
      if ((a.op == ChangeOp::remove_elem) != (b.op == ChangeOp::remove_elem)) return a.path;
    }
  }
  return "";
}

} // namespace xbatch::xml
