#ifndef XBATCH_XML_HPP
#define XBATCH_XML_HPP

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xbatch/util.hpp"

namespace xbatch::xml {

class ParseError : public Error {
public:
  ParseError(const std::string& msg, int line, int col)
      : Error(msg + " (line " + std::to_string(line) + ", column " + std::to_string(col) + ")"),
        line(line),
        col(col) {}
  int line;
  int col;
};

class PathError : public Error {
public:
  explicit PathError(const std::string& msg) : Error(msg) {}
};

// One element of the tree. Attributes keep insertion order; the canonical
// serializer depends on that.
struct Element {
  std::string name;
  std::vector<std::pair<std::string, std::string>> attrs;
  std::vector<Element> children;
  std::string text;

  const std::string* find_attr(const std::string& key) const;
  void set_attr(const std::string& key, const std::string& value);
  bool remove_attr(const std::string& key);
};

// Parse a whole document. Requires a single root element; comments and the
// XML declaration are accepted and dropped.
Element parse(const std::string& content);
Element parse_file(const fs::path& path);

// Canonical form: UTF-8 declaration, 2-space indent, attributes in insertion
// order, empty elements self-closed. Byte-equality tests rely on this canon.
std::string serialize(const Element& root);

// Path syntax: slash-separated element names starting at the root name, with
// optional [k] to select among same-named siblings ("/sim/agents[1]").
// Without an index the name must match exactly one child.
Element* resolve(Element& root, const std::string& path);
const Element* resolve(const Element& root, const std::string& path);

enum class ChangeOp { set_attr, add_elem, remove_elem, set_text };

struct Change {
  ChangeOp op = ChangeOp::set_attr;
  std::string path;  // target element (parent element for add_elem)
  std::string name;  // attribute name (set_attr) or new child name (add_elem)
  std::string value;

  bool operator==(const Change&) const = default;
};

using AttributeChangeSet = std::vector<Change>;

const char* change_op_name(ChangeOp op);
ChangeOp change_op_from_name(const std::string& s);

// Apply in list order; the input tree is untouched. set_attr creates the
// attribute when absent; remove_elem on a missing path is an error.
Element apply_changeset(const Element& tree, const AttributeChangeSet& cs);

// Conflict scan used by bivariate expansion: two changes writing the same
// (path, attribute) with different values. Returns the offending path, or
// empty when the merge is clean.
std::string find_conflict(const AttributeChangeSet& merged);

} // namespace xbatch::xml

#endif
