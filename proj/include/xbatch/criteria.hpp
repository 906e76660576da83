#ifndef XBATCH_CRITERIA_HPP
#define XBATCH_CRITERIA_HPP

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xbatch/xml.hpp"

namespace xbatch {

// Parse failure inside a criteria token; offset is the character position of
// the offending segment within the raw token.
class CriteriaError : public Error {
public:
  CriteriaError(const std::string& token, size_t offset, const std::string& msg)
      : Error(token + ": " + msg + " at offset " + std::to_string(offset)),
        token(token),
        offset(offset) {}
  std::string token;
  size_t offset;
};

// One CLI word plus its leading parser id ("population_size.Log128" ->
// "population_size").
struct CriterionSpec {
  std::string raw_token;
  std::string parser_id;
};

CriterionSpec make_spec(const std::string& token);

enum class CriterionKind {
  population_log,
  population_linear,
  scalar_range,
  policy_set,
  noise_levels,
  custom,
};

// One value of an independent variable: the label is unique within its
// criterion, and the changeset operationalizes the value against a template.
struct ValuePoint {
  std::string label;
  xml::AttributeChangeSet changes;
  std::optional<double> numeric;  // numeric reading of the value, when it has one

  bool operator==(const ValuePoint&) const = default;

  // human-readable short form (text after the last '='), used for axis ticks
  std::string tick() const;
};

struct CriterionDef {
  CriterionKind kind = CriterionKind::custom;
  std::string parser_id;  // leading token segment, doubles as the axis name
  std::string raw_token;  // as typed; not part of structural equality
  std::vector<ValuePoint> values;
  std::map<std::string, double> fixed_context;
  bool geometric = false;  // geometric spacing -> log-scale axes downstream

  bool operator==(const CriterionDef& o) const {
    return kind == o.kind && parser_id == o.parser_id && values == o.values &&
           fixed_context == o.fixed_context && geometric == o.geometric;
  }
};

enum class Arity { univariate, bivariate };

struct BatchCriteria {
  Arity arity = Arity::univariate;
  CriterionDef axis_a;
  std::optional<CriterionDef> axis_b;

  size_t cardinality() const {
    return axis_a.values.size() * (axis_b ? axis_b->values.size() : 1);
  }
};

// One cell of the (possibly 1xN) experiment grid, in batch numbering order.
struct ExperimentPoint {
  size_t index = 0;
  size_t row = 0;
  size_t col = 0;
  std::string label_a;
  std::string label_b;  // empty for univariate
  xml::AttributeChangeSet changes;

  std::string dir_name() const { return "exp" + std::to_string(index); }
};

// How a parser id maps onto template XML. The defaults target the reference
// platform schema; projects rebind ids via config/criteria.yaml.
struct CriterionBinding {
  std::string id;
  std::string series;  // population | scalar_range | policy_set | noise_levels
  std::string path;
  std::string attr;
  std::vector<std::string> universe;  // policy_set members
  std::string z_path;                 // where a Z<n> fixed size lands
  std::string z_attr;
};

class PluginSet;  // plugin.hpp

class ParserRegistry {
public:
  // registry with the built-in refsim-flavored bindings
  static ParserRegistry builtin();

  void bind(CriterionBinding binding);  // replaces an existing id
  const CriterionBinding* find(const std::string& id) const;

  // Custom criteria plugins consulted when no binding matches.
  void set_plugins(const PluginSet* plugins) { plugins_ = plugins; }
  const PluginSet* plugins() const { return plugins_; }

private:
  std::vector<CriterionBinding> bindings_;
  const PluginSet* plugins_ = nullptr;
};

// args must hold one token (univariate) or two (axis A then axis B).
std::pair<CriterionSpec, std::optional<CriterionSpec>> tokenize_cli_criteria(
    const std::vector<std::string>& args);

CriterionDef parse_criterion(const CriterionSpec& spec, const ParserRegistry& registry);

BatchCriteria parse_batch_criteria(const std::vector<std::string>& args,
                                   const ParserRegistry& registry);

// Canonical token for a parsed criterion; parse(format(parse(t))) == parse(t).
std::string format_token(const CriterionDef& def);

// Univariate: axis order. Bivariate: row-major, axis A changes applied before
// axis B; a conflicting write between the axes is a hard error.
std::vector<ExperimentPoint> expand_grid(const BatchCriteria& criteria);

// In-token numeric syntax: '.' would split segments, so 'p' marks the decimal
// point ("1p5" == 1.5).
std::string encode_p_number(double v);
std::optional<double> decode_p_number(const std::string& s);

} // namespace xbatch

#endif
