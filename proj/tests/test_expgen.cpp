#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "xbatch/expgen.hpp"

using namespace xbatch;
using testutil::TempDir;

namespace {

GenSpec basic_spec(const TempDir& tmp, const std::string& token, size_t n_runs) {
  testutil::write_file(tmp / "exp.xml", testutil::refsim_template);
  GenSpec spec;
  spec.template_file = tmp / "exp.xml";
  spec.criteria.axis_a = parse_criterion(make_spec(token), ParserRegistry::builtin());
  spec.n_runs = n_runs;
  spec.setup = parse_exp_setup("exp_setup.T100.K10");
  spec.platform = resolve_platform("platform.refsim", PluginSet{});
  spec.master_seed = 42;
  spec.project = "proj";
  spec.scenario = "scn";
  return spec;
}

} // namespace

TEST_CASE("exp_setup token parsing") {
  ExpSetup s = parse_exp_setup("exp_setup.T1000.K100");
  CHECK(s.duration_s == 1000);
  CHECK(s.controller_hz == 100);

  ExpSetup s2 = parse_exp_setup("exp_setup.T10000");
  CHECK(s2.duration_s == 10000);
  CHECK_FALSE(s2.controller_hz.has_value());

  CHECK_THROWS_AS(parse_exp_setup("exp_setup.K100"), UsageError);   // duration required
  CHECK_THROWS_AS(parse_exp_setup("exp_setup.Tabc"), UsageError);
  CHECK_THROWS_AS(parse_exp_setup("setup.T10"), UsageError);
}

TEST_CASE("seed hash is deterministic and the table is collision free") {
  CHECK(seed_for(1, 2, 3) == seed_for(1, 2, 3));
  CHECK(seed_for(1, 2, 3) != seed_for(1, 3, 2));

  SeedTable t = SeedTable::generate(7, 8, 3);
  std::set<std::uint64_t> all;
  for (const auto& row : t.seeds)
    for (auto s : row) all.insert(s);
  CHECK(all.size() == 24);  // 8 x 3, brute-force distinctness
}

TEST_CASE("seeds.yaml is reused, not regenerated") {
  TempDir tmp;
  fs::path file = tmp / "seeds.yaml";
  SeedTable a = assign_seeds(file, 42, 4, 2, false);
  std::string bytes = testutil::slurp(file);
  SeedTable b = assign_seeds(file, 99, 4, 2, false);  // different master: file wins
  CHECK(b.master_seed == 42);
  CHECK(b.seeds == a.seeds);
  CHECK(testutil::slurp(file) == bytes);  // byte-identical, untouched

  CHECK_THROWS_WITH_AS(assign_seeds(file, 42, 5, 2, false),
                       doctest::Contains("--force-regen"), Error);
  SeedTable c = assign_seeds(file, 99, 4, 2, true);
  CHECK(c.master_seed == 99);
}

TEST_CASE("criteria slug keeps token structure readable") {
  CHECK(criteria_slug({"population_size.Log128"}) == "population_size.Log128");
  CHECK(criteria_slug({"vel.min=1p0.max=10p0.C10", "n_agents.Log4"}) ==
        "vel.min=1p0.max=10p0.C10+n_agents.Log4");
  CHECK(criteria_slug({"weird/token"}) == "weird_token");
}

TEST_CASE("generate_batch writes cardinality x n_runs inputs") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.Log128", 4);
  BatchPaths paths{tmp / "root"};
  BatchManifest m = generate_batch(paths, spec);
  CHECK(m.cardinality == 8);

  size_t inputs = 0;
  for (auto& de : fs::recursive_directory_iterator(paths.exp_inputs()))
    if (de.path().filename() == "input.xml") ++inputs;
  CHECK(inputs == 32);  // 8 experiments x 4 runs, counted on disk

  // per-run tree carries axis value, platform ticks, and the run seed
  xml::Element run0 = xml::parse_file(paths.run_input(2, 1));
  CHECK(*xml::resolve(run0, "/refsim/agents")->find_attr("count") == "4");
  CHECK(*xml::resolve(run0, "/refsim/time")->find_attr("ticks") == "1000");  // 100 s x 10 Hz
  SeedTable seeds = SeedTable::load(paths.seeds_file());
  CHECK(*xml::resolve(run0, "/refsim/seed")->find_attr("value") ==
        std::to_string(seeds.seeds[2][1]));
}

TEST_CASE("single-value criterion with one run yields exactly one input") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.64", 1);
  BatchPaths paths{tmp / "root"};
  generate_batch(paths, spec);
  size_t inputs = 0;
  for (auto& de : fs::recursive_directory_iterator(paths.exp_inputs()))
    if (de.path().filename() == "input.xml") ++inputs;
  CHECK(inputs == 1);
}

TEST_CASE("non-interference: untouched template content survives generation") {
  TempDir tmp;
  // template with sections no changeset targets
  testutil::write_file(tmp / "exp.xml",
                       "<refsim>\n"
                       "  <agents count=\"4\" velocity=\"1.0\" noise=\"0.1\"/>\n"
                       "  <arena side=\"12\"/>\n"
                       "  <time ticks=\"100\"/>\n"
                       "  <seed value=\"1\"/>\n"
                       "  <notes author=\"alice\">keep &amp; carry</notes>\n"
                       "  <alpha><param k=\"v\"/></alpha>\n"
                       "</refsim>\n");
  GenSpec spec;
  spec.template_file = tmp / "exp.xml";
  spec.criteria.axis_a =
      parse_criterion(make_spec("population_size.Log4"), ParserRegistry::builtin());
  spec.n_runs = 2;
  spec.setup = parse_exp_setup("exp_setup.T100.K10");
  spec.platform = resolve_platform("platform.refsim", PluginSet{});
  spec.master_seed = 42;
  spec.project = "proj";
  BatchPaths paths{tmp / "root"};
  generate_batch(paths, spec);

  xml::Element tmpl = xml::parse_file(tmp / "exp.xml");
  xml::Element generated = xml::parse_file(paths.run_input(1, 0));
  for (const char* path : {"/refsim/notes", "/refsim/alpha", "/refsim/arena"})
    CHECK(xml::serialize(*xml::resolve(generated, path)) ==
          xml::serialize(*xml::resolve(tmpl, path)));
  // targeted nodes did change
  CHECK(*xml::resolve(generated, "/refsim/agents")->find_attr("count") == "2");
  CHECK(*xml::resolve(generated, "/refsim/time")->find_attr("ticks") == "1000");
}

TEST_CASE("stage 1 is idempotent once seeds exist") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.Log8", 3);
  BatchPaths paths{tmp / "root"};
  generate_batch(paths, spec);
  std::string before = testutil::slurp(paths.run_input(3, 2));
  spec.master_seed = 777;  // ignored: seeds.yaml wins
  generate_batch(paths, spec);
  CHECK(testutil::slurp(paths.run_input(3, 2)) == before);
}

TEST_CASE("n_runs does not alter per-experiment changesets") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.Log8", 1);
  BatchPaths paths{tmp / "a"};
  generate_batch(paths, spec);
  xml::Element one = xml::parse_file(paths.run_input(2, 0));

  GenSpec spec2 = basic_spec(tmp, "population_size.Log8", 5);
  spec2.master_seed = 42;
  BatchPaths paths2{tmp / "b"};
  generate_batch(paths2, spec2);
  xml::Element many = xml::parse_file(paths2.run_input(2, 0));
  CHECK(*xml::resolve(one, "/refsim/agents")->find_attr("count") ==
        *xml::resolve(many, "/refsim/agents")->find_attr("count"));
  CHECK(*xml::resolve(one, "/refsim/time")->find_attr("ticks") ==
        *xml::resolve(many, "/refsim/time")->find_attr("ticks"));
}

TEST_CASE("generation failure leaves no partial batch") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.Log8", 2);
  // sabotage: extra change referencing a path the template lacks
  ExtraChanges bad;
  bad.common = {{xml::ChangeOp::set_attr, "/refsim/missing", "x", "1"}};
  spec.extras.push_back(bad);
  BatchPaths paths{tmp / "root"};
  CHECK_THROWS(generate_batch(paths, spec));
  CHECK_FALSE(fs::exists(paths.exp_inputs()));
  CHECK_FALSE(fs::exists(paths.manifest_file()));
}

TEST_CASE("extra changes: batch-wide and per-experiment routing") {
  TempDir tmp;
  testutil::write_file(tmp / "config/controllers.yaml",
                       "task_alloc.alpha:\n"
                       "  common:\n"
                       "    - {op: set_attr, path: /refsim/agents, attr: policy, value: alpha}\n"
                       "  exp1:\n"
                       "    - {op: set_attr, path: /refsim/agents, attr: debug, value: \"on\"}\n");
  ExtraChanges extra =
      extra_changes_from_yaml(tmp / "config/controllers.yaml", "task_alloc.alpha");
  CHECK(extra.common.size() == 1);
  CHECK(extra.per_exp.at(1).size() == 1);

  GenSpec spec = basic_spec(tmp, "population_size.Log4", 1);
  spec.extras.push_back(extra);
  BatchPaths paths{tmp / "root"};
  generate_batch(paths, spec);
  xml::Element e0 = xml::parse_file(paths.run_input(0, 0));
  xml::Element e1 = xml::parse_file(paths.run_input(1, 0));
  CHECK(*xml::resolve(e0, "/refsim/agents")->find_attr("policy") == "alpha");
  CHECK(xml::resolve(e0, "/refsim/agents")->find_attr("debug") == nullptr);
  CHECK(*xml::resolve(e1, "/refsim/agents")->find_attr("debug") == "on");

  CHECK_THROWS_AS(extra_changes_from_yaml(tmp / "config/controllers.yaml", "nope"), ConfigError);
}

TEST_CASE("manifest round-trips losslessly") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.Log8", 2);
  spec.controller = "task_alloc.alpha";
  spec.flags = "--batch-criteria population_size.Log8";
  BatchPaths paths{tmp / "root"};
  BatchManifest m = generate_batch(paths, spec);
  BatchManifest loaded = BatchManifest::load(paths.manifest_file());
  CHECK(loaded == m);
  loaded.save(tmp / "again.yaml");
  CHECK(BatchManifest::load(tmp / "again.yaml") == m);
}

TEST_CASE("missing template file is an error") {
  TempDir tmp;
  GenSpec spec = basic_spec(tmp, "population_size.Log4", 1);
  spec.template_file = tmp / "nope.xml";
  CHECK_THROWS(generate_batch(BatchPaths{tmp / "root"}, spec));
}
