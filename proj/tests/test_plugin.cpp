#include <doctest.h>

#include "helpers.hpp"
#include "xbatch/plugin.hpp"

using namespace xbatch;

TEST_CASE("built-in refsim platform resolves without any plugin path") {
  PluginSet empty;
  PlatformPlugin p = resolve_platform("platform.refsim", empty);
  CHECK(p.id == "platform.refsim");
  CHECK(p.launch_template.find("{input}") != std::string::npos);
  CHECK(p.launch_template.find("{seed}") != std::string::npos);
  CHECK(p.output_tables == std::vector<std::string>{"collected"});
  CHECK(p.default_hz >= 1);
}

TEST_CASE("unknown platform id lists the search path") {
  PluginSet empty;
  CHECK_THROWS_WITH_AS(resolve_platform("platform.nope", empty),
                       doctest::Contains("platform.refsim"), ConfigError);
}

TEST_CASE("platform plugin loads from a manifest directory") {
  testutil::TempDir tmp;
  testutil::write_file(tmp / "plugins/mysim/plugin.yaml",
                       "type: platform\n"
                       "id: platform.mysim\n"
                       "launch_template: \"mysim -i {input} -s {seed}\"\n"
                       "seed_path: /sim/rng\n"
                       "seed_attr: seed\n"
                       "default_hz: 25\n"
                       "setup_changes:\n"
                       "  - {op: set_attr, path: /sim/clock, attr: steps, value: \"{ticks}\"}\n"
                       "output_tables: [scores]\n");
  PluginSet plugins = PluginSet::scan({tmp / "plugins"});
  PlatformPlugin p = resolve_platform("platform.mysim", plugins);
  CHECK(p.default_hz == 25);
  CHECK(p.seed_path == "/sim/rng");
  REQUIRE(p.setup_changes.size() == 1);
  CHECK(p.setup_changes[0].value == "{ticks}");
}

TEST_CASE("launch template must use each placeholder exactly once") {
  testutil::TempDir tmp;
  testutil::write_file(tmp / "plugins/bad/plugin.yaml",
                       "type: platform\n"
                       "id: platform.bad\n"
                       "launch_template: \"bad {input}\"\n"  // no {seed}
                       "seed_path: /x/y\n"
                       "seed_attr: v\n"
                       "output_tables: [t]\n");
  PluginSet plugins = PluginSet::scan({tmp / "plugins"});
  CHECK_THROWS_AS(resolve_platform("platform.bad", plugins), ConfigError);
}

TEST_CASE("first plugin-path entry wins on id collisions") {
  testutil::TempDir tmp;
  for (const char* entry : {"a", "b"}) {
    testutil::write_file(tmp.path() / entry / "sim/plugin.yaml",
                         std::string("type: platform\nid: platform.dup\n") +
                             "launch_template: \"" + entry + " {input} {seed}\"\n" +
                             "seed_path: /x\nseed_attr: v\noutput_tables: [t]\n");
  }
  PluginSet plugins = PluginSet::scan({tmp / "a", tmp / "b"});
  CHECK(resolve_platform("platform.dup", plugins).launch_template.starts_with("a "));
}

TEST_CASE("manifest without type/id is rejected") {
  testutil::TempDir tmp;
  testutil::write_file(tmp / "plugins/x/plugin.yaml", "id: only-an-id\n");
  CHECK_THROWS_AS(PluginSet::scan({tmp / "plugins"}), ConfigError);
}

TEST_CASE("model plugin requires the file-contract placeholders") {
  testutil::TempDir tmp;
  testutil::write_file(tmp / "plugins/m/plugin.yaml",
                       "type: model\nid: model.const\nscope: inter_exp\n"
                       "exec: \"sh gen.sh {input} {output}\"\n");
  PluginSet plugins = PluginSet::scan({tmp / "plugins"});
  ModelPlugin m = resolve_model("model.const", plugins);
  CHECK(m.scope == "inter_exp");

  testutil::write_file(tmp / "plugins/m/plugin.yaml",
                       "type: model\nid: model.const\nexec: \"sh gen.sh\"\n");
  PluginSet again = PluginSet::scan({tmp / "plugins"});
  CHECK_THROWS_AS(resolve_model("model.const", again), ConfigError);
}
