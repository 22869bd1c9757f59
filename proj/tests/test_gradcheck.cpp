#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>

#include "pacm/errors.hpp"
#include "pacm/gradcheck.hpp"

using namespace pacm;

TEST_CASE("default audit passes for every loss and network") {
  const GradcheckReport r = run_gradcheck(GradcheckConfig{});
  std::set<std::string> losses;
  std::size_t coords = 0, skipped = 0;
  for (const auto& e : r.entries) {
    losses.insert(e.loss);
    coords += e.coordinates;
    skipped += e.skipped;
    CHECK(e.coordinates > 0);
  }
  CHECK(losses == std::set<std::string>{"pac", "pacm", "enc_batch", "enc_eval", "disc", "total"});
  CHECK(r.entries.size() == 5u * 9u);
  for (const char* l : {"pac", "pacm", "enc_batch", "enc_eval", "disc", "total"}) {
    INFO(std::string(l));
    CHECK(r.worst_for(l) < 1e-4);
  }
  CHECK(r.passed());
  CHECK(skipped * 50 < coords);
  CHECK(r.seconds < 60.0);
}

TEST_CASE("tolerance is enforced") {
  // Below rounding error nothing passes.
  GradcheckConfig c;
  c.configurations = 1;
  c.tolerance = 1e-14;
  CHECK_FALSE(run_gradcheck(c).passed());
}

TEST_CASE("config json round trip and strictness") {
  GradcheckConfig c;
  c.configurations = 2;
  c.encoder_dims = {7, 3};
  const auto back = gradcheck_config_from_json(gradcheck_config_to_json(c));
  CHECK(back.configurations == 2);
  CHECK(back.encoder_dims == std::vector<int>{7, 3});
  auto j = gradcheck_config_to_json(c);
  j["bogus"] = 1;
  CHECK_THROWS_AS(gradcheck_config_from_json(j), ConfigError);
  j = gradcheck_config_to_json(c);
  j["step"] = 0.0;
  CHECK_THROWS_AS(gradcheck_config_from_json(j), ConfigError);
}
