#include <random>

#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace efmca;

TEST(ModelParams, ZerosHasRequestedShape) {
  const auto p = ModelParams::zeros(DistKind::Gaussian, 4, 3);
  EXPECT_EQ(p.D(), 4u);
  EXPECT_EQ(p.H(), 3u);
  EXPECT_EQ(p.L(), 2u);
}

TEST(ModelParams, ValidateRejectsBrokenInvariants) {
  std::mt19937_64 rng(1);
  auto p = testing_helpers::random_params(DistKind::Poisson, 3, 2, rng);
  EXPECT_NO_THROW(validate(p));

  auto bad_pi = p;
  bad_pi.pi[0] = 1.0;
  EXPECT_THROW(validate(bad_pi), ParameterError);

  auto bad_w = p;
  bad_w.W[0](1, 1) = -1.0;
  EXPECT_THROW(validate(bad_w), ParameterError);

  auto bad_shape = p;
  bad_shape.W[0].resize(2, 2);
  EXPECT_THROW(validate(bad_shape), ParameterError);

  auto bad_link = p;
  bad_link.link_mode = LinkMode::MaxMagnitude;
  EXPECT_THROW(validate(bad_link), ParameterError);
}

TEST(ModelParams, JsonRoundTripIsExact) {
  std::mt19937_64 rng(2);
  for (auto k : testing_helpers::all_kinds()) {
    const auto p = testing_helpers::random_params(k, 5, 3, rng);
    const auto q = params_from_json(nlohmann::json::parse(to_json(p).dump()));
    EXPECT_EQ(p, q) << to_string(k);
  }
}

TEST(ModelParams, JsonRejectsUnknownKeysAndBadShapes) {
  std::mt19937_64 rng(3);
  const auto p = testing_helpers::random_params(DistKind::Exponential, 2, 2, rng);
  auto j = to_json(p);
  j["extra"] = 1;
  EXPECT_THROW(params_from_json(j), ParameterError);
  j = to_json(p);
  j["H"] = 3;
  EXPECT_THROW(params_from_json(j), ParameterError);
  j = to_json(p);
  j["distribution"] = "cauchy";
  EXPECT_THROW(params_from_json(j), ParameterError);
  j = to_json(p);
  j["meta"] = {{"seed", 1}};
  EXPECT_NO_THROW(params_from_json(j));
}

TEST(LinkMode, Names) {
  EXPECT_EQ(parse_link_mode("max"), LinkMode::Max);
  EXPECT_EQ(parse_link_mode("max_magnitude"), LinkMode::MaxMagnitude);
  EXPECT_FALSE(parse_link_mode("sum").has_value());
}
