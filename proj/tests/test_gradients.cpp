// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradient_suite.hpp"

using namespace ircount::testing;

TEST_CASE("conv2d3x3 gradients") { require_ok(conv_gradients()); }
TEST_CASE("batchnorm train-mode gradients") { require_ok(batchnorm_gradients()); }
TEST_CASE("maxpool gradients") { require_ok(maxpool_gradients()); }
TEST_CASE("fully connected gradients") { require_ok(dense_gradients()); }
TEST_CASE("lstm cell gradients through time") { require_ok(lstm_gradients()); }
TEST_CASE("causal conv1d gradients") { require_ok(tcn_gradients()); }
TEST_CASE("weighted softmax cross-entropy gradients") { require_ok(xent_gradients()); }

TEST_CASE("full model gradients for every family") {
  for (const char* text : kFamilySpecs) {
    CAPTURE(text);
    require_ok(model_gradients(text));
  }
}
