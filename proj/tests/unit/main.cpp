#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"
#include "hsfruit/nn.hpp"

int main(int argc, char** argv) {
  hsf::nn::keep_large_allocations();
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
