#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "koopgait/runtime.hpp"

int main(int argc, char** argv) {
  koopgait::tune_allocator();
  doctest::Context context(argc, argv);
  return context.run();
}
