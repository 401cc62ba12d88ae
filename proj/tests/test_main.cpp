#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>

int main(int argc, char** argv) {
  // two-core boxes: a spinning idle worker starves the serial sections
  setenv("OMP_WAIT_POLICY", "passive", 0);
  return doctest::Context(argc, argv).run();
}
