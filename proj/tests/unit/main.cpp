#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "cbr/log.hpp"

int main(int argc, char** argv) {
  cbr::set_warning_sink([](std::string_view) {});
  doctest::Context ctx(argc, argv);
  return ctx.run();
}
