#include <vector>
#include <string>

#include "oga/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return oga::run_cli(args);
}
