#include <iostream>
#include <string>
#include <vector>

#include "damo/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return damo::run_cli(args, std::cout, std::cerr);
}
