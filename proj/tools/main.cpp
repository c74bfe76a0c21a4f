#include <iostream>
#include <string>
#include <vector>

#include "kdc2/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return kdc2::cli_dispatch(args, std::cout, std::cerr);
}
