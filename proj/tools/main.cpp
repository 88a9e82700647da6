#include <iostream>
#include <string>
#include <vector>

#include "tripletqa/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tqa::dispatch(args, std::cout, std::cerr);
}
