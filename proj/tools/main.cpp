#include <vector>
#include <string>

#include "bufd/cli.hpp"

int main(int argc, char** argv) {
  return bufd::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
