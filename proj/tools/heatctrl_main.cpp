#include <vector>

#include "heatctrl/harness.hpp"

int main(int argc, char** argv) {
  return heatctrl::cli_main(std::vector<std::string>(argv + 1, argv + argc));
}
