#include "gdro/harness.hpp"

int main(int argc, char** argv) {
    return gdro::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
