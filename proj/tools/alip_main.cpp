#include <vector>

#include "alip/cli.hpp"

int main(int argc, char** argv) {
    return alip::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
