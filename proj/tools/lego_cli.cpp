#include "lego/lego.hpp"

int main(int argc, char** argv) { return lego::cli::run(argc, argv); }
