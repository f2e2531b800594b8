#include "cli_app.hpp"

int main(int argc, char** argv) { return cnep::cli::run(argc, argv); }
