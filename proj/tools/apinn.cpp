#include "apinn/app.hpp"

#include <iostream>

int main(int argc, char **argv) { return apinn::app::run({argv, argv + argc}, std::cout, std::cerr); }
