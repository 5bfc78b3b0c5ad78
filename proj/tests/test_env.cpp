#include "absolutenet/runtime.hpp"

// Allocator tuning must happen before the first big tensor allocation.
namespace {
const int tuned = [] {
    absnet::tune_allocator();
    return 0;
}();
}
