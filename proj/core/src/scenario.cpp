#include "hetorus/torus_geometry.hpp"

namespace hetorus {}
