#pragma once

namespace gpcrbert {

// Training runs in single precision. Defining GPCRBERT_REAL_DOUBLE builds the
// whole library in double precision, which the tight gradient checks use.
#ifdef GPCRBERT_REAL_DOUBLE
using Real = double;
#else
using Real = float;
#endif

}  // namespace gpcrbert
