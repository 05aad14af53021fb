#pragma once

#include "block.hpp"
#include "context.hpp"
#include "descriptor.hpp"
#include "error.hpp"
#include "formats/matrix_market.hpp"
#include "formats/pgm.hpp"
#include "formats/soa.hpp"
#include "half.hpp"
#include "kernels/multiply.hpp"
#include "kernels/qr.hpp"
#include "kernels/svd_small.hpp"
#include "kernels/tile_ops.hpp"
#include "planner.hpp"
#include "precision.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "rsvd.hpp"
#include "store.hpp"
#include "tiled_matrix.hpp"
