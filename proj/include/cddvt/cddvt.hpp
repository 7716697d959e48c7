#pragma once

// Everything in one include.
#include "ablation.hpp"
#include "allocator.hpp"
#include "autoencoder.hpp"
#include "binary_io.hpp"
#include "codebook.hpp"
#include "config.hpp"
#include "dataio.hpp"
#include "errors.hpp"
#include "evaluation.hpp"
#include "gradcheck_suite.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "numerics.hpp"
#include "optimizer.hpp"
#include "quantizer.hpp"
#include "rng.hpp"
#include "trainer.hpp"
