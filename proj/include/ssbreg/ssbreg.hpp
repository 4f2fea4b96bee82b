#pragma once

#include "align.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "fasta.hpp"
#include "metaio.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "regressor.hpp"
#include "scorer.hpp"
#include "ssbr_loss.hpp"
#include "volume.hpp"
