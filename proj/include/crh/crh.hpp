#pragma once

#include "crh/assignment.hpp"
#include "crh/codebook_file.hpp"
#include "crh/dataset.hpp"
#include "crh/error.hpp"
#include "crh/eval.hpp"
#include "crh/hamming.hpp"
#include "crh/hash_model.hpp"
#include "crh/random.hpp"
#include "crh/serialization.hpp"
#include "crh/trainer.hpp"
