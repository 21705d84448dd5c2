#pragma once

#include "koopgen/checkpoint.hpp"
#include "koopgen/dataset.hpp"
#include "koopgen/error.hpp"
#include "koopgen/evaluate.hpp"
#include "koopgen/genops.hpp"
#include "koopgen/gradcheck.hpp"
#include "koopgen/kuramoto.hpp"
#include "koopgen/models.hpp"
#include "koopgen/nn.hpp"
#include "koopgen/objective.hpp"
#include "koopgen/optim.hpp"
#include "koopgen/systems.hpp"
#include "koopgen/tape.hpp"
#include "koopgen/tensor.hpp"
#include "koopgen/trainer.hpp"
#include "koopgen/types.hpp"
