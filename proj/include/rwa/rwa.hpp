#pragma once

#include "rwa/tensor.hpp"
#include "rwa/autograd.hpp"
#include "rwa/datamodel.hpp"
#include "rwa/dataset_io.hpp"
#include "rwa/encoders.hpp"
#include "rwa/alignment.hpp"
#include "rwa/training.hpp"
#include "rwa/retrieval.hpp"
#include "rwa/synthetic.hpp"
#include "rwa/cost.hpp"
#include "rwa/config.hpp"
