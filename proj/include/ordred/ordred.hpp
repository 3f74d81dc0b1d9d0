#pragma once
#include <ordred/config.hpp>
#include <ordred/dimension.hpp>
#include <ordred/em.hpp>
#include <ordred/error.hpp>
#include <ordred/knn.hpp>
#include <ordred/linalg.hpp>
#include <ordred/model.hpp>
#include <ordred/normal.hpp>
#include <ordred/parallel.hpp>
#include <ordred/pfc.hpp>
#include <ordred/reduce.hpp>
#include <ordred/regularize.hpp>
#include <ordred/rng.hpp>
#include <ordred/serialize.hpp>
#include <ordred/simulate.hpp>
#include <ordred/table.hpp>
#include <ordred/tmvn.hpp>
