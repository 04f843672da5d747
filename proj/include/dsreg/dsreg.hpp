#pragma once

#include "dsreg/align.hpp"
#include "dsreg/descriptor.hpp"
#include "dsreg/errors.hpp"
#include "dsreg/geometry.hpp"
#include "dsreg/global_match.hpp"
#include "dsreg/image.hpp"
#include "dsreg/imaging.hpp"
#include "dsreg/parallel.hpp"
#include "dsreg/pipeline.hpp"
#include "dsreg/random.hpp"
#include "dsreg/sampling.hpp"
#include "dsreg/simeval.hpp"
#include "dsreg/synthetic.hpp"
#include "dsreg/transform.hpp"
