#pragma once

#include <torch/torch.h>

// c10's logging header defines its own CHECK.
#undef CHECK
#include <doctest.h>
