#pragma once

#include "eegrl/core.hpp"
#include "eegrl/tensor.hpp"
#include "eegrl/adam.hpp"
#include "eegrl/layers.hpp"
#include "eegrl/graph.hpp"
#include "eegrl/cheb_conv.hpp"
#include "eegrl/gcn_model.hpp"
#include "eegrl/gcn_trainer.hpp"
#include "eegrl/checkpoint.hpp"
#include "eegrl/glt.hpp"
#include "eegrl/preprocess.hpp"
#include "eegrl/recording.hpp"
#include "eegrl/synthetic.hpp"
#include "eegrl/rl_env.hpp"
#include "eegrl/dqn.hpp"
#include "eegrl/pipeline.hpp"
