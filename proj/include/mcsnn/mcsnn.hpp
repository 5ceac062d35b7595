#ifndef MCSNN_MCSNN_HPP
#define MCSNN_MCSNN_HPP

#include "mcsnn/autodiff.hpp"
#include "mcsnn/binary_io.hpp"
#include "mcsnn/checkpoint.hpp"
#include "mcsnn/dataset_io.hpp"
#include "mcsnn/encoding.hpp"
#include "mcsnn/energy.hpp"
#include "mcsnn/error.hpp"
#include "mcsnn/fixed_point.hpp"
#include "mcsnn/ingest.hpp"
#include "mcsnn/nas.hpp"
#include "mcsnn/network.hpp"
#include "mcsnn/network_spec.hpp"
#include "mcsnn/neurons.hpp"
#include "mcsnn/processor.hpp"
#include "mcsnn/quantize.hpp"
#include "mcsnn/random.hpp"
#include "mcsnn/signal.hpp"
#include "mcsnn/slstm.hpp"

#endif
