#pragma once

#include "fastbss/decoder.hpp"
#include "fastbss/error.hpp"
#include "fastbss/eval.hpp"
#include "fastbss/linalg.hpp"
#include "fastbss/parallel.hpp"
#include "fastbss/psd.hpp"
#include "fastbss/separator.hpp"
#include "fastbss/signal.hpp"
#include "fastbss/source.hpp"
#include "fastbss/spatial.hpp"
#include "fastbss/stft.hpp"
#include "fastbss/synth.hpp"
#include "fastbss/wav.hpp"
