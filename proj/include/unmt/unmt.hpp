#pragma once

#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "optim.hpp"
#include "gradcheck.hpp"
#include "corpus.hpp"
#include "noise.hpp"
#include "translator.hpp"
#include "adversary.hpp"
#include "losses.hpp"
#include "bleu.hpp"
#include "evaluation.hpp"
#include "config.hpp"
#include "checkpoint.hpp"
#include "training.hpp"
#include "synth.hpp"
