#pragma once

#include "detox/backbone.hpp"
#include "detox/baselines.hpp"
#include "detox/classifier.hpp"
#include "detox/corpus.hpp"
#include "detox/error.hpp"
#include "detox/gradcheck.hpp"
#include "detox/losses.hpp"
#include "detox/methods.hpp"
#include "detox/metrics.hpp"
#include "detox/micro_model.hpp"
#include "detox/random.hpp"
#include "detox/report.hpp"
#include "detox/serialize.hpp"
#include "detox/text.hpp"
#include "detox/toy.hpp"
#include "detox/translate.hpp"
#include "detox/vocab.hpp"
