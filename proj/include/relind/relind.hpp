#pragma once

#include "relind/common.hpp"
#include "relind/corpus_miner.hpp"
#include "relind/eval_harness.hpp"
#include "relind/example_gen.hpp"
#include "relind/fixture_oracle.hpp"
#include "relind/oracle.hpp"
#include "relind/pipeline.hpp"
#include "relind/relation_model.hpp"
#include "relind/remote_oracle.hpp"
#include "relind/synthetic.hpp"
#include "relind/template_filter.hpp"
#include "relind/text.hpp"
#include "relind/types.hpp"
