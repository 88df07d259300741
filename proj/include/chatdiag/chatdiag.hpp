#pragma once

// Everything in one include.
#include "chatdiag/errors.hpp"
#include "chatdiag/text.hpp"
#include "chatdiag/random.hpp"
#include "chatdiag/json_io.hpp"
#include "chatdiag/core_model.hpp"
#include "chatdiag/image_descriptor.hpp"
#include "chatdiag/prompt_text.hpp"
#include "chatdiag/llm_gateway.hpp"
#include "chatdiag/tweet_selector.hpp"
#include "chatdiag/answer_heuristic.hpp"
#include "chatdiag/prompt_builder.hpp"
#include "chatdiag/diagnosis_parser.hpp"
#include "chatdiag/ood_perturber.hpp"
#include "chatdiag/pipeline.hpp"
#include "chatdiag/dialogue_engine.hpp"
#include "chatdiag/eval_harness.hpp"
#include "chatdiag/synthetic.hpp"
#include "chatdiag/service.hpp"
