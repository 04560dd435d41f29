#pragma once

#include "research/error.hpp"
#include "research/tag_grammar.hpp"
#include "research/retrieval.hpp"
#include "research/http.hpp"
#include "research/remote_retriever.hpp"
#include "research/rollout.hpp"
#include "research/http_policy.hpp"
#include "research/reward.hpp"
#include "research/judge.hpp"
#include "research/grpo.hpp"
#include "research/toy_lab.hpp"
#include "research/config.hpp"
