// Copyright 2026 The htr Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "htr/ablation.hpp"
#include "htr/checkpoint.hpp"
#include "htr/config.hpp"
#include "htr/crossattn.hpp"
#include "htr/encoder.hpp"
#include "htr/frontend.hpp"
#include "htr/lattice.hpp"
#include "htr/metrics.hpp"
#include "htr/model.hpp"
#include "htr/optim.hpp"
#include "htr/schedule.hpp"
#include "htr/search.hpp"
#include "htr/synth.hpp"
#include "htr/tokenizer.hpp"
#include "htr/train.hpp"
#include "htr/transducer.hpp"
