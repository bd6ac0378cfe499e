// Copyright 2026 The HLFP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "hlfp/arch_graph.hpp"

namespace hlfp::arch {

/// Canonical architecture description (JSON, sorted keys, two-space indent,
/// trailing newline). Equal specs serialize to identical bytes.
std::string to_text(const ModelSpec& model);
/// Throws IoError on malformed text; the result is not validated.
ModelSpec from_text(std::string_view text);

ModelSpec load_spec(const std::filesystem::path& path);
void save_spec(const ModelSpec& model, const std::filesystem::path& path);

/// "<class> <superclass>" per line, '#' comments allowed.
SuperclassMap parse_superclass_map(std::string_view text);
SuperclassMap load_superclass_map(const std::filesystem::path& path);

}  // namespace hlfp::arch
