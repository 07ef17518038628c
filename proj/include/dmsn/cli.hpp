/* Copyright 2026 The DMSN Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Command-line front end: describe, count, gradcheck, synth, train, eval.

#ifndef DMSN_CLI_HPP_
#define DMSN_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace dmsn {

// `args` excludes the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace dmsn

#endif  // DMSN_CLI_HPP_
