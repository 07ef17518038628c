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

#ifndef DMSN_SRC_MAC_COUNTER_HPP_
#define DMSN_SRC_MAC_COUNTER_HPP_

#include "dmsn/kernels.hpp"

namespace dmsn::detail {

MacCount* active_mac_counter();
void add_macs(const MacCount& delta);

}  // namespace dmsn::detail

#endif  // DMSN_SRC_MAC_COUNTER_HPP_
