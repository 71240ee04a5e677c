// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace fvlm {

/// Error raised by any library module. `module()` names the component that
/// rejected the input (e.g. "core-tensor", "prune-policies").
class Error : public std::runtime_error {
public:
    Error(std::string module, const std::string& message)
        : std::runtime_error(module + ": " + message), m_module(std::move(module)), m_message(message) {}

    const std::string& module() const noexcept { return m_module; }
    const std::string& message() const noexcept { return m_message; }

private:
    std::string m_module;
    std::string m_message;
};

}  // namespace fvlm
