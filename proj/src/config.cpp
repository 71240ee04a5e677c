// Copyright (C) 2026 The fastervlm-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "fvlm/harness.hpp"

namespace fvlm {

namespace {

constexpr const char* kModule = "harness";

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return {};
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value) {
    throw Error(kModule, "config key '" + key + "' has invalid value '" + value + "'");
}

std::size_t parse_count(const std::string& key, const std::string& value) {
    std::size_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        bad_value(key, value);
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        bad_value(key, value);
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        bad_value(key, value);
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") {
        return true;
    }
    if (value == "false" || value == "0") {
        return false;
    }
    bad_value(key, value);
}

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"seed", [](auto& c, auto& k, auto& v) { c.seed = parse_u64(k, v); }},
        {"policy",
         [](auto& c, auto&, auto& v) { c.policy = parse_policy(v); }},
        {"reduction", [](auto& c, auto& k, auto& v) { c.reduction = parse_double(k, v); }},
        {"keep_count",
         [](auto& c, auto& k, auto& v) {
             if (v == "auto") {
                 c.keep_count.reset();
             } else {
                 c.keep_count = parse_count(k, v);
             }
         }},
        {"k_merge", [](auto& c, auto& k, auto& v) { c.k_merge = parse_count(k, v); }},
        {"prune_layer", [](auto& c, auto& k, auto& v) { c.prune_layer = parse_count(k, v); }},
        {"position_ids",
         [](auto& c, auto& k, auto& v) {
             if (v == "packed") {
                 c.position_mode = PositionMode::Packed;
             } else if (v == "original") {
                 c.position_mode = PositionMode::Original;
             } else {
                 bad_value(k, v);
             }
         }},
        {"max_new", [](auto& c, auto& k, auto& v) { c.max_new = parse_count(k, v); }},
        {"analysis_layer", [](auto& c, auto& k, auto& v) { c.analysis_layer = parse_count(k, v); }},
        {"encoder.n_patches", [](auto& c, auto& k, auto& v) { c.encoder.n_patches = parse_count(k, v); }},
        {"encoder.d_model", [](auto& c, auto& k, auto& v) { c.encoder.d_model = parse_count(k, v); }},
        {"encoder.n_heads", [](auto& c, auto& k, auto& v) { c.encoder.n_heads = parse_count(k, v); }},
        {"encoder.n_layers", [](auto& c, auto& k, auto& v) { c.encoder.n_layers = parse_count(k, v); }},
        {"encoder.d_ffn", [](auto& c, auto& k, auto& v) { c.encoder.d_ffn = parse_count(k, v); }},
        {"encoder.positional", [](auto& c, auto& k, auto& v) { c.encoder.positional = parse_bool(k, v); }},
        {"encoder.init_scale", [](auto& c, auto& k, auto& v) { c.encoder.init_scale = parse_double(k, v); }},
        {"encoder.salience_gain",
         [](auto& c, auto& k, auto& v) { c.encoder.salience_gain = parse_double(k, v); }},
        {"decoder.d_model", [](auto& c, auto& k, auto& v) { c.decoder.d_model = parse_count(k, v); }},
        {"decoder.n_heads", [](auto& c, auto& k, auto& v) { c.decoder.n_heads = parse_count(k, v); }},
        {"decoder.n_layers", [](auto& c, auto& k, auto& v) { c.decoder.n_layers = parse_count(k, v); }},
        {"decoder.d_ffn", [](auto& c, auto& k, auto& v) { c.decoder.d_ffn = parse_count(k, v); }},
        {"decoder.vocab", [](auto& c, auto& k, auto& v) { c.decoder.vocab = parse_count(k, v); }},
        {"decoder.max_positions",
         [](auto& c, auto& k, auto& v) { c.decoder.max_positions = parse_count(k, v); }},
        {"decoder.init_scale", [](auto& c, auto& k, auto& v) { c.decoder.init_scale = parse_double(k, v); }},
        {"workload.n_salient", [](auto& c, auto& k, auto& v) { c.workload.n_salient = parse_count(k, v); }},
        {"workload.salient_strength",
         [](auto& c, auto& k, auto& v) { c.workload.salient_strength = parse_double(k, v); }},
        {"workload.sys_len", [](auto& c, auto& k, auto& v) { c.workload.sys_len = parse_count(k, v); }},
        {"workload.txt_len", [](auto& c, auto& k, auto& v) { c.workload.txt_len = parse_count(k, v); }},
        {"workload.grid_cols", [](auto& c, auto& k, auto& v) { c.workload.grid_cols = parse_count(k, v); }},
    };
    return table;
}

}  // namespace

void PipelineConfig::validate() const {
    encoder.validate();
    decoder.validate();
    auto fail = [](const std::string& msg) { throw Error(kModule, "config: " + msg); };
    if (encoder.n_layers < 2) {
        fail("encoder.n_layers must be at least 2 (features come from the penultimate layer)");
    }
    if (!(reduction >= 0.0 && reduction < 1.0)) {
        fail("reduction must lie in [0, 1)");
    }
    if (keep_count && (*keep_count == 0 || *keep_count > encoder.n_patches)) {
        fail("keep_count must lie in [1, encoder.n_patches]");
    }
    if (workload.n_salient > encoder.n_patches) {
        fail("workload.n_salient exceeds encoder.n_patches");
    }
    if (max_new == 0) {
        fail("max_new must be at least 1");
    }
    if (analysis_layer >= decoder.n_layers) {
        fail("analysis_layer must be a valid decoder layer");
    }
    if ((policy == PolicyId::FastV || policy == PolicyId::ClsAtLayer2) &&
        (prune_layer == 0 || prune_layer >= decoder.n_layers)) {
        fail("prune_layer must lie in [1, decoder.n_layers) for in-LLM policies");
    }
    const std::size_t longest = workload.sys_len + encoder.n_patches + workload.txt_len + 1 + max_new;
    if (longest > decoder.max_positions) {
        fail("sequence plus generated tokens exceeds decoder.max_positions");
    }
}

std::map<std::string, std::string> PipelineConfig::to_key_values() const {
    auto count = [](std::size_t v) { return std::to_string(v); };
    return {
        {"seed", std::to_string(seed)},
        {"policy", std::string(policy_name(policy))},
        {"reduction", format_double(reduction)},
        {"keep_count", keep_count ? count(*keep_count) : "auto"},
        {"k_merge", count(k_merge)},
        {"prune_layer", count(prune_layer)},
        {"position_ids", position_mode == PositionMode::Packed ? "packed" : "original"},
        {"max_new", count(max_new)},
        {"analysis_layer", count(analysis_layer)},
        {"encoder.n_patches", count(encoder.n_patches)},
        {"encoder.d_model", count(encoder.d_model)},
        {"encoder.n_heads", count(encoder.n_heads)},
        {"encoder.n_layers", count(encoder.n_layers)},
        {"encoder.d_ffn", count(encoder.d_ffn)},
        {"encoder.positional", encoder.positional ? "true" : "false"},
        {"encoder.init_scale", format_double(encoder.init_scale)},
        {"encoder.salience_gain", format_double(encoder.salience_gain)},
        {"decoder.d_model", count(decoder.d_model)},
        {"decoder.n_heads", count(decoder.n_heads)},
        {"decoder.n_layers", count(decoder.n_layers)},
        {"decoder.d_ffn", count(decoder.d_ffn)},
        {"decoder.vocab", count(decoder.vocab)},
        {"decoder.max_positions", count(decoder.max_positions)},
        {"decoder.init_scale", format_double(decoder.init_scale)},
        {"workload.n_salient", count(workload.n_salient)},
        {"workload.salient_strength", format_double(workload.salient_strength)},
        {"workload.sys_len", count(workload.sys_len)},
        {"workload.txt_len", count(workload.txt_len)},
        {"workload.grid_cols", count(workload.grid_cols)},
    };
}

std::uint64_t PipelineConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [k, v] : to_key_values()) {
        for (char c : k + "=" + v + "\n") {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

std::string PipelineConfig::hash_hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << hash();
    return os.str();
}

void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = setters();
    const auto it = table.find(key);
    if (it == table.end()) {
        throw Error(kModule, "unknown config key '" + key + "'");
    }
    it->second(cfg, key, value);
}

PipelineConfig parse_config(std::istream& in) {
    PipelineConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(kModule, "config line " + std::to_string(line_no) + " is not 'key = value'");
        }
        apply_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

PipelineConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(kModule, "cannot open config file '" + path + "'");
    }
    return parse_config(in);
}

}  // namespace fvlm
