#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "scenegate/tensor.hpp"

namespace scenegate {

// Dump format shared by attn-dump, grad-check and checkpoints:
// {"shape": [...], "data": [...]} with row-major data.
inline nlohmann::json tensor_to_json(const Tensor& t) {
    return {{"shape", t.shape()}, {"data", t.value()}};
}

inline nlohmann::json tensor_to_json(const std::vector<std::size_t>& shape,
                                     const std::vector<double>& data) {
    return {{"shape", shape}, {"data", data}};
}

inline Tensor tensor_from_json(const nlohmann::json& j, bool requires_grad = false) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
        throw ParseError("tensor JSON must contain shape and data");
    }
    try {
        return Tensor(j.at("shape").get<std::vector<std::size_t>>(),
                      j.at("data").get<std::vector<double>>(), requires_grad);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("tensor JSON: ") + e.what());
    }
}

}  // namespace scenegate
