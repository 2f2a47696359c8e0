#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "melreport/model.hpp"
#include "melreport/tokenizer.hpp"

namespace melreport {

struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> shape;
    std::vector<float> data;
    bool trainable = false;
};

// Versioned binary container of named float32 tensors with an embedded JSON
// document. Layout (little-endian):
//   "PATHTC01", u32 version = 1, u32 json_len, json bytes, u32 n_tensors,
//   per tensor: u32 name_len, name, u32 ndim, ndim × u32 dims,
//               u8 trainable, prod(dims) × f32
struct TensorContainer {
    nlohmann::json meta = nlohmann::json::object();
    std::vector<NamedTensor> tensors;

    [[nodiscard]] const NamedTensor& get(const std::string& name) const;
};

void write_tensor_container(const std::filesystem::path& path, const TensorContainer& c);
TensorContainer read_tensor_container(const std::filesystem::path& path);

// Model parameters + config + tokenizer in one container. `extra` is merged
// into the JSON document (e.g. training summary).
void save_checkpoint(const std::filesystem::path& path, const CocaModel<float>& model, const Tokenizer& tokenizer,
                     const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
    CocaModel<float> model;
    Tokenizer tokenizer;
    nlohmann::json meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace melreport
