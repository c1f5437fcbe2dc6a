#pragma once

// Versioned tensor container.
//
// Layout: "CFGN" | u32 version | u64 header length | JSON header | raw little-endian doubles.
// The header lists role-tagged tensor groups with names, shapes and offsets, plus free-form metadata.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfgan/nn.hpp"

namespace cfgan {

struct NamedTensor {
    std::string name;
    Tensor value;
};

class Checkpoint {
public:
    static constexpr std::uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, std::vector<NamedTensor>> groups;

    std::string serialize() const;
    static Checkpoint deserialize(const std::string& bytes);
    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    bool has(const std::string& role) const { return groups.count(role) > 0; }
    const std::vector<NamedTensor>& group(const std::string& role) const;
};

void store_module(Checkpoint& ckpt, const std::string& role, const nn::Module& module);
// Copies values into the module's parameters; names and shapes must match exactly.
void load_module(const Checkpoint& ckpt, const std::string& role, const nn::Module& module);

void store_adam(Checkpoint& ckpt, const std::string& role, const nn::Adam& opt);
void load_adam(const Checkpoint& ckpt, const std::string& role, nn::Adam& opt);

// Deep copies of parameter values, and the reverse.
std::vector<Tensor> snapshot(const nn::Module& module);
void restore(const nn::Module& module, const std::vector<Tensor>& values);

}  // namespace cfgan
