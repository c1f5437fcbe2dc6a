#include "cfgan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "cfgan/errors.hpp"

namespace cfgan {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'F', 'G', 'N'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw DataError("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string Checkpoint::serialize() const {
    nlohmann::json header;
    header["format"] = "cfgan-checkpoint";
    header["meta"] = meta;
    std::uint64_t offset = 0;
    auto& gs = header["groups"] = nlohmann::json::object();
    for (const auto& [role, tensors] : groups) {
        auto& list = gs[role] = nlohmann::json::array();
        for (const auto& t : tensors) {
            list.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", offset}});
            offset += static_cast<std::uint64_t>(t.value.numel());
        }
    }
    const std::string text = header.dump();
    std::string out(kMagic, 4);
    put(out, kVersion);
    put(out, static_cast<std::uint64_t>(text.size()));
    out += text;
    out.reserve(out.size() + offset * sizeof(double));
    for (const auto& [role, tensors] : groups)
        for (const auto& t : tensors)
            out.append(reinterpret_cast<const char*>(t.value.ptr()), static_cast<std::size_t>(t.value.numel()) * sizeof(double));
    return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("not a cfgan checkpoint");
    std::size_t pos = 4;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
    const auto len = get<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw DataError("checkpoint header truncated");
    const auto header = nlohmann::json::parse(bytes.substr(pos, len));
    pos += len;
    const std::size_t base = pos;
    const std::size_t payload = bytes.size() - base;

    Checkpoint ck;
    ck.meta = header.at("meta");
    for (const auto& [role, list] : header.at("groups").items()) {
        auto& group = ck.groups[role];
        for (const auto& entry : list) {
            Shape shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            Tensor t(shape);
            const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * sizeof(double);
            if (offset * sizeof(double) + nbytes > payload) throw DataError("checkpoint payload truncated");
            std::memcpy(t.ptr(), bytes.data() + base + offset * sizeof(double), nbytes);
            group.push_back({entry.at("name").get<std::string>(), std::move(t)});
        }
    }
    return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string bytes = serialize();
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

const std::vector<NamedTensor>& Checkpoint::group(const std::string& role) const {
    auto it = groups.find(role);
    if (it == groups.end()) throw DataError("checkpoint has no '" + role + "' group");
    return it->second;
}

void store_module(Checkpoint& ckpt, const std::string& role, const nn::Module& module) {
    auto& g = ckpt.groups[role];
    g.clear();
    for (const auto& p : module.named_parameters()) g.push_back({p.name, p.var.value()});
}

void load_module(const Checkpoint& ckpt, const std::string& role, const nn::Module& module) {
    const auto& g = ckpt.group(role);
    const auto params = module.named_parameters();
    if (g.size() != params.size())
        throw DataError("checkpoint group '" + role + "' has " + std::to_string(g.size()) + " tensors, model expects " +
                        std::to_string(params.size()));
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i].name != params[i].name || g[i].value.shape() != params[i].var.shape())
            throw DataError("checkpoint tensor '" + g[i].name + "' " + shape_str(g[i].value.shape()) +
                            " does not match model parameter '" + params[i].name + "' " +
                            shape_str(params[i].var.shape()));
        params[i].var.node()->value = g[i].value;
    }
}

void store_adam(Checkpoint& ckpt, const std::string& role, const nn::Adam& opt) {
    auto& g = ckpt.groups[role];
    g.clear();
    g.push_back({"steps", Tensor::scalar(static_cast<double>(opt.steps()))});
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        g.push_back({opt.params()[i].name + ".m", opt.first_moments()[i]});
        g.push_back({opt.params()[i].name + ".v", opt.second_moments()[i]});
    }
}

void load_adam(const Checkpoint& ckpt, const std::string& role, nn::Adam& opt) {
    const auto& g = ckpt.group(role);
    if (g.size() != 1 + 2 * opt.params().size()) throw DataError("optimizer state '" + role + "' does not match");
    opt.set_steps(static_cast<std::int64_t>(g[0].value.item()));
    for (std::size_t i = 0; i < opt.params().size(); ++i) {
        const auto& m = g[1 + 2 * i];
        const auto& v = g[2 + 2 * i];
        if (m.value.shape() != opt.first_moments()[i].shape() || v.value.shape() != opt.second_moments()[i].shape())
            throw DataError("optimizer moment shape mismatch for " + opt.params()[i].name);
        opt.first_moments()[i] = m.value;
        opt.second_moments()[i] = v.value;
    }
}

std::vector<Tensor> snapshot(const nn::Module& module) {
    std::vector<Tensor> out;
    for (const auto& p : module.named_parameters()) out.push_back(p.var.value());
    return out;
}

void restore(const nn::Module& module, const std::vector<Tensor>& values) {
    const auto params = module.named_parameters();
    if (params.size() != values.size()) throw std::invalid_argument("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].var.shape() != values[i].shape()) throw std::invalid_argument("restore: shape mismatch");
        params[i].var.node()->value = values[i];
    }
}

}  // namespace cfgan
