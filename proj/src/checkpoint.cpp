#include "melreport/checkpoint.hpp"

#include <fstream>

#include "melreport/binary_io.hpp"

namespace melreport {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'P', 'A', 'T', 'H', 'T', 'C', '0', '1'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

const NamedTensor& TensorContainer::get(const std::string& name) const
{
    for (const auto& t : tensors)
        if (t.name == name) return t;
    throw DataError("tensor container: no tensor named '" + name + "'");
}

void write_tensor_container(const fs::path& path, const TensorContainer& c)
{
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + path.string());
    os.write(kMagic, 8);
    binio::put_u32(os, kVersion);
    const std::string meta = c.meta.dump();
    binio::put_u32(os, static_cast<std::uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    binio::put_u32(os, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        std::size_t n = 1;
        for (auto d : t.shape) n *= d;
        if (n != t.data.size()) throw ShapeError("tensor container: '" + t.name + "' data does not match shape");
        binio::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        binio::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) binio::put_u32(os, d);
        binio::put_u8(os, t.trainable ? 1 : 0);
        for (float v : t.data) binio::put_f32(os, v);
    }
    if (!os) throw DataError("failed writing " + path.string());
}

TensorContainer read_tensor_container(const fs::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    const std::string what = "tensor container " + path.string();
    char magic[8];
    binio::read_exact(is, magic, 8, what);
    if (!std::equal(magic, magic + 8, kMagic)) throw DataError(what + ": bad magic");
    if (const auto v = binio::get_u32(is, what); v != kVersion) throw DataError(what + ": unsupported version " + std::to_string(v));
    TensorContainer c;
    std::string meta(binio::get_u32(is, what), '\0');
    binio::read_exact(is, meta.data(), meta.size(), what);
    try {
        c.meta = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": bad metadata: " + e.what());
    }
    const auto n = binio::get_u32(is, what);
    c.tensors.resize(n);
    for (auto& t : c.tensors) {
        t.name.resize(binio::get_u32(is, what));
        binio::read_exact(is, t.name.data(), t.name.size(), what);
        t.shape.resize(binio::get_u32(is, what));
        std::size_t count = 1;
        for (auto& d : t.shape) count *= (d = binio::get_u32(is, what));
        t.trainable = binio::get_u8(is, what) != 0;
        t.data.resize(count);
        for (auto& v : t.data) v = binio::get_f32(is, what);
    }
    return c;
}

void save_checkpoint(const fs::path& path, const CocaModel<float>& model, const Tokenizer& tokenizer,
                     const nlohmann::json& extra)
{
    TensorContainer c;
    c.meta = extra;
    c.meta["kind"] = "checkpoint";
    c.meta["model"] = model.config();
    c.meta["tokenizer"] = tokenizer.to_json();
    model.params().for_each([&](const Parameter<float>& p) {
        c.tensors.push_back({p.name,
                             {static_cast<std::uint32_t>(p.value.rows), static_cast<std::uint32_t>(p.value.cols)},
                             p.value.data,
                             p.trainable});
    });
    write_tensor_container(path, c);
}

LoadedCheckpoint load_checkpoint(const fs::path& path)
{
    auto c = read_tensor_container(path);
    if (c.meta.value("kind", "") != "checkpoint") throw DataError(path.string() + ": not a model checkpoint");
    ModelConfig cfg = c.meta.at("model").get<ModelConfig>();
    ParamStore<float> params;
    for (auto& t : c.tensors) {
        if (t.shape.size() != 2) throw DataError(path.string() + ": tensor '" + t.name + "' is not 2-D");
        params.add(t.name, Tensor<float>(t.shape[0], t.shape[1], std::move(t.data)), t.trainable);
    }
    Tokenizer tok = Tokenizer::from_json(c.meta.at("tokenizer"));
    return {CocaModel<float>(std::move(cfg), std::move(params)), std::move(tok), std::move(c.meta)};
}

}  // namespace melreport
