// SPDX-License-Identifier: Apache-2.0
#include "hisam/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "hisam/errors.hpp"

using ojson = nlohmann::ordered_json;

namespace hisam {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'C', 'K'};

std::string shape_string(const std::vector<int64_t>& shape)
{
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i)
        s += (i ? ", " : "") + std::to_string(shape[i]);
    return s + "]";
}

} // namespace

void write_archive(const std::filesystem::path& path, ojson manifest,
                   const std::vector<std::pair<std::string, torch::Tensor>>& tensors)
{
    ojson entries = ojson::array();
    int64_t offset = 0;
    std::vector<torch::Tensor> contiguous;
    for (const auto& [name, t] : tensors) {
        auto c = t.detach().to(torch::kFloat).contiguous();
        entries.push_back({{"name", name}, {"shape", c.sizes().vec()}, {"offset", offset}});
        offset += c.numel() * int64_t(sizeof(float));
        contiguous.push_back(std::move(c));
    }
    manifest["format_version"] = kCheckpointVersion;
    manifest["tensors"] = std::move(entries);
    const std::string text = manifest.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw DataError("cannot write " + tmp);
        const uint32_t version = kCheckpointVersion;
        const uint64_t len = text.size();
        out.write(kMagic, 4);
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& c : contiguous)
            out.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
                      static_cast<std::streamsize>(c.numel() * sizeof(float)));
        if (!out)
            throw DataError("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open checkpoint " + path.string());
    char magic[4];
    uint32_t version = 0;
    uint64_t len = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError(path.string() + " is not a checkpoint");
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in)
        throw DataError("truncated checkpoint manifest in " + path.string());

    Archive ar;
    try {
        ar.manifest = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    const auto data_start = in.tellg();
    for (const auto& e : ar.manifest.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<std::vector<int64_t>>();
        auto t = torch::empty(shape, torch::kFloat);
        in.seekg(data_start + std::streamoff(e.at("offset").get<int64_t>()));
        in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!in)
            throw DataError("truncated tensor '" + name + "' in " + path.string());
        ar.tensors.emplace(name, std::move(t));
    }
    return ar;
}

void to_json(nlohmann::json& j, const ModelOptions& o)
{
    j = {{"use_token_decoder", o.use_token_decoder},
         {"token_source", o.token_source == TokenSource::SpatialAttention ? "spatial_attention" : "vanilla_embedding"},
         {"use_hr", o.use_hr}};
}

void from_json(const nlohmann::json& j, ModelOptions& o)
{
    ModelOptions d;
    o.use_token_decoder = j.value("use_token_decoder", d.use_token_decoder);
    o.use_hr = j.value("use_hr", d.use_hr);
    const auto src = j.value("token_source", std::string("spatial_attention"));
    if (src == "spatial_attention")
        o.token_source = TokenSource::SpatialAttention;
    else if (src == "vanilla_embedding")
        o.token_source = TokenSource::VanillaEmbedding;
    else
        throw ConfigError("unknown token_source '" + src + "'");
}

std::vector<std::pair<std::string, torch::Tensor>> model_state(const HiSamImpl& model)
{
    std::vector<std::pair<std::string, torch::Tensor>> out;
    for (const auto& p : model.named_parameters(true))
        out.emplace_back(p.key(), p.value());
    for (const auto& b : model.named_buffers(true))
        out.emplace_back(b.key(), b.value());
    return out;
}

ojson model_manifest(const HiSamImpl& model)
{
    ojson m;
    m["profile"] = nlohmann::json(model.profile);
    m["options"] = nlohmann::json(model.options);
    m["modules"] = {"encoder", "prompt_encoder", "self_prompt", "s_decoder", "h_decoder"};
    return m;
}

void load_model_state(HiSamImpl& model, const Archive& archive)
{
    torch::NoGradGuard guard;
    for (auto& [name, t] : model_state(model)) {
        auto it = archive.tensors.find(name);
        if (it == archive.tensors.end())
            throw ConfigError("checkpoint lacks tensor '" + name + "'");
        if (it->second.sizes() != t.sizes())
            throw ConfigError("shape mismatch for '" + name + "': model " + shape_string(t.sizes().vec()) +
                              ", checkpoint " + shape_string(it->second.sizes().vec()));
        t.copy_(it->second);
    }
}

void save_model(const std::filesystem::path& path, const HiSamImpl& model, int64_t step)
{
    auto manifest = model_manifest(model);
    manifest["step"] = step;
    write_archive(path, std::move(manifest), model_state(model));
}

HiSam model_from_archive(const Archive& archive)
{
    ScaleProfile profile;
    ModelOptions options;
    try {
        profile = nlohmann::json(archive.manifest.at("profile")).get<ScaleProfile>();
        options = nlohmann::json(archive.manifest.at("options")).get<ModelOptions>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("checkpoint manifest: ") + e.what());
    }
    HiSam model(profile, options);
    load_model_state(*model, archive);
    apply_freeze(*model);
    return model;
}

HiSam load_model(const std::filesystem::path& path)
{
    return model_from_archive(read_archive(path));
}

} // namespace hisam
