#include "csdm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "csdm/errors.hpp"

namespace csdm {

namespace {
constexpr char kMagic[] = "CSDMCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;
}  // namespace

uint64_t fnv1a_hash(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void save_checkpoint(const std::string& path, nlohmann::json manifest,
                     std::span<Parameter* const> params) {
    nlohmann::json jp = nlohmann::json::array();
    for (const Parameter* p : params)
        jp.push_back({{"name", p->name}, {"shape", p->value.shape}});
    manifest["params"] = std::move(jp);
    const std::string ms = manifest.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    const uint64_t len = ms.size();
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(ms.data(), static_cast<std::streamsize>(ms.size()));
    for (const Parameter* p : params)
        f.write(reinterpret_cast<const char*>(p->value.v.data()),
                static_cast<std::streamsize>(p->value.v.size() * sizeof(double)));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

nlohmann::json load_checkpoint(const std::string& path,
                               std::span<Parameter* const> params) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    char magic[kMagicLen];
    f.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (!f || std::string(magic, kMagicLen) != kMagic)
        throw IoError("checkpoint: bad magic in " + path);
    uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string ms(len, '\0');
    f.read(ms.data(), static_cast<std::streamsize>(len));
    if (!f) throw IoError("checkpoint: truncated manifest");
    auto manifest = nlohmann::json::parse(ms);

    const auto& jp = manifest.at("params");
    if (jp.size() != params.size())
        throw IoError("checkpoint: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto shape = jp[i].at("shape").get<std::vector<std::size_t>>();
        if (jp[i].at("name").get<std::string>() != params[i]->name ||
            shape != params[i]->value.shape)
            throw IoError("checkpoint: parameter '" + params[i]->name +
                          "' does not match manifest entry " +
                          std::to_string(i));
        f.read(reinterpret_cast<char*>(params[i]->value.v.data()),
               static_cast<std::streamsize>(params[i]->value.v.size() *
                                            sizeof(double)));
        if (!f) throw IoError("checkpoint: truncated blob for " +
                              params[i]->name);
    }
    return manifest;
}

std::vector<char> param_bytes(std::span<Parameter* const> params) {
    std::vector<char> out;
    for (const Parameter* p : params) {
        const char* b = reinterpret_cast<const char*>(p->value.v.data());
        out.insert(out.end(), b, b + p->value.v.size() * sizeof(double));
    }
    return out;
}

}  // namespace csdm
