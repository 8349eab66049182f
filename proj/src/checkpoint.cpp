// SPDX-License-Identifier: Apache-2.0
#include "bugprio/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bugprio/config.hpp"

namespace bugprio {

namespace {

constexpr char kMagic[4] = {'B', 'P', 'C', 'K'};

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

template <typename U>
U get_le(std::string_view in, std::size_t at) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    }
    return v;
}

}  // namespace

std::string serialize_checkpoint(Model<float>& model, Stage stage, const std::string& vocab_hash,
                                 const nlohmann::ordered_json& run) {
    nlohmann::ordered_json header;
    header["stage"] = std::string(to_string(stage));
    header["config"] = encoder_config_to_json(model.config());
    header["vocab_hash"] = vocab_hash;
    header["run"] = run;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, p] : model.named_parameters()) {
        tensors.push_back({{"name", name}, {"shape", p->value.shape()}, {"offset", offset}});
        offset += p->value.size() * sizeof(float);
    }
    header["tensors"] = tensors;
    header["blob_bytes"] = offset;
    const std::string header_text = header.dump();

    std::string out(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, header_text.size());
    out += header_text;
    out.reserve(out.size() + offset);
    for (const auto& [name, p] : model.named_parameters()) {
        for (float v : p->value.values()) {
            put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

Checkpoint parse_checkpoint(std::string_view bytes, std::optional<std::string_view> expected_vocab_hash) {
    constexpr std::size_t kPrefix = sizeof(kMagic) + 4 + 8;
    if (bytes.size() < kPrefix || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("checkpoint: not a checkpoint file (bad magic or truncated prefix)");
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const auto header_len = get_le<std::uint64_t>(bytes, 8);
    if (header_len > bytes.size() - kPrefix) {
        throw CheckpointError("checkpoint: truncated header");
    }
    nlohmann::ordered_json header;
    Checkpoint ck;
    EncoderConfig config;
    try {
        header = nlohmann::ordered_json::parse(bytes.substr(kPrefix, header_len));
        ck.stage = parse_stage(header.at("stage").get<std::string>());
        ck.vocab_hash = header.at("vocab_hash").get<std::string>();
        ck.run = header.value("run", nlohmann::ordered_json::object());
        config = encoder_config_from_json(header.at("config"));
        config.validate();
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("checkpoint: malformed header: ") + e.what());
    }
    if (expected_vocab_hash && *expected_vocab_hash != ck.vocab_hash) {
        throw CheckpointError("checkpoint: vocabulary hash mismatch (checkpoint " + ck.vocab_hash + ", vocabulary " +
                              std::string(*expected_vocab_hash) + ")");
    }

    Rng unused(0);
    ck.model = Model<float>::init(config, unused);
    const auto params = ck.model.named_parameters();
    const nlohmann::ordered_json& tensors = header.at("tensors");
    if (!tensors.is_array() || tensors.size() != params.size()) {
        throw CheckpointError("checkpoint: manifest lists " + std::to_string(tensors.size()) + " tensors, config needs " +
                              std::to_string(params.size()));
    }
    const std::string_view blob = bytes.substr(kPrefix + header_len);
    std::uint64_t expected_offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, p] = params[i];
        const nlohmann::ordered_json& t = tensors[i];
        Shape shape;
        std::uint64_t offset = 0;
        std::string stored_name;
        try {
            stored_name = t.at("name").get<std::string>();
            shape = t.at("shape").get<Shape>();
            offset = t.at("offset").get<std::uint64_t>();
        } catch (const std::exception& e) {
            throw CheckpointError(std::string("checkpoint: malformed manifest entry: ") + e.what());
        }
        if (stored_name != name) {
            throw CheckpointError("checkpoint: tensor " + std::to_string(i) + " is \"" + stored_name + "\", expected \"" +
                                  name + "\"");
        }
        if (shape != p->value.shape()) {
            throw CheckpointError("checkpoint: shape mismatch for " + name + ": stored " + shape_string(shape) +
                                  ", config needs " + shape_string(p->value.shape()));
        }
        if (offset != expected_offset) {
            throw CheckpointError("checkpoint: unexpected offset for " + name);
        }
        expected_offset += p->value.size() * sizeof(float);
    }
    if (header.value("blob_bytes", std::uint64_t{0}) != expected_offset || blob.size() != expected_offset) {
        throw CheckpointError("checkpoint: tensor blob holds " + std::to_string(blob.size()) + " bytes, manifest needs " +
                              std::to_string(expected_offset) + " (truncated or corrupt file)");
    }
    std::size_t at = 0;
    for (const auto& [name, p] : params) {
        for (float& v : p->value.values()) {
            v = std::bit_cast<float>(get_le<std::uint32_t>(blob, at));
            at += 4;
        }
        p->zero_grad();
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, Model<float>& model, Stage stage,
                     const std::string& vocab_hash, const nlohmann::ordered_json& run) {
    const std::string bytes = serialize_checkpoint(model, stage, vocab_hash, run);
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw CheckpointError("checkpoint: cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw CheckpointError("checkpoint: write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::string_view> expected_vocab_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw CheckpointError("checkpoint: cannot read " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str(), expected_vocab_hash);
}

}  // namespace bugprio
