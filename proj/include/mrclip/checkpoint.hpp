#pragma once

// Parameter checkpoint:
//   "MRCT" | version u32 | count u32 |
//   per tensor: name_len u32 | name bytes | rank u32 | dims u32 x rank | f32 LE payload

#include "mrclip/error.hpp"
#include "mrclip/tensor.hpp"
#include "mrclip/util.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mrclip::ad {

inline constexpr std::string_view kCheckpointMagic = "MRCT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor<float> tensor;
};

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    ByteWriter w;
    w.put_bytes(kCheckpointMagic);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.put_bytes(name);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        }
        w.put_array<float>(t.data());
    }
    return w.take();
}

inline std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    require(r.get_string(4) == kCheckpointMagic, ErrorCode::BadFormat, "not an MRCT checkpoint");
    const auto version = r.get<std::uint32_t>();
    require(version == kCheckpointVersion, ErrorCode::BadFormat, "unsupported checkpoint version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.get_string(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        require(rank >= 1 && rank <= 8, ErrorCode::BadFormat, "tensor '" + nt.name + "' has rank " + std::to_string(rank));
        Shape shape;
        for (std::uint32_t k = 0; k < rank; ++k) {
            shape.push_back(r.get<std::uint32_t>());
            require(shape.back() > 0, ErrorCode::BadFormat, "zero dimension in '" + nt.name + "'");
        }
        std::vector<float> data(shape_size(shape));
        require(data.size() * sizeof(float) <= r.remaining(), ErrorCode::BadFormat, "truncated payload for '" + nt.name + "'");
        r.get_array<float>(data);
        nt.tensor = Tensor<float>(std::move(shape), std::move(data));
        out.push_back(std::move(nt));
    }
    require(r.remaining() == 0, ErrorCode::BadFormat, "trailing bytes after checkpoint");
    return out;
}

} // namespace mrclip::ad
