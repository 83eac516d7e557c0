#pragma once

#include <cstdint>
#include <vector>

#include "fedshot/fed/params.hpp"

namespace fedshot {

// Frame layout, little-endian: magic "F2LC", version u16, kind u8, round u32,
// client_id u16, beta u32, tensor_count u32; per tensor name_len u16, name,
// ndim u8, dims u32 each, values f32; trailing CRC32 of the frame.

constexpr uint16_t kWireVersion = 1;

enum class MessageKind : uint8_t { Hello = 1, Upload = 2, Global = 3, Ack = 4 };

struct RoundMessage {
  MessageKind kind = MessageKind::Hello;
  uint32_t round = 0;
  uint16_t client_id = 0;
  uint32_t beta = 0;
  ParameterSet params;
};

std::vector<uint8_t> serialize_message(const RoundMessage& msg);
RoundMessage deserialize_message(const std::vector<uint8_t>& bytes);

}  // namespace fedshot
