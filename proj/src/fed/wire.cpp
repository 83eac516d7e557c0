#include "fedshot/fed/wire.hpp"

#include <zlib.h>

#include "fedshot/bytes.hpp"

namespace fedshot {

namespace {

uint32_t frame_crc(const uint8_t* data, size_t n) {
  return static_cast<uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

std::vector<uint8_t> serialize_message(const RoundMessage& msg) {
  ByteWriter w;
  w.str("F2LC");
  w.u16(kWireVersion);
  w.u8(static_cast<uint8_t>(msg.kind));
  w.u32(msg.round);
  w.u16(msg.client_id);
  w.u32(msg.beta);
  w.u32(static_cast<uint32_t>(msg.params.entries.size()));
  for (const auto& e : msg.params.entries) {
    w.u16(static_cast<uint16_t>(e.name.size()));
    w.str(e.name);
    w.u8(static_cast<uint8_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<uint32_t>(d));
    for (float v : e.values) w.f32(v);
  }
  auto frame = w.take();
  const uint32_t crc = frame_crc(frame.data(), frame.size());
  for (int i = 0; i < 4; ++i) frame.push_back(static_cast<uint8_t>(crc >> (8 * i)));
  return frame;
}

RoundMessage deserialize_message(const std::vector<uint8_t>& bytes) {
  // structural parse first so truncation is reported as such, then the CRC
  ByteReader r(bytes.data(), bytes.size());
  if (r.remaining() < 4 || r.str(4) != "F2LC") throw BadMagic("frame lacks F2LC magic");
  const uint16_t version = r.u16();
  if (version != kWireVersion)
    throw VersionMismatch("frame version " + std::to_string(version) + ", expected " +
                          std::to_string(kWireVersion));

  RoundMessage msg;
  const uint8_t kind = r.u8();
  if (kind < 1 || kind > 4)
    throw TruncatedPayload("unknown message kind " + std::to_string(kind));
  msg.kind = static_cast<MessageKind>(kind);
  msg.round = r.u32();
  msg.client_id = r.u16();
  msg.beta = r.u32();
  const uint32_t tensor_count = r.u32();
  msg.params.entries.reserve(tensor_count);
  for (uint32_t t = 0; t < tensor_count; ++t) {
    ParamEntry e;
    const uint16_t name_len = r.u16();
    e.name = r.str(name_len);
    const uint8_t ndim = r.u8();
    int64_t numel = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      e.shape.push_back(static_cast<int>(r.u32()));
      numel *= e.shape.back();
    }
    e.values.resize(static_cast<size_t>(numel));
    for (auto& v : e.values) v = r.f32();
    msg.params.entries.push_back(std::move(e));
  }
  if (r.remaining() != 4)
    throw TruncatedPayload("frame length does not match the declared payload (" +
                           std::to_string(r.remaining()) + " trailing bytes before CRC)");
  const size_t body = bytes.size() - 4;
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= static_cast<uint32_t>(bytes[body + i]) << (8 * i);
  if (stored != frame_crc(bytes.data(), body)) throw ChecksumMismatch("frame CRC mismatch");
  return msg;
}

}  // namespace fedshot
