// SPDX-License-Identifier: Apache-2.0

#include "advlora/checkpoint.hpp"

#include "advlora/binary_io.hpp"
#include "advlora/error.hpp"

namespace advlora::checkpoint {

namespace {

constexpr io::Magic kModelMagic = {'A', 'D', 'V', 'C'};
constexpr io::Magic kAdapterMagic = {'A', 'D', 'V', 'A'};
constexpr io::Magic kProbeMagic = {'A', 'D', 'V', 'P'};
constexpr std::uint16_t kVersion = 1;

void write_stack(io::BinaryWriter& w, const model::EncoderStack& stack) {
  w.u8(stack.frozen ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(stack.layers.size()));
  for (const auto& layer : stack.layers) {
    w.u8(layer.apply_tanh ? 1 : 0);
    w.tensor(layer.weight);
    w.tensor(layer.bias);
  }
}

model::EncoderStack read_stack(io::BinaryReader& r) {
  model::EncoderStack stack;
  stack.frozen = r.u8() != 0;
  const std::uint32_t n = r.u32();
  if (n == 0 || n > 1024) r.fail("implausible layer count " + std::to_string(n));
  for (std::uint32_t i = 0; i < n; ++i) {
    model::DenseLayer layer;
    layer.apply_tanh = r.u8() != 0;
    layer.weight = r.tensor();
    layer.bias = r.tensor();
    stack.layers.push_back(std::move(layer));
  }
  try {
    stack.validate();
  } catch (const Error& e) {
    r.fail(std::string("invalid encoder stack: ") + e.what());
  }
  return stack;
}

void write_adapters(io::BinaryWriter& w, const std::vector<adapter::LoraAdapter>& adapters) {
  w.u32(static_cast<std::uint32_t>(adapters.size()));
  for (const auto& a : adapters) {
    w.u8(static_cast<std::uint8_t>(a.target.modality));
    w.u32(a.target.index);
    w.u8(static_cast<std::uint8_t>(a.init_kind));
    w.u8(a.alpha_trainable ? 1 : 0);
    w.u64(a.rank());
    w.tensor(a.a);
    w.tensor(a.b);
    w.f64(a.alpha.item());
  }
}

std::vector<adapter::LoraAdapter> read_adapters(io::BinaryReader& r) {
  const std::uint32_t n = r.u32();
  std::vector<adapter::LoraAdapter> adapters;
  for (std::uint32_t i = 0; i < n; ++i) {
    adapter::LoraAdapter a;
    const std::uint8_t modality = r.u8();
    if (modality > 1) r.fail("unknown modality " + std::to_string(modality));
    a.target.modality = static_cast<Modality>(modality);
    a.target.index = r.u32();
    const std::uint8_t kind = r.u8();
    if (kind > 3) r.fail("unknown adapter init kind " + std::to_string(kind));
    a.init_kind = static_cast<adapter::InitKind>(kind);
    a.alpha_trainable = r.u8() != 0;
    const std::uint64_t rank = r.u64();
    a.a = r.tensor();
    a.b = r.tensor();
    a.alpha = Tensor::scalar(r.f64());
    try {
      a.validate();
    } catch (const Error& e) {
      r.fail(std::string("invalid adapter: ") + e.what());
    }
    if (a.rank() != rank) r.fail("adapter rank field disagrees with factor shapes");
    adapters.push_back(std::move(a));
  }
  return adapters;
}

}  // namespace

std::vector<std::uint8_t> encode(const model::AdaptedModel& model) {
  io::BinaryWriter out;
  {
    io::BinaryWriter payload;
    write_stack(payload, model.backbone.vision);
    write_stack(payload, model.backbone.text);
    io::write_chunk(out, kModelMagic, kVersion, payload);
  }
  if (!model.adapters.empty()) {
    io::BinaryWriter payload;
    write_adapters(payload, model.adapters);
    io::write_chunk(out, kAdapterMagic, kVersion, payload);
  }
  if (model.vision_probe || model.text_probe) {
    io::BinaryWriter payload;
    payload.u8(static_cast<std::uint8_t>((model.vision_probe ? 1 : 0) | (model.text_probe ? 2 : 0)));
    for (const auto* head : {&model.vision_probe, &model.text_probe}) {
      if (!*head) continue;
      payload.tensor((*head)->weight);
      payload.tensor((*head)->bias);
    }
    io::write_chunk(out, kProbeMagic, kVersion, payload);
  }
  return out.buffer();
}

model::AdaptedModel decode(std::span<const std::uint8_t> bytes) {
  const auto chunks = io::read_chunks(bytes);
  if (chunks.empty() || chunks.front().magic != kModelMagic)
    throw FormatError("model file must start with an ADVC chunk", 0);
  model::AdaptedModel model;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& chunk = chunks[i];
    const std::uint64_t header_at = chunk.payload_offset - 14;
    if (chunk.version != kVersion)
      throw FormatError("unsupported " + io::magic_string(chunk.magic) + " version", header_at + 4);
    io::BinaryReader r(chunk.payload, chunk.payload_offset);
    if (chunk.magic == kModelMagic) {
      if (i != 0) throw FormatError("duplicate ADVC chunk", header_at);
      model.backbone.vision = read_stack(r);
      model.backbone.text = read_stack(r);
    } else if (chunk.magic == kAdapterMagic) {
      model.adapters = read_adapters(r);
    } else if (chunk.magic == kProbeMagic) {
      const std::uint8_t mask = r.u8();
      if (mask & 1) model.vision_probe = model::ProbeHead{r.tensor(), r.tensor()};
      if (mask & 2) model.text_probe = model::ProbeHead{r.tensor(), r.tensor()};
    } else {
      throw FormatError("unknown chunk " + io::magic_string(chunk.magic), header_at);
    }
    if (!r.at_end()) r.fail("trailing bytes in " + io::magic_string(chunk.magic) + " chunk");
  }
  try {
    model.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent model file: ") + e.what(), 0);
  }
  return model;
}

void save(const model::AdaptedModel& model, const std::filesystem::path& path) { io::write_file(path, encode(model)); }

model::AdaptedModel load(const std::filesystem::path& path) { return decode(io::read_file(path)); }

}  // namespace advlora::checkpoint
