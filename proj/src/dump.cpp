#include "toolgap/dump.hpp"

#include <bit>
#include <cstring>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "toolgap/io.hpp"

namespace toolgap {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'D', '1'};

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

float read_f32_le(const unsigned char* p) { return std::bit_cast<float>(read_u32_le(p)); }

void append_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

void append_f32_le(std::string& out, float f) { append_u32_le(out, std::bit_cast<std::uint32_t>(f)); }

}  // namespace

struct HiddenStateDump::Mapping {
  void* addr = MAP_FAILED;
  std::size_t length = 0;
  ~Mapping() {
    if (addr != MAP_FAILED) ::munmap(addr, length);
  }
};

HiddenStateDump::HiddenStateDump(HiddenStateDump&&) noexcept = default;
HiddenStateDump& HiddenStateDump::operator=(HiddenStateDump&&) noexcept = default;
HiddenStateDump::~HiddenStateDump() = default;

HiddenStateDump HiddenStateDump::open(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw std::runtime_error("cannot open dump " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw std::runtime_error("cannot stat dump " + path.string());
  }
  auto mapping = std::make_unique<Mapping>();
  mapping->length = static_cast<std::size_t>(st.st_size);
  if (mapping->length > 0) mapping->addr = ::mmap(nullptr, mapping->length, PROT_READ, MAP_PRIVATE, fd, 0);
  ::close(fd);
  if (mapping->length < 8 || mapping->addr == MAP_FAILED) throw DumpFormatError(path.string() + ": too short for a dump");

  const auto* bytes = static_cast<const unsigned char*>(mapping->addr);
  if (std::memcmp(bytes, kMagic, 4) != 0) throw DumpFormatError(path.string() + ": bad magic (expected HSD1)");
  const std::size_t hlen = read_u32_le(bytes + 4);
  if (8 + hlen > mapping->length) throw DumpFormatError(path.string() + ": header length exceeds file size");

  HiddenStateDump d;
  nlohmann::ordered_json h;
  try {
    h = nlohmann::ordered_json::parse(std::string_view(reinterpret_cast<const char*>(bytes + 8), hlen));
    d.header_.model = h.at("model").get<std::string>();
    d.header_.dim = h.at("dim").get<std::size_t>();
    d.header_.n_layers = h.at("n_layers").get<std::size_t>();
    d.header_.sample_ids = h.at("sample_ids").get<std::vector<std::string>>();
    d.header_.decision_included = h.value("decision_included", false);
    if (h.value("dtype", "f32") != "f32") throw DumpFormatError(path.string() + ": only dtype f32 is supported");
    const auto positions = h.at("positions").get<std::vector<int>>();
    if (positions.size() != kPositions || positions.front() != -20 || positions.back() != -1)
      throw DumpFormatError(path.string() + ": positions must be -20..-1");
  } catch (const nlohmann::json::exception& e) {
    throw DumpFormatError(path.string() + ": bad header: " + e.what());
  }
  for (const auto& [k, v] : h.items())
    if (k != "model" && k != "dim" && k != "n_layers" && k != "positions" && k != "dtype" && k != "sample_ids" &&
        k != "decision_included")
      d.header_.extra[k] = v;

  for (std::size_t i = 0; i < d.header_.sample_ids.size(); ++i)
    if (!d.index_.emplace(d.header_.sample_ids[i], i).second)
      throw DumpFormatError(path.string() + ": duplicate sample id " + d.header_.sample_ids[i]);

  const std::size_t body_offset = 8 + hlen;
  const std::size_t body_floats = d.samples() * d.header_.floats_per_sample();
  const std::size_t trailer_floats = d.header_.decision_included ? 2 * d.samples() : 0;
  const std::size_t expected = body_offset + 4 * (body_floats + trailer_floats);
  if (mapping->length != expected)
    throw DumpFormatError(path.string() + ": file is " + std::to_string(mapping->length) + " bytes, header implies " +
                          std::to_string(expected));

  const unsigned char* body = bytes + body_offset;
  if constexpr (std::endian::native == std::endian::little) {
    if (reinterpret_cast<std::uintptr_t>(body) % alignof(float) == 0) {
      d.body_ = reinterpret_cast<const float*>(body);
      d.mapping_ = std::move(mapping);
    }
  }
  if (!d.body_) {
    d.owned_body_.resize(body_floats);
    for (std::size_t i = 0; i < body_floats; ++i) d.owned_body_[i] = read_f32_le(body + 4 * i);
    d.body_ = d.owned_body_.data();
  }
  if (d.header_.decision_included) {
    const unsigned char* trailer = body + 4 * body_floats;
    d.decisions_.resize(d.samples());
    for (std::size_t i = 0; i < d.samples(); ++i)
      d.decisions_[i] = {read_f32_le(trailer + 8 * i), read_f32_le(trailer + 8 * i + 4)};
  }
  return d;
}

std::optional<std::size_t> HiddenStateDump::index_of(const std::string& sample_id) const {
  const auto it = index_.find(sample_id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const float> HiddenStateDump::tensor(std::size_t sample) const {
  const auto n = header_.floats_per_sample();
  return {body_ + sample * n, n};
}

std::span<const float> HiddenStateDump::vector(std::size_t sample, std::size_t layer, std::size_t position) const {
  return tensor(sample).subspan((layer * kPositions + position) * header_.dim, header_.dim);
}

std::optional<Decision> HiddenStateDump::decision(std::size_t sample) const {
  if (!header_.decision_included) return std::nullopt;
  return decisions_.at(sample);
}

void write_dump(const std::filesystem::path& path, const DumpHeader& header, std::span<const float> body,
                std::span<const Decision> decisions) {
  if (body.size() != header.sample_ids.size() * header.floats_per_sample())
    throw std::invalid_argument("dump body size does not match header shape");
  if (header.decision_included ? decisions.size() != header.sample_ids.size() : !decisions.empty())
    throw std::invalid_argument("dump decisions must match decision_included");

  nlohmann::ordered_json h;
  h["model"] = header.model;
  h["dim"] = header.dim;
  h["n_layers"] = header.n_layers;
  std::vector<int> positions;
  for (std::size_t p = 0; p < kPositions; ++p) positions.push_back(offset_of(p));
  h["positions"] = positions;
  h["dtype"] = "f32";
  h["sample_ids"] = header.sample_ids;
  h["decision_included"] = header.decision_included;
  for (const auto& [k, v] : header.extra.items()) h[k] = v;
  std::string htext = h.dump();
  while ((8 + htext.size()) % 4 != 0) htext += ' ';

  std::string out;
  out.reserve(8 + htext.size() + 4 * (body.size() + 2 * decisions.size()));
  out.append(kMagic, 4);
  append_u32_le(out, static_cast<std::uint32_t>(htext.size()));
  out += htext;
  for (const float f : body) append_f32_le(out, f);
  for (const auto& d : decisions) {
    append_f32_le(out, static_cast<float>(d.p_tool));
    append_f32_le(out, static_cast<float>(d.p_best_nontool));
  }
  io::write_atomic(path, out);
}

}  // namespace toolgap
