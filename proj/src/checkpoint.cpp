#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "metacount/nn.hpp"

namespace metacount::nn {

namespace {

constexpr const char* kMagic = "metacount-checkpoint 1";

std::string hex_double(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

void put_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

struct TensorEntry {
  std::string name;
  Shape shape;
  std::size_t offset;
};

std::string shape_csv(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& s) {
  Shape out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

[[noreturn]] void bad(const std::string& what) {
  throw std::runtime_error("checkpoint: " + what);
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params) {
  std::ostringstream head;
  head << kMagic << '\n';
  head << "config in_channels=" << params.config.in_channels
       << " init_std=" << hex_double(params.config.init_std) << " seed=" << params.config.seed
       << '\n';
  for (const auto& l : params.config.extractor) {
    head << "extractor out=" << l.out_channels << " kernel=" << l.kernel << " stride=" << l.stride
         << '\n';
  }
  for (const auto& l : params.config.estimator) {
    head << "estimator out=" << l.out_channels << " kernel=" << l.kernel
         << " dilation=" << l.dilation << '\n';
  }
  std::string payload;
  auto emit = [&](const std::string& name, const Tensor& t) {
    head << "tensor " << name << ' ' << shape_csv(t.shape()) << ' ' << payload.size() << '\n';
    for (double v : t.data()) put_le(payload, v);
  };
  for (std::size_t i = 0; i < params.extractor.size(); ++i) {
    emit("extractor." + std::to_string(i) + ".weight", params.extractor[i].weight);
    emit("extractor." + std::to_string(i) + ".bias", params.extractor[i].bias);
  }
  for (std::size_t i = 0; i < params.estimator.size(); ++i) {
    emit("estimator." + std::to_string(i) + ".weight", params.estimator[i].weight);
    emit("estimator." + std::to_string(i) + ".bias", params.estimator[i].bias);
  }
  head << "payload " << payload.size() << '\n' << "end\n";
  return head.str() + payload;
}

ModelParams deserialize_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) bad("truncated header");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };
  if (next_line() != kMagic) bad("bad magic line");

  NetConfig cfg;
  std::vector<TensorEntry> entries;
  std::size_t payload_size = 0;
  bool have_config = false;
  for (;;) {
    std::string line = next_line();
    if (line == "end") break;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    auto field = [&](const char* key) -> std::string {
      std::string tok;
      if (!(is >> tok)) bad("missing field " + std::string(key) + " in '" + line + "'");
      const std::string prefix = std::string(key) + "=";
      if (tok.rfind(prefix, 0) != 0) bad("expected " + prefix + " in '" + line + "'");
      return tok.substr(prefix.size());
    };
    if (kind == "config") {
      cfg.in_channels = std::stoull(field("in_channels"));
      cfg.init_std = std::strtod(field("init_std").c_str(), nullptr);
      cfg.seed = std::stoull(field("seed"));
      have_config = true;
    } else if (kind == "extractor") {
      ExtractorLayerSpec l;
      l.out_channels = std::stoull(field("out"));
      l.kernel = std::stoull(field("kernel"));
      l.stride = std::stoull(field("stride"));
      cfg.extractor.push_back(l);
    } else if (kind == "estimator") {
      EstimatorLayerSpec l;
      l.out_channels = std::stoull(field("out"));
      l.kernel = std::stoull(field("kernel"));
      l.dilation = std::stoull(field("dilation"));
      cfg.estimator.push_back(l);
    } else if (kind == "tensor") {
      TensorEntry e;
      std::string shape;
      if (!(is >> e.name >> shape >> e.offset)) bad("malformed tensor line '" + line + "'");
      e.shape = parse_shape(shape);
      entries.push_back(std::move(e));
    } else if (kind == "payload") {
      if (!(is >> payload_size)) bad("malformed payload line");
    } else {
      bad("unknown header record '" + kind + "'");
    }
  }
  if (!have_config) bad("missing config record");
  if (bytes.size() - pos != payload_size) bad("payload size mismatch");

  ModelParams p = init_model(cfg);
  std::vector<Tensor> tensors;
  auto expected = p.all_tensors();
  if (entries.size() != expected.size()) bad("tensor count does not match config");
  const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const std::size_t n = shape_numel(e.shape);
    if (e.offset + 8 * n > payload_size) bad("tensor " + e.name + " overruns payload");
    std::vector<double> data(n);
    for (std::size_t k = 0; k < n; ++k) data[k] = get_le(base + e.offset + 8 * k);
    tensors.emplace_back(e.shape, std::move(data));
  }
  return p.with_all(tensors);
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace metacount::nn
