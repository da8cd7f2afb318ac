#include "metacount/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace metacount::pgm {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!tok.empty()) return tok;
    } else {
      tok.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  if (tok.empty()) throw PgmError(path + ": truncated header");
  return tok;
}

unsigned long header_number(std::istream& in, const std::string& path) {
  const std::string tok = header_token(in, path);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(ch); })) {
    throw PgmError(path + ": malformed header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Tensor read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError(path + ": cannot open");
  const std::string magic = header_token(in, path);
  if (magic != "P5" && magic != "P2") throw PgmError(path + ": not a graymap (magic " + magic + ")");
  const unsigned long w = header_number(in, path);
  const unsigned long h = header_number(in, path);
  const unsigned long maxval = header_number(in, path);
  if (w == 0 || h == 0) throw PgmError(path + ": empty image");
  if (maxval == 0 || maxval > 65535) throw PgmError(path + ": unsupported maxval");

  Tensor img({h, w});
  const double scale = 1.0 / static_cast<double>(maxval);
  const std::size_t n = h * w;
  if (magic == "P5") {
    const std::size_t bytes = maxval < 256 ? 1 : 2;
    std::vector<unsigned char> buf(n * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
      throw PgmError(path + ": truncated pixel data");
    }
    for (std::size_t i = 0; i < n; ++i) {
      const unsigned v = bytes == 1 ? buf[i] : (unsigned(buf[2 * i]) << 8) | buf[2 * i + 1];
      if (v > maxval) throw PgmError(path + ": sample exceeds maxval");
      img[i] = static_cast<double>(v) * scale;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned long v = 0;
      if (!(in >> v)) throw PgmError(path + ": truncated pixel data");
      if (v > maxval) throw PgmError(path + ": sample exceeds maxval");
      img[i] = static_cast<double>(v) * scale;
    }
  }
  return img;
}

void write(const std::string& path, const Tensor& image, unsigned maxval) {
  if (image.rank() != 2) throw PgmError(path + ": image must be [H,W]");
  if (maxval != 255 && maxval != 65535) throw PgmError(path + ": maxval must be 255 or 65535");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PgmError(path + ": cannot write");
  out << "P5\n" << image.dim(1) << ' ' << image.dim(0) << '\n' << maxval << '\n';
  std::vector<unsigned char> buf;
  buf.reserve(image.size() * (maxval > 255 ? 2 : 1));
  for (double v : image.data()) {
    const double c = std::clamp(v, 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(c * maxval));
    if (maxval > 255) buf.push_back(static_cast<unsigned char>(q >> 8));
    buf.push_back(static_cast<unsigned char>(q & 0xff));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw PgmError(path + ": write failed");
}

}  // namespace metacount::pgm
