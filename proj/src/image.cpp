#include "tancount/image.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tancount {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32_be(const uint8_t* p) {
  return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) |
         (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const uint8_t* data, size_t len) {
  put_u32_be(out, static_cast<uint32_t>(len));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (len) out.insert(out.end(), data, data + len);
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + start, static_cast<uInt>(4 + len)));
  put_u32_be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

void unfilter(std::vector<uint8_t>& raw, int64_t h, int64_t stride, int bpp) {
  // raw holds h scanlines of (1 filter byte + stride payload).
  for (int64_t y = 0; y < h; ++y) {
    uint8_t* line = raw.data() + y * (stride + 1);
    uint8_t filter = line[0];
    uint8_t* cur = line + 1;
    const uint8_t* prev = y > 0 ? raw.data() + (y - 1) * (stride + 1) + 1 : nullptr;
    switch (filter) {
      case 0:
        break;
      case 1:
        for (int64_t i = bpp; i < stride; ++i) cur[i] = uint8_t(cur[i] + cur[i - bpp]);
        break;
      case 2:
        if (prev)
          for (int64_t i = 0; i < stride; ++i) cur[i] = uint8_t(cur[i] + prev[i]);
        break;
      case 3:
        for (int64_t i = 0; i < stride; ++i) {
          int left = i >= bpp ? cur[i - bpp] : 0;
          int up = prev ? prev[i] : 0;
          cur[i] = uint8_t(cur[i] + (left + up) / 2);
        }
        break;
      case 4:
        for (int64_t i = 0; i < stride; ++i) {
          int left = i >= bpp ? cur[i - bpp] : 0;
          int up = prev ? prev[i] : 0;
          int ul = (prev && i >= bpp) ? prev[i - bpp] : 0;
          cur[i] = uint8_t(cur[i] + paeth(left, up, ul));
        }
        break;
      default:
        throw std::runtime_error("png: unknown filter type " +
                                 std::to_string(filter));
    }
  }
}

std::vector<uint8_t> zlib_inflate(const uint8_t* data, size_t len,
                                  size_t expected) {
  std::vector<uint8_t> out(expected);
  uLongf out_len = static_cast<uLongf>(expected);
  int rc = uncompress(out.data(), &out_len, data, static_cast<uLong>(len));
  if (rc != Z_OK || out_len != expected)
    throw std::runtime_error("png: inflate failed");
  return out;
}

std::vector<uint8_t> zlib_deflate(const uint8_t* data, size_t len) {
  uLongf bound = compressBound(static_cast<uLong>(len));
  std::vector<uint8_t> out(bound);
  int rc = compress2(out.data(), &bound, data, static_cast<uLong>(len), 6);
  if (rc != Z_OK) throw std::runtime_error("png: deflate failed");
  out.resize(bound);
  return out;
}

constexpr uint8_t kSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

}  // namespace

ImageU8 read_png(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("png: cannot open " + path.string());
  std::vector<uint8_t> file((std::istreambuf_iterator<char>(is)),
                            std::istreambuf_iterator<char>());
  if (file.size() < 8 || std::memcmp(file.data(), kSig, 8) != 0)
    throw std::runtime_error("png: bad signature in " + path.string());

  int64_t w = 0, h = 0;
  int bit_depth = 0, color_type = 0, interlace = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_end = false;
  while (pos + 8 <= file.size() && !seen_end) {
    uint32_t len = get_u32_be(file.data() + pos);
    if (pos + 12 + len > file.size())
      throw std::runtime_error("png: truncated chunk in " + path.string());
    const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
    const uint8_t* data = file.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = get_u32_be(data);
      h = get_u32_be(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      interlace = data[12];
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_end = true;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0) throw std::runtime_error("png: missing IHDR");
  if (bit_depth != 8)
    throw std::runtime_error("png: only 8-bit depth supported");
  if (interlace != 0)
    throw std::runtime_error("png: interlaced images not supported");
  int src_c;
  switch (color_type) {
    case 0: src_c = 1; break;  // gray
    case 2: src_c = 3; break;  // rgb
    case 4: src_c = 2; break;  // gray + alpha
    case 6: src_c = 4; break;  // rgba
    default:
      throw std::runtime_error("png: unsupported color type " +
                               std::to_string(color_type));
  }
  int64_t stride = w * src_c;
  auto raw = zlib_inflate(idat.data(), idat.size(),
                          static_cast<size_t>(h * (stride + 1)));
  unfilter(raw, h, stride, src_c);

  ImageU8 img;
  img.h = h;
  img.w = w;
  img.c = (src_c == 1 || src_c == 2) ? 1 : 3;
  img.pix.resize(static_cast<size_t>(h * w * img.c));
  for (int64_t y = 0; y < h; ++y) {
    const uint8_t* line = raw.data() + y * (stride + 1) + 1;
    uint8_t* dst = img.pix.data() + y * w * img.c;
    for (int64_t x = 0; x < w; ++x)
      for (int64_t ch = 0; ch < img.c; ++ch)
        dst[x * img.c + ch] = line[x * src_c + ch];
  }
  return img;
}

PngHeader read_png_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("png: cannot open " + path.string());
  uint8_t buf[8 + 8 + 13];
  is.read(reinterpret_cast<char*>(buf), sizeof(buf));
  if (!is || std::memcmp(buf, kSig, 8) != 0 ||
      std::memcmp(buf + 12, "IHDR", 4) != 0)
    throw std::runtime_error("png: bad header in " + path.string());
  PngHeader h;
  h.w = get_u32_be(buf + 16);
  h.h = get_u32_be(buf + 20);
  int color_type = buf[25];
  h.c = (color_type == 0 || color_type == 4) ? 1 : 3;
  return h;
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  check(img.c == 1 || img.c == 3, "png: channels must be 1 or 3");
  check(img.h > 0 && img.w > 0 &&
            img.pix.size() == static_cast<size_t>(img.h * img.w * img.c),
        "png: malformed image buffer");
  int64_t stride = img.w * img.c;
  std::vector<uint8_t> raw(static_cast<size_t>(img.h * (stride + 1)));
  for (int64_t y = 0; y < img.h; ++y) {
    raw[static_cast<size_t>(y * (stride + 1))] = 0;  // filter: none
    std::memcpy(raw.data() + y * (stride + 1) + 1, img.pix.data() + y * stride,
                static_cast<size_t>(stride));
  }
  auto compressed = zlib_deflate(raw.data(), raw.size());

  std::vector<uint8_t> out(kSig, kSig + 8);
  uint8_t ihdr[13];
  ihdr[0] = uint8_t(img.w >> 24); ihdr[1] = uint8_t(img.w >> 16);
  ihdr[2] = uint8_t(img.w >> 8);  ihdr[3] = uint8_t(img.w);
  ihdr[4] = uint8_t(img.h >> 24); ihdr[5] = uint8_t(img.h >> 16);
  ihdr[6] = uint8_t(img.h >> 8);  ihdr[7] = uint8_t(img.h);
  ihdr[8] = 8;                          // bit depth
  ihdr[9] = img.c == 1 ? 0 : 2;         // gray / rgb
  ihdr[10] = ihdr[11] = ihdr[12] = 0;   // deflate, adaptive, no interlace
  append_chunk(out, "IHDR", ihdr, 13);
  append_chunk(out, "IDAT", compressed.data(), compressed.size());
  append_chunk(out, "IEND", nullptr, 0);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("png: cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(out.data()),
           static_cast<std::streamsize>(out.size()));
  if (!os) throw std::runtime_error("png: write failed for " + path.string());
}

Tensor<float> image_to_tensor(const ImageU8& img, bool replicate_gray) {
  int64_t c = (img.c == 1 && replicate_gray) ? 3 : img.c;
  Tensor<float> t({img.h, img.w, c});
  const float inv = 1.0f / 255.0f;
  for (int64_t y = 0; y < img.h; ++y) {
    for (int64_t x = 0; x < img.w; ++x) {
      float* dst = t.data() + (y * img.w + x) * c;
      const uint8_t* src = img.pix.data() + (y * img.w + x) * img.c;
      if (c == img.c) {
        for (int64_t ch = 0; ch < c; ++ch) dst[ch] = src[ch] * inv;
      } else {
        float v = src[0] * inv;
        dst[0] = dst[1] = dst[2] = v;
      }
    }
  }
  return t;
}

ImageU8 heatmap_u8(const Tensor<float>& grid) {
  check(grid.rank() == 2, "heatmap: grid must be HxW");
  float mx = 0.0f;
  for (int64_t i = 0; i < grid.size(); ++i) mx = std::max(mx, grid[i]);
  ImageU8 img;
  img.h = grid.extent(0);
  img.w = grid.extent(1);
  img.c = 1;
  img.pix.resize(static_cast<size_t>(img.h * img.w));
  float norm = mx > 0.0f ? 255.0f / mx : 0.0f;
  for (int64_t i = 0; i < grid.size(); ++i) {
    float v = grid[i] > 0.0f ? grid[i] * norm : 0.0f;
    img.pix[static_cast<size_t>(i)] = static_cast<uint8_t>(
        std::min(255.0f, v));
  }
  return img;
}

}  // namespace tancount
