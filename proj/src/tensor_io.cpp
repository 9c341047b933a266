#include "tancount/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace tancount {

namespace {

constexpr char kMagic[4] = {'T', 'A', 'N', '1'};

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

template <typename E, typename T>
std::vector<T> read_payload(std::istream& is, uint64_t n) {
  std::vector<E> raw(n);
  is.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(n * sizeof(E)));
  if (!is) throw std::runtime_error("tensor load: truncated payload");
  std::vector<T> out(n);
  for (uint64_t i = 0; i < n; ++i) out[i] = static_cast<T>(raw[i]);
  return out;
}

}  // namespace

template <typename T>
void save_tensor(const Tensor<T>& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("tensor save: cannot open " + path.string());
  os.write(kMagic, 4);
  unsigned char prec = sizeof(T);
  os.write(reinterpret_cast<const char*>(&prec), 1);
  put_u64(os, static_cast<uint64_t>(t.rank()));
  for (int64_t e : t.shape()) put_u64(os, static_cast<uint64_t>(e));
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("tensor save: write failed for " +
                                    path.string());
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("tensor load: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("tensor load: bad magic in " + path.string());
  unsigned char prec = 0;
  is.read(reinterpret_cast<char*>(&prec), 1);
  uint64_t rank = get_u64(is);
  if (rank > 8) throw std::runtime_error("tensor load: implausible rank");
  std::vector<int64_t> shape(rank);
  uint64_t n = 1;
  for (uint64_t i = 0; i < rank; ++i) {
    uint64_t e = get_u64(is);
    shape[i] = static_cast<int64_t>(e);
    n *= e;
  }
  std::vector<T> data;
  if (prec == 4) {
    data = read_payload<float, T>(is, n);
  } else if (prec == 8) {
    data = read_payload<double, T>(is, n);
  } else {
    throw std::runtime_error("tensor load: unknown precision tag " +
                             std::to_string(int(prec)));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template void save_tensor<float>(const Tensor<float>&,
                                 const std::filesystem::path&);
template void save_tensor<double>(const Tensor<double>&,
                                  const std::filesystem::path&);
template Tensor<float> load_tensor<float>(const std::filesystem::path&);
template Tensor<double> load_tensor<double>(const std::filesystem::path&);

}  // namespace tancount
