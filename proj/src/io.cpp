#include "wmodl/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace wmodl {

namespace {

class ByteWriter
{
public:
  template <typename T>
  void put(T v)
  {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw, raw + sizeof(T));
    }
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }

  void put_bytes(std::string const &s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  void put_string(std::string const &s)
  {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }

  void save(std::filesystem::path const &path) const
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
      throw IoError("cannot open " + path.string() + " for writing");
    }
    f.write(reinterpret_cast<char const *>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!f) {
      throw IoError("write failed for " + path.string());
    }
  }

private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader
{
public:
  ByteReader(std::vector<std::uint8_t> data, std::string name)
    : data_(std::move(data))
    , name_(std::move(name))
  {
  }

  template <typename T>
  T get()
  {
    need(sizeof(T), "field");
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(raw, raw + sizeof(T));
    }
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }

  std::string get_bytes(std::size_t n)
  {
    need(n, "bytes");
    std::string s(reinterpret_cast<char const *>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return get_bytes(get<std::uint32_t>()); }

  void need(std::size_t n, char const *what) const
  {
    if (data_.size() - pos_ < n) {
      throw CorruptFile(name_ + ": truncated " + what + ", expected " + std::to_string(pos_ + n) +
                        " bytes, file has " + std::to_string(data_.size()));
    }
  }

  std::size_t pos() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  std::string const &name() const { return name_; }

private:
  std::vector<std::uint8_t> data_;
  std::string name_;
  std::size_t pos_ = 0;
};

void write_header(ByteWriter &w, DType t, std::vector<std::uint32_t> const &dims, std::vector<std::uint8_t> const &dom)
{
  w.put_bytes("WMDL");
  w.put<std::uint16_t>(kVolumeFormatVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(t));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) {
    w.put<std::uint32_t>(d);
  }
  for (auto d : dom) {
    w.put<std::uint8_t>(d);
  }
}

std::vector<std::uint32_t> dims3(Dims const &d)
{
  return {static_cast<std::uint32_t>(d.nx), static_cast<std::uint32_t>(d.ny), static_cast<std::uint32_t>(d.nz)};
}

template <typename S>
std::vector<std::uint8_t> domains3(Volume<S> const &v)
{
  return {static_cast<std::uint8_t>(v.domain(0)), static_cast<std::uint8_t>(v.domain(1)),
          static_cast<std::uint8_t>(v.domain(2))};
}

void put_samples(ByteWriter &w, ComplexVolume const &v)
{
  for (Index i = 0; i < v.size(); i++) {
    w.put<float>(static_cast<float>(v[i].real()));
    w.put<float>(static_cast<float>(v[i].imag()));
  }
}

VolumeHeader parse_header(ByteReader &r)
{
  r.need(4, "magic");
  if (r.get_bytes(4) != "WMDL") {
    throw CorruptFile(r.name() + ": not a volume file (bad magic)");
  }
  VolumeHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kVolumeFormatVersion) {
    throw CorruptFile(r.name() + ": unsupported volume format version " + std::to_string(h.version) + ", expected " +
                      std::to_string(kVolumeFormatVersion));
  }
  auto const t = r.get<std::uint16_t>();
  if (t < 1 || t > 3) {
    throw CorruptFile(r.name() + ": unknown dtype code " + std::to_string(t));
  }
  h.dtype = static_cast<DType>(t);
  auto const ndim = r.get<std::uint32_t>();
  if (ndim < 1 || ndim > 4) {
    throw CorruptFile(r.name() + ": unsupported ndim " + std::to_string(ndim));
  }
  for (std::uint32_t i = 0; i < ndim; i++) {
    h.dims.push_back(r.get<std::uint32_t>());
  }
  for (std::uint32_t i = 0; i < ndim; i++) {
    auto const d = r.get<std::uint8_t>();
    if (d > 1) {
      throw CorruptFile(r.name() + ": bad domain tag " + std::to_string(d));
    }
    h.domains.push_back(d);
  }
  std::size_t const expect = h.payload_bytes();
  std::size_t const have = r.size() - r.pos();
  if (have != expect) {
    throw CorruptFile(r.name() + ": payload is " + std::to_string(have) + " bytes, expected " + std::to_string(expect));
  }
  return h;
}

ByteReader open(std::filesystem::path const &path) { return ByteReader(read_bytes(path), path.string()); }

Dims dims_of(VolumeHeader const &h)
{
  Dims d{1, 1, 1};
  if (h.dims.size() >= 1) {
    d.nx = h.dims[0];
  }
  if (h.dims.size() >= 2) {
    d.ny = h.dims[1];
  }
  if (h.dims.size() >= 3) {
    d.nz = h.dims[2];
  }
  return d;
}

template <typename S>
void apply_domains(Volume<S> &v, VolumeHeader const &h)
{
  for (std::size_t a = 0; a < std::min<std::size_t>(3, h.domains.size()); a++) {
    v.set_domain(static_cast<int>(a), static_cast<Domain>(h.domains[a]));
  }
}

void expect_dtype(VolumeHeader const &h, DType t, ByteReader const &r, bool allow4d = false)
{
  if (h.dtype != t) {
    throw CorruptFile(r.name() + ": dtype code " + std::to_string(static_cast<int>(h.dtype)) + ", expected " +
                      std::to_string(static_cast<int>(t)));
  }
  if (!allow4d && h.dims.size() > 3) {
    throw CorruptFile(r.name() + ": expected at most 3 dims, file has " + std::to_string(h.dims.size()));
  }
}

ComplexVolume get_complex(ByteReader &r, Dims const &d)
{
  ComplexVolume v(d);
  for (Index i = 0; i < v.size(); i++) {
    float const re = r.get<float>();
    float const im = r.get<float>();
    v[i] = Cx(re, im);
  }
  return v;
}

void put_net(ByteWriter &w, ConvNetParams const &n)
{
  w.put<std::uint32_t>(static_cast<std::uint32_t>(n.layers.size()));
  for (auto const &L : n.layers) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(L.out_channels()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(L.in_channels(n.kernel)));
    for (Index r = 0; r < L.weight.rows(); r++) {
      for (Index c = 0; c < L.weight.cols(); c++) {
        w.put<double>(L.weight(r, c));
      }
    }
    for (Index r = 0; r < L.bias.size(); r++) {
      w.put<double>(L.bias[r]);
    }
  }
}

ConvNetParams get_net(ByteReader &r, int kernel, double slope)
{
  ConvNetParams n;
  n.kernel = kernel;
  n.leaky_slope = slope;
  auto const layers = r.get<std::uint32_t>();
  if (layers == 0 || layers > 1024) {
    throw CorruptFile(r.name() + ": implausible layer count " + std::to_string(layers));
  }
  for (std::uint32_t l = 0; l < layers; l++) {
    auto const out = r.get<std::uint32_t>();
    auto const in = r.get<std::uint32_t>();
    std::size_t const nw = static_cast<std::size_t>(out) * in * kernel * kernel;
    r.need((nw + out) * sizeof(double), "layer weights");
    ConvLayer L;
    L.weight.resize(out, static_cast<Index>(in) * kernel * kernel);
    L.bias.resize(out);
    for (Index i = 0; i < L.weight.rows(); i++) {
      for (Index c = 0; c < L.weight.cols(); c++) {
        L.weight(i, c) = r.get<double>();
      }
    }
    for (Index i = 0; i < L.bias.size(); i++) {
      L.bias[i] = r.get<double>();
    }
    n.layers.push_back(std::move(L));
  }
  return n;
}

} // namespace

std::size_t dtype_size(DType t) { return t == DType::Complex64 ? 8 : 4; }

std::size_t VolumeHeader::payload_bytes() const
{
  std::size_t n = dtype_size(dtype);
  for (auto d : dims) {
    n *= d;
  }
  return n;
}

std::vector<std::uint8_t> read_bytes(std::filesystem::path const &path)
{
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw IoError("cannot open " + path.string() + " for reading");
  }
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_volume(std::filesystem::path const &path, ComplexVolume const &v)
{
  ByteWriter w;
  write_header(w, DType::Complex64, dims3(v.dims()), domains3(v));
  put_samples(w, v);
  w.save(path);
}

void write_volume(std::filesystem::path const &path, RealVolume const &v)
{
  ByteWriter w;
  write_header(w, DType::Real32, dims3(v.dims()), domains3(v));
  for (Index i = 0; i < v.size(); i++) {
    w.put<float>(static_cast<float>(v[i]));
  }
  w.save(path);
}

void write_volume(std::filesystem::path const &path, LabelVolume const &v)
{
  ByteWriter w;
  write_header(w, DType::Label32, dims3(v.dims()), domains3(v));
  for (Index i = 0; i < v.size(); i++) {
    w.put<std::int32_t>(v[i]);
  }
  w.save(path);
}

void write_multicoil(std::filesystem::path const &path, MultiCoilData const &b)
{
  b.validate();
  ByteWriter w;
  auto dims = dims3(b.dims());
  dims.push_back(static_cast<std::uint32_t>(b.ncoils()));
  auto dom = domains3(b.volumes.front());
  dom.push_back(0);
  write_header(w, DType::Complex64, dims, dom);
  for (auto const &v : b.volumes) {
    put_samples(w, v);
  }
  w.save(path);
}

VolumeHeader read_volume_header(std::filesystem::path const &path)
{
  auto r = open(path);
  return parse_header(r);
}

ComplexVolume read_complex_volume(std::filesystem::path const &path)
{
  auto r = open(path);
  auto const h = parse_header(r);
  expect_dtype(h, DType::Complex64, r);
  ComplexVolume v = get_complex(r, dims_of(h));
  apply_domains(v, h);
  return v;
}

RealVolume read_real_volume(std::filesystem::path const &path)
{
  auto r = open(path);
  auto const h = parse_header(r);
  expect_dtype(h, DType::Real32, r);
  RealVolume v(dims_of(h));
  for (Index i = 0; i < v.size(); i++) {
    v[i] = r.get<float>();
  }
  apply_domains(v, h);
  return v;
}

LabelVolume read_label_volume(std::filesystem::path const &path)
{
  auto r = open(path);
  auto const h = parse_header(r);
  expect_dtype(h, DType::Label32, r);
  LabelVolume v(dims_of(h));
  for (Index i = 0; i < v.size(); i++) {
    v[i] = r.get<std::int32_t>();
  }
  apply_domains(v, h);
  return v;
}

MultiCoilData read_multicoil(std::filesystem::path const &path)
{
  auto r = open(path);
  auto const h = parse_header(r);
  expect_dtype(h, DType::Complex64, r, true);
  if (h.dims.size() != 4) {
    throw CorruptFile(r.name() + ": multi-coil file must be 4D, has " + std::to_string(h.dims.size()) + " dims");
  }
  MultiCoilData b;
  Dims const d = dims_of(h);
  for (std::uint32_t c = 0; c < h.dims[3]; c++) {
    ComplexVolume v = get_complex(r, d);
    apply_domains(v, h);
    b.volumes.push_back(std::move(v));
  }
  return b;
}

void write_checkpoint(std::filesystem::path const &path, ModlParams const &p, CheckpointMeta const &meta)
{
  p.validate();
  ByteWriter w;
  w.put_bytes("WMCK");
  w.put<std::uint16_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.ncontrasts()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.n_outer));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.d_image.kernel));
  w.put<double>(p.d_image.leaky_slope);
  put_net(w, p.d_image);
  put_net(w, p.d_kspace);
  w.put<double>(p.lambda1_raw);
  w.put<double>(p.lambda2_raw);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  for (auto const &[k, v] : meta) {
    w.put_string(k);
    w.put_string(v);
  }
  w.save(path);
}

ModlParams read_checkpoint(std::filesystem::path const &path, CheckpointMeta *meta)
{
  auto r = open(path);
  r.need(4, "magic");
  if (r.get_bytes(4) != "WMCK") {
    throw CorruptFile(r.name() + ": not a checkpoint file (bad magic)");
  }
  auto const version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CorruptFile(r.name() + ": unsupported checkpoint version " + std::to_string(version) + ", expected " +
                      std::to_string(kCheckpointVersion));
  }
  auto const M = r.get<std::uint32_t>();
  ModlParams p;
  p.n_outer = static_cast<int>(r.get<std::uint32_t>());
  auto const kernel = static_cast<int>(r.get<std::uint32_t>());
  double const slope = r.get<double>();
  p.d_image = get_net(r, kernel, slope);
  p.d_kspace = get_net(r, kernel, slope);
  p.lambda1_raw = r.get<double>();
  p.lambda2_raw = r.get<double>();
  auto const entries = r.get<std::uint32_t>();
  CheckpointMeta m;
  for (std::uint32_t i = 0; i < entries; i++) {
    std::string k = r.get_string();
    m[k] = r.get_string();
  }
  if (r.pos() != r.size()) {
    throw CorruptFile(r.name() + ": " + std::to_string(r.size() - r.pos()) + " trailing bytes");
  }
  try {
    p.validate();
  } catch (InvalidInput const &e) {
    throw CorruptFile(r.name() + ": " + e.what());
  }
  if (p.ncontrasts() != static_cast<int>(M)) {
    throw CorruptFile(r.name() + ": header says " + std::to_string(M) + " contrasts, layers say " +
                      std::to_string(p.ncontrasts()));
  }
  if (meta) {
    *meta = std::move(m);
  }
  return p;
}

void write_pgm(std::filesystem::path const &path, Eigen::ArrayXXd const &image)
{
  if (image.size() == 0) {
    throw InvalidInput("write_pgm: empty image");
  }
  double const lo = image.minCoeff();
  double const hi = image.maxCoeff();
  double const scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::string const head = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  ByteWriter w;
  w.put_bytes(head);
  for (Index r = 0; r < image.rows(); r++) {
    for (Index c = 0; c < image.cols(); c++) {
      double const v = std::round((image(r, c) - lo) * scale);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)));
    }
  }
  w.save(path);
}

Eigen::ArrayXXd slice_magnitude(ComplexVolume const &v, Index iz)
{
  Dims const d = v.dims();
  if (iz < 0 || iz >= d.nz) {
    throw InvalidInput("slice index out of range");
  }
  Eigen::ArrayXXd out(d.ny, d.nx);
  for (Index y = 0; y < d.ny; y++) {
    for (Index x = 0; x < d.nx; x++) {
      out(y, x) = std::abs(v(x, y, iz));
    }
  }
  return out;
}

Eigen::ArrayXXd slice_values(RealVolume const &v, Index iz)
{
  Dims const d = v.dims();
  if (iz < 0 || iz >= d.nz) {
    throw InvalidInput("slice index out of range");
  }
  Eigen::ArrayXXd out(d.ny, d.nx);
  for (Index y = 0; y < d.ny; y++) {
    for (Index x = 0; x < d.nx; x++) {
      out(y, x) = v(x, y, iz);
    }
  }
  return out;
}

} // namespace wmodl
