#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "support.hpp"
#include "wmodl/io.hpp"
#include "wmodl/modl.hpp"

using namespace wmodl;
using namespace wmodl::testing;
namespace fs = std::filesystem;

namespace {

struct TempDir
{
  fs::path path;

  TempDir()
    : path(fs::temp_directory_path() / ("wmodl_io_" + std::to_string(::getpid())))
  {
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }

  fs::path operator/(std::string const &name) const { return path / name; }
};

// Round onto a dyadic grid coarse enough that the float32 payload is lossless.
// A double->float->double cast was seen optimized away by GCC 11 at -O3.
double on_grid(double x, double step) { return std::round(x / step) * step; }

ComplexVolume float_volume(Rng &rng, Dims d)
{
  ComplexVolume v(d);
  for (Index i = 0; i < v.size(); i++) {
    v[i] = {on_grid(rng.normal(), 0x1p-20), on_grid(rng.normal(), 0x1p-20)};
  }
  return v;
}

bool same_bits(ComplexVolume const &a, ComplexVolume const &b)
{
  return a.dims() == b.dims() &&
         std::memcmp(a.array().data(), b.array().data(), sizeof(Cx) * static_cast<std::size_t>(a.size())) == 0;
}

void write_raw(fs::path const &p, std::vector<std::uint8_t> const &bytes)
{
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<char const *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("2x2x2 zero volume file size and header bytes")
{
  TempDir tmp;
  ComplexVolume v(Dims{2, 2, 2});
  write_volume(tmp / "z.wmdl", v);
  CHECK(fs::file_size(tmp / "z.wmdl") == 12u + 5u * 3u + 64u);
  auto const bytes = read_bytes(tmp / "z.wmdl");
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "WMDL");
  // version 1, dtype complex64, ndim 3, dims 2 2 2, all little-endian
  std::vector<std::uint8_t> const head{1, 0, 1, 0, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0};
  CHECK(std::vector<std::uint8_t>(bytes.begin() + 4, bytes.begin() + 24) == head);
  auto const h = read_volume_header(tmp / "z.wmdl");
  CHECK(h.header_bytes() == 27u);
  CHECK(h.payload_bytes() == 64u);
}

TEST_CASE("property: volume round trips are bit-exact")
{
  TempDir tmp;
  Rng rng(5);
  for (int t = 0; t < 20; t++) {
    Dims const d{rng.integer(1, 7), rng.integer(1, 7), rng.integer(1, 7)};
    auto v = float_volume(rng, d);
    v.set_domains({Domain::Frequency, Domain::Image, Domain::Frequency});
    write_volume(tmp / "c.wmdl", v);
    auto const back = read_complex_volume(tmp / "c.wmdl");
    CHECK(same_bits(back, v));
    CHECK(back.domains() == v.domains());
    // rewriting the read-back volume reproduces the file byte for byte
    write_volume(tmp / "c2.wmdl", back);
    CHECK(read_bytes(tmp / "c.wmdl") == read_bytes(tmp / "c2.wmdl"));

    RealVolume r(d);
    LabelVolume l(d);
    for (Index i = 0; i < r.size(); i++) {
      r[i] = on_grid(rng.uniform(-1e3, 1e3), 0x1p-10);
      l[i] = rng.integer(-5, 1 << 20);
    }
    write_volume(tmp / "r.wmdl", r);
    write_volume(tmp / "l.wmdl", l);
    CHECK((read_real_volume(tmp / "r.wmdl").array() == r.array()).all());
    CHECK((read_label_volume(tmp / "l.wmdl").array() == l.array()).all());
  }
}

TEST_CASE("multi-coil round trip")
{
  TempDir tmp;
  Rng rng(6);
  Dims const d{3, 4, 2};
  MultiCoilData b;
  for (int c = 0; c < 3; c++) {
    auto v = float_volume(rng, d);
    v.set_domains({Domain::Frequency, Domain::Frequency, Domain::Frequency});
    b.volumes.push_back(std::move(v));
  }
  write_multicoil(tmp / "b.wmdl", b);
  CHECK(read_volume_header(tmp / "b.wmdl").dims == std::vector<std::uint32_t>{3, 4, 2, 3});
  auto const back = read_multicoil(tmp / "b.wmdl");
  REQUIRE(back.ncoils() == 3);
  for (int c = 0; c < 3; c++) {
    CHECK(same_bits(back.volumes[c], b.volumes[c]));
  }
  CHECK_THROWS_AS(read_complex_volume(tmp / "b.wmdl"), CorruptFile);
  write_volume(tmp / "one.wmdl", b.volumes[0]);
  CHECK_THROWS_AS(read_multicoil(tmp / "one.wmdl"), CorruptFile);
}

TEST_CASE("corrupt volume files are rejected")
{
  TempDir tmp;
  Rng rng(7);
  write_volume(tmp / "v.wmdl", float_volume(rng, Dims{2, 3, 2}));
  auto const good = read_bytes(tmp / "v.wmdl");

  auto bad = good;
  bad[0] = 'X';
  write_raw(tmp / "magic.wmdl", bad);
  CHECK_THROWS_WITH_AS(read_complex_volume(tmp / "magic.wmdl"), doctest::Contains("bad magic"), CorruptFile);

  bad = good;
  bad[4] = 9;
  write_raw(tmp / "ver.wmdl", bad);
  CHECK_THROWS_WITH_AS(read_complex_volume(tmp / "ver.wmdl"), doctest::Contains("version 9"), CorruptFile);

  bad.assign(good.begin(), good.end() - 5);
  write_raw(tmp / "short.wmdl", bad);
  // 12 samples of 8 bytes expected, 91 present
  CHECK_THROWS_WITH_AS(read_complex_volume(tmp / "short.wmdl"), doctest::Contains("expected 96"), CorruptFile);
  CHECK_THROWS_WITH_AS(read_complex_volume(tmp / "short.wmdl"), doctest::Contains("91"), CorruptFile);

  bad.assign(good.begin(), good.begin() + 10);
  write_raw(tmp / "head.wmdl", bad);
  CHECK_THROWS_AS(read_complex_volume(tmp / "head.wmdl"), CorruptFile);

  CHECK_THROWS_AS(read_real_volume(tmp / "v.wmdl"), CorruptFile);
  CHECK_THROWS_AS(read_complex_volume(tmp / "missing.wmdl"), IoError);
  CHECK_THROWS_AS(write_volume(tmp / "no" / "such" / "dir.wmdl", ComplexVolume(Dims{1, 1, 1})), IoError);
}

TEST_CASE("checkpoint round trip")
{
  TempDir tmp;
  ConvArch arch;
  arch.width = 4;
  arch.hidden_layers = 2;
  for (int M : {1, 5}) {
    auto p = make_modl_params(M, arch, 17, 4, 0.07);
    // nonzero output layers so every weight carries information
    auto flat = flatten(p);
    Rng rng(static_cast<std::uint64_t>(M));
    for (auto &w : flat) {
      w += 1e-3 * rng.normal();
    }
    unflatten(p, flat);
    CheckpointMeta const meta{{"step", "12"}, {"seed", "17"}};
    write_checkpoint(tmp / "p.wmck", p, meta);
    CheckpointMeta got;
    auto const back = read_checkpoint(tmp / "p.wmck", &got);
    CHECK(got == meta);
    CHECK(back.n_outer == 4);
    CHECK(back.ncontrasts() == M);
    CHECK(back.d_image.leaky_slope == p.d_image.leaky_slope);
    auto const fb = flatten(back);
    REQUIRE(fb.size() == flat.size());
    CHECK(std::memcmp(fb.data(), flat.data(), sizeof(double) * flat.size()) == 0);
    write_checkpoint(tmp / "p2.wmck", back, got);
    CHECK(read_bytes(tmp / "p.wmck") == read_bytes(tmp / "p2.wmck"));
  }

  auto bytes = read_bytes(tmp / "p.wmck");
  auto bad = bytes;
  bad[1] = 'X';
  write_raw(tmp / "m.wmck", bad);
  CHECK_THROWS_AS(read_checkpoint(tmp / "m.wmck"), CorruptFile);
  bad.assign(bytes.begin(), bytes.end() - 3);
  write_raw(tmp / "t.wmck", bad);
  CHECK_THROWS_AS(read_checkpoint(tmp / "t.wmck"), CorruptFile);
  bad = bytes;
  bad.push_back(0);
  write_raw(tmp / "x.wmck", bad);
  CHECK_THROWS_WITH_AS(read_checkpoint(tmp / "x.wmck"), doctest::Contains("trailing"), CorruptFile);
}

TEST_CASE("pgm previews")
{
  TempDir tmp;
  Eigen::ArrayXXd img(2, 3);
  img << 0.0, 1.0, 2.0, 3.0, 4.0, 10.0;
  write_pgm(tmp / "a.pgm", img);
  auto const bytes = read_bytes(tmp / "a.pgm");
  std::string const head = "P5\n3 2\n255\n";
  REQUIRE(bytes.size() == head.size() + 6);
  CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(head.size())) == head);
  std::vector<std::uint8_t> const px(bytes.begin() + static_cast<long>(head.size()), bytes.end());
  // round(255 v / 10)
  CHECK(px == std::vector<std::uint8_t>{0, 26, 51, 77, 102, 255});

  Eigen::ArrayXXd flat = Eigen::ArrayXXd::Constant(2, 2, 4.0);
  write_pgm(tmp / "f.pgm", flat);
  auto const fb = read_bytes(tmp / "f.pgm");
  CHECK(std::all_of(fb.end() - 4, fb.end(), [](std::uint8_t b) { return b == 0; }));
  CHECK_THROWS_AS(write_pgm(tmp / "e.pgm", Eigen::ArrayXXd()), InvalidInput);

  ComplexVolume v(Dims{3, 2, 2});
  v(2, 1, 1) = Cx(3.0, 4.0);
  auto const s = slice_magnitude(v, 1);
  CHECK(s.rows() == 2);
  CHECK(s.cols() == 3);
  CHECK(s(1, 2) == 5.0);
  CHECK_THROWS_AS(slice_magnitude(v, 2), InvalidInput);
}
