#include "doctest.h"

#include <cstdio>
#include <filesystem>

#include "gridparse/checkpoint.hpp"
#include "gridparse/error.hpp"
#include "gridparse/nca.hpp"
#include "gridparse/transformer.hpp"

using namespace gridparse;

namespace {

ErrorKind decode_error(const std::string& bytes) {
  try {
    decode_archive(bytes);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST_CASE("NCA checkpoints round-trip bit for bit") {
  NcaConfig cfg;
  cfg.d = 8;
  cfg.epsilon = 0.0123;
  const NcaParams p = init_params(cfg, 4);
  const Archive a = nca_to_archive(cfg, p, {{"language", "arithmetic"}});
  const std::string bytes = encode_archive(a);
  NcaConfig c2;
  NcaParams p2;
  nca_from_archive(decode_archive(bytes), c2, p2);
  CHECK(c2.d == 8);
  CHECK(c2.epsilon == cfg.epsilon);
  CHECK(encode_archive(nca_to_archive(c2, p2, {{"language", "arithmetic"}})) == bytes);
  const TokenSeq t = {0, 1, 0};
  CHECK(infer(cfg, p, t).probability == infer(c2, p2, t).probability);
  CHECK(decode_archive(bytes).meta_value("language") == "arithmetic");
}

TEST_CASE("corrupted archives are rejected") {
  NcaConfig cfg;
  cfg.d = 2;
  const std::string bytes = encode_archive(nca_to_archive(cfg, init_params(cfg, 0)));
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK(decode_error(flipped) == ErrorKind::CorruptCheckpoint);
  CHECK(decode_error(bytes.substr(0, bytes.size() - 3)) == ErrorKind::CorruptCheckpoint);
  CHECK(decode_error(bytes + "x") == ErrorKind::CorruptCheckpoint);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK(decode_error(magic) == ErrorKind::CorruptCheckpoint);
  CHECK(decode_error("") == ErrorKind::CorruptCheckpoint);
  CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("checkpoint kind and shapes are enforced") {
  NcaConfig cfg;
  cfg.d = 2;
  Archive a = nca_to_archive(cfg, init_params(cfg, 0));
  a.kind = "transformer";
  NcaConfig c2;
  NcaParams p2;
  CHECK_THROWS_AS(nca_from_archive(a, c2, p2), Error);
  a = nca_to_archive(cfg, init_params(cfg, 0));
  a.arrays[3].second.resize(1, 1);
  CHECK_THROWS_AS(nca_from_archive(a, c2, p2), Error);
}

TEST_CASE("checkpoint files") {
  const auto dir = std::filesystem::temp_directory_path() / "gridparse_ckpt_test";
  std::filesystem::remove_all(dir);
  const std::string path = (dir / "sub" / "m.ckpt").string();
  NcaConfig cfg;
  cfg.d = 2;
  save_nca(path, cfg, init_params(cfg, 1));
  NcaConfig c2;
  NcaParams p2;
  load_nca(path, c2, p2);
  CHECK(c2.d == 2);
  TfConfig tc;
  tc.d = 8;
  tc.layers = 1;
  save_tf((dir / "t.ckpt").string(), tc, init_tf(tc, 1));
  TfConfig t2;
  TfParams q2;
  load_tf((dir / "t.ckpt").string(), t2, q2);
  CHECK(t2.d == 8);
  CHECK(q2.scalar_count() == init_tf(tc, 1).scalar_count());
  try {
    load_nca((dir / "missing.ckpt").string(), c2, p2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
  }
  std::filesystem::remove_all(dir);
}
