#include <cstring>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "xfer/checkpoint.hpp"

using namespace xfer;
using xfer::testing::kind_of;

namespace {

using Model = PartitionedModel<float>;

ModelConfig micro() {
  ModelConfig c;
  c.layers = 1;
  c.heads = 2;
  c.d_model = 8;
  c.d_ffn = 16;
  c.max_positions = 16;
  c.dropout = 0.25;
  c.label_smoothing = 0.05;
  return c;
}

CheckpointInfo sample_info() {
  CheckpointInfo info;
  info.src_vocab_hash = 0xDEADBEEFCAFEF00Dull;
  info.tgt_vocab_hash = 42;
  info.extra["experiment"] = "copy";
  info.extra["note"] = "a=b with spaces";
  return info;
}

Model sample_model() {
  Model m = Model::build(micro(), 9, 11, InitScheme::uniform(0.07), 5);
  m.set_phase(Phase::Pretrained);
  m.set_step(1234);
  m.set_trainable(PartitionSelector::Core, false);
  return m;
}

void expect_same_model(const Model& a, const Model& b) {
  EXPECT_EQ(a.config(), b.config());
  EXPECT_EQ(a.phase(), b.phase());
  EXPECT_EQ(a.step(), b.step());
  EXPECT_EQ(a.init_scheme().name(), b.init_scheme().name());
  EXPECT_EQ(a.init_scheme().half_width, b.init_scheme().half_width);
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(a.params()[i].name, b.params()[i].name);
    EXPECT_EQ(a.params()[i].value, b.params()[i].value) << a.params()[i].name;
    EXPECT_EQ(a.params()[i].trainable, b.params()[i].trainable) << a.params()[i].name;
  }
}

void put_u32(std::string& bytes, std::size_t at, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) bytes[at + k] = static_cast<char>((v >> (8 * k)) & 0xFF);
}

}  // namespace

TEST(CheckpointTest, RoundTripIsExact) {
  const Model m = sample_model();
  const CheckpointInfo info = sample_info();
  const auto loaded = deserialize_checkpoint<float>(serialize_checkpoint(m, info));
  expect_same_model(m, loaded.model);
  EXPECT_EQ(loaded.info, info);
}

TEST(CheckpointTest, ReserializationIsByteIdentical) {
  const std::string bytes = serialize_checkpoint(sample_model(), sample_info());
  const auto loaded = deserialize_checkpoint<float>(bytes);
  EXPECT_EQ(serialize_checkpoint(loaded.model, loaded.info), bytes);
}

TEST(CheckpointTest, HeaderLayout) {
  const std::string bytes = serialize_checkpoint(sample_model(), sample_info());
  EXPECT_EQ(bytes.substr(0, 8), "XFERCKPT");
  std::uint32_t version = 0;
  for (int k = 0; k < 4; ++k) version |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[8 + k])) << (8 * k);
  EXPECT_EQ(version, 1u);
  // Metadata is plain sorted key=value text.
  EXPECT_NE(bytes.find("phase=pretrained\n"), std::string::npos);
  EXPECT_NE(bytes.find("extra.experiment=copy\n"), std::string::npos);
  EXPECT_LT(bytes.find("config.d_model="), bytes.find("step="));
}

TEST(CheckpointTest, DifferentVocabSizesAfterSwap) {
  Model m = sample_model();
  Model swapped = m.swap_embeddings(20, 7, 99);
  swapped.set_trainable(PartitionSelector::Core, false);
  const auto loaded = deserialize_checkpoint<float>(serialize_checkpoint(swapped, {}));
  expect_same_model(swapped, loaded.model);
  EXPECT_EQ(loaded.model.src_vocab_size(), 20u);
  EXPECT_EQ(loaded.model.tgt_vocab_size(), 7u);
}

TEST(CheckpointTest, DoublePrecisionModelStoresFloat32) {
  auto m = PartitionedModel<double>::build(micro(), 6, 6, InitScheme::xavier(), 3);
  m.param(kSrcEmbedding).value[4] = 0.1;  // not representable in f32
  const auto loaded = deserialize_checkpoint<double>(serialize_checkpoint(m, {}));
  EXPECT_EQ(loaded.model.param(kSrcEmbedding).value[4], static_cast<double>(0.1f));
}

TEST(CheckpointTest, FileRoundTrip) {
  const auto dir = xfer::testing::scratch_dir("ckpt");
  const std::string path = (dir / "model.ckpt").string();
  const Model m = sample_model();
  save_checkpoint(m, sample_info(), path);
  const auto loaded = load_checkpoint<float>(path);
  expect_same_model(m, loaded.model);
  EXPECT_EQ(kind_of([] { load_checkpoint<float>("/nonexistent/dir/x.ckpt"); }), ErrorKind::IoError);
  EXPECT_EQ(kind_of([&] { save_checkpoint(m, {}, "/nonexistent/dir/x.ckpt"); }), ErrorKind::IoError);
}

TEST(CheckpointTest, BadMagic) {
  std::string bytes = serialize_checkpoint(sample_model(), {});
  bytes[0] = 'Y';
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bytes); }), ErrorKind::CorruptCheckpoint);
  EXPECT_EQ(kind_of([] { deserialize_checkpoint<float>("XF"); }), ErrorKind::CorruptCheckpoint);
  EXPECT_EQ(kind_of([] { deserialize_checkpoint<float>(""); }), ErrorKind::CorruptCheckpoint);
}

TEST(CheckpointTest, UnknownVersion) {
  std::string bytes = serialize_checkpoint(sample_model(), {});
  put_u32(bytes, 8, 2);
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bytes); }), ErrorKind::UnsupportedVersion);
}

TEST(CheckpointTest, TruncationAtEveryRegion) {
  const std::string bytes = serialize_checkpoint(sample_model(), {});
  for (std::size_t cut : {std::size_t{10}, std::size_t{14}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bytes.substr(0, cut)); }), ErrorKind::CorruptCheckpoint)
        << "cut at " << cut;
  }
}

TEST(CheckpointTest, TrailingBytes) {
  const std::string bytes = serialize_checkpoint(sample_model(), {}) + "x";
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bytes); }), ErrorKind::CorruptCheckpoint);
}

TEST(CheckpointTest, InventoryMismatch) {
  // Claim two layers while storing tensors for one.
  std::string bytes = serialize_checkpoint(sample_model(), {});
  const std::size_t at = bytes.find("config.layers=1\n");
  ASSERT_NE(at, std::string::npos);
  bytes[at + std::strlen("config.layers=")] = '2';
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bytes); }), ErrorKind::CorruptCheckpoint);
}

TEST(CheckpointTest, CorruptMetadataValues) {
  const std::string bytes = serialize_checkpoint(sample_model(), {});
  auto tamper = [&](const std::string& from, const std::string& to) {
    std::string b = bytes;
    const std::size_t at = b.find(from);
    EXPECT_NE(at, std::string::npos) << from;
    b.replace(at, from.size(), to);
    return b;
  };
  // Same-length edits keep the metadata length field valid.
  const std::string bad_phase = tamper("phase=pretrained", "phase=pretrainex");
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bad_phase); }), ErrorKind::CorruptCheckpoint);
  const std::string bad_scheme = tamper("init.scheme=uniform", "init.scheme=uniforx");
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bad_scheme); }), ErrorKind::CorruptCheckpoint);
  const std::string bad_dropout = tamper("config.dropout=0.25", "config.dropout=0.2x");
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bad_dropout); }), ErrorKind::CorruptCheckpoint);
  const std::string bad_heads = tamper("config.heads=2", "config.heads=3");
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bad_heads); }), ErrorKind::CorruptCheckpoint);
  const std::string bad_step = tamper("step=1234", "step=12x4");
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bad_step); }), ErrorKind::CorruptCheckpoint);
  const std::string bad_step2 = tamper("step=1234", "step=x234");
  EXPECT_EQ(kind_of([&] { deserialize_checkpoint<float>(bad_step2); }), ErrorKind::CorruptCheckpoint);
}

TEST(CheckpointTest, MultiLineExtraRejected) {
  CheckpointInfo info;
  info.extra["note"] = "two\nlines";
  EXPECT_EQ(kind_of([&] { serialize_checkpoint(sample_model(), info); }), ErrorKind::InvalidArgument);
  CheckpointInfo key;
  key.extra["a=b"] = "x";
  EXPECT_EQ(kind_of([&] { serialize_checkpoint(sample_model(), key); }), ErrorKind::InvalidArgument);
}
