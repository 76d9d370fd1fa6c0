#include "nezha/valuelog.h"

#include <gtest/gtest.h>

#include <fstream>

#include "test_util.h"

namespace nezha {
namespace {

using testing::oracle_record_length;
using testing::TempDir;

LogRecord put(uint64_t term, uint64_t index, std::string key, std::string value) {
  return LogRecord{term, index, OpKind::kPut, std::move(key), std::move(value)};
}

SegmentOptions logical() { return SegmentOptions{SyncMode::kLogical}; }

TEST(ValueLogCodec, HeaderSizeMatchesFieldWidths) {
  EXPECT_EQ(kRecordHeaderSize, oracle_record_length(0, 0));
  EXPECT_EQ(encode_record(put(1, 1, "a", "b")).size(), oracle_record_length(1, 1));
}

TEST(ValueLogCodec, RejectsOversizedKey) {
  EXPECT_THROW(encode_record(put(1, 1, std::string(65536, 'k'), "")), Error);
}

TEST(ValueLogCodec, DecodeReportsIncompleteAndCorrupt) {
  std::string buf = encode_record(put(3, 9, "key", "value"));
  LogRecord out;
  size_t consumed = 0;
  EXPECT_EQ(decode_record(std::string_view(buf).substr(0, buf.size() - 1), &out, &consumed),
            DecodeStatus::kIncomplete);
  buf[buf.size() - 2] ^= 0x40;
  EXPECT_EQ(decode_record(buf, &out, &consumed), DecodeStatus::kCorrupt);
}

TEST(Segment, FirstAppendStartsAtZero) {
  TempDir dir;
  IoCounters counters;
  auto seg = Segment::create(dir.path(), 1, logical(), &counters);
  auto loc = seg->append(put(1, 1, "a", "x"), false);
  EXPECT_EQ(loc.segment_id, 1u);
  EXPECT_EQ(loc.offset, 0u);
  EXPECT_EQ(counters.value_bytes_valuelog.load(), 1u);
  EXPECT_EQ(counters.log_bytes.load(), oracle_record_length(1, 1));
}

TEST(Segment, SecondOffsetEqualsFirstLength) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  seg->append(put(1, 1, "alpha", std::string(100, 'v')), false);
  auto second = seg->append(put(1, 2, "b", std::string(7, 'w')), false);
  EXPECT_EQ(second.offset, oracle_record_length(5, 100));
  EXPECT_EQ(second.length, oracle_record_length(1, 7));
  EXPECT_EQ(seg->next_offset(), oracle_record_length(5, 100) + oracle_record_length(1, 7));
}

TEST(Segment, SmallestWorkloadRecordLength) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  auto loc = seg->append(put(1, 1, "k000000001", std::string(1024, 'v')), false);
  EXPECT_EQ(loc.length, oracle_record_length(10, 1024));
  EXPECT_EQ(loc.length, kRecordHeaderSize + 10 + 1024);
}

TEST(Segment, ReadAtRoundTrip) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 5, logical(), nullptr);
  auto r = put(2, 5, "key", std::string(3000, 'z'));
  auto loc = seg->append(r, true);
  EXPECT_EQ(seg->read_at(loc), r);
  LogRecord noop{2, 6, OpKind::kNoOp, "", ""};
  auto loc2 = seg->append(noop, true);
  EXPECT_EQ(seg->read_at(loc2), noop);
}

TEST(Segment, ReadPastEndIsIoFailure) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  auto loc = seg->append(put(1, 1, "a", "b"), false);
  loc.offset += 1000;
  try {
    seg->read_at(loc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoFailure);
  }
}

TEST(Segment, FlippedValueByteIsChecksumMismatch) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  auto loc = seg->append(put(1, 1, "key", "value-bytes"), true);
  {
    File f = File::open_rw(seg->path(), false);
    const uint64_t value_pos = loc.offset + kRecordHeaderSize + 3 + 2;
    std::string b = f.read_at(value_pos, 1);
    b[0] ^= 0x01;
    f.write_at(value_pos, b);
  }
  try {
    seg->read_at(loc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kChecksumMismatch);
  }
}

TEST(Segment, ScanEmpty) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  auto reader = seg->scan(0);
  RecordStreamReader::Item item;
  EXPECT_FALSE(reader.next(&item));
  EXPECT_EQ(reader.safe_offset(), 0u);
  EXPECT_FALSE(reader.hit_bad_record());
}

TEST(Segment, ScanYieldsAppendOrder) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  for (uint64_t i = 1; i <= 3; ++i) seg->append(put(1, i, "k" + std::to_string(i), "v"), false);
  auto reader = seg->scan(0);
  RecordStreamReader::Item item;
  uint64_t expect = 1;
  while (reader.next(&item)) EXPECT_EQ(item.record.index, expect++);
  EXPECT_EQ(expect, 4u);
}

TEST(Segment, TornTailStopsAtLastIntactRecord) {
  TempDir dir;
  std::filesystem::path path;
  {
    auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
    seg->append(put(1, 1, "aa", "11"), false);
    seg->append(put(1, 2, "bbb", "222"), false);
    seg->append(put(1, 3, "cccc", std::string(500, 'c')), false);
    path = seg->path();
  }
  const uint64_t end_of_two = oracle_record_length(2, 2) + oracle_record_length(3, 3);
  std::filesystem::resize_file(path, end_of_two + oracle_record_length(4, 500) / 2);

  File f = File::open_ro(path);
  RecordStreamReader reader(f, 0, f.size());
  RecordStreamReader::Item item;
  int n = 0;
  while (reader.next(&item)) ++n;
  EXPECT_EQ(n, 2);
  EXPECT_TRUE(reader.hit_bad_record());
  EXPECT_EQ(reader.safe_offset(), end_of_two);

  IoCounters counters;
  auto reopened = Segment::open(path, logical(), &counters);
  EXPECT_EQ(reopened->last_index(), 2u);
  EXPECT_EQ(reopened->next_offset(), end_of_two);
  EXPECT_EQ(std::filesystem::file_size(path), end_of_two);
  EXPECT_GT(counters.replay_bytes.load(), 0u);
}

TEST(Segment, TruncateAtEndIsNoOp) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  seg->append(put(1, 1, "a", "b"), false);
  const auto end = seg->next_offset();
  seg->truncate_at(end);
  EXPECT_EQ(seg->next_offset(), end);
  EXPECT_EQ(seg->last_index(), 1u);
}

TEST(Segment, TruncateAtRecordStart) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  seg->append(put(1, 1, "r1", "one"), false);
  seg->append(put(1, 2, "r2", "two"), false);
  seg->append(put(1, 3, "r3", "three"), false);
  seg->truncate_at(oracle_record_length(2, 3));
  auto reader = seg->scan(0);
  RecordStreamReader::Item item;
  ASSERT_TRUE(reader.next(&item));
  EXPECT_EQ(item.record.key, "r1");
  EXPECT_FALSE(reader.next(&item));
  EXPECT_EQ(seg->last_index(), 1u);
  // Appends resume at the next index.
  auto loc = seg->append(put(2, 2, "r2b", "x"), false);
  EXPECT_EQ(loc.offset, oracle_record_length(2, 3));
}

TEST(Segment, TruncateMidRecordIsNotABoundary) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  seg->append(put(1, 1, "a", "bbbbbbbbbb"), false);
  seg->append(put(1, 2, "c", "d"), false);
  ASSERT_LT(7u, oracle_record_length(1, 10));
  try {
    seg->truncate_at(7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotABoundary);
  }
}

TEST(Segment, SealedRejectsAppend) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  seg->seal();
  try {
    seg->append(put(1, 1, "a", "b"), false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSegmentSealed);
  }
}

TEST(Segment, NonContiguousIndexIsIndexGap) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 10, logical(), nullptr);
  try {
    seg->append(put(1, 11, "a", "b"), false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIndexGap);
  }
  seg->append(put(1, 10, "a", "b"), false);
  EXPECT_EQ(seg->last_index(), 10u);
}

TEST(Segment, FileNameRoundTrip) {
  EXPECT_EQ(Segment::file_name(42), "vlog-42.seg");
  EXPECT_EQ(Segment::parse_file_name("vlog-42.seg"), 42u);
  EXPECT_FALSE(Segment::parse_file_name("vlog-x.seg"));
  EXPECT_FALSE(Segment::parse_file_name("sorted-1.run"));
}

TEST(Segment, DurableOffsetTracksSync) {
  TempDir dir;
  auto seg = Segment::create(dir.path(), 1, logical(), nullptr);
  seg->append(put(1, 1, "a", "b"), false);
  EXPECT_EQ(seg->durable_offset(), 0u);
  seg->sync();
  EXPECT_EQ(seg->durable_offset(), seg->next_offset());
}

}  // namespace
}  // namespace nezha
