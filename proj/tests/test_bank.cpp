#include "skillknn/bank.hpp"
#include "skillknn/error.hpp"
#include "skillknn/util.hpp"

#include "support/fixtures.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace skillknn;
using testsupport::TempDir;
using testsupport::write_text;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::Io;
}

std::string message_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Bank, LoadsRecordsInFileOrder) {
    TempDir dir;
    write_text(dir / "bank.jsonl",
               "{\"id\":\"z\",\"question\":\"q z\",\"target\":\"SELECT 1\"}\n"
               "{\"id\":\"a\",\"question\":\"q a\",\"target\":\"SELECT 2\",\"db_id\":\"d\"}\n"
               "\n"
               "{\"id\":\"m\",\"question\":\"q m\",\"schema\":\"t [x]\",\"target\":\"SELECT 3\"}\n");
    auto bank = load_bank(dir / "bank.jsonl", "text-to-sql");
    EXPECT_EQ(bank.size(), 3u);
    EXPECT_EQ(bank.ids(), (std::vector<std::string>{"z", "a", "m"}));
    EXPECT_EQ(bank.at("a").db_id, "d");
    EXPECT_EQ(bank.at("z").db_id, "");
    EXPECT_EQ(bank.at("m").schema, "t [x]");
    EXPECT_EQ(bank.task_tag(), "text-to-sql");
    EXPECT_EQ(*bank.index_of("m"), 2u);
    EXPECT_FALSE(bank.index_of("nope"));
}

TEST(Bank, EmptyFileGivesEmptyBank) {
    TempDir dir;
    write_text(dir / "empty.jsonl", "");
    EXPECT_EQ(load_bank(dir / "empty.jsonl", "cogs").size(), 0u);
}

TEST(Bank, DuplicateIdNamesTheId) {
    std::string contents =
        "{\"id\":\"q1\",\"question\":\"a\",\"target\":\"x\"}\n"
        "{\"id\":\"q1\",\"question\":\"b\",\"target\":\"y\"}\n";
    EXPECT_EQ(kind_of([&] { parse_bank(contents, "t"); }), ErrorKind::Validation);
    EXPECT_NE(message_of([&] { parse_bank(contents, "t"); }).find("'q1'"), std::string::npos);
}

TEST(Bank, MalformedLineCarriesLineNumber) {
    std::string contents =
        "{\"id\":\"a\",\"question\":\"a\",\"target\":\"x\"}\n"
        "{\"id\":\"b\",\"question\":\"b\"}\n";
    EXPECT_EQ(kind_of([&] { parse_bank(contents, "t", "bank.jsonl"); }), ErrorKind::Parse);
    EXPECT_NE(message_of([&] { parse_bank(contents, "t", "bank.jsonl"); }).find("bank.jsonl:2"),
              std::string::npos);
    EXPECT_EQ(kind_of([&] { parse_bank("{\"id\":3,\"question\":\"q\",\"target\":\"t\"}\n", "t"); }),
              ErrorKind::Parse);
}

TEST(Bank, InvariantsRejectBlankFields) {
    EXPECT_EQ(kind_of([] { ExampleBank({Example{"a", "  ", "", "t", ""}}, "t"); }),
              ErrorKind::Validation);
    EXPECT_EQ(kind_of([] { ExampleBank({Example{"a", "q", "", " \n", ""}}, "t"); }),
              ErrorKind::Validation);
    EXPECT_EQ(kind_of([] { ExampleBank({Example{"", "q", "", "t", ""}}, "t"); }),
              ErrorKind::Validation);
}

TEST(Bank, AtUnknownIdIsDataError) {
    auto bank = testsupport::placeholder_bank(3);
    EXPECT_EQ(kind_of([&] { bank.at("missing"); }), ErrorKind::Data);
}

TEST(Bank, RoundTripSixteenRecords) {
    TempDir dir;
    std::vector<Example> examples;
    for (int i = 0; i < 16; ++i) {
        examples.push_back(Example{"id" + std::to_string(i), "question " + std::to_string(i),
                                   i % 2 ? "t [a, b]" : "", "SELECT " + std::to_string(i),
                                   i % 3 ? "db" + std::to_string(i % 3) : ""});
    }
    ExampleBank bank(examples, "text-to-sql");
    save_bank(bank, dir / "b.jsonl");
    EXPECT_EQ(load_bank(dir / "b.jsonl", "text-to-sql"), bank);
}

TEST(Bank, UnicodeQuestionsSurviveByteForByte) {
    TempDir dir;
    const std::string q1 = "Quelle est la capitale de l\xe2\x80\x99\xc3\x89thiopie ?";
    const std::string q2 = "\xe6\x98\xbe\xe7\xa4\xba\xe6\x89\x80\xe6\x9c\x89\xe4\xb8\x93\xe4\xb8\x9a \xf0\x9f\x8e\x93";
    ExampleBank bank({Example{"u1", q1, "", "SELECT 1", ""}, Example{"u2", q2, "", "SELECT 2", ""}},
                     "text-to-sql");
    save_bank(bank, dir / "u.jsonl");
    auto loaded = load_bank(dir / "u.jsonl", "text-to-sql");
    EXPECT_EQ(loaded.at("u1").question, q1);
    EXPECT_EQ(loaded.at("u2").question, q2);
}

TEST(Bank, EmptyBankSavesEmptyFile) {
    TempDir dir;
    save_bank(ExampleBank({}, "cogs"), dir / "e.jsonl");
    EXPECT_EQ(read_file(dir / "e.jsonl"), "");
}

TEST(Bank, RoundTripPropertyOverRandomBanks) {
    std::mt19937_64 rng(11);
    const std::string alphabet = "abc xyz\t\n\"\\{}[]\xc3\xa9";
    auto random_text = [&](std::size_t max_len) {
        std::string s = "w";
        std::size_t len = uniform_below(rng, max_len);
        for (std::size_t i = 0; i < len; ++i) {
            std::size_t pick = uniform_below(rng, alphabet.size() - 1);
            if (alphabet[pick] == '\xc3') {
                s += "\xc3\xa9";
            } else if (alphabet[pick] != '\xa9') {
                s += alphabet[pick];
            }
        }
        return s;
    };
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Example> examples;
        std::size_t n = uniform_below(rng, 12);
        for (std::size_t i = 0; i < n; ++i) {
            examples.push_back(Example{"id" + std::to_string(i), random_text(20), random_text(10),
                                       random_text(15), uniform_below(rng, 2) ? random_text(5) : ""});
        }
        ExampleBank bank(examples, "x");
        EXPECT_EQ(parse_bank(serialize_bank(bank), "x"), bank) << "trial " << trial;
    }
}

TEST(Bank, QueriesIgnoreTargets) {
    TempDir dir;
    write_text(dir / "q.jsonl",
               "{\"id\":\"q1\",\"question\":\"Show all majors.\",\"target\":\"SELECT\"}\n"
               "{\"id\":\"q2\",\"question\":\"b\",\"schema\":\"s\"}\n");
    auto queries = load_queries(dir / "q.jsonl");
    ASSERT_EQ(queries.size(), 2u);
    EXPECT_EQ(queries[1].schema, "s");
    write_text(dir / "dup.jsonl",
               "{\"id\":\"q1\",\"question\":\"a\"}\n{\"id\":\"q1\",\"question\":\"b\"}\n");
    EXPECT_EQ(kind_of([&] { load_queries(dir / "dup.jsonl"); }), ErrorKind::Validation);
    write_text(dir / "blank.jsonl", "{\"id\":\"q1\",\"question\":\"  \"}\n");
    EXPECT_EQ(kind_of([&] { load_queries(dir / "blank.jsonl"); }), ErrorKind::Validation);
}

TEST(Bank, EmbeddingTextOmitsSchema) {
    Example ex{"1", "Show all majors.", "student [stuid, lname, fname, age, sex, major, ...]",
               "SELECT DISTINCT major FROM student", "allergy_1"};
    EXPECT_EQ(embedding_text_of(ex), "Show all majors.");
    QueryInput q{"2", "  a  b ", ""};
    EXPECT_EQ(embedding_text_of(q), "a b");
    QueryInput again{"3", embedding_text_of(q), ""};
    EXPECT_EQ(embedding_text_of(again), embedding_text_of(q));
}

TEST(Bank, StatsCountDistinctDbIds) {
    ExampleBank bank({Example{"a", "q", "", "t", "x"}, Example{"b", "q", "", "t", "y"},
                      Example{"c", "q", "", "t", "x"}, Example{"d", "q", "", "t", ""}},
                     "text-to-sql");
    auto s = bank_stats(bank);
    EXPECT_EQ(s.count, 4u);
    EXPECT_EQ(s.distinct_db_ids, 3u);
}
