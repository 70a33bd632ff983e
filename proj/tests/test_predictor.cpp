#include <doctest.h>

#include "promptforge/core.hpp"
#include "promptforge/predictor.hpp"
#include "promptforge/rng.hpp"

using namespace promptforge;

TEST_CASE("first occurrence picks the earliest label") {
    CHECK(extract_first_occurrence("The sentiment is negative.", {"positive", "negative"}) == "negative");
    CHECK(extract_first_occurrence("bad then great", {"great", "bad"}) == "bad");
    CHECK(!extract_first_occurrence("nothing matches", {"positive", "negative"}).has_value());
}

TEST_CASE("first occurrence is case-insensitive and returns the canonical spelling") {
    auto got = extract_first_occurrence("POSITIVE!", {"positive"}, true);
    REQUIRE(got.has_value());
    CHECK(*got == "positive");
    CHECK(!extract_first_occurrence("POSITIVE!", {"positive"}, false).has_value());
}

TEST_CASE("first occurrence ties: longest label, then list order") {
    // both labels match at position 0; the longer one wins
    CHECK(extract_first_occurrence("negativity bias", {"negative", "negativity"}) == "negativity");
    // equal position and equal length: list order decides
    CHECK(extract_first_occurrence("ab...", {"ab", "ab"}) == "ab");
    CHECK(extract_first_occurrence("catalog", {"cat", "catalog"}) == "catalog");
}

TEST_CASE("first occurrence ignores anything after the first match") {
    Rng rng(77);
    for (int i = 0; i < 300; ++i) {
        std::string suffix;
        for (std::size_t j = 0; j < rng.next_below(30); ++j) {
            suffix += static_cast<char>('a' + rng.next_below(26));
        }
        auto base = extract_first_occurrence("verdict: yes maybe no", {"yes", "no"});
        auto extended = extract_first_occurrence("verdict: yes maybe no" + suffix, {"yes", "no"});
        CHECK(base == extended);
    }
}

TEST_CASE("marker extraction matches the fishbowl example") {
    std::string response = "To solve this problem, we need to calculate the total number of fish "
                           "in the fishbowls at all the tables. First, [...] Then, we add the 3 fish "
                           "from the table that has 3 fish: 62 fish + 3 fish = 65 fish. "
                           "<final_answer> 65 </final_answer>";
    CHECK(extract_marker(response, "<final_answer>", "</final_answer>") == "65");
}

TEST_CASE("marker extraction edge cases") {
    CHECK(!extract_marker("no markers here", "<final_answer>", "</final_answer>").has_value());
    CHECK(!extract_marker("</final_answer> backwards <final_answer>", "<final_answer>", "</final_answer>")
               .has_value());
    // first pair wins
    CHECK(extract_marker("<final_answer>a</final_answer> <final_answer>b</final_answer>", "<final_answer>",
                         "</final_answer>") == "a");
    // content preserved byte for byte, modulo outer whitespace
    CHECK(extract_marker("<final_answer>  A  b\tC </final_answer>", "<final_answer>", "</final_answer>") ==
          "A  b\tC");
}

TEST_CASE("marker round trip over random payloads") {
    Rng rng(31337);
    const std::string begin = "<final_answer>";
    const std::string end = "</final_answer>";
    for (int i = 0; i < 2000; ++i) {
        std::string x;
        std::size_t len = rng.next_below(60);
        for (std::size_t j = 0; j < len; ++j) {
            char c = static_cast<char>(' ' + rng.next_below(94)); // printable ascii
            x += c;
        }
        if (x.find(begin) != std::string::npos || x.find(end) != std::string::npos) continue;
        auto got = extract_marker(begin + x + end, begin, end);
        REQUIRE(got.has_value());
        CHECK(*got == trim(x));
    }
}

TEST_CASE("extract dispatches on the spec kind") {
    ExtractionSpec marker;
    CHECK(extract(marker, "<final_answer>42</final_answer>") == "42");

    ExtractionSpec first;
    first.kind = ExtractionKind::first_occurrence;
    first.label_alphabet = {"yes", "no"};
    CHECK(extract(first, "well, NO") == "no");
}
