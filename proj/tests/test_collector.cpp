#include <doctest.h>

#include <atomic>

#include "tmpdir.hpp"
#include "toolgap/collector.hpp"
#include "toolgap/mock_backend.hpp"

using namespace toolgap;

namespace {

const RetryPolicy kFast{2, std::chrono::milliseconds(0), 1.0};

// Calls the calculator on every turn, never answering.
class AlwaysCalls final : public Backend {
 public:
  Completion complete(const CompletionRequest& r) override {
    ++requests;
    Completion c;
    c.tool_call = ToolCall{r.tools.at(0).name, json{{"expression", "2 * 3"}}};
    return c;
  }
  std::atomic<int> requests{0};
};

std::vector<Category> repeat(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  std::vector<Category> out;
  out.insert(out.end(), a, Category::NecessaryCalled);
  out.insert(out.end(), b, Category::NecessaryNotCalled);
  out.insert(out.end(), c, Category::UnnecessaryCalled);
  out.insert(out.end(), d, Category::UnnecessaryNotCalled);
  return out;
}

std::string pct(std::uint64_t count, std::uint64_t total) { return format_tenths(percent_tenths(count, total)); }

NecessityRecord nec(const std::string& id, int n) {
  NecessityRecord r;
  r.sample_id = id;
  r.model_id = "m";
  r.param_runs = 1;
  r.add_run({"", n == 0, ""});
  return r;
}

VerbalRecord verbal(const std::string& id, std::optional<bool> says, bool called) {
  VerbalRecord r;
  r.sample_id = id;
  r.model_id = "m";
  r.verbal_necessary = says;
  r.called = called;
  return r;
}

}  // namespace

TEST_CASE("p_call") {
  CHECK(*p_call(0.3, 0.1) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(*p_call(0.2, 0.2) == 0.5);
  CHECK(*p_call(0.0, 0.4) == 0.0);
  CHECK(*p_call(1.0, 0.0) == 1.0);
  CHECK_FALSE(p_call(0.0, 0.0).has_value());
  CHECK_THROWS_AS(p_call(-0.1, 0.2), std::invalid_argument);
  CHECK_THROWS_AS(p_call(0.5, 1.5), std::invalid_argument);
}

TEST_CASE("greedy collection with scripted decisions") {
  const auto corpus = make_arithmetic_corpus(2, 100);
  const auto& s0 = corpus.samples[0];
  const auto& s1 = corpus.samples[1];
  MockBackend mock({{s0.id, {true}, true, Decision{0.3, 0.1}, std::nullopt, std::nullopt, false},
                    {s1.id, {false}, false, Decision{0.2, 0.2}, std::nullopt, std::nullopt, false}},
                   corpus);
  const std::vector<ToolHandler> tools{make_calculator()};
  CollectParams params;
  params.retry = kFast;

  const auto a = collect_behavior(mock, s0, tools, "m", params);
  CHECK(a.called);
  CHECK(a.first_called);
  CHECK(*a.p_call == doctest::Approx(0.75));
  CHECK(a.tool_rounds == 1);
  REQUIRE(a.transcript.size() == 4);
  CHECK(a.transcript[1].tool_call->name == "calculator");
  CHECK(a.transcript[2].role == "tool");
  CHECK(a.transcript[2].content == s0.answers[0]);
  CHECK(a.final_answer == "The answer is " + s0.answers[0] + ".");

  // A tie on the decision token means no call.
  const auto b = collect_behavior(mock, s1, tools, "m", params);
  CHECK_FALSE(b.called);
  CHECK(*b.p_call == 0.5);
  CHECK(b.tool_rounds == 0);
  CHECK(b.transcript.size() == 2);

  TempDir dir;
  save_behavior({a, b}, dir / "b.jsonl");
  CHECK(load_behavior(dir / "b.jsonl") == std::vector<BehaviorRecord>{a, b});
}

TEST_CASE("tool loop stops at the round cap") {
  const auto corpus = make_arithmetic_corpus(2, 100);
  AlwaysCalls backend;
  const std::vector<ToolHandler> tools{make_calculator()};
  CollectParams params;
  params.max_tool_rounds = 3;
  const auto r = collect_behavior(backend, corpus.samples[0], tools, "m", params);
  CHECK(r.called);
  CHECK(r.tool_rounds == 3);
  CHECK(backend.requests == 4);
  CHECK(r.note.find("cap") != std::string::npos);
  CHECK(r.complete);
}

TEST_CASE("transport failure leaves an incomplete record") {
  const auto corpus = make_arithmetic_corpus(2, 100);
  MockBackend mock({{corpus.samples[0].id, {true}, true, std::nullopt, std::nullopt, std::nullopt, true}}, corpus);
  const std::vector<ToolHandler> tools{make_calculator()};
  CollectParams params;
  params.retry = kFast;
  const auto r = collect_behavior(mock, corpus.samples[0], tools, "m", params);
  CHECK_FALSE(r.complete);
  CHECK_FALSE(r.note.empty());
}

TEST_CASE("classify is a bijection onto the four categories") {
  CHECK(classify(1, true) == Category::NecessaryCalled);
  CHECK(classify(1, false) == Category::NecessaryNotCalled);
  CHECK(classify(0, true) == Category::UnnecessaryCalled);
  CHECK(classify(0, false) == Category::UnnecessaryNotCalled);
  CHECK(to_string(Category::NecessaryNotCalled) == "N-NC");
  CHECK(to_string(Category::UnnecessaryCalled) == "UN-C");
  CHECK_THROWS_AS(classify(2, true), std::invalid_argument);
}

TEST_CASE("aggregation reproduces reference rows") {
  struct Row {
    std::uint64_t c[4];
    const char* pct[4];
    const char* mis;
  };
  const Row rows[] = {
      {{438, 140, 1526, 1896}, {"11.0", "3.5", "38.2", "47.4"}, "41.7"},
      {{253, 581, 481, 2685}, {"6.3", "14.5", "12.0", "67.1"}, "26.5"},
      {{419, 1204, 335, 2042}, {"10.5", "30.1", "8.4", "51.1"}, "38.5"},
      {{526, 1559, 600, 1315}, {"13.2", "39.0", "15.0", "32.9"}, "54.0"},
      {{69, 146, 108, 494}, {"8.4", "17.9", "13.2", "60.5"}, "31.1"},
      {{103, 153, 189, 372}, {"12.6", "18.7", "23.1", "45.5"}, "41.8"},
      {{98, 130, 122, 467}, {"12.0", "15.9", "14.9", "57.2"}, "30.8"},
      {{58, 164, 104, 491}, {"7.1", "20.1", "12.7", "60.1"}, "32.8"},
  };
  for (const auto& row : rows) {
    const auto cats = repeat(row.c[0], row.c[1], row.c[2], row.c[3]);
    const auto counts = aggregate(cats);
    CHECK(counts == CategoryCounts{row.c[0], row.c[1], row.c[2], row.c[3]});
    const auto t = counts.total();
    for (int k = 0; k < 4; ++k) CHECK(pct(row.c[k], t) == row.pct[k]);
    CHECK(format_tenths(counts.mismatch_pct_tenths()) == row.mis);
    CHECK(counts.mismatch_rate() ==
          doctest::Approx(static_cast<double>(row.c[1] + row.c[2]) / static_cast<double>(t)).epsilon(1e-15));
  }
  CHECK(format_cell(438, 4000) == "438 (11.0%)");
}

TEST_CASE("aggregation edge cases") {
  const auto aligned = aggregate(repeat(0, 0, 0, 7));
  CHECK(aligned.mismatch_rate() == 0.0);
  CHECK(aligned.mismatch_pct_tenths() == 0);
  const auto missed = aggregate(repeat(0, 7, 0, 0));
  CHECK(missed.mismatch_rate() == 1.0);
  CHECK(missed.mismatch_pct_tenths() == 1000);
  CHECK_THROWS_AS(aggregate(std::vector<Category>{}), std::invalid_argument);
  CHECK(category_csv_row("Qwen3-8B", "arithmetic", aggregate(repeat(438, 140, 1526, 1896))) ==
        "Qwen3-8B,arithmetic,438,140,1526,1896,41.7,11.0,3.5,38.2,47.4");
}

TEST_CASE("classify_records joins by id and drops incomplete pairs") {
  std::vector<NecessityRecord> n{nec("a", 1), nec("b", 0), nec("c", 1), nec("d", 0)};
  n[3].complete = false;
  std::vector<BehaviorRecord> b(3);
  b[0].sample_id = "b";
  b[0].called = true;
  b[1].sample_id = "a";
  b[2].sample_id = "d";
  const auto c = classify_records(n, b);
  REQUIRE(c.categories.size() == 2);
  CHECK(c.categories[0] == std::pair<std::string, Category>{"a", Category::NecessaryNotCalled});
  CHECK(c.categories[1] == std::pair<std::string, Category>{"b", Category::UnnecessaryCalled});
  CHECK(c.unclassifiable == std::vector<std::string>{"c", "d"});
}

TEST_CASE("yes/no parsing") {
  CHECK(parse_yes_no("Yes.") == true);
  CHECK(parse_yes_no("  NO, it is easy") == false);
  CHECK(parse_yes_no("'yes'") == true);
  CHECK_FALSE(parse_yes_no("It depends.").has_value());
  CHECK_FALSE(parse_yes_no("").has_value());
  CHECK_FALSE(parse_yes_no("nope").has_value());
}

TEST_CASE("verbalized protocol keeps stage one in context") {
  const auto corpus = make_arithmetic_corpus(2, 100);
  const auto& s = corpus.samples[0];
  MockBackend mock({{s.id, {true}, false, Decision{0.1, 0.6}, std::string("Yes."), std::nullopt, false}}, corpus);
  const std::vector<ToolHandler> tools{make_calculator()};
  VerbalParams params;
  params.collect.retry = kFast;
  BehaviorRecord direct;
  direct.sample_id = s.id;
  direct.called = false;
  const auto r = verbalized_protocol(mock, s, tools, "m", &direct, params);
  CHECK(r.reply == "Yes.");
  CHECK(r.verbal_necessary == true);
  CHECK(r.called);
  CHECK(r.changed_vs_direct);
  REQUIRE(r.transcript.size() >= 4);
  CHECK(r.transcript[0].content.find(s.prompt) != std::string::npos);
  CHECK(r.transcript[0].content.find(kVerbalAssessmentPrompt) != std::string::npos);
  CHECK(r.transcript[1].content == "Yes.");
  CHECK(r.transcript[2].content == kVerbalFollowupPrompt);

  TempDir dir;
  save_verbal({r}, dir / "v.jsonl");
  CHECK(load_verbal(dir / "v.jsonl") == std::vector<VerbalRecord>{r});
}

TEST_CASE("verbal metrics") {
  const std::vector<NecessityRecord> n{nec("a", 1), nec("b", 0), nec("c", 1), nec("d", 0)};

  SUBCASE("always no is undefined") {
    const std::vector<VerbalRecord> v{verbal("a", false, false), verbal("b", false, false),
                                      verbal("c", false, false), verbal("d", false, false)};
    const auto m = verbal_metrics(v, n);
    CHECK(m.mcc.undefined);
    CHECK(m.mcc.value == 0.0);
    CHECK(m.cog_exe_mismatch_rate == 0.0);
    CHECK(m.joined == 4);
  }
  SUBCASE("verbal equals the label") {
    const std::vector<VerbalRecord> v{verbal("a", true, true), verbal("b", false, true), verbal("c", true, false),
                                      verbal("d", false, false)};
    const auto m = verbal_metrics(v, n);
    CHECK(m.mcc.value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.cog_exe_mismatch_rate == 0.5);
  }
  SUBCASE("verbal is the negation") {
    const std::vector<VerbalRecord> v{verbal("a", false, false), verbal("b", true, true), verbal("c", false, false),
                                      verbal("d", true, true), verbal("x", true, true), verbal("e", std::nullopt, true)};
    const auto m = verbal_metrics(v, n);
    CHECK(m.mcc.value == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(m.joined == 4);
    CHECK(m.invalid == 1);
  }
  SUBCASE("changed rate against direct records") {
    std::vector<VerbalRecord> v{verbal("a", true, true), verbal("b", false, false)};
    std::vector<BehaviorRecord> d(1);
    d[0].sample_id = "a";
    d[0].called = false;
    const auto m = verbal_metrics(v, n, d);
    CHECK(m.joined == 1);
    CHECK(m.changed_rate == 1.0);
  }
  CHECK_THROWS_AS(verbal_metrics(std::vector<VerbalRecord>{verbal("zz", true, true)}, n), std::invalid_argument);
}
