#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <string>
#include <vector>

#include "lexrag/assistant.hpp"
#include "lexrag/util.hpp"

#include "test_support.hpp"

using namespace lexrag;

namespace {

Chunk fixture_chunk(int ordinal, std::string text) {
    Chunk chunk;
    chunk.chunk_id = "ustg:" + std::to_string(ordinal);
    chunk.doc_id = "ustg";
    chunk.ordinal = ordinal;
    chunk.text = std::move(text);
    return chunk;
}

std::vector<Chunk> golden_contexts() {
    return {fixture_chunk(0, "Die Lieferung wird dort ausgeführt, wo sich der Gegenstand "
                             "zur Zeit der Verschaffung der Verfügungsmacht befindet."),
            fixture_chunk(1, "Bei Versendung gilt die Lieferung dort als ausgeführt, wo "
                             "die Beförderung beginnt.")};
}

const std::string kQuestion = "Wo ist die Lieferung steuerbar?";

}  // namespace

TEST_CASE("templates: load and unknown id") {
    auto templates = TemplateSet::load_dir(data_dir() / "templates");
    CHECK(templates.get("place-of-supply").template_id == "place-of-supply");
    CHECK(templates.get("general-analysis").template_id == "general-analysis");
    CHECK_THROWS_AS(templates.get("nope"), std::runtime_error);
    CHECK_THROWS_AS(
        PromptTemplate::load_file(data_dir() / "templates" / "place-of-supply.txt", "nope"),
        std::runtime_error);
}

TEST_CASE("render: empty contexts remove the whole context line") {
    auto templates = TemplateSet::load_dir(data_dir() / "templates");
    for (const char* id : {"place-of-supply", "general-analysis"}) {
        auto transcript = render_prompt(templates.get(id), {}, kQuestion);
        REQUIRE(transcript.size() == 2);
        CHECK(transcript[0].role == "system");
        CHECK(transcript[0].content.find("context:") == std::string::npos);
        // removed entirely, not left as an empty line
        CHECK(transcript[0].content.find("\n\n\n") == std::string::npos);
        CHECK(transcript[0].content.back() != '\n');
        CHECK(transcript[1].role == "user");
        CHECK(transcript[1].content == kQuestion);
    }
}

TEST_CASE("render: contexts appear in order before the question") {
    auto templates = TemplateSet::load_dir(data_dir() / "templates");
    auto contexts = golden_contexts();
    auto transcript = render_prompt(templates.get("place-of-supply"), contexts, kQuestion);
    const std::string& system = transcript[0].content;
    auto pos_a = system.find(contexts[0].text);
    auto pos_b = system.find(contexts[1].text);
    REQUIRE(pos_a != std::string::npos);
    REQUIRE(pos_b != std::string::npos);
    CHECK(pos_a < pos_b);
    CHECK(system.find("context:") != std::string::npos);
}

TEST_CASE("render: byte-identical against the committed goldens") {
    auto templates = TemplateSet::load_dir(data_dir() / "templates");
    auto contexts = golden_contexts();
    struct GoldenCase {
        const char* template_id;
        bool with_contexts;
        const char* file;
    };
    const GoldenCase cases[] = {
        {"place-of-supply", false, "place-of-supply_noctx.txt"},
        {"place-of-supply", true, "place-of-supply_2ctx.txt"},
        {"general-analysis", false, "general-analysis_noctx.txt"},
        {"general-analysis", true, "general-analysis_2ctx.txt"},
    };
    for (const auto& test : cases) {
        CAPTURE(test.file);
        auto transcript = render_prompt(templates.get(test.template_id),
                                        test.with_contexts
                                            ? std::span<const Chunk>(contexts)
                                            : std::span<const Chunk>(),
                                        kQuestion);
        auto golden = read_file(fixtures_dir() / "goldens" / test.file);
        CHECK(transcript_to_text(transcript) == golden);
    }
}

TEST_CASE("render: determinism and empty question error") {
    auto templates = TemplateSet::load_dir(data_dir() / "templates");
    auto contexts = golden_contexts();
    auto a = render_prompt(templates.get("place-of-supply"), contexts, kQuestion);
    auto b = render_prompt(templates.get("place-of-supply"), contexts, kQuestion);
    CHECK(transcript_to_text(a) == transcript_to_text(b));
    CHECK_THROWS_AS(render_prompt(templates.get("place-of-supply"), contexts, "  "),
                    std::invalid_argument);
}

TEST_CASE("render: plain context style knob") {
    auto templates = TemplateSet::load_dir(data_dir() / "templates");
    auto contexts = golden_contexts();
    ContextStyle plain;
    plain.source_headers = false;
    auto transcript =
        render_prompt(templates.get("place-of-supply"), contexts, kQuestion, plain);
    CHECK(transcript[0].content.find("[source:") == std::string::npos);
}

TEST_CASE("parse_answer: plain object") {
    auto outcome = parse_answer(
        R"({"justification":"Nach §3 Abs 7 liegt der Ort in Italien.","country":"Italien"})");
    REQUIRE(outcome.ok());
    CHECK(outcome.answer.justification == "Nach §3 Abs 7 liegt der Ort in Italien.");
    CHECK(outcome.answer.country_raw == "Italien");
}

TEST_CASE("parse_answer: fenced and prose-wrapped objects parse identically") {
    std::string object =
        R"({"justification":"Der Ort liegt in Kroatien.","country":"Kroatien"})";
    auto direct = parse_answer(object);
    auto fenced = parse_answer("Hier das Ergebnis:\n```json\n" + object + "\n```\nGruß");
    REQUIRE(direct.ok());
    REQUIRE(fenced.ok());
    CHECK(direct.answer.justification == fenced.answer.justification);
    CHECK(direct.answer.country_raw == fenced.answer.country_raw);
}

TEST_CASE("parse_answer: typed errors, never throws") {
    CHECK(parse_answer(R"({"country":"AT"})").status == ParseStatus::SchemaError);
    CHECK(parse_answer(R"({"justification":"x"})").status == ParseStatus::SchemaError);
    CHECK(parse_answer(R"({"justification":"","country":"AT"})").status ==
          ParseStatus::SchemaError);
    CHECK(parse_answer(R"({"justification":12,"country":"AT"})").status ==
          ParseStatus::SchemaError);
    CHECK(parse_answer("kein JSON hier").status == ParseStatus::NoJson);
    CHECK(parse_answer("").status == ParseStatus::NoJson);
    CHECK(parse_answer("{kaputt").status == ParseStatus::NoJson);
    CHECK(parse_answer("{} keine Schlüssel").status == ParseStatus::SchemaError);

    // fuzzing a few garbage inputs: totality means no exceptions
    SplitMix rng(99);
    const std::string alphabet = "{}[]\"\\:,abc123 \n";
    for (int i = 0; i < 500; ++i) {
        std::string garbage;
        size_t len = rng.next_below(60);
        for (size_t j = 0; j < len; ++j) {
            garbage += alphabet[rng.next_below(alphabet.size())];
        }
        CHECK_NOTHROW(parse_answer(garbage));
    }
}

TEST_CASE("parse_answer: round-trips the harness formatter") {
    auto raw = format_answer("Die Leistung ist in Österreich steuerbar (§ 3a).", "Österreich");
    auto outcome = parse_answer(raw);
    REQUIRE(outcome.ok());
    CHECK(outcome.answer.justification ==
          "Die Leistung ist in Österreich steuerbar (§ 3a).");
    CHECK(outcome.answer.country_raw == "Österreich");
}

TEST_CASE("normalize_country: alias table") {
    auto countries = CountryTable::load(data_dir() / "countries.tsv");
    CHECK(countries.normalize("Österreich") == "AT");
    CHECK(countries.normalize("österreich") == "AT");
    CHECK(countries.normalize("OESTERREICH") == "AT");
    CHECK(countries.normalize("Kroatien") == "HR");
    CHECK(countries.normalize("Croatia") == "HR");
    CHECK(countries.normalize("Italien") == "IT");
    CHECK(countries.normalize("Dänemark") == "DK");
    CHECK(countries.normalize(" Deutschland ") == "DE");
    // code passthrough
    CHECK(countries.normalize("AT") == "AT");
    CHECK(countries.normalize("hr") == "HR");
    // surrounding prose is fine as long as exactly one country is named
    CHECK(countries.normalize("Der Ort liegt in Italien.") == "IT");
}

TEST_CASE("normalize_country: multi-country and unknowns resolve to UNRESOLVED") {
    auto countries = CountryTable::load(data_dir() / "countries.tsv");
    CHECK(countries.normalize("Italien oder Österreich") == kUnresolvedCountry);
    CHECK(countries.normalize("Atlantis") == kUnresolvedCountry);
    CHECK(countries.normalize("") == kUnresolvedCountry);
    // substring of a longer word must not match
    CHECK(countries.normalize("Das Nordirland-Protokoll") == kUnresolvedCountry);
}

TEST_CASE("scripted mock: canned responses by routing key") {
    std::map<std::string, ScriptEntry> script;
    script["case-1"] = {"antwort eins", 0};
    auto backend = LlmBackend::scripted(std::move(script));

    ChatTranscript transcript{{"system", "s"}, {"user", "frage"}};
    auto result = backend.ask(transcript, "case-1");
    REQUIRE(result.ok);
    CHECK(result.text == "antwort eins");
    CHECK(result.attempts == 1);

    auto missing = backend.ask(transcript, "case-2");
    CHECK(!missing.ok);
    CHECK(missing.error.find("unscripted case") != std::string::npos);
}

TEST_CASE("scripted mock: prompt-hash routing") {
    ChatTranscript transcript{{"system", "s"}, {"user", "frage"}};
    std::map<std::string, ScriptEntry> script;
    script[hash_hex128(transcript_to_text(transcript))] = {"per hash", 0};
    auto backend = LlmBackend::scripted(std::move(script));
    auto result = backend.ask(transcript);
    REQUIRE(result.ok);
    CHECK(result.text == "per hash");
}

TEST_CASE("scripted mock: fault injection counts attempts") {
    std::map<std::string, ScriptEntry> script;
    script["flaky"] = {"endlich", 2};  // two transport failures, then success
    auto backend = LlmBackend::scripted(std::move(script));
    ChatTranscript transcript{{"system", "s"}, {"user", "frage"}};

    auto result = backend.ask(transcript, "flaky");
    REQUIRE(result.ok);
    CHECK(result.text == "endlich");
    CHECK(result.attempts == 3);

    // exhausted retry budget surfaces as a recorded failure, not a throw
    std::map<std::string, ScriptEntry> hopeless;
    hopeless["dead"] = {"nie", 99};
    auto strict = LlmBackend::scripted(std::move(hopeless));
    strict.set_max_attempts(2);
    auto failed = strict.ask(transcript, "dead");
    CHECK(!failed.ok);
    CHECK(failed.attempts == 2);
    CHECK(failed.error.find("transport failure") != std::string::npos);
}

TEST_CASE("ask: transcript validation") {
    auto backend = LlmBackend::scripted({});
    CHECK_THROWS_AS(backend.ask({}), std::invalid_argument);
    CHECK_THROWS_AS(backend.ask({{"user", "frage"}}), std::invalid_argument);
    CHECK_THROWS_AS(backend.ask({{"system", "s"}}), std::invalid_argument);
}

TEST_CASE("scripted mock: loads script files with fail_times") {
    auto backend = LlmBackend::scripted_from_file(
        data_dir() / "demo" / "script_all_correct.jsonl");
    ChatTranscript transcript{{"system", "s"}, {"user", "frage"}};
    auto result = backend.ask(transcript, "case-003");
    REQUIRE(result.ok);
    CHECK(result.text.find("Kroatien") != std::string::npos);
}
