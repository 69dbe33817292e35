#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "vlpose/vlpose.hpp"

using namespace vlpose;

namespace {

double cosine(const Tensor<float>& a, const Tensor<float>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        ab += double(a[i]) * b[i];
        aa += double(a[i]) * a[i];
        bb += double(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

TEST(Prompts, RegistryEntries) {
    EXPECT_EQ(prompt_for_category(1), "a cartoon human");
    EXPECT_EQ(prompt_for_category(10), "a ukiyoe human");
    EXPECT_EQ(prompt_for_category(17), "a dancing human photo");
    EXPECT_EQ(category_name(14), "sculpture");
    EXPECT_EQ(PromptRegistry::entries().size(), 19u);
}

TEST(Prompts, UnknownIdRaisesLookupError) {
    EXPECT_THROW(prompt_for_category(0), LookupError);
    EXPECT_THROW(prompt_for_category(20), LookupError);
    try {
        prompt_for_category(42);
    } catch (const LookupError& e) {
        EXPECT_NE(std::string(e.what()).find("42"), std::string::npos);
    }
}

TEST(Prompts, RandomPromptDependsOnlyOnSeed) {
    EXPECT_EQ(random_prompt(3), random_prompt(3));
    EXPECT_NE(random_prompt(3), random_prompt(4));
}

TEST(PseudoEmbedder, DeterministicAndShaped) {
    auto src = EmbeddingSource::pseudo(7);
    auto a = embed_text("a cartoon human", 8, 16, src), b = embed_text("a cartoon human", 8, 16, src);
    EXPECT_EQ(a.tokens.shape(), (Shape{8, 16}));
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_NE(a.tokens, embed_text("a cartoon human", 8, 16, EmbeddingSource::pseudo(8)).tokens);
    for (std::size_t i = 0; i < 8; ++i) {
        double n = 0;
        for (std::size_t j = 0; j < 16; ++j) n += double(a.tokens[i * 16 + j]) * a.tokens[i * 16 + j];
        EXPECT_NEAR(n, 1.0, 1e-5);
    }
}

TEST(PseudoEmbedder, DistinctPromptsAreNearlyOrthogonal) {
    auto src = EmbeddingSource::pseudo(0);
    Rng rng(1);
    for (int pair = 0; pair < 100; ++pair) {
        const std::string a = random_prompt(rng.next_u64()), b = random_prompt(rng.next_u64());
        ASSERT_NE(a, b);
        EXPECT_LT(std::abs(cosine(embed_text(a, 8, 64, src).tokens, embed_text(b, 8, 64, src).tokens)), 0.5) << a << " / " << b;
    }
}

TEST(PseudoEmbedder, RejectsZeroDims) {
    EXPECT_THROW(embed_text("x", 0, 4, EmbeddingSource::pseudo(0)), ConfigError);
}

TEST(EmbeddingTable, RoundTrip) {
    EmbeddingTable t;
    Rng rng(4);
    t.entries["a cartoon human"] = random_tensor<float>({2, 3}, rng);
    t.entries["a human"] = random_tensor<float>({2, 3}, rng);
    const auto path = std::filesystem::temp_directory_path() / "vlpose_table_rt.tsv";
    save_embedding_table(path, t);
    auto back = load_embedding_table(path);
    EXPECT_EQ(back.entries, t.entries);
    auto tf = embed_text("a human", 2, 3, EmbeddingSource::from_table(back));
    EXPECT_EQ(tf.tokens, t.entries["a human"]);
    EXPECT_EQ(tf.provider, "table");
    std::filesystem::remove(path);
}

TEST(EmbeddingTable, MalformedLinesReportLineAndOffset) {
    std::istringstream bad("ok\t1\t2\t0.5 0.25\nbad\t1\t2\t0.5 x\n");
    try {
        parse_embedding_table(bad, "t");
        FAIL();
    } catch (const ParseError& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("line 2"), std::string::npos) << m;
        EXPECT_NE(m.find("offset 12"), std::string::npos) << m;
    }
    std::istringstream short_row("p\t2\t2\t1 2 3\n");
    EXPECT_THROW(parse_embedding_table(short_row), ParseError);
    std::istringstream no_tab("just words\n");
    EXPECT_THROW(parse_embedding_table(no_tab), ParseError);
}

TEST(EmbeddingTable, EmptyTableHasNoPrompts) {
    std::istringstream empty("");
    auto t = parse_embedding_table(empty);
    EXPECT_TRUE(t.entries.empty());
    EXPECT_THROW(embed_text("a human", 2, 3, EmbeddingSource::from_table(t)), LookupError);
}

TEST(EmbeddingTable, DimensionMismatchRejectedAtModelBuild) {
    EmbeddingTable t;
    t.entries["a cartoon human"] = Tensor<float>({8, 16});
    ModelConfig mc;
    mc.encoder.input_h = 32;
    mc.encoder.input_w = 32;
    mc.encoder.channels = 8;
    mc.encoder.depth = 1;
    mc.encoder.heads = 2;
    mc.matcher_heads = 2;
    mc.text_len = 8;
    mc.text_dim = 32;
    EXPECT_THROW(VLPoseModel<float> m(mc, &t), ConfigError);
    mc.text_dim = 16;
    EXPECT_NO_THROW(VLPoseModel<float> m(mc, &t));
}

}  // namespace
