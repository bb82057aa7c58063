#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "lsr/errors.hpp"
#include "lsr/model.hpp"
#include "lsr/ops.hpp"
#include "lsr/serialize.hpp"
#include "oracles.hpp"

using namespace lsr;
using namespace lsr::testing;

TEST_CASE("dm: stride chain divides the length by 16") {
    LSRNet model({4096, 3}, 1);
    Rng rng(1);
    CHECK(model.dm_forward(random_tensor({2, 1, 4096}, rng), Mode::Eval).shape() ==
          Shape{2, 32, 256});

    LSRNet small({512, 3}, 1);
    CHECK(small.dm_forward(random_tensor({1, 1, 512}, rng), Mode::Eval).shape() ==
          Shape{1, 32, 32});

    CHECK_THROWS_AS(model.dm_forward(random_tensor({1, 1, 100}, rng), Mode::Eval),
                    ContractError);
}

TEST_CASE("fem: channel identities hold pointwise") {
    LSRNet model({512, 3}, 2);
    const Tensor h({1, 32, 1}, [] {
        std::vector<double> v(32);
        for (size_t i = 0; i < 32; ++i) v[i] = -8.0 + 0.5 * static_cast<double>(i);
        return v;
    }());
    const Tensor f = model.fem_forward(h);
    REQUIRE(f.shape() == Shape{1, 3, 32, 1});
    for (int64_t i = 0; i < 32; ++i) {
        const double x = h.at(i);
        CHECK(f.at(0 * 32 + i) == doctest::Approx(std::min(std::max(0.0, x), 6.0)));
        CHECK(f.at(1 * 32 + i) == doctest::Approx(std::max(std::min(x, 1.0), -1.0)));
        CHECK(f.at(2 * 32 + i) ==
              doctest::Approx(x * std::min(std::max(0.0, x + 3.0), 6.0) / 6.0));
    }
}

TEST_CASE("fem: scalar examples") {
    LSRNet model({512, 3}, 2);
    const Tensor two = model.fem_forward(Tensor::full({1, 32, 1}, 2.0));
    CHECK(two.at(0) == doctest::Approx(2.0));
    CHECK(two.at(32) == doctest::Approx(1.0));
    CHECK(two.at(64) == doctest::Approx(5.0 * 2.0 / 6.0)); // 1.6667

    const Tensor neg = model.fem_forward(Tensor::full({1, 32, 1}, -4.0));
    CHECK(neg.at(0) == doctest::Approx(0.0));
    CHECK(neg.at(32) == doctest::Approx(-1.0));
    CHECK(neg.at(64) == doctest::Approx(0.0));

    Rng rng(3);
    CHECK(model.fem_forward(random_tensor({2, 32, 256}, rng)).shape() ==
          Shape{2, 3, 32, 256});
}

TEST_CASE("ces: spatial/channel contracts from the layer table") {
    Rng rng(4);
    Rng init(5);
    CESBlock ces1(16, 32, 2, 2, init);
    CHECK(ces1.forward(random_tensor({1, 16, 8, 64}, rng), Mode::Eval).shape() ==
          Shape{1, 32, 4, 32});

    CESBlock ces3(64, 64, 1, 2, init);
    CHECK(ces3.forward(random_tensor({1, 64, 2, 16}, rng), Mode::Eval).shape() ==
          Shape{1, 64, 2, 8});

    CHECK_THROWS_AS(ces1.forward(random_tensor({1, 8, 8, 64}, rng), Mode::Eval),
                    ContractError);
}

TEST_CASE("ces: channel provenance with zeroed convolutions") {
    // With all right-branch conv weights zero, the right half reduces to the
    // pooled, zero-padded skip; the left half is 0.25 * pooled left input.
    Rng init(6);
    CESBlock ces(16, 32, 2, 2, init);
    auto zero_all = [](Tensor& t) {
        for (auto& v : t.data_mut()) v = 0.0;
    };
    zero_all(ces.gconv.weight);
    zero_all(ces.gconv.bias);
    zero_all(ces.gpconv.weight);
    zero_all(ces.gpconv.bias);
    zero_all(ces.sam_right.conv.weight);
    zero_all(ces.sam_right.conv.bias);
    zero_all(ces.sam_left.conv.weight);
    zero_all(ces.sam_left.conv.bias);
    zero_all(ces.cam_right.fc1);
    zero_all(ces.cam_right.fc2);
    zero_all(ces.cam_left.fc1);
    zero_all(ces.cam_left.fc2);

    Rng rng(7);
    const Tensor x = random_tensor({1, 16, 8, 64}, rng);
    const Tensor y = ces.forward(x, Mode::Eval);
    REQUIRE(y.shape() == Shape{1, 32, 4, 32});

    // Undo the shuffle to inspect the concat layout: [right(24) | left(8)].
    const Tensor concat = channel_shuffle(y, 16);
    auto [left_in, right_in] = channel_split(x, 8);
    const Tensor pooled_right = avg_pool2d(right_in, 2, 2, 2, 2);
    const Tensor pooled_left = avg_pool2d(left_in, 2, 2, 2, 2);

    for (int64_t c = 0; c < 24; ++c)
        for (int64_t i = 0; i < 4 * 32; ++i) {
            const double got = concat.at((c * 4 * 32) + i);
            // right branch output = 0 + skip; skip has channels 8..23 zero
            const double want = c < 8 ? pooled_right.at(c * 4 * 32 + i) : 0.0;
            CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
    for (int64_t c = 0; c < 8; ++c)
        for (int64_t i = 0; i < 4 * 32; ++i)
            CHECK(concat.at(((24 + c) * 4 * 32) + i) ==
                  doctest::Approx(0.25 * pooled_left.at(c * 4 * 32 + i)).epsilon(1e-12));
}

TEST_CASE("ces: output channel multiset is {right outputs} U {left channels}") {
    // Tag channels with distinct constants; with zero conv weights the left
    // tags must all survive into the output (scaled by the 0.25 gates).
    Rng init(8);
    CESBlock ces(16, 32, 1, 1, init); // stride 1 keeps constants exact
    for (auto& v : ces.gconv.weight.data_mut()) v = 0.0;
    for (auto& v : ces.gconv.bias.data_mut()) v = 0.0;
    for (auto& v : ces.gpconv.weight.data_mut()) v = 0.0;
    for (auto& v : ces.gpconv.bias.data_mut()) v = 0.0;
    for (auto& v : ces.sam_right.conv.weight.data_mut()) v = 0.0;
    for (auto& v : ces.sam_right.conv.bias.data_mut()) v = 0.0;
    for (auto& v : ces.sam_left.conv.weight.data_mut()) v = 0.0;
    for (auto& v : ces.sam_left.conv.bias.data_mut()) v = 0.0;
    for (auto& v : ces.cam_right.fc1.data_mut()) v = 0.0;
    for (auto& v : ces.cam_right.fc2.data_mut()) v = 0.0;
    for (auto& v : ces.cam_left.fc1.data_mut()) v = 0.0;
    for (auto& v : ces.cam_left.fc2.data_mut()) v = 0.0;

    std::vector<double> tags(16 * 4);
    for (int64_t c = 0; c < 16; ++c)
        for (int64_t i = 0; i < 4; ++i) tags[static_cast<size_t>(c * 4 + i)] = 1.0 + c;
    const Tensor x({1, 16, 2, 2}, tags);
    const Tensor y = ces.forward(x, Mode::Eval);

    std::vector<int> found(17, 0);
    for (int64_t c = 0; c < 32; ++c) {
        const double v = y.at(c * 4); // channels are constant maps
        // left tags arrive scaled by 0.25; right-skip tags unscaled
        for (int64_t tag = 1; tag <= 16; ++tag) {
            if (v == doctest::Approx(0.25 * tag).epsilon(1e-12) && tag <= 8)
                ++found[static_cast<size_t>(tag)];
            else if (v == doctest::Approx(static_cast<double>(tag)).epsilon(1e-12) &&
                     tag > 8)
                ++found[static_cast<size_t>(tag)];
        }
    }
    for (int64_t tag = 1; tag <= 16; ++tag) CHECK(found[static_cast<size_t>(tag)] == 1);
}

TEST_CASE("forward: full shape trace for the default config") {
    const auto trace = shape_trace({4096, 3});
    const std::vector<std::pair<std::string, Shape>> expected = {
        {"cd1", {8, 2048}},       {"cd2", {16, 1024}},     {"cd3", {32, 256}},
        {"fem", {3, 32, 256}},    {"stem_conv", {16, 16, 128}},
        {"stem_pool", {16, 8, 64}}, {"ces1", {32, 4, 32}},  {"ces2", {64, 2, 16}},
        {"ces3", {64, 2, 8}},     {"gap", {64}},           {"fc", {3}},
    };
    REQUIRE(trace.size() == expected.size());
    for (size_t i = 0; i < expected.size(); ++i) {
        CHECK(trace[i].name == expected[i].first);
        CHECK(trace[i].shape == expected[i].second);
    }
    CHECK(trace.back().params == 64 * 3 + 3);
}

TEST_CASE("trace: indivisible lengths name the offending layer") {
    CHECK_THROWS_WITH_AS(shape_trace({4095, 3}), doctest::Contains("cd1"), ContractError);
    // constructor validates via the trace and the 512-multiple requirement
    CHECK_THROWS_AS(LSRNet({4095, 3}, 0), ContractError);
    CHECK_THROWS_AS(LSRNet({0, 3}, 0), ContractError);
}

TEST_CASE("forward: probabilities, determinism, batch consistency") {
    LSRNet model({512, 3}, 42);
    Rng rng(9);
    const Tensor x = random_tensor({3, 1, 512}, rng);
    const Tensor p1 = model.forward(x, Mode::Eval);
    const Tensor p2 = model.forward(x, Mode::Eval);
    REQUIRE(p1.shape() == Shape{3, 3});
    for (int64_t b = 0; b < 3; ++b) {
        double row = 0.0;
        for (int64_t o = 0; o < 3; ++o) row += p1.at(b * 3 + o);
        CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
    }
    for (int64_t i = 0; i < p1.numel(); ++i) CHECK(p1.at(i) == p2.at(i)); // bit-identical

    CHECK_THROWS_AS(model.forward(random_tensor({1, 1, 1024}, rng), Mode::Eval),
                    ContractError);
}

TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
    LSRNet model({512, 4}, 123);
    const auto bytes = model.save();
    LSRNet loaded = LSRNet::load(bytes);
    CHECK(loaded.config().input_length == 512);
    CHECK(loaded.config().classes == 4);
    const auto bytes2 = loaded.save();
    REQUIRE(bytes.size() == bytes2.size());
    CHECK(bytes == bytes2);

    // load restores the forward behavior up to f32 rounding
    Rng rng(10);
    const Tensor x = random_tensor({2, 1, 512}, rng);
    const Tensor a = model.forward(x, Mode::Eval);
    const Tensor b = loaded.forward(x, Mode::Eval);
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-4));
}

TEST_CASE("checkpoint: truncation and corruption are format errors") {
    LSRNet model({512, 3}, 7);
    const auto bytes = model.save();

    auto truncated = bytes;
    truncated.resize(bytes.size() / 2);
    CHECK_THROWS_AS(LSRNet::load(truncated), FormatError);

    auto corrupted = bytes;
    corrupted[0] ^= 0x01; // magic
    CHECK_THROWS_AS(LSRNet::load(corrupted), FormatError);

    corrupted = bytes;
    corrupted[bytes.size() / 2] ^= 0x40; // payload byte, caught by the CRC
    CHECK_THROWS_AS(LSRNet::load(corrupted), FormatError);

    CHECK_THROWS_AS(LSRNet::load(std::vector<uint8_t>{}), FormatError);
}

TEST_CASE("checkpoint: crafted streams with bad payloads are format errors") {
    auto craft = [](float input_length, float classes, float patch_value) {
        ByteWriter w;
        w.raw("LSRW", 4);
        w.u8(0x01);
        w.u32le(1); // config record only: count mismatch unless config invalid first
        w.u16le(10);
        w.str("__config__");
        w.u8(1);
        w.u32le(2);
        w.f32le(input_length);
        w.f32le(classes);
        (void)patch_value;
        w.crc_trailer();
        return w.bytes();
    };
    // architecture rejects the embedded config -> format error, not contract
    CHECK_THROWS_AS(LSRNet::load(craft(100.0f, 3.0f, 0.0f)), FormatError);
    CHECK_THROWS_AS(LSRNet::load(craft(512.0f, 0.0f, 0.0f)), FormatError);

    // non-finite stored weights are rejected as a malformed stream
    LSRNet model({512, 3}, 9);
    auto bytes = model.save();
    // first weight value of the first tensor record sits right after the
    // config record: header(9) + config(2+10+1+4+8) + record header
    size_t at = 9 + 25;
    const uint16_t name_len = static_cast<uint16_t>(bytes[at]) |
                              (static_cast<uint16_t>(bytes[at + 1]) << 8);
    at += 2 + name_len + 1 + 4 * 4; // name, rank byte, 4 dims of the conv kernel
    bytes[at] = 0x00;
    bytes[at + 1] = 0x00;
    bytes[at + 2] = 0x80;
    bytes[at + 3] = 0x7f; // +inf
    // fix the CRC so only the payload is wrong
    ByteWriter fixed;
    fixed.raw(bytes.data(), bytes.size() - 4);
    fixed.crc_trailer();
    CHECK_THROWS_AS(LSRNet::load(fixed.bytes()), FormatError);
}

TEST_CASE("checkpoint/trace/parameters agree on the parameter total") {
    for (const LSRNetConfig cfg : {LSRNetConfig{4096, 3}, LSRNetConfig{512, 5}}) {
        LSRNet model(cfg, 3);
        int64_t params_total = 0;
        for (const auto& p : model.parameters()) params_total += p.tensor.numel();
        CHECK(params_total == trace_total_params(shape_trace(cfg)));
        CHECK(params_total == checkpoint_param_count(model.save()));
    }
}

TEST_CASE("model: end-to-end gradients match finite differences") {
    LSRNet model({512, 3}, 11);
    Rng rng(12);
    const Tensor x = random_tensor({2, 1, 512}, rng, false, -1.0, 1.0);
    const std::vector<int64_t> labels = {0, 2};

    auto params = model.parameters();
    model.zero_grad();
    cross_entropy(model.forward(x, Mode::Train), labels).backward();

    // Spot-check a slice of every parameter tensor against central differences.
    auto loss_at = [&]() {
        NoGradGuard no_grad;
        return cross_entropy(model.forward(x, Mode::Train), labels).at(0);
    };
    double max_err = 0.0;
    int checked = 0;
    for (auto& p : params) {
        if (!p.trainable) continue;
        auto w = p.tensor.data_mut();
        const auto g = p.tensor.grad();
        const size_t stride = std::max<size_t>(1, w.size() / 5);
        for (size_t i = 0; i < w.size(); i += stride) {
            max_err = std::max(max_err, fd_best_rel_err(loss_at, w, i, g[i], 1e-3));
            ++checked;
        }
    }
    CHECK(checked > 100);
    CHECK(max_err < 1e-3);
}
