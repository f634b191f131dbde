#include "ritseg/model.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <set>

#include "ritseg/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace ritseg {

namespace {

ConvLayer make_conv(int cin, int cout, int k, Rng& rng, float leaky_slope) {
    ConvLayer layer;
    layer.weight = Tensor({cout, cin, k, k});
    layer.bias = Tensor({cout});
    const double fan_in = static_cast<double>(cin) * k * k;
    const double gain = std::sqrt(2.0 / (1.0 + static_cast<double>(leaky_slope) * leaky_slope));
    const double wbound = gain * std::sqrt(3.0 / fan_in);
    const double bbound = 1.0 / std::sqrt(fan_in);
    for (std::int64_t i = 0; i < layer.weight.numel(); ++i)
        layer.weight[i] = static_cast<float>(rng.uniform(-wbound, wbound));
    for (std::int64_t i = 0; i < layer.bias.numel(); ++i)
        layer.bias[i] = static_cast<float>(rng.uniform(-bbound, bbound));
    return layer;
}

BatchNormLayer make_bn(int channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor::full({channels}, 1.0f);
    bn.beta = Tensor({channels});
    bn.running.mean = Tensor({channels});
    bn.running.var = Tensor::full({channels}, 1.0f);
    bn.running.ready = false;
    return bn;
}

} // namespace

RitnetModel build_model(int num_classes, int channels, std::uint64_t seed) {
    RitnetModel m;
    m.num_classes_ = num_classes;
    m.channels_ = channels;
    Rng rng(combine_seed(seed, 0x524954u)); // init stream

    const int K = channels;
    for (int b = 0; b < 5; ++b) {
        const int in_ch = b == 0 ? 1 : K;
        DownBlock& db = m.down_[static_cast<std::size_t>(b)];
        db.convs[0] = make_conv(in_ch, K, 3, rng, RitnetModel::kLeakySlope);
        db.convs[1] = make_conv(in_ch + K, K, 1, rng, RitnetModel::kLeakySlope);
        db.convs[2] = make_conv(K, K, 3, rng, RitnetModel::kLeakySlope);
        db.convs[3] = make_conv(in_ch + 2 * K, K, 1, rng, RitnetModel::kLeakySlope);
        db.convs[4] = make_conv(K, K, 3, rng, RitnetModel::kLeakySlope);
        db.bn = make_bn(K);
    }
    for (int b = 0; b < 4; ++b) {
        UpBlock& ub = m.up_[static_cast<std::size_t>(b)];
        ub.convs[0] = make_conv(2 * K, K, 1, rng, RitnetModel::kLeakySlope);
        ub.convs[1] = make_conv(K, K, 3, rng, RitnetModel::kLeakySlope);
        ub.convs[2] = make_conv(3 * K, K, 1, rng, RitnetModel::kLeakySlope);
        ub.convs[3] = make_conv(K, K, 3, rng, RitnetModel::kLeakySlope);
    }
    m.classifier_ = make_conv(K, num_classes, 1, rng, RitnetModel::kLeakySlope);
    return m;
}

std::vector<NamedTensor> RitnetModel::named_tensors() {
    std::vector<NamedTensor> out;
    out.reserve(104);
    for (int b = 0; b < 5; ++b) {
        const std::string prefix = "down" + std::to_string(b + 1) + ".";
        DownBlock& db = down_[static_cast<std::size_t>(b)];
        for (int c = 0; c < 5; ++c) {
            const std::string cp = prefix + "conv" + std::to_string(c + 1) + ".";
            out.push_back({cp + "weight", &db.convs[static_cast<std::size_t>(c)].weight, true});
            out.push_back({cp + "bias", &db.convs[static_cast<std::size_t>(c)].bias, true});
        }
        out.push_back({prefix + "bn.gamma", &db.bn.gamma, true});
        out.push_back({prefix + "bn.beta", &db.bn.beta, true});
        out.push_back({prefix + "bn.running_mean", &db.bn.running.mean, false});
        out.push_back({prefix + "bn.running_var", &db.bn.running.var, false});
    }
    for (int b = 0; b < 4; ++b) {
        const std::string prefix = "up" + std::to_string(b + 1) + ".";
        UpBlock& ub = up_[static_cast<std::size_t>(b)];
        for (int c = 0; c < 4; ++c) {
            const std::string cp = prefix + "conv" + std::to_string(c + 1) + ".";
            out.push_back({cp + "weight", &ub.convs[static_cast<std::size_t>(c)].weight, true});
            out.push_back({cp + "bias", &ub.convs[static_cast<std::size_t>(c)].bias, true});
        }
    }
    out.push_back({"classifier.weight", &classifier_.weight, true});
    out.push_back({"classifier.bias", &classifier_.bias, true});
    return out;
}

std::vector<NamedTensor> RitnetModel::trainable_parameters() {
    std::vector<NamedTensor> all = named_tensors();
    std::vector<NamedTensor> out;
    out.reserve(94);
    for (auto& nt : all)
        if (nt.trainable) out.push_back(nt);
    return out;
}

void RitnetModel::mark_bn_ready() {
    for (auto& db : down_) db.bn.running.ready = true;
}

std::int64_t count_parameters(RitnetModel& model) {
    std::int64_t n = 0;
    for (const auto& nt : model.trainable_parameters()) n += nt.tensor->numel();
    return n;
}

// ------------------------------------------------------------- forward

namespace {

void check_input(const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != 1)
        throw ShapeError("forward: expected an Nx1xHxW batch, got " + batch.dims_str());
    if (batch.dim(2) % 16 != 0 || batch.dim(3) % 16 != 0)
        throw ShapeError("forward: H and W must be divisible by 16, got " + batch.dims_str());
}

// Kernel-path block forwards; intermediates die with the scope.

Tensor down_convs(const DownBlock& db, const Tensor& x) {
    const float s = RitnetModel::kLeakySlope;
    Tensor a = ops::leaky_relu(ops::conv2d(x, db.convs[0].weight, db.convs[0].bias), s);
    Tensor b;
    {
        Tensor cat1 = ops::concat_channels({&x, &a});
        b = ops::leaky_relu(ops::conv2d(cat1, db.convs[1].weight, db.convs[1].bias), s);
    }
    Tensor c = ops::leaky_relu(ops::conv2d(b, db.convs[2].weight, db.convs[2].bias), s);
    Tensor d;
    {
        Tensor cat2 = ops::concat_channels({&x, &a, &c});
        d = ops::leaky_relu(ops::conv2d(cat2, db.convs[3].weight, db.convs[3].bias), s);
    }
    return ops::leaky_relu(ops::conv2d(d, db.convs[4].weight, db.convs[4].bias), s);
}

Tensor down_forward_infer(const DownBlock& db, const Tensor& x) {
    Tensor e = down_convs(db, x);
    return ops::batch_norm_infer(e, db.bn.gamma, db.bn.beta, db.bn.running, RitnetModel::kBnEps);
}

Tensor down_forward_train(DownBlock& db, const Tensor& x) {
    Tensor e = down_convs(db, x);
    return ops::batch_norm_train(e, db.bn.gamma, db.bn.beta, db.bn.running,
                                 RitnetModel::kBnMomentum, RitnetModel::kBnEps, nullptr);
}

Tensor up_forward(const UpBlock& ub, const Tensor& below, const Tensor& skip) {
    const float s = RitnetModel::kLeakySlope;
    Tensor u = ops::upsample_nearest_2x(below);
    Tensor cat0 = ops::concat_channels({&u, &skip});
    Tensor a = ops::leaky_relu(ops::conv2d(cat0, ub.convs[0].weight, ub.convs[0].bias), s);
    Tensor b = ops::leaky_relu(ops::conv2d(a, ub.convs[1].weight, ub.convs[1].bias), s);
    Tensor c;
    {
        Tensor cat1 = ops::concat_channels({&cat0, &b});
        c = ops::leaky_relu(ops::conv2d(cat1, ub.convs[2].weight, ub.convs[2].bias), s);
    }
    return ops::leaky_relu(ops::conv2d(c, ub.convs[3].weight, ub.convs[3].bias), s);
}

} // namespace

Tensor RitnetModel::infer_forward(const Tensor& batch) const {
    check_input(batch);
    Tensor x1 = down_forward_infer(down_[0], batch);
    Tensor x2 = down_forward_infer(down_[1], ops::avg_pool_2x2(x1));
    Tensor x3 = down_forward_infer(down_[2], ops::avg_pool_2x2(x2));
    Tensor x4 = down_forward_infer(down_[3], ops::avg_pool_2x2(x3));
    Tensor x5 = down_forward_infer(down_[4], ops::avg_pool_2x2(x4));
    Tensor u = up_forward(up_[0], x5, x4);
    u = up_forward(up_[1], u, x3);
    u = up_forward(up_[2], u, x2);
    u = up_forward(up_[3], u, x1);
    Tensor logits = ops::conv2d(u, classifier_.weight, classifier_.bias);
    return ops::softmax_channels(logits);
}

Tensor RitnetModel::forward(const Tensor& batch, Mode mode) {
    if (mode == Mode::infer) return infer_forward(batch);
    check_input(batch);
    Tensor x1 = down_forward_train(down_[0], batch);
    Tensor x2 = down_forward_train(down_[1], ops::avg_pool_2x2(x1));
    Tensor x3 = down_forward_train(down_[2], ops::avg_pool_2x2(x2));
    Tensor x4 = down_forward_train(down_[3], ops::avg_pool_2x2(x3));
    Tensor x5 = down_forward_train(down_[4], ops::avg_pool_2x2(x4));
    Tensor u = up_forward(up_[0], x5, x4);
    u = up_forward(up_[1], u, x3);
    u = up_forward(up_[2], u, x2);
    u = up_forward(up_[3], u, x1);
    Tensor logits = ops::conv2d(u, classifier_.weight, classifier_.bias);
    return ops::softmax_channels(logits);
}

namespace {

struct TapedDown {
    ValueId w[5], b[5], gamma, beta;
};

ValueId down_forward(Tape& t, DownBlock& db, const TapedDown& p, ValueId x, Mode mode) {
    const float s = RitnetModel::kLeakySlope;
    ValueId a = ops::leaky_relu(t, ops::conv2d(t, x, p.w[0], p.b[0]), s);
    ValueId cat1 = ops::concat_channels(t, {x, a});
    ValueId b = ops::leaky_relu(t, ops::conv2d(t, cat1, p.w[1], p.b[1]), s);
    ValueId c = ops::leaky_relu(t, ops::conv2d(t, b, p.w[2], p.b[2]), s);
    ValueId cat2 = ops::concat_channels(t, {x, a, c});
    ValueId d = ops::leaky_relu(t, ops::conv2d(t, cat2, p.w[3], p.b[3]), s);
    ValueId e = ops::leaky_relu(t, ops::conv2d(t, d, p.w[4], p.b[4]), s);
    return ops::batch_norm(t, e, p.gamma, p.beta, db.bn.running, mode,
                           RitnetModel::kBnMomentum, RitnetModel::kBnEps);
}

struct TapedUp {
    ValueId w[4], b[4];
};

ValueId up_forward(Tape& t, const TapedUp& p, ValueId below, ValueId skip) {
    const float s = RitnetModel::kLeakySlope;
    ValueId u = ops::upsample_nearest_2x(t, below);
    ValueId cat0 = ops::concat_channels(t, {u, skip});
    ValueId a = ops::leaky_relu(t, ops::conv2d(t, cat0, p.w[0], p.b[0]), s);
    ValueId b = ops::leaky_relu(t, ops::conv2d(t, a, p.w[1], p.b[1]), s);
    ValueId cat1 = ops::concat_channels(t, {cat0, b});
    ValueId c = ops::leaky_relu(t, ops::conv2d(t, cat1, p.w[2], p.b[2]), s);
    return ops::leaky_relu(t, ops::conv2d(t, c, p.w[3], p.b[3]), s);
}

} // namespace

RitnetModel::TapedForward RitnetModel::forward(Tape& tape, const Tensor& batch, Mode mode) {
    check_input(batch);
    TapedForward tf;

    // Register parameters in registry order.
    std::array<TapedDown, 5> dp;
    std::array<TapedUp, 4> upp;
    ValueId clw = 0, clb = 0;
    auto add_param = [&](Tensor& t) {
        Tensor copy = t;
        copy.requires_grad = true;
        ValueId id = tape.leaf(std::move(copy));
        tf.param_ids.push_back(id);
        return id;
    };
    for (int bidx = 0; bidx < 5; ++bidx) {
        DownBlock& db = down_[static_cast<std::size_t>(bidx)];
        for (int c = 0; c < 5; ++c) {
            dp[static_cast<std::size_t>(bidx)].w[c] = add_param(db.convs[static_cast<std::size_t>(c)].weight);
            dp[static_cast<std::size_t>(bidx)].b[c] = add_param(db.convs[static_cast<std::size_t>(c)].bias);
        }
        dp[static_cast<std::size_t>(bidx)].gamma = add_param(db.bn.gamma);
        dp[static_cast<std::size_t>(bidx)].beta = add_param(db.bn.beta);
    }
    for (int bidx = 0; bidx < 4; ++bidx) {
        UpBlock& ub = up_[static_cast<std::size_t>(bidx)];
        for (int c = 0; c < 4; ++c) {
            upp[static_cast<std::size_t>(bidx)].w[c] = add_param(ub.convs[static_cast<std::size_t>(c)].weight);
            upp[static_cast<std::size_t>(bidx)].b[c] = add_param(ub.convs[static_cast<std::size_t>(c)].bias);
        }
    }
    clw = add_param(classifier_.weight);
    clb = add_param(classifier_.bias);

    ValueId input = tape.leaf(batch);
    tf.input = input;
    ValueId x1 = down_forward(tape, down_[0], dp[0], input, mode);
    ValueId x2 = down_forward(tape, down_[1], dp[1], ops::avg_pool_2x2(tape, x1), mode);
    ValueId x3 = down_forward(tape, down_[2], dp[2], ops::avg_pool_2x2(tape, x2), mode);
    ValueId x4 = down_forward(tape, down_[3], dp[3], ops::avg_pool_2x2(tape, x3), mode);
    ValueId x5 = down_forward(tape, down_[4], dp[4], ops::avg_pool_2x2(tape, x4), mode);
    ValueId u = up_forward(tape, upp[0], x5, x4);
    u = up_forward(tape, upp[1], u, x3);
    u = up_forward(tape, upp[2], u, x2);
    u = up_forward(tape, upp[3], u, x1);
    ValueId logits = ops::conv2d(tape, u, clw, clb);
    tf.probs = ops::softmax_channels(tape, logits);
    return tf;
}

// ---------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'R', 'I', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_raw(std::FILE* f, const void* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n)
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint: short write");
}

void write_u32(std::FILE* f, std::uint32_t v) { write_raw(f, &v, 4); }

void read_raw(std::FILE* f, void* p, std::size_t n, const char* what) {
    if (std::fread(p, 1, n, f) != n)
        throw CheckpointError(CheckpointError::Kind::truncated,
                              std::string("checkpoint: truncated file while reading ") + what);
}

std::uint32_t read_u32(std::FILE* f, const char* what) {
    std::uint32_t v = 0;
    read_raw(f, &v, 4, what);
    return v;
}

} // namespace

void save_checkpoint(RitnetModel& model, const std::filesystem::path& path, const CheckpointMeta& meta) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) throw CheckpointError(CheckpointError::Kind::format, "cannot create " + path.string());
    const auto tensors = model.named_tensors();
    write_raw(f.get(), kMagic, 4);
    write_u32(f.get(), kVersion);
    write_u32(f.get(), static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        write_u32(f.get(), static_cast<std::uint32_t>(nt.name.size()));
        write_raw(f.get(), nt.name.data(), nt.name.size());
        const auto& dims = nt.tensor->dims();
        write_u32(f.get(), static_cast<std::uint32_t>(dims.size()));
        for (int d : dims) write_u32(f.get(), static_cast<std::uint32_t>(d));
        write_raw(f.get(), nt.tensor->data(), sizeof(float) * static_cast<std::size_t>(nt.tensor->numel()));
    }
    write_u32(f.get(), meta.epoch);
    write_raw(f.get(), &meta.best_score, 4);
    if (std::fflush(f.get()) != 0)
        throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint: flush failed");
}

RitnetModel load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw CheckpointError(CheckpointError::Kind::format, "cannot open " + path.string());

    char magic[4];
    read_raw(f.get(), magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Kind::format, "checkpoint: bad magic in " + path.string());
    const std::uint32_t version = read_u32(f.get(), "version");
    if (version != kVersion)
        throw CheckpointError(CheckpointError::Kind::format,
                              "checkpoint: unsupported version " + std::to_string(version));

    RitnetModel model = build_model();
    auto tensors = model.named_tensors();
    std::set<std::string> remaining;
    for (const auto& nt : tensors) remaining.insert(nt.name);

    const std::uint32_t count = read_u32(f.get(), "tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(f.get(), "name length");
        if (name_len > 4096)
            throw CheckpointError(CheckpointError::Kind::format, "checkpoint: implausible name length");
        std::string name(name_len, '\0');
        read_raw(f.get(), name.data(), name_len, "tensor name");
        const std::uint32_t rank = read_u32(f.get(), "rank");
        if (rank == 0 || rank > 4)
            throw CheckpointError(CheckpointError::Kind::format, "checkpoint: bad rank for " + name);
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(read_u32(f.get(), "dims"));

        NamedTensor* target = nullptr;
        for (auto& nt : tensors)
            if (nt.name == name) {
                target = &nt;
                break;
            }
        if (!target)
            throw CheckpointError(CheckpointError::Kind::unknown_tensor,
                                  "checkpoint: unknown tensor '" + name + "'");
        if (target->tensor->dims() != dims)
            throw CheckpointError(CheckpointError::Kind::dim_mismatch,
                                  "checkpoint: dims mismatch for '" + name + "'");
        read_raw(f.get(), target->tensor->data(),
                 sizeof(float) * static_cast<std::size_t>(target->tensor->numel()), name.c_str());
        remaining.erase(name);
    }
    if (!remaining.empty())
        throw CheckpointError(CheckpointError::Kind::missing_tensor,
                              "checkpoint: missing tensor '" + *remaining.begin() + "'");

    CheckpointMeta m;
    m.epoch = read_u32(f.get(), "epoch");
    read_raw(f.get(), &m.best_score, 4, "best score");
    if (meta) *meta = m;
    model.mark_bn_ready();
    return model;
}

} // namespace ritseg
