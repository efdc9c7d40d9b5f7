#include "cxdi/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include "cxdi/volume_io.hpp"
#include "json.hpp"

namespace cxdi::nn {

namespace {

constexpr char kParamsMagic[4] = {'C', 'X', 'N', 'P'};

std::string_view kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::lrelu: return "lrelu";
        case LayerKind::relu: return "relu";
        case LayerKind::norm: return "norm";
        case LayerKind::maxpool2: return "maxpool2";
        case LayerKind::upsample2: return "upsample2";
    }
    return "?";
}

class Builder {
public:
    explicit Builder(const NetworkSpec& s) : spec_(s) {}

    void conv(std::vector<LayerSpec>& seq, int in, int out, Extent3 k) {
        seq.push_back({LayerKind::conv, in, out, k, spec_.lrelu_slope, spec_.upsample, 0});
    }
    void simple(std::vector<LayerSpec>& seq, LayerKind kind, int c) {
        seq.push_back({kind, c, c, {1, 1, 1}, spec_.lrelu_slope, spec_.upsample, 0});
    }
    // 3x3x3 conv + LReLU + norm
    void conv_block(std::vector<LayerSpec>& seq, int in, int out) {
        conv(seq, in, out, {3, 3, 3});
        simple(seq, LayerKind::lrelu, out);
        simple(seq, LayerKind::norm, out);
    }
    // 3x1x1 + 1x3x1 + 1x1x3 conv + LReLU + norm
    void factorized_block(std::vector<LayerSpec>& seq, int c) {
        conv(seq, c, c, {3, 1, 1});
        conv(seq, c, c, {1, 3, 1});
        conv(seq, c, c, {1, 1, 3});
        simple(seq, LayerKind::lrelu, c);
        simple(seq, LayerKind::norm, c);
    }

private:
    const NetworkSpec& spec_;
};

void assign_offsets(std::vector<LayerSpec>& seq, std::size_t& offset) {
    for (auto& l : seq) {
        l.param_offset = offset;
        offset += l.param_count();
    }
}

Tensor shape_only(const Tensor& t) {
    Tensor s;
    s.channels = t.channels;
    s.nx = t.nx;
    s.ny = t.ny;
    s.nz = t.nz;
    return s;
}

std::span<const double> slice(std::span<const double> p, std::size_t off, std::size_t n) { return p.subspan(off, n); }

Tensor run_sequence(const std::vector<LayerSpec>& seq, Tensor x, std::span<const double> params,
                    std::vector<LayerTape>* tape) {
    if (tape) tape->assign(seq.size(), {});
    for (std::size_t li = 0; li < seq.size(); ++li) {
        const LayerSpec& l = seq[li];
        LayerTape* t = tape ? &(*tape)[li] : nullptr;
        switch (l.kind) {
            case LayerKind::conv: {
                const std::size_t nw = conv_weight_count(l.in_channels, l.out_channels, l.kernel);
                Tensor y = conv3d_forward(x, slice(params, l.param_offset, nw),
                                          slice(params, l.param_offset + nw, l.out_channels), l.out_channels, l.kernel);
                if (t) t->input = std::move(x);
                x = std::move(y);
                break;
            }
            case LayerKind::lrelu:
            case LayerKind::relu: {
                Tensor y = lrelu_forward(x, l.kind == LayerKind::relu ? 0.0 : l.lrelu_slope);
                if (t) t->input = std::move(x);
                x = std::move(y);
                break;
            }
            case LayerKind::norm: {
                const auto c = static_cast<std::size_t>(l.out_channels);
                x = norm_forward(x, slice(params, l.param_offset, c), slice(params, l.param_offset + c, c),
                                 t ? &t->norm : nullptr);
                break;
            }
            case LayerKind::maxpool2: {
                Tensor y = maxpool2_forward(x, t ? &t->argmax : nullptr);
                if (t) t->input = shape_only(x);
                x = std::move(y);
                break;
            }
            case LayerKind::upsample2: {
                Tensor y = upsample2_forward(x, l.upsample);
                if (t) t->input = shape_only(x);
                x = std::move(y);
                break;
            }
        }
    }
    return x;
}

Tensor backward_sequence(const std::vector<LayerSpec>& seq, Tensor g, std::span<const double> params,
                         const std::vector<LayerTape>& tape, std::vector<double>& grads) {
    if (tape.size() != seq.size()) throw Error(Errc::MissingTape, "tape does not match the layer sequence");
    for (std::size_t li = seq.size(); li-- > 0;) {
        const LayerSpec& l = seq[li];
        const LayerTape& t = tape[li];
        switch (l.kind) {
            case LayerKind::conv: {
                const std::size_t nw = conv_weight_count(l.in_channels, l.out_channels, l.kernel);
                auto cg = conv3d_backward(g, t.input, slice(params, l.param_offset, nw), l.kernel);
                for (std::size_t i = 0; i < nw; ++i) grads[l.param_offset + i] += cg.weights[i];
                for (int o = 0; o < l.out_channels; ++o) grads[l.param_offset + nw + o] += cg.bias[o];
                g = std::move(cg.input);
                break;
            }
            case LayerKind::lrelu:
            case LayerKind::relu:
                g = lrelu_backward(g, t.input, l.kind == LayerKind::relu ? 0.0 : l.lrelu_slope);
                break;
            case LayerKind::norm: {
                const auto c = static_cast<std::size_t>(l.out_channels);
                auto ng = norm_backward(g, t.norm, slice(params, l.param_offset, c));
                for (std::size_t i = 0; i < c; ++i) {
                    grads[l.param_offset + i] += ng.gamma[i];
                    grads[l.param_offset + c + i] += ng.beta[i];
                }
                g = std::move(ng.input);
                break;
            }
            case LayerKind::maxpool2:
                g = maxpool2_backward(g, t.argmax, t.input);
                break;
            case LayerKind::upsample2:
                g = upsample2_backward(g, l.upsample, t.input);
                break;
        }
    }
    return g;
}

RealVolume to_volume(const Tensor& t) {
    RealVolume v(Grid3(t.nx, t.ny, t.nz));
    std::copy(t.channel(0), t.channel(0) + t.spatial(), v.values().begin());
    return v;
}

Tensor to_tensor(const RealVolume& v) {
    const Grid3& g = v.grid();
    Tensor t(1, g.nx, g.ny, g.nz);
    std::copy(v.values().begin(), v.values().end(), t.data.begin());
    return t;
}

nlohmann::ordered_json spec_json(const NetworkSpec& s) {
    nlohmann::ordered_json j;
    j["input_grid"] = {s.input_grid.nx, s.input_grid.ny, s.input_grid.nz};
    j["encoder_widths"] = s.encoder_widths;
    j["lrelu_slope"] = s.lrelu_slope;
    j["upsample"] = s.upsample == UpsampleMode::nearest ? "nearest" : "trilinear";
    return j;
}

NetworkSpec spec_from(const nlohmann::json& j) {
    NetworkSpec s;
    if (j.contains("input_grid")) {
        const auto& g = j.at("input_grid");
        if (g.is_number()) {
            s.input_grid = Grid3::cube(g.get<int>());
        } else {
            s.input_grid = Grid3(g.at(0).get<int>(), g.at(1).get<int>(), g.at(2).get<int>());
        }
    }
    s.encoder_widths = j.value("encoder_widths", s.encoder_widths);
    s.lrelu_slope = j.value("lrelu_slope", s.lrelu_slope);
    const std::string up = j.value("upsample", std::string("nearest"));
    if (up == "nearest") {
        s.upsample = UpsampleMode::nearest;
    } else if (up == "trilinear") {
        s.upsample = UpsampleMode::trilinear;
    } else {
        throw Error(Errc::InvalidArgument, "unknown upsample mode '" + up + "'");
    }
    s.validate();
    return s;
}

}  // namespace

std::size_t LayerSpec::param_count() const {
    switch (kind) {
        case LayerKind::conv: return conv_weight_count(in_channels, out_channels, kernel) + out_channels;
        case LayerKind::norm: return 2 * static_cast<std::size_t>(out_channels);
        default: return 0;
    }
}

NetworkSpec NetworkSpec::desk(int n) {
    NetworkSpec s;
    s.input_grid = Grid3::cube(n);
    s.encoder_widths = {16, 32, 64};
    return s;
}

NetworkSpec NetworkSpec::paper_scale() {
    NetworkSpec s;
    s.input_grid = Grid3::cube(64);
    s.encoder_widths = {32, 64, 128};
    return s;
}

std::vector<int> NetworkSpec::decoder_widths() const {
    std::vector<int> w(encoder_widths.begin(), encoder_widths.end() - 1);
    std::reverse(w.begin(), w.end());
    return w;
}

void NetworkSpec::validate() const {
    if (encoder_widths.empty()) throw Error(Errc::InvalidArgument, "network needs at least one encoder stage");
    for (int w : encoder_widths)
        if (w <= 0) throw Error(Errc::InvalidArgument, "encoder widths must be positive");
    const int factor = 1 << encoder_widths.size();
    if (input_grid.nx % factor || input_grid.ny % factor || input_grid.nz % factor) {
        throw Error(Errc::OddExtent, "input grid " + to_string(input_grid) + " is not divisible by " +
                                         std::to_string(factor) + " for " + std::to_string(encoder_widths.size()) +
                                         " pooling stages");
    }
    if (!(lrelu_slope >= 0) || lrelu_slope >= 1) throw Error(Errc::InvalidArgument, "LReLU slope must be in [0, 1)");
}

std::string NetworkSpec::to_json() const { return spec_json(*this).dump(); }

NetworkSpec NetworkSpec::from_json(const std::string& text) {
    try {
        return spec_from(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidArgument, std::string("network spec: ") + e.what());
    }
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    Builder b(spec_);
    int prev = 1;
    for (int w : spec_.encoder_widths) {
        b.conv_block(encoder_, prev, w);
        b.factorized_block(encoder_, w);
        b.simple(encoder_, LayerKind::maxpool2, w);
        prev = w;
    }
    for (auto* head : {&amp_head_, &phase_head_}) {
        int c = spec_.encoder_widths.back();
        for (int w : spec_.decoder_widths()) {
            b.simple(*head, LayerKind::upsample2, c);
            b.conv_block(*head, c, w);
            b.factorized_block(*head, w);
            c = w;
        }
        b.conv(*head, c, 1, {3, 3, 3});
        b.simple(*head, LayerKind::relu, 1);
    }
    std::size_t offset = 0;
    assign_offsets(encoder_, offset);
    assign_offsets(amp_head_, offset);
    assign_offsets(phase_head_, offset);
    param_count_ = offset;
}

std::vector<LayerSpec> Network::layers() const {
    std::vector<LayerSpec> all = encoder_;
    all.insert(all.end(), amp_head_.begin(), amp_head_.end());
    all.insert(all.end(), phase_head_.begin(), phase_head_.end());
    return all;
}

NetworkOutput Network::forward(const RealVolume& input, std::span<const double> params, TapeState* tape) const {
    if (input.grid() != spec_.input_grid) {
        throw Error(Errc::ShapeMismatch, "network expects " + to_string(spec_.input_grid) + ", got " +
                                             to_string(input.grid()));
    }
    if (params.size() != param_count_) throw Error(Errc::ShapeMismatch, "parameter vector has the wrong length");
    Tensor x = to_tensor(input);
    const double peak = *std::max_element(x.data.begin(), x.data.end());
    if (peak > 0.0)
        for (double& v : x.data) v /= peak;

    const Tensor code = run_sequence(encoder_, std::move(x), params, tape ? &tape->encoder : nullptr);
    NetworkOutput out;
    out.amplitude = to_volume(run_sequence(amp_head_, code, params, tape ? &tape->amplitude_head : nullptr));
    out.phase = to_volume(run_sequence(phase_head_, code, params, tape ? &tape->phase_head : nullptr));
    return out;
}

std::vector<double> Network::backward(const RealVolume& d_amplitude, const RealVolume& d_phase,
                                      std::span<const double> params, const TapeState& tape) const {
    if (tape.empty()) throw Error(Errc::MissingTape, "backward needs a training-mode forward pass");
    if (d_amplitude.grid() != spec_.output_grid() || d_phase.grid() != spec_.output_grid()) {
        throw Error(Errc::ShapeMismatch, "output gradients must live on " + to_string(spec_.output_grid()));
    }
    std::vector<double> grads(param_count_, 0.0);
    Tensor g = backward_sequence(amp_head_, to_tensor(d_amplitude), params, tape.amplitude_head, grads);
    const Tensor gp = backward_sequence(phase_head_, to_tensor(d_phase), params, tape.phase_head, grads);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += gp.data[i];
    backward_sequence(encoder_, std::move(g), params, tape.encoder, grads);
    return grads;
}

NetworkParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
    const Network net(spec);
    NetworkParams p{spec, seed, std::vector<double>(net.param_count(), 0.0)};
    std::mt19937_64 rng(seed);
    for (const auto& l : net.layers()) {
        if (l.kind == LayerKind::conv) {
            const std::size_t nw = conv_weight_count(l.in_channels, l.out_channels, l.kernel);
            const double fan_in = static_cast<double>(l.in_channels * l.kernel[0] * l.kernel[1] * l.kernel[2]);
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / ((1.0 + l.lrelu_slope * l.lrelu_slope) * fan_in)));
            for (std::size_t i = 0; i < nw; ++i) p.values[l.param_offset + i] = dist(rng);
        } else if (l.kind == LayerKind::norm) {
            for (int c = 0; c < l.out_channels; ++c) p.values[l.param_offset + c] = 1.0;
        }
    }
    return p;
}

std::string encode_params(const NetworkParams& p) {
    const Network net(p.spec);
    if (p.values.size() != net.param_count()) throw Error(Errc::ShapeMismatch, "parameter count does not match spec");
    nlohmann::ordered_json h;
    h["spec"] = spec_json(p.spec);
    h["seed"] = p.seed;
    h["param_count"] = p.values.size();
    h["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : net.layers()) {
        if (l.param_count() == 0) continue;
        nlohmann::ordered_json e;
        e["kind"] = kind_name(l.kind);
        e["in"] = l.in_channels;
        e["out"] = l.out_channels;
        if (l.kind == LayerKind::conv) e["kernel"] = {l.kernel[0], l.kernel[1], l.kernel[2]};
        e["offset"] = l.param_offset;
        e["count"] = l.param_count();
        h["layers"].push_back(std::move(e));
    }
    const std::string text = h.dump();
    std::string out(kParamsMagic, 4);
    const auto len = static_cast<std::uint32_t>(text.size());
    out.append(reinterpret_cast<const char*>(&len), 4);
    out += text;
    out.append(reinterpret_cast<const char*>(p.values.data()), p.values.size() * sizeof(double));
    return out;
}

NetworkParams decode_params(std::string_view bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kParamsMagic, 4) != 0) {
        throw Error(Errc::BadMagic, "missing CXNP magic");
    }
    std::uint32_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + 4, 4);
    if (bytes.size() < 8 + static_cast<std::size_t>(hlen)) throw Error(Errc::HeaderParse, "header runs past end of file");
    NetworkParams p;
    std::size_t count = 0;
    try {
        const auto h = nlohmann::json::parse(bytes.substr(8, hlen));
        p.spec = spec_from(h.at("spec"));
        p.seed = h.at("seed").get<std::uint64_t>();
        count = h.at("param_count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::HeaderParse, e.what());
    }
    if (count != Network(p.spec).param_count()) {
        throw Error(Errc::DimensionMismatch, "stored parameter count disagrees with the spec");
    }
    const std::string_view payload = bytes.substr(8 + hlen);
    if (payload.size() < count * sizeof(double)) throw Error(Errc::TruncatedPayload, "parameter payload truncated");
    if (payload.size() > count * sizeof(double)) throw Error(Errc::DimensionMismatch, "parameter payload too long");
    p.values.resize(count);
    std::memcpy(p.values.data(), payload.data(), payload.size());
    return p;
}

void save_params(const NetworkParams& p, const std::filesystem::path& path) {
    write_file_atomic(path, encode_params(p));
}

NetworkParams load_params(const std::filesystem::path& path) { return decode_params(read_file(path)); }

}  // namespace cxdi::nn
