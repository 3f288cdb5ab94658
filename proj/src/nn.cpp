#include "sleepscore/nn.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace sleepscore {

BatchNormState make_batch_norm(std::int64_t channels) {
    if (channels < 1) {
        throw std::invalid_argument("batch_norm: channel count must be positive, got " +
                                    std::to_string(channels));
    }
    BatchNormState s;
    s.gamma = Tensor::full({channels}, 1.0, true);
    s.beta = Tensor::zeros({channels}, true);
    s.moving_mean.assign(static_cast<std::size_t>(channels), 0.0);
    s.moving_var.assign(static_cast<std::size_t>(channels), 1.0);
    return s;
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode) {
    if (x.ndim() < 2) {
        throw std::invalid_argument("batch_norm: input must have a channel axis, got " +
                                    shape_str(x.shape()));
    }
    const std::int64_t ch = x.dim(x.ndim() - 1);
    if (ch != state.gamma.dim(0)) {
        throw std::invalid_argument("batch_norm: " + std::to_string(state.gamma.dim(0)) +
                                    " channels in state but input is " + shape_str(x.shape()));
    }
    const std::int64_t rows = x.size() / ch;
    const auto xv = x.values();
    const auto gv = state.gamma.values();
    const auto bv = state.beta.values();

    auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(ch));

    if (mode == Mode::Train) {
        if (rows < 2) {
            throw std::invalid_argument(
                "batch_norm: train mode needs at least 2 rows per channel, got " +
                std::to_string(rows));
        }
        std::vector<double> mean(static_cast<std::size_t>(ch), 0.0);
        std::vector<double> var(static_cast<std::size_t>(ch), 0.0);
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < ch; ++c) {
                mean[static_cast<std::size_t>(c)] += xv[static_cast<std::size_t>(r * ch + c)];
            }
        }
        for (auto& m : mean) {
            m /= static_cast<double>(rows);
        }
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < ch; ++c) {
                const double d =
                    xv[static_cast<std::size_t>(r * ch + c)] - mean[static_cast<std::size_t>(c)];
                var[static_cast<std::size_t>(c)] += d * d;
            }
        }
        for (auto& v : var) {
            v /= static_cast<double>(rows);
        }
        for (std::int64_t c = 0; c < ch; ++c) {
            (*inv_std)[static_cast<std::size_t>(c)] =
                1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + state.epsilon);
            state.moving_mean[static_cast<std::size_t>(c)] =
                state.decay * state.moving_mean[static_cast<std::size_t>(c)] +
                (1.0 - state.decay) * mean[static_cast<std::size_t>(c)];
            state.moving_var[static_cast<std::size_t>(c)] =
                state.decay * state.moving_var[static_cast<std::size_t>(c)] +
                (1.0 - state.decay) * var[static_cast<std::size_t>(c)];
        }
        std::vector<double> out(static_cast<std::size_t>(x.size()));
        for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t c = 0; c < ch; ++c) {
                const std::size_t i = static_cast<std::size_t>(r * ch + c);
                const std::size_t cc = static_cast<std::size_t>(c);
                (*xhat)[i] = (xv[i] - mean[cc]) * (*inv_std)[cc];
                out[i] = gv[cc] * (*xhat)[i] + bv[cc];
            }
        }
        Tensor gamma = state.gamma;
        return make_op(
            x.shape(), std::move(out), {x, state.gamma, state.beta},
            [xhat, inv_std, gamma, rows, ch](std::span<const double> msg,
                                             std::span<std::vector<double>*> pm) {
                const auto gv = gamma.values();
                std::vector<double> sum_dy(static_cast<std::size_t>(ch), 0.0);
                std::vector<double> sum_dy_xhat(static_cast<std::size_t>(ch), 0.0);
                for (std::int64_t r = 0; r < rows; ++r) {
                    for (std::int64_t c = 0; c < ch; ++c) {
                        const std::size_t i = static_cast<std::size_t>(r * ch + c);
                        sum_dy[static_cast<std::size_t>(c)] += msg[i];
                        sum_dy_xhat[static_cast<std::size_t>(c)] += msg[i] * (*xhat)[i];
                    }
                }
                if (pm[0]) {
                    const double n = static_cast<double>(rows);
                    for (std::int64_t r = 0; r < rows; ++r) {
                        for (std::int64_t c = 0; c < ch; ++c) {
                            const std::size_t i = static_cast<std::size_t>(r * ch + c);
                            const std::size_t cc = static_cast<std::size_t>(c);
                            (*pm[0])[i] += gv[cc] * (*inv_std)[cc] / n *
                                           (n * msg[i] - sum_dy[cc] -
                                            (*xhat)[i] * sum_dy_xhat[cc]);
                        }
                    }
                }
                if (pm[1]) {
                    for (std::int64_t c = 0; c < ch; ++c) {
                        (*pm[1])[static_cast<std::size_t>(c)] +=
                            sum_dy_xhat[static_cast<std::size_t>(c)];
                    }
                }
                if (pm[2]) {
                    for (std::int64_t c = 0; c < ch; ++c) {
                        (*pm[2])[static_cast<std::size_t>(c)] +=
                            sum_dy[static_cast<std::size_t>(c)];
                    }
                }
            });
    }

    for (std::int64_t c = 0; c < ch; ++c) {
        (*inv_std)[static_cast<std::size_t>(c)] =
            1.0 / std::sqrt(state.moving_var[static_cast<std::size_t>(c)] + state.epsilon);
    }
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < ch; ++c) {
            const std::size_t i = static_cast<std::size_t>(r * ch + c);
            const std::size_t cc = static_cast<std::size_t>(c);
            (*xhat)[i] = (xv[i] - state.moving_mean[cc]) * (*inv_std)[cc];
            out[i] = gv[cc] * (*xhat)[i] + bv[cc];
        }
    }
    Tensor gamma = state.gamma;
    return make_op(x.shape(), std::move(out), {x, state.gamma, state.beta},
                   [xhat, inv_std, gamma, rows, ch](std::span<const double> msg,
                                                    std::span<std::vector<double>*> pm) {
                       const auto gv = gamma.values();
                       for (std::int64_t r = 0; r < rows; ++r) {
                           for (std::int64_t c = 0; c < ch; ++c) {
                               const std::size_t i = static_cast<std::size_t>(r * ch + c);
                               const std::size_t cc = static_cast<std::size_t>(c);
                               if (pm[0]) {
                                   (*pm[0])[i] += msg[i] * gv[cc] * (*inv_std)[cc];
                               }
                               if (pm[1]) {
                                   (*pm[1])[cc] += msg[i] * (*xhat)[i];
                               }
                               if (pm[2]) {
                                   (*pm[2])[cc] += msg[i];
                               }
                           }
                       }
                   });
}

Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        throw std::invalid_argument("dropout: p must be in [0,1), got " + std::to_string(p));
    }
    if (mode == Mode::Eval || p == 0.0) {
        return x;
    }
    const double keep = 1.0 - p;
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
    for (auto& m : *mask) {
        m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    std::vector<double> out(static_cast<std::size_t>(x.size()));
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * (*mask)[i];
    }
    return make_op(x.shape(), std::move(out), {x},
                   [mask](std::span<const double> msg, std::span<std::vector<double>*> pm) {
                       if (!pm[0]) {
                           return;
                       }
                       for (std::size_t i = 0; i < msg.size(); ++i) {
                           (*pm[0])[i] += msg[i] * (*mask)[i];
                       }
                   });
}

ConvBlock make_conv_block(std::int64_t width, std::int64_t in_ch, std::int64_t out_ch,
                          std::int64_t stride, Rng& rng, bool subject_to_weight_decay) {
    if (width < 1 || stride < 1) {
        throw std::invalid_argument("conv block: width and stride must be positive");
    }
    ConvBlock b;
    const double bound = 1.0 / std::sqrt(static_cast<double>(width * in_ch));
    b.filters = Tensor::uniform({width, in_ch, out_ch}, -bound, bound, rng, true);
    b.stride = stride;
    b.bn = make_batch_norm(out_ch);
    b.subject_to_weight_decay = subject_to_weight_decay;
    return b;
}

Tensor conv_block_forward(const Tensor& x, ConvBlock& block, Mode mode) {
    Tensor y = conv1d(x, block.filters, block.stride, Padding::Same);
    return relu(batch_norm(y, block.bn, mode));
}

DenseBlock make_dense_block(std::int64_t in, std::int64_t out, Rng& rng) {
    DenseBlock d;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    d.weights = Tensor::uniform({in, out}, -bound, bound, rng, true);
    d.bn = make_batch_norm(out);
    return d;
}

Tensor dense(const Tensor& x, DenseBlock& block, Mode mode) {
    return relu(batch_norm(matmul(x, block.weights), block.bn, mode));
}

PeepholeLstmParams make_lstm_params(std::int64_t input_size, std::int64_t hidden_size,
                                    Rng& rng) {
    if (input_size < 1 || hidden_size < 1) {
        throw std::invalid_argument("lstm: sizes must be positive");
    }
    PeepholeLstmParams p;
    p.input_size = input_size;
    p.hidden_size = hidden_size;
    const double wb = 1.0 / std::sqrt(static_cast<double>(input_size));
    const double ub = 1.0 / std::sqrt(static_cast<double>(hidden_size));
    p.w_i = Tensor::uniform({input_size, hidden_size}, -wb, wb, rng, true);
    p.w_f = Tensor::uniform({input_size, hidden_size}, -wb, wb, rng, true);
    p.w_g = Tensor::uniform({input_size, hidden_size}, -wb, wb, rng, true);
    p.w_o = Tensor::uniform({input_size, hidden_size}, -wb, wb, rng, true);
    p.u_i = Tensor::uniform({hidden_size, hidden_size}, -ub, ub, rng, true);
    p.u_f = Tensor::uniform({hidden_size, hidden_size}, -ub, ub, rng, true);
    p.u_g = Tensor::uniform({hidden_size, hidden_size}, -ub, ub, rng, true);
    p.u_o = Tensor::uniform({hidden_size, hidden_size}, -ub, ub, rng, true);
    p.p_i = Tensor::uniform({hidden_size}, -ub, ub, rng, true);
    p.p_f = Tensor::uniform({hidden_size}, -ub, ub, rng, true);
    p.p_o = Tensor::uniform({hidden_size}, -ub, ub, rng, true);
    p.b_i = Tensor::zeros({hidden_size}, true);
    p.b_f = Tensor::full({hidden_size}, 1.0, true);  // open forget gates at the start
    p.b_g = Tensor::zeros({hidden_size}, true);
    p.b_o = Tensor::zeros({hidden_size}, true);
    return p;
}

LstmState zero_lstm_state(std::int64_t lanes, std::int64_t hidden) {
    return LstmState{Tensor::zeros({lanes, hidden}), Tensor::zeros({lanes, hidden})};
}

LstmStep lstm_step(const Tensor& x, const LstmState& state, const PeepholeLstmParams& params) {
    if (x.ndim() != 2 || x.dim(1) != params.input_size) {
        throw std::invalid_argument("lstm_step: input " + shape_str(x.shape()) +
                                    " does not match input size " +
                                    std::to_string(params.input_size));
    }
    if (state.h.shape() != Shape{x.dim(0), params.hidden_size} ||
        state.c.shape() != Shape{x.dim(0), params.hidden_size}) {
        throw std::invalid_argument("lstm_step: state " + shape_str(state.h.shape()) +
                                    " does not match hidden size " +
                                    std::to_string(params.hidden_size));
    }
    const Tensor& h = state.h;
    const Tensor& c = state.c;
    LstmStep out;
    out.i = sigmoid(add_rowvec(
        add(add(matmul(x, params.w_i), matmul(h, params.u_i)), mul_rowvec(c, params.p_i)),
        params.b_i));
    out.f = sigmoid(add_rowvec(
        add(add(matmul(x, params.w_f), matmul(h, params.u_f)), mul_rowvec(c, params.p_f)),
        params.b_f));
    out.g = tanh(add_rowvec(add(matmul(x, params.w_g), matmul(h, params.u_g)), params.b_g));
    out.c = add(mul(out.f, c), mul(out.i, out.g));
    out.o = sigmoid(add_rowvec(
        add(add(matmul(x, params.w_o), matmul(h, params.u_o)), mul_rowvec(out.c, params.p_o)),
        params.b_o));
    out.h = mul(out.o, tanh(out.c));
    return out;
}

LstmStackParams make_lstm_stack(std::int64_t input_size, std::int64_t hidden_size,
                                std::int64_t n_layers, Rng& rng) {
    if (n_layers < 1) {
        throw std::invalid_argument("lstm stack: need at least one layer");
    }
    LstmStackParams s;
    for (std::int64_t l = 0; l < n_layers; ++l) {
        s.layers.push_back(
            make_lstm_params(l == 0 ? input_size : hidden_size, hidden_size, rng));
    }
    return s;
}

LstmStackState zero_stack_state(const LstmStackParams& params, std::int64_t lanes) {
    LstmStackState s;
    for (const auto& layer : params.layers) {
        s.layers.push_back(zero_lstm_state(lanes, layer.hidden_size));
    }
    return s;
}

namespace {

// Runs one direction of the stack over the given visit order; returns the
// top-layer hidden state per position, indexed by original position.
std::vector<Tensor> run_stack(const std::vector<Tensor>& seq,
                              const std::vector<std::int64_t>& order,
                              const LstmStackParams& params, LstmStackState& state, Mode mode,
                              double dropout_p, Rng& rng) {
    std::vector<Tensor> top(seq.size());
    std::vector<LstmState> carry = state.layers;
    for (const std::int64_t t : order) {
        Tensor input = seq[static_cast<std::size_t>(t)];
        for (std::size_t l = 0; l < params.layers.size(); ++l) {
            if (l > 0) {
                input = dropout(input, dropout_p, mode, rng);
            }
            LstmStep step = lstm_step(input, carry[l], params.layers[l]);
            carry[l] = LstmState{step.h, step.c};
            input = step.h;
        }
        top[static_cast<std::size_t>(t)] = input;
    }
    for (std::size_t l = 0; l < carry.size(); ++l) {
        state.layers[l] = LstmState{carry[l].h.detached(), carry[l].c.detached()};
    }
    return top;
}

}  // namespace

std::vector<Tensor> bilstm_forward(const std::vector<Tensor>& seq,
                                   const LstmStackParams& fwd_params,
                                   const LstmStackParams& bwd_params,
                                   LstmStackState& fwd_state, LstmStackState& bwd_state,
                                   Mode mode, double dropout_p, Rng& rng) {
    if (seq.empty()) {
        throw std::invalid_argument("bilstm_forward: empty sequence");
    }
    const std::int64_t n = static_cast<std::int64_t>(seq.size());
    std::vector<std::int64_t> fwd_order(static_cast<std::size_t>(n));
    std::vector<std::int64_t> bwd_order(static_cast<std::size_t>(n));
    for (std::int64_t t = 0; t < n; ++t) {
        fwd_order[static_cast<std::size_t>(t)] = t;
        bwd_order[static_cast<std::size_t>(t)] = n - 1 - t;
    }
    std::vector<Tensor> f =
        run_stack(seq, fwd_order, fwd_params, fwd_state, mode, dropout_p, rng);
    std::vector<Tensor> b =
        run_stack(seq, bwd_order, bwd_params, bwd_state, mode, dropout_p, rng);
    std::vector<Tensor> out;
    out.reserve(seq.size());
    for (std::size_t t = 0; t < seq.size(); ++t) {
        out.push_back(concat({f[t], b[t]}, 1));
    }
    return out;
}

}  // namespace sleepscore
