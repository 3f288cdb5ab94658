#pragma once

// Layer primitives: batch norm, dropout, conv/dense blocks and the peephole
// LSTM pieces the sequence model is built from.

#include <cstdint>
#include <utility>
#include <vector>

#include "sleepscore/rng.hpp"
#include "sleepscore/tensor.hpp"

namespace sleepscore {

struct BatchNormState {
    Tensor gamma;  // trainable per-channel scale
    Tensor beta;   // trainable per-channel shift
    std::vector<double> moving_mean;
    std::vector<double> moving_var;
    double decay = 0.999;
    double epsilon = 1e-5;
};

BatchNormState make_batch_norm(std::int64_t channels);

/// Normalizes over every axis except the last (channel) axis. Train mode uses
/// batch statistics and folds them into the moving averages; eval mode uses
/// the stored moving statistics. Train mode needs at least 2 rows per channel.
Tensor batch_norm(const Tensor& x, BatchNormState& state, Mode mode);

/// Inverted dropout: train mode zeroes units with probability p and scales
/// survivors by 1/(1-p); eval mode is the identity.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

struct ConvBlock {
    Tensor filters;  // [width, in_ch, out_ch]
    std::int64_t stride = 1;
    BatchNormState bn;
    bool subject_to_weight_decay = false;
};

ConvBlock make_conv_block(std::int64_t width, std::int64_t in_ch, std::int64_t out_ch,
                          std::int64_t stride, Rng& rng, bool subject_to_weight_decay = false);

/// conv1d (same padding) -> batch_norm -> relu.
Tensor conv_block_forward(const Tensor& x, ConvBlock& block, Mode mode);

struct DenseBlock {
    Tensor weights;  // [in, out]
    BatchNormState bn;
};

DenseBlock make_dense_block(std::int64_t in, std::int64_t out, Rng& rng);

/// x·W -> batch_norm -> relu.
Tensor dense(const Tensor& x, DenseBlock& block, Mode mode);

struct PeepholeLstmParams {
    std::int64_t input_size = 0;
    std::int64_t hidden_size = 0;
    Tensor w_i, w_f, w_g, w_o;  // [input, hidden]
    Tensor u_i, u_f, u_g, u_o;  // [hidden, hidden]
    Tensor p_i, p_f, p_o;       // [hidden], elementwise peepholes
    Tensor b_i, b_f, b_g, b_o;  // [hidden]
};

PeepholeLstmParams make_lstm_params(std::int64_t input_size, std::int64_t hidden_size,
                                    Rng& rng);

struct LstmState {
    Tensor h;  // [lanes, hidden]
    Tensor c;  // [lanes, hidden]
};

LstmState zero_lstm_state(std::int64_t lanes, std::int64_t hidden);

struct LstmStep {
    Tensor h, c;
    Tensor i, f, g, o;  // gate activations, kept for inspection
};

/// One peephole LSTM step. Peepholes on the input and forget gates read the
/// previous cell; the output gate reads the freshly updated cell.
LstmStep lstm_step(const Tensor& x, const LstmState& state, const PeepholeLstmParams& params);

struct LstmStackParams {
    std::vector<PeepholeLstmParams> layers;
};

LstmStackParams make_lstm_stack(std::int64_t input_size, std::int64_t hidden_size,
                                std::int64_t n_layers, Rng& rng);

struct LstmStackState {
    std::vector<LstmState> layers;
};

LstmStackState zero_stack_state(const LstmStackParams& params, std::int64_t lanes);

/// Runs an independent forward stack (left to right) and backward stack
/// (right to left) over the sequence; per position the output is the
/// concatenation of the two top-layer hidden states. Dropout is applied to
/// layer-to-layer inputs only, never on the recurrent path. Final states are
/// written back detached, so gradients never cross window boundaries.
std::vector<Tensor> bilstm_forward(const std::vector<Tensor>& seq,
                                   const LstmStackParams& fwd_params,
                                   const LstmStackParams& bwd_params,
                                   LstmStackState& fwd_state, LstmStackState& bwd_state,
                                   Mode mode, double dropout_p, Rng& rng);

}  // namespace sleepscore
