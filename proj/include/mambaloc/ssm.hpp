#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mambaloc/rng.hpp"
#include "mambaloc/tensor.hpp"

namespace mambaloc {

/// Selective state-space parameters for one block: diagonal continuous
/// state matrix A = -exp(a_log) (strictly negative by construction, so
/// the discretized decay lands in (0,1)), input-dependent step size and
/// B/C projections, and a per-channel skip gain.
template <typename T>
struct SsmParams {
    std::size_t d_model = 0;
    std::size_t d_state = 0;
    Tensor<T> a_log;     // [d_model x d_state]
    Affine<T> delta_proj; // d_model -> d_model, pre-softplus step sizes
    Affine<T> b_proj;     // d_model -> d_state
    Affine<T> c_proj;     // d_model -> d_state
    Tensor<T> d_skip;    // [d_model]

    SsmParams() = default;

    SsmParams(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model_,
              std::size_t d_state_, Rng& rng)
        : d_model(d_model_),
          d_state(d_state_),
          delta_proj(reg, name + ".delta", d_model_, d_model_, rng),
          b_proj(reg, name + ".b", d_model_, d_state_, rng),
          c_proj(reg, name + ".c", d_model_, d_state_, rng) {
        // A ~ -(1..d_state) per channel, the usual stable ramp.
        std::vector<T> al(d_model_ * d_state_);
        for (std::size_t ch = 0; ch < d_model_; ++ch)
            for (std::size_t s = 0; s < d_state_; ++s)
                al[ch * d_state_ + s] = static_cast<T>(std::log(double(s + 1)));
        a_log = reg.add(name + ".a_log", Tensor<T>({d_model_, d_state_}, std::move(al)));
        // Step bias so softplus(bias) is spread over [1e-3, 1e-1].
        auto& db = delta_proj.bias.data();
        for (std::size_t ch = 0; ch < d_model_; ++ch) {
            const double target = rng.uniform(1e-3, 1e-1);
            db[ch] = static_cast<T>(std::log(std::expm1(target)));
        }
        d_skip = reg.add(name + ".d_skip", Tensor<T>::ones({d_model_}));
    }
};

/// Zero-order-hold discretization, elementwise over matching shapes:
/// A_bar = exp(delta*A), B_bar = ((A_bar - 1)/A) * B = delta*phi(delta*A)*B.
/// The phi form stays finite as delta -> 0 (B_bar -> delta*B).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> discretize_zoh(const Tensor<T>& a, const Tensor<T>& b,
                                               const Tensor<T>& delta) {
    check_same_shape(a, delta, "discretize_zoh");
    check_same_shape(b, delta, "discretize_zoh");
    for (T v : delta.data()) {
        if (!(v > T(0))) {
            throw ValueError("discretize_zoh: step size must be positive, got " +
                             std::to_string(double(v)));
        }
    }
    Tensor<T> z = mul(delta, a);
    Tensor<T> a_bar = exp(z);
    Tensor<T> b_bar = mul(mul(delta, zoh_phi(z)), b);
    return {a_bar, b_bar};
}

/// Composition of scan elements (a, b) representing h -> a*h + b:
/// later o earlier = (a2*a1, a2*b1 + b2). Associative, which is what
/// makes the blocked scan below equivalent to the sequential one.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> scan_pair_compose(const Tensor<T>& a_earlier,
                                                  const Tensor<T>& b_earlier,
                                                  const Tensor<T>& a_later,
                                                  const Tensor<T>& b_later) {
    return {mul(a_later, a_earlier), add(mul(a_later, b_earlier), b_later)};
}

/// Per-step scan coefficients, flattened to [L x (d_model*d_state)] with
/// column layout ch*d_state + s.
template <typename T>
struct ScanCoeffs {
    Tensor<T> a_bar;  // [L x d*n]
    Tensor<T> bx;     // [L x d*n], B_bar * x
    Tensor<T> c_tile; // [L x d*n]
};

template <typename T>
ScanCoeffs<T> ssm_coefficients(const Tensor<T>& x, const SsmParams<T>& p) {
    const std::size_t d = p.d_model, n = p.d_state;
    if (x.cols() != d) {
        throw ShapeError("ssm: input width " + std::to_string(x.cols()) +
                         " != d_model " + std::to_string(d));
    }
    Tensor<T> delta = softplus(p.delta_proj(x));            // [L x d], > 0
    Tensor<T> delta_rep = repeat_cols_interleave(delta, n);  // [L x dn]
    Tensor<T> a_row = scale(exp(reshape(p.a_log, {1, d * n})), T(-1)); // A = -exp(a_log)
    Tensor<T> z = mul_rowvec(delta_rep, a_row);              // delta * A
    Tensor<T> a_bar = exp(z);
    Tensor<T> b_tile = tile_cols(p.b_proj(x), d);            // [L x dn]
    Tensor<T> b_bar = mul(mul(delta_rep, zoh_phi(z)), b_tile);
    Tensor<T> bx = mul(b_bar, repeat_cols_interleave(x, n));
    Tensor<T> c_tile = tile_cols(p.c_proj(x), d);
    return {std::move(a_bar), std::move(bx), std::move(c_tile)};
}

/// Reference scan: h_t = a_t * h_{t-1} + b_t row by row, h_0 = 0.
/// Returns the stacked hidden states [L x dn].
template <typename T>
Tensor<T> scan_states_sequential(const Tensor<T>& a_bar, const Tensor<T>& bx) {
    check_same_shape(a_bar, bx, "scan");
    const std::size_t len = a_bar.rows();
    if (len == 0) throw ShapeError("scan: empty sequence");
    std::vector<Tensor<T>> rows;
    rows.reserve(len);
    Tensor<T> h = slice_rows(bx, 0, 1);
    rows.push_back(h);
    for (std::size_t t = 1; t < len; ++t) {
        h = add(mul(slice_rows(a_bar, t, t + 1), h), slice_rows(bx, t, t + 1));
        rows.push_back(h);
    }
    return concat_rows(rows);
}

/// Blocked associative scan over (a, b) pairs: an independent pair-prefix
/// inside each fixed-size block, then a sequential carry of block totals.
/// Deterministic block order; same contract as the sequential scan.
template <typename T>
Tensor<T> scan_states_blocked(const Tensor<T>& a_bar, const Tensor<T>& bx,
                              std::size_t block = 32) {
    check_same_shape(a_bar, bx, "scan");
    const std::size_t len = a_bar.rows();
    if (len == 0) throw ShapeError("scan: empty sequence");
    if (block == 0) block = 1;
    const std::size_t width = a_bar.cols();

    std::vector<Tensor<T>> rows(len);
    Tensor<T> carry_a = Tensor<T>::ones({1, width});
    Tensor<T> carry_b = Tensor<T>::zeros({1, width});
    for (std::size_t start = 0; start < len; start += block) {
        const std::size_t end = std::min(len, start + block);
        // Local inclusive prefix of the block's pairs.
        std::vector<std::pair<Tensor<T>, Tensor<T>>> prefix;
        prefix.reserve(end - start);
        prefix.emplace_back(slice_rows(a_bar, start, start + 1),
                            slice_rows(bx, start, start + 1));
        for (std::size_t t = start + 1; t < end; ++t) {
            prefix.push_back(scan_pair_compose(prefix.back().first, prefix.back().second,
                                               slice_rows(a_bar, t, t + 1),
                                               slice_rows(bx, t, t + 1)));
        }
        // Fold the incoming carry into every element: h = pa*carry_b + pb.
        for (std::size_t i = 0; i < prefix.size(); ++i) {
            rows[start + i] = add(mul(prefix[i].first, carry_b), prefix[i].second);
        }
        auto next = scan_pair_compose(carry_a, carry_b, prefix.back().first,
                                      prefix.back().second);
        carry_a = std::move(next.first);
        carry_b = std::move(next.second);
    }
    return concat_rows(rows);
}

/// y_t = <C_t, h_t> per channel plus the skip path d_skip * x_t.
template <typename T>
Tensor<T> ssm_project_output(const Tensor<T>& states, const Tensor<T>& c_tile,
                             const Tensor<T>& x, const Tensor<T>& d_skip,
                             std::size_t d_state) {
    Tensor<T> y = sum_col_groups(mul(c_tile, states), d_state);
    return add(y, mul_rowvec(x, reshape(d_skip, {1, d_skip.numel()})));
}

/// Selective scan, sequential reference realization.
template <typename T>
Tensor<T> selective_scan_sequential(const Tensor<T>& x, const SsmParams<T>& p) {
    ScanCoeffs<T> c = ssm_coefficients(x, p);
    Tensor<T> h = scan_states_sequential(c.a_bar, c.bx);
    return ssm_project_output(h, c.c_tile, x, p.d_skip, p.d_state);
}

/// Selective scan via the blocked associative composition. Identical
/// contract to the sequential form; agreement is tested, not assumed.
template <typename T>
Tensor<T> selective_scan_parallel(const Tensor<T>& x, const SsmParams<T>& p,
                                  std::size_t block = 32) {
    ScanCoeffs<T> c = ssm_coefficients(x, p);
    Tensor<T> h = scan_states_blocked(c.a_bar, c.bx, block);
    return ssm_project_output(h, c.c_tile, x, p.d_skip, p.d_state);
}

template <typename T>
Tensor<T> selective_scan(const Tensor<T>& x, const SsmParams<T>& p, bool parallel) {
    return parallel ? selective_scan_parallel(x, p) : selective_scan_sequential(x, p);
}

/// Gated Mamba block: causal conv + selective scan on one path, a SiLU
/// gate on the other, merged multiplicatively and closed with a residual.
/// The gate path can be disabled per block via `gating`.
template <typename T>
struct MambaBlockParams {
    Affine<T> in_proj;
    Tensor<T> conv_kernel; // [w x d_model]
    SsmParams<T> ssm;
    Affine<T> gate_proj;
    Affine<T> out_proj;
    bool gating = true;

    MambaBlockParams() = default;

    MambaBlockParams(ParamRegistry<T>& reg, const std::string& name, std::size_t d_model,
                     std::size_t d_state, std::size_t conv_width, Rng& rng,
                     bool gating_ = true)
        : in_proj(reg, name + ".in", d_model, d_model, rng),
          ssm(reg, name + ".ssm", d_model, d_state, rng),
          gate_proj(reg, name + ".gate", d_model, d_model, rng),
          out_proj(reg, name + ".out", d_model, d_model, rng),
          gating(gating_) {
        const T bound = static_cast<T>(1.0 / std::sqrt(double(conv_width)));
        conv_kernel = reg.add(name + ".conv",
                              Tensor<T>::uniform({conv_width, d_model}, rng, bound));
    }
};

template <typename T>
Tensor<T> mamba_block(const Tensor<T>& x, const MambaBlockParams<T>& p,
                      bool parallel_scan = false) {
    Tensor<T> u = silu(depthwise_conv1d(p.in_proj(x), p.conv_kernel, true));
    Tensor<T> s = selective_scan(u, p.ssm, parallel_scan);
    Tensor<T> merged = p.gating ? mul(s, silu(p.gate_proj(x))) : s;
    return add(p.out_proj(merged), x);
}

} // namespace mambaloc
