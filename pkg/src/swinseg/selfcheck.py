"""Built-in oracle and gradient smoke suite (`swinseg selfcheck`).

Each check prints one ok/FAIL line; the suite returns False if any check
fails. Kept fast enough to run routinely.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from . import windows as W
from .attention import AttentionParams, attend, sw_msa
from .backbone import SwinBlockParams, swin_block


def _check_softmax_rows():
    rng = np.random.default_rng(0)
    y = T.softmax(T.Tensor(rng.standard_normal((6, 9)).astype(np.float32)))
    assert np.abs(y.data.sum(-1) - 1).max() < 1e-6


def _check_window_round_trip():
    rng = np.random.default_rng(1)
    for m, h, w in ((2, 6, 6), (3, 7, 5), (5, 12, 9), (7, 7, 7)):
        x = T.Tensor(rng.standard_normal((h, w, 3)).astype(np.float32))
        grid = W.WindowGrid.build(h, w, m)
        back = W.window_reverse(W.window_partition(x, grid), grid)
        assert np.array_equal(back.data, x.data)


def _check_mask_properties():
    for m, n in ((3, 1), (5, 2), (7, 3)):
        grid = W.WindowGrid.build(2 * m + 1, 2 * m, m, n)
        mask = W.shift_attention_mask(grid)
        for pat in mask.patterns:
            assert np.array_equal(pat, pat.T)
            assert not np.diag(pat).any()


def _check_relative_index():
    for m in (2, 3, 5, 7, 12):
        table = W.relative_position_index(m)
        assert table.min() >= 0 and table.max() < (2 * m - 1) ** 2
        total = 2 * (m - 1) * (2 * m - 1) + 2 * (m - 1)
        assert np.array_equal(table + table.T, np.full_like(table, total))


def _check_attend_dense_oracle():
    rng = np.random.default_rng(2)
    params = AttentionParams.build(5, 1, 2, rng=rng, dtype=np.float64)
    params.bias_table.data[:] = 0.1 * rng.standard_normal(params.bias_table.shape)
    x = rng.standard_normal((1, 4, 5))
    q = x[0] @ params.w_q.data + params.b_q.data
    k = x[0] @ params.w_k.data + params.b_k.data
    v = x[0] @ params.w_v.data + params.b_v.data
    scores = q @ k.T / np.sqrt(5.0)
    scores += params.bias_table.data[W.relative_position_index(2)][:, :, 0]
    e = np.exp(scores - scores.max(1, keepdims=True))
    expect = ((e / e.sum(1, keepdims=True)) @ v) @ params.w_o.data + params.b_o.data
    xt = T.Tensor(x)
    got = attend(xt, xt, xt, params)
    assert np.abs(got.data[0] - expect).max() < 1e-9


def _check_shift_equivalence():
    rng = np.random.default_rng(3)
    params = AttentionParams.build(6, 2, 3, 1, rng=rng, dtype=np.float64)
    params.bias_table.data[:] = 0.1 * rng.standard_normal(params.bias_table.shape)
    x = rng.standard_normal((6, 6, 6))

    # brute force over the literally displaced partition
    flat = x.reshape(-1, 6)
    proj = {
        "q": flat @ params.w_q.data + params.b_q.data,
        "k": flat @ params.w_k.data + params.b_k.data,
        "v": flat @ params.w_v.data + params.b_v.data,
    }
    bands = [(0, 1), (1, 4), (4, 6)]
    out = np.zeros_like(flat)
    for r0, r1 in bands:
        for c0, c1 in bands:
            coords = [(r, c) for r in range(r0, r1) for c in range(c0, c1)]
            idx = np.array([r * 6 + c for r, c in coords])
            t = len(idx)
            q = proj["q"][idx].reshape(t, 2, 3).transpose(1, 0, 2)
            k = proj["k"][idx].reshape(t, 2, 3).transpose(1, 0, 2)
            v = proj["v"][idx].reshape(t, 2, 3).transpose(1, 0, 2)
            scores = q @ k.transpose(0, 2, 1) / np.sqrt(3.0)
            for a in range(t):
                for b in range(t):
                    dy = coords[a][0] - coords[b][0]
                    dx = coords[a][1] - coords[b][1]
                    scores[:, a, b] += params.bias_table.data[(dy + 2) * 5 + dx + 2]
            e = np.exp(scores - scores.max(-1, keepdims=True))
            piece = ((e / e.sum(-1, keepdims=True)) @ v).transpose(1, 0, 2)
            out[idx] = piece.reshape(t, 6)
    expect = (out @ params.w_o.data + params.b_o.data).reshape(6, 6, 6)

    got = sw_msa(T.Tensor(x), params)
    assert np.abs(got.data - expect).max() < 1e-5


def _check_gradients():
    rng = np.random.default_rng(4)

    def weighted(y, probe):
        return T.tensor_sum(T.matmul(T.reshape(y, (1, -1)), probe))

    x = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = T.Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    b = T.Tensor(rng.standard_normal(4), requires_grad=True)
    probe = T.constant(rng.standard_normal((12, 1)), dtype=np.float64)
    assert T.grad_check(lambda v: weighted(T.linear(v, w, b), probe), x, 1e-4)
    assert T.grad_check(lambda v: T.tensor_sum(T.softmax(v)), x, 1e-4)

    g = T.Tensor(np.ones(4), requires_grad=True)
    be = T.Tensor(np.zeros(4), requires_grad=True)
    assert T.grad_check(
        lambda v: weighted(T.layer_norm(v, g, be), probe), x, 1e-4
    )

    img = T.Tensor(rng.standard_normal((3, 3, 2)), requires_grad=True)
    rprobe = T.constant(rng.standard_normal((72, 1)), dtype=np.float64)
    assert T.grad_check(
        lambda v: weighted(T.bilinear_resize(v, 6, 6), rprobe), img, 1e-4
    )

    labels = np.array([0, 2, 1])
    assert T.grad_check(lambda v: T.cross_entropy(v, labels), x, 1e-4)

    blk = SwinBlockParams.build(4, 2, 2, 1, rng=rng, dtype=np.float64)
    feat = T.Tensor(rng.standard_normal((4, 4, 4)), requires_grad=True)
    bprobe = T.constant(rng.standard_normal((64, 1)), dtype=np.float64)
    assert T.grad_check(lambda v: weighted(swin_block(v, blk), bprobe), feat, 1e-3)


def _check_determinism():
    rng = np.random.default_rng(5)
    params = AttentionParams.build(8, 2, 3, 1, rng=rng)
    x = T.Tensor(rng.standard_normal((6, 6, 8)).astype(np.float32))
    assert np.array_equal(sw_msa(x, params).data, sw_msa(x, params).data)


CHECKS = (
    ("softmax-normalization", _check_softmax_rows),
    ("window-round-trip", _check_window_round_trip),
    ("shift-mask-symmetry", _check_mask_properties),
    ("relative-index-reflection", _check_relative_index),
    ("attend-dense-oracle", _check_attend_dense_oracle),
    ("shifted-partition-equivalence", _check_shift_equivalence),
    ("gradient-suite", _check_gradients),
    ("forward-determinism", _check_determinism),
)


def run_selfcheck(verbose: bool = True) -> bool:
    ok = True
    for name, fn in CHECKS:
        try:
            fn()
            if verbose:
                print(f"ok {name}")
        except Exception as exc:  # noqa: BLE001 - report and keep going
            ok = False
            if verbose:
                print(f"FAIL {name}: {exc}")
    return ok
