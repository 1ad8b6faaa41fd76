"""Slow complex-domain reference implementations used only by tests and checks.

Everything here is written directly in terms of unit complex numbers and
explicit loops, shares no helpers with the fast real-pair code paths, and runs
in float64/complex128. The frequency base is hardcoded on purpose: perturbing
the main path's base must make the comparisons fail.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "oracle_rope_3d",
    "oracle_attention_logit",
    "oracle_geometry_aware_output",
    "oracle_roce_attention",
]


def _axis_frequency(c: int, d_axis: int) -> float:
    # c is 1-based; schedule for one axis uses d_axis = d_head/3 features
    return 10000.0 ** (-(c - 1) / (d_axis // 2))


def oracle_rope_3d(f: int, h: int, w: int, d_head: int) -> np.ndarray:
    """Unit-complex rotation table, shape (f*h*w, d_head//2), complex128."""
    per_axis = d_head // 6
    out = np.empty((f * h * w, d_head // 2), dtype=np.complex128)
    n = 0
    for fi in range(f):
        for hi in range(h):
            for wi in range(w):
                col = 0
                for pos in (fi, hi, wi):
                    for c in range(1, per_axis + 1):
                        theta = _axis_frequency(c, d_head // 3)
                        out[n, col] = np.exp(1j * theta * pos)
                        col += 1
                n += 1
    return out


def _to_complex(row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    return row[0::2] + 1j * row[1::2]


def oracle_attention_logit(
    q_row: np.ndarray,
    k_row: np.ndarray,
    angles_n: np.ndarray,
    angles_m: np.ndarray,
    phi_n: np.ndarray | None = None,
    phi_m: np.ndarray | None = None,
) -> float:
    """Unscaled logit Re[sum_c qbar_c conj(kbar_c) e^{i(dtheta_c + dphi_c)}]."""
    qc = _to_complex(q_row)
    kc = _to_complex(k_row)
    n_ch = qc.shape[0]
    phi_n = np.zeros(n_ch) if phi_n is None else np.asarray(phi_n, dtype=np.float64)
    phi_m = np.zeros(n_ch) if phi_m is None else np.asarray(phi_m, dtype=np.float64)
    total = 0.0
    for c in range(n_ch):
        delta = angles_n[c] - angles_m[c] + phi_n[c] - phi_m[c]
        total += (qc[c] * np.conj(kc[c]) * np.exp(1j * delta)).real
    return float(total)


def oracle_geometry_aware_output(
    attn_row: np.ndarray,
    v_rows: np.ndarray,
    phi_rows: np.ndarray,
    phi_query: np.ndarray,
) -> np.ndarray:
    """One output row: rotate values by -phi, mix with attention, rotate back by
    the query token's +phi. Returns the interleaved real vector."""
    attn_row = np.asarray(attn_row, dtype=np.float64)
    n_tokens = attn_row.shape[0]
    n_ch = np.asarray(v_rows).shape[1] // 2
    acc = np.zeros(n_ch, dtype=np.complex128)
    for m in range(n_tokens):
        vc = _to_complex(v_rows[m])
        for c in range(n_ch):
            acc[c] += attn_row[m] * vc[c] * np.exp(-1j * phi_rows[m, c])
    out = np.empty(2 * n_ch, dtype=np.float64)
    for c in range(n_ch):
        rotated = acc[c] * np.exp(1j * phi_query[c])
        out[2 * c] = rotated.real
        out[2 * c + 1] = rotated.imag
    return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    out = np.empty_like(logits)
    for n in range(logits.shape[0]):
        row = logits[n] - np.max(logits[n])
        e = np.exp(row)
        out[n] = e / np.sum(e)
    return out


def oracle_roce_attention(
    q: np.ndarray,
    k: np.ndarray,
    v: np.ndarray,
    angles: np.ndarray,
    phi_qk: np.ndarray | None = None,
    phi_vo: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full single-head reference: returns (scaled logits, attention, outputs).

    q, k, v: (tokens, d); angles: (tokens, d/2) rotary angles; phi_qk/phi_vo:
    (tokens, d/2) phase shifts or None for zero.
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n_tokens, d = q.shape
    n_ch = d // 2
    zeros = np.zeros((n_tokens, n_ch))
    pq = zeros if phi_qk is None else np.asarray(phi_qk, dtype=np.float64)
    pv = zeros if phi_vo is None else np.asarray(phi_vo, dtype=np.float64)
    logits = np.empty((n_tokens, n_tokens))
    for n in range(n_tokens):
        for m in range(n_tokens):
            logits[n, m] = oracle_attention_logit(
                q[n], k[m], angles[n], angles[m], pq[n], pq[m]
            )
    logits /= np.sqrt(d)
    attn = _softmax_rows(logits)
    out = np.empty((n_tokens, d))
    for n in range(n_tokens):
        out[n] = oracle_geometry_aware_output(attn[n], v, pv, pv[n])
    return logits, attn, out
