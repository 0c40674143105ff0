"""Pure-Python (numpy) versions of the compiled kernels in ``_kernels.pyx``.

Signatures and numerics match the compiled module; see ``dpmrf.kernels``.
"""
import numpy as np


def _lse(v):
    m = v.max()
    return m + np.log(np.exp(v - m).sum())


def lbp_pairwise(cards, var_off, unary, edges, edge_off, edge_theta, msg_off, msg,
                 damping, tol, max_iters):
    """Synchronous damped log-domain BP on a pairwise model, updating ``msg`` in place.

    Layout of ``msg`` for edge e = (i, j): ``msg[msg_off[e]:][:cards[i]]`` is the
    message into i, followed by the message into j. Returns (iterations, residual).
    """
    num_edges = edges.shape[0]
    new = np.empty_like(msg)
    residual = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        tot = unary.copy()
        for e in range(num_edges):
            i, j = edges[e]
            ci, cj = cards[i], cards[j]
            o = msg_off[e]
            tot[var_off[i]:var_off[i] + ci] += msg[o:o + ci]
            tot[var_off[j]:var_off[j] + cj] += msg[o + ci:o + ci + cj]
        for e in range(num_edges):
            i, j = edges[e]
            ci, cj = cards[i], cards[j]
            o = msg_off[e]
            tab = edge_theta[edge_off[e]:edge_off[e + 1]].reshape(ci, cj)
            cav_i = tot[var_off[i]:var_off[i] + ci] - msg[o:o + ci]
            cav_j = tot[var_off[j]:var_off[j] + cj] - msg[o + ci:o + ci + cj]
            # message into j sums over x_i; message into i sums over x_j
            a = tab + cav_i[:, None]
            mx = a.max(axis=0)
            to_j = mx + np.log(np.exp(a - mx).sum(axis=0))
            b = tab + cav_j[None, :]
            mx = b.max(axis=1)
            to_i = mx + np.log(np.exp(b - mx[:, None]).sum(axis=1))
            new[o:o + ci] = to_i - _lse(to_i)
            new[o + ci:o + ci + cj] = to_j - _lse(to_j)
        residual = 0.0
        for e in range(num_edges):
            i, j = edges[e]
            ci, cj = cards[i], cards[j]
            o = msg_off[e]
            for lo, hi in ((o, o + ci), (o + ci, o + ci + cj)):
                upd = (1.0 - damping) * msg[lo:hi] + damping * new[lo:hi]
                upd = upd - _lse(upd)
                residual = max(residual, float(np.abs(upd - msg[lo:hi]).max()))
                msg[lo:hi] = upd
        if residual <= tol:
            break
    return it, residual


def project_simplex_blocks(values, offsets, total):
    """Euclidean projection of each block ``values[offsets[k]:offsets[k+1]]`` onto
    {w >= 0, sum w = total}; sort-based, O(d log d) per block."""
    out = np.empty_like(values)
    for k in range(len(offsets) - 1):
        v = values[offsets[k]:offsets[k + 1]]
        u = np.sort(v)[::-1]
        css = np.cumsum(u) - total
        ind = np.arange(1, v.size + 1)
        rho = np.nonzero(u - css / ind > 0)[0][-1]
        tau = css[rho] / (rho + 1.0)
        out[offsets[k]:offsets[k + 1]] = np.maximum(v - tau, 0.0)
    return out
