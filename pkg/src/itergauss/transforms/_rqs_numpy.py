"""Rational-quadratic spline kernels, pure-numpy backend.

All functions take precomputed knot arrays (see spline.py) and operate on a
batch x of shape (n, d).  Points outside the spline range map through the
identity with unit derivative.  The Cython backend implements the same
contracts; tests assert the two agree to near machine precision.

Notation per bin of the monotone rational quadratic: xi is the normalized
position in the bin, s = h/w the bin slope, d0/d1 the knot derivatives,
    F(x)   = yk + h * (s xi^2 + d0 xi(1-xi)) / (s + (d0+d1-2s) xi(1-xi))
    F'(x)  = s^2 (d1 xi^2 + 2 s xi(1-xi) + d0 (1-xi)^2) / denom^2
"""

import numpy as np


def _bin_index(x, xk):
    # index m with xk[m] <= x < xk[m+1]; clip keeps boundary points safe
    idx = np.sum(x[:, :, None] >= xk[None, :, :], axis=2) - 1
    return np.clip(idx, 0, xk.shape[1] - 2)


def _gather(arr, idx):
    return np.take_along_axis(np.broadcast_to(arr, (idx.shape[0],) + arr.shape), idx[:, :, None], 2)[:, :, 0]


def _bin_quantities(x, idx, xk, yk, w, h, s, delta):
    xk_b = _gather(xk, idx)
    yk_b = _gather(yk, idx)
    w_b = _gather(w, idx)
    h_b = _gather(h, idx)
    s_b = _gather(s, idx)
    d0 = _gather(delta, idx)
    d1 = _gather(delta, idx + 1)
    # clamping keeps outside-range points (masked later) numerically benign
    xi = np.clip((x - xk_b) / w_b, 0.0, 1.0)
    return xk_b, yk_b, w_b, h_b, s_b, d0, d1, xi


def forward(x, xk, yk, w, h, s, delta):
    """Returns (y, logfp) with logfp[i, j] = log F_j'(x[i, j])."""
    inside = (x > xk[None, :, 0]) & (x < xk[None, :, -1])
    idx = _bin_index(x, xk)
    _, yk_b, _, h_b, s_b, d0, d1, xi = _bin_quantities(x, idx, xk, yk, w, h, s, delta)
    u = xi * (1.0 - xi)
    den = s_b + (d0 + d1 - 2.0 * s_b) * u
    num = s_b * xi * xi + d0 * u
    y = yk_b + h_b * num / den
    nmat = d1 * xi * xi + 2.0 * s_b * u + d0 * (1.0 - xi) ** 2
    logfp = 2.0 * np.log(s_b) + np.log(nmat) - 2.0 * np.log(den)
    y = np.where(inside, y, x)
    logfp = np.where(inside, logfp, 0.0)
    return y, logfp


def inverse(y, xk, yk, w, h, s, delta):
    """Analytic inverse; returns (x, logfp) with logfp = log F'(x)."""
    inside = (y > yk[None, :, 0]) & (y < yk[None, :, -1])
    idx = _bin_index(y, yk)
    xk_b = _gather(xk, idx)
    yk_b = _gather(yk, idx)
    w_b = _gather(w, idx)
    h_b = _gather(h, idx)
    s_b = _gather(s, idx)
    d0 = _gather(delta, idx)
    d1 = _gather(delta, idx + 1)
    uy = np.clip(y - yk_b, 0.0, h_b)
    coef = d0 + d1 - 2.0 * s_b
    a = h_b * (s_b - d0) + uy * coef
    b = h_b * d0 - uy * coef
    c = -s_b * uy
    disc = np.maximum(b * b - 4.0 * a * c, 0.0)
    # stable root of a xi^2 + b xi + c = 0 lying in [0, 1]
    xi = 2.0 * c / (-b - np.sqrt(disc))
    x = xk_b + xi * w_b
    u = xi * (1.0 - xi)
    den = s_b + coef * u
    nmat = d1 * xi * xi + 2.0 * s_b * u + d0 * (1.0 - xi) ** 2
    logfp = 2.0 * np.log(s_b) + np.log(nmat) - 2.0 * np.log(den)
    x = np.where(inside, x, y)
    logfp = np.where(inside, logfp, 0.0)
    return x, logfp


def dlogdet_dx(x, xk, yk, w, h, s, delta):
    """d/dx of log F' per coordinate (F''/F' in closed form)."""
    inside = (x > xk[None, :, 0]) & (x < xk[None, :, -1])
    idx = _bin_index(x, xk)
    _, _, w_b, _, s_b, d0, d1, xi = _bin_quantities(x, idx, xk, yk, w, h, s, delta)
    u = xi * (1.0 - xi)
    coef = d0 + d1 - 2.0 * s_b
    den = s_b + coef * u
    nmat = d1 * xi * xi + 2.0 * s_b * u + d0 * (1.0 - xi) ** 2
    n_xi = 2.0 * (d1 * xi + s_b * (1.0 - 2.0 * xi) - d0 * (1.0 - xi))
    d_xi = coef * (1.0 - 2.0 * xi)
    out = (n_xi / nmat - 2.0 * d_xi / den) / w_b
    return np.where(inside, out, 0.0)


def param_grads(x, xk, yk, w, h, s, delta, sw, sh, dsig, alpha):
    """Gradients of F(x) and log F'(x) w.r.t. the raw spline parameters.

    Returns (dF, dL), each of shape (n, d, 3K-1) ordered as
    [raw_widths (K), raw_heights (K), raw_derivs (K-1)].
    """
    n, d = x.shape
    kbins = w.shape[1]
    inside = (x > xk[None, :, 0]) & (x < xk[None, :, -1])
    idx = _bin_index(x, xk)
    _, _, w_b, h_b, s_b, d0, d1, xi = _bin_quantities(x, idx, xk, yk, w, h, s, delta)

    u = xi * (1.0 - xi)
    coef = d0 + d1 - 2.0 * s_b
    den = s_b + coef * u
    num = s_b * xi * xi + d0 * u
    g = num / den
    nmat = d1 * xi * xi + 2.0 * s_b * u + d0 * (1.0 - xi) ** 2

    p_xi = 2.0 * s_b * xi + d0 * (1.0 - 2.0 * xi)
    d_xi = coef * (1.0 - 2.0 * xi)
    p_s, d_s = xi * xi, 1.0 - 2.0 * u
    n_xi = 2.0 * (d1 * xi + s_b * (1.0 - 2.0 * xi) - d0 * (1.0 - xi))
    n_s = 2.0 * u

    gq = lambda pz, dz: (pz * den - num * dz) / den**2  # d(num/den)/dz
    f_xi = h_b * gq(p_xi, d_xi)
    f_s = h_b * gq(p_s, d_s)
    f_d0 = h_b * gq(u, u)
    f_d1 = -h_b * num * u / den**2
    ax = -f_xi / w_b                                   # dF/d(left knot x)
    aw = f_xi * (-xi / w_b) + f_s * (-s_b / w_b)       # dF/d(bin width)
    ah = g + f_s / w_b                                 # dF/d(bin height)

    l_xi = n_xi / nmat - 2.0 * d_xi / den
    l_s = 2.0 / s_b + n_s / nmat - 2.0 * d_s / den
    l_d0 = (1.0 - xi) ** 2 / nmat - 2.0 * u / den
    l_d1 = xi * xi / nmat - 2.0 * u / den
    lx = -l_xi / w_b
    lw = l_xi * (-xi / w_b) + l_s * (-s_b / w_b)
    lh = l_s / w_b

    # chain through the width/height softmaxes: bin j is hit directly when
    # j == bin, and through the left-knot position when j < bin
    ar = np.arange(kbins)
    lt = ar[None, None, :] < idx[:, :, None]
    eq = ar[None, None, :] == idx[:, :, None]
    csw = np.concatenate([np.zeros((d, 1)), np.cumsum(sw, axis=1)[:, :-1]], axis=1)
    csh = np.concatenate([np.zeros((d, 1)), np.cumsum(sh, axis=1)[:, :-1]], axis=1)
    csw_b, sw_b = _gather(csw, idx), _gather(sw, idx)
    csh_b, sh_b = _gather(csh, idx), _gather(sh, idx)

    def softmax_chain(a_pos, a_bin, weights, cw_b, w_at_b):
        tot = a_pos * cw_b + a_bin * w_at_b
        return alpha * weights[None, :, :] * (
            a_pos[:, :, None] * lt + a_bin[:, :, None] * eq - tot[:, :, None])

    dfw = softmax_chain(ax, aw, sw, csw_b, sw_b)
    dfh = softmax_chain(np.ones_like(ah), ah, sh, csh_b, sh_b)
    dlw = softmax_chain(lx, lw, sw, csw_b, sw_b)
    dlh = softmax_chain(np.zeros_like(lh), lh, sh, csh_b, sh_b)

    # derivative params: raw index m feeds interior knot m+1 via softplus
    ard = np.arange(kbins - 1)
    eq0 = ard[None, None, :] == (idx - 1)[:, :, None]
    eq1 = ard[None, None, :] == idx[:, :, None]
    dsig_full = np.broadcast_to(dsig[None, :, :], (n, d, kbins - 1))
    dfd = dsig_full * (f_d0[:, :, None] * eq0 + f_d1[:, :, None] * eq1)
    dld = dsig_full * (l_d0[:, :, None] * eq0 + l_d1[:, :, None] * eq1)

    df = np.concatenate([dfw, dfh, dfd], axis=2)
    dl = np.concatenate([dlw, dlh, dld], axis=2)
    df[~inside] = 0.0
    dl[~inside] = 0.0
    return df, dl
