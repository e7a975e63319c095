"""Convolution, transposed convolution and GDN with hand-written gradients.

All image tensors are NCHW. Convolutions are lowered to a single matmul via
im2col; the adjoint (col2im) is a loop over the kernel taps, which is also
the forward pass of the transposed convolution.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, as_tensor, make_result


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """``[B, C*kh*kw, ho*wo]`` columns; rows are (c, i, j) taps, columns output positions."""
    b, c, _, _ = xp.shape
    if kh == kw == 1 and stride == 1:
        return xp.reshape(b, c, ho * wo)
    sb, sc, sh, sw = xp.strides
    windows = as_strided(
        xp,
        shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return windows.reshape(b, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, shape, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add tap values back onto the (padded) image."""
    b, c, hp, wp = shape
    if kh == kw == 1 and stride == 1:
        return cols.reshape(shape)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    return out


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``weight`` is ``[Cout, Cin, kh, kw]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv2d expects a 4-D input and a 4-D kernel")
    b, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: unsupported stride {stride}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: kernel larger than padded input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, cout, ho, wo)

    def backward(g):
        gmat = g.reshape(b, cout, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, gmat)
            gxp = _col2im(gcols, xp.shape, kh, kw, stride, ho, wo)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if weight.requires_grad:
            gw = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed convolution producing exactly ``stride`` times the input size.

    ``weight`` is ``[Cin, Cout, kh, kw]``. The configuration must satisfy
    ``kernel - 2 * padding == stride`` so that ``H_out == stride * H``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError("conv_transpose2d expects a 4-D input and a 4-D kernel")
    b, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise ValueError(f"conv_transpose2d: input has {cin} channels, kernel expects {wcin}")
    if kh - 2 * padding != stride or kw - 2 * padding != stride:
        raise ValueError(
            f"conv_transpose2d: kernel {kh}x{kw} with padding {padding} cannot upsample exactly by {stride}"
        )
    if bias is not None:
        bias = as_tensor(bias)
    hfull = (h - 1) * stride + kh
    wfull = (w - 1) * stride + kw

    xmat = x.data.reshape(b, cin, h * w)
    wmat = weight.data.reshape(cin, -1)
    cols = np.matmul(wmat.T, xmat)
    full = _col2im(cols, (b, cout, hfull, wfull), kh, kw, stride, h, w)
    out = full[:, :, padding : hfull - padding, padding : wfull - padding]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        gcols = _im2col(gfull, kh, kw, stride, h, w)
        gx = gw = gb = None
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(b, cin, h, w)
        if weight.requires_grad:
            gw = np.matmul(xmat, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward)


def gdn(x, beta, gamma) -> Tensor:
    """Generalized divisive normalization, ``y_i = x_i / sqrt(beta_i + sum_j gamma_ij x_j^2)``.

    ``beta`` and ``gamma`` are the effective (already non-negative) parameters.
    """
    x, beta, gamma = as_tensor(x), as_tensor(beta), as_tensor(gamma)
    b, c, h, w = x.shape
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ValueError(f"gdn: expected beta ({c},) and gamma ({c},{c})")
    xd = x.data
    sq = xd * xd
    norm = np.einsum("ij,bjhw->bihw", gamma.data, sq, optimize=True) + beta.data[None, :, None, None]
    rs = 1.0 / np.sqrt(norm)
    out = xd * rs

    def backward(g):
        # t_i = d loss / d norm_i
        t = -0.5 * g * xd * rs / norm
        gx = gb = gg = None
        if x.requires_grad:
            gx = g * rs + 2.0 * xd * np.einsum("ij,bihw->bjhw", gamma.data, t, optimize=True)
        if beta.requires_grad:
            gb = t.sum(axis=(0, 2, 3))
        if gamma.requires_grad:
            gg = np.einsum("bihw,bjhw->ij", t, sq, optimize=True)
        return gx, gb, gg

    return make_result(out, (x, beta, gamma), backward)


def reflect_pad_to_even(x: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Reflect-pad the last two axes by one row/column where odd."""
    ph, pw = x.shape[-2] % 2, x.shape[-1] % 2
    if ph or pw:
        pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
        mode = "reflect" if min(x.shape[-2:]) > 1 else "edge"
        x = np.pad(x, pad, mode=mode)
    return x, ph, pw
