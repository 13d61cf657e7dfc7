"""Pure NumPy conv kernels (im2col): fallback when the extension is absent."""

import numpy as np

BACKEND = "numpy"


def _im2col(xp: np.ndarray, k: int, rows: int, cols: int) -> np.ndarray:
    # xp: (C, rows+2p, cols+2p) -> (C*k*k, rows*cols)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return windows.transpose(0, 3, 4, 1, 2).reshape(-1, rows * cols)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (C,H,W), w (O,C,k,k) with k odd, b (O,) -> (O,H,W), zero "same" padding."""
    out_c, in_c, k, _ = w.shape
    _, rows, cols = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols_mat = _im2col(xp, k, rows, cols)
    out = w.reshape(out_c, -1) @ cols_mat + b[:, None]
    return np.ascontiguousarray(out.reshape(out_c, rows, cols))


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, gout: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (gx, gw, gb) of a zero-padded "same" conv at stride 1."""
    out_c, in_c, k, _ = w.shape
    _, rows, cols = x.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    cols_mat = _im2col(xp, k, rows, cols)
    gout_flat = gout.reshape(out_c, -1)

    gb = gout_flat.sum(axis=1)
    gw = (gout_flat @ cols_mat.T).reshape(w.shape)

    gcols = (w.reshape(out_c, -1).T @ gout_flat).reshape(in_c, k, k, rows, cols)
    gxp = np.zeros_like(xp)
    for u in range(k):
        for v in range(k):
            gxp[:, u : u + rows, v : v + cols] += gcols[:, u, v]
    gx = np.ascontiguousarray(gxp[:, pad : pad + rows, pad : pad + cols])
    return gx, gw, gb
