"""RNN, LSTM and GRU cells: one-step forward, one-step backward, and a
central finite-difference gradient oracle.

Every step function accepts either a single vector ``x`` of shape ``(D,)``
or a batch of row vectors of shape ``(B, D)``; weight matrices are stored
as ``(out, in)`` so a product is ``x @ W.T``.

Gate weights are kept in fused storage (``w`` stacks ``W_f, W_i, W_o, W_c``
row-wise for the LSTM and ``W_z, W_r, W_h`` for the GRU).  Per-gate blocks
are exposed as views by :meth:`CellParams.blocks`, so updates made through
either form are visible in the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .numeric import DTYPE, Rng, ShapeError, glorot_init, sigmoid

ARCHITECTURES = ("rnn", "lstm", "gru")
LSTM_GATES = ("f", "i", "o", "c")
GRU_GATES = ("z", "r", "h")


class ArchitectureMismatch(ValueError):
    """A cache from one architecture was passed with parameters of another."""


class CellParams:
    """Weights, biases and matching gradient buffers for one recurrent cell
    plus its output projection ``y = w_hy h + b_y``."""

    arch: str = ""

    def __init__(self, input_dim: int, hidden_dim: int, output_dim: int):
        if min(input_dim, hidden_dim, output_dim) < 1:
            raise ShapeError(
                f"dimensions must be positive, got D={input_dim} H={hidden_dim} O={output_dim}"
            )
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.values = {name: np.zeros(shape, dtype=DTYPE) for name, shape in self._shapes().items()}
        self.grads = {name: np.zeros_like(v) for name, v in self.values.items()}

    # subclasses define storage layout and the block split
    def _shapes(self) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    def split(self, arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Per-block views (``w_f``, ``u_f``, ...) of storage-shaped ``arrays``."""
        raise NotImplementedError

    def _glorot_blocks(self, rng: Rng) -> None:
        for name, view in self.blocks().items():
            if view.ndim == 2:
                view[...] = glorot_init(view.shape[0], view.shape[1], rng)

    @classmethod
    def init(cls, input_dim: int, hidden_dim: int, output_dim: int, rng: Rng) -> "CellParams":
        """Glorot-uniform weights (block by block, in gate order), zero biases."""
        p = cls(input_dim, hidden_dim, output_dim)
        p._glorot_blocks(rng)
        return p

    def blocks(self) -> dict[str, np.ndarray]:
        return self.split(self.values)

    def grad_blocks(self) -> dict[str, np.ndarray]:
        return self.split(self.grads)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "CellParams":
        other = type(self)(self.input_dim, self.hidden_dim, self.output_dim)
        for name, v in self.values.items():
            other.values[name][...] = v
        return other

    def num_scalars(self) -> int:
        return sum(v.size for v in self.values.values())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()])

    def _check_step(self, x: np.ndarray, h_prev: np.ndarray) -> None:
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.hidden_dim:
            raise ShapeError(
                f"{self.arch} expects x[..., {self.input_dim}] and h[..., {self.hidden_dim}], "
                f"got {x.shape} and {h_prev.shape}"
            )
        if x.shape[:-1] != h_prev.shape[:-1]:
            raise ShapeError(f"batch shapes differ: {x.shape} vs {h_prev.shape}")


def _gate_split(arrays, hidden: int, gates: tuple[str, ...]) -> dict[str, np.ndarray]:
    out = {}
    for k, g in enumerate(gates):
        rows = slice(k * hidden, (k + 1) * hidden)
        out[f"w_{g}"] = arrays["w"][rows]
        out[f"u_{g}"] = arrays["u"][rows]
        out[f"b_{g}"] = arrays["b"][rows]
    out["w_hy"] = arrays["w_hy"]
    out["b_y"] = arrays["b_y"]
    return out


class RnnParams(CellParams):
    arch = "rnn"

    def _shapes(self):
        D, H, O = self.input_dim, self.hidden_dim, self.output_dim
        return {"w_xh": (H, D), "w_hh": (H, H), "b_h": (H,), "w_hy": (O, H), "b_y": (O,)}

    def split(self, arrays):
        return {name: arrays[name] for name in ("w_xh", "w_hh", "b_h", "w_hy", "b_y")}


class LstmParams(CellParams):
    arch = "lstm"

    def _shapes(self):
        D, H, O = self.input_dim, self.hidden_dim, self.output_dim
        return {"w": (4 * H, D), "u": (4 * H, H), "b": (4 * H,), "w_hy": (O, H), "b_y": (O,)}

    def split(self, arrays):
        return _gate_split(arrays, self.hidden_dim, LSTM_GATES)


class GruParams(CellParams):
    arch = "gru"

    def _shapes(self):
        D, H, O = self.input_dim, self.hidden_dim, self.output_dim
        return {"w": (3 * H, D), "u": (3 * H, H), "b": (3 * H,), "w_hy": (O, H), "b_y": (O,)}

    def split(self, arrays):
        return _gate_split(arrays, self.hidden_dim, GRU_GATES)


PARAM_CLASSES = {"rnn": RnnParams, "lstm": LstmParams, "gru": GruParams}


def make_params(arch: str, input_dim: int, hidden_dim: int, output_dim: int, rng: Rng | None = None):
    """Build parameters for ``arch``; Glorot init when ``rng`` is given, zeros otherwise."""
    try:
        cls = PARAM_CLASSES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}") from None
    if rng is None:
        return cls(input_dim, hidden_dim, output_dim)
    return cls.init(input_dim, hidden_dim, output_dim, rng)


@dataclass
class StepCache:
    """Intermediates of one forward step, enough for the backward pass."""

    arch: str
    x: np.ndarray
    h_prev: np.ndarray
    values: dict[str, np.ndarray] = field(default_factory=dict)


def _acc_outer(buf: np.ndarray, d: np.ndarray, x: np.ndarray) -> None:
    if d.ndim == 1:
        buf += np.outer(d, x)
    else:
        buf += d.T @ x


def _acc_bias(buf: np.ndarray, d: np.ndarray) -> None:
    buf += d if d.ndim == 1 else d.sum(axis=0)


def rnn_forward(x, h_prev, p: RnnParams):
    """``h = tanh(W_xh x + W_hh h_prev + b_h)``."""
    x = np.asarray(x, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    p._check_step(x, h_prev)
    v = p.values
    h = np.tanh(x @ v["w_xh"].T + h_prev @ v["w_hh"].T + v["b_h"])
    return h, StepCache("rnn", x, h_prev, {"h": h})


def lstm_forward(x, h_prev, c_prev, p: LstmParams):
    """One LSTM step; gates are computed in the order f, i, o, c~."""
    x = np.asarray(x, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    c_prev = np.asarray(c_prev, dtype=DTYPE)
    p._check_step(x, h_prev)
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"cell state shape {c_prev.shape} != hidden shape {h_prev.shape}")
    H = p.hidden_dim
    v = p.values
    a = x @ v["w"].T + h_prev @ v["u"].T + v["b"]
    sg = sigmoid(a[..., : 3 * H])
    f = sg[..., :H]
    i = sg[..., H : 2 * H]
    o = sg[..., 2 * H :]
    g = np.tanh(a[..., 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = StepCache("lstm", x, h_prev, {"c_prev": c_prev, "f": f, "i": i, "o": o, "g": g, "c": c, "tc": tc})
    return h, c, cache


def gru_forward(x, h_prev, p: GruParams):
    """One GRU step; the reset gate multiplies ``h_prev`` before ``U_h``."""
    x = np.asarray(x, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    p._check_step(x, h_prev)
    H = p.hidden_dim
    v = p.values
    ax = x @ v["w"].T + v["b"]
    zr = sigmoid(ax[..., : 2 * H] + h_prev @ v["u"][: 2 * H].T)
    z = zr[..., :H]
    r = zr[..., H:]
    rh = r * h_prev
    hc = np.tanh(ax[..., 2 * H :] + rh @ v["u"][2 * H :].T)
    h = h_prev + z * (hc - h_prev)
    return h, StepCache("gru", x, h_prev, {"z": z, "r": r, "rh": rh, "hc": hc})


def cell_backward(cache: StepCache, d_h, d_c, p: CellParams):
    """Backpropagate one step.

    Adds parameter gradients into ``p.grads`` and returns
    ``(d_x, d_h_prev, d_c_prev)``; ``d_c``/``d_c_prev`` are ``None`` except
    for the LSTM.
    """
    if cache.arch != p.arch:
        raise ArchitectureMismatch(f"cache from {cache.arch!r} used with {p.arch!r} parameters")
    d_h = np.asarray(d_h, dtype=DTYPE)
    x, h_prev, c = cache.x, cache.h_prev, cache.values
    v, g = p.values, p.grads
    H = p.hidden_dim

    if p.arch == "rnn":
        da = d_h * (1.0 - c["h"] ** 2)
        _acc_outer(g["w_xh"], da, x)
        _acc_outer(g["w_hh"], da, h_prev)
        _acc_bias(g["b_h"], da)
        return da @ v["w_xh"], da @ v["w_hh"], None

    if p.arch == "lstm":
        f, i, o, gg, tc = c["f"], c["i"], c["o"], c["g"], c["tc"]
        dc = d_h * o * (1.0 - tc**2)
        if d_c is not None:
            dc = dc + d_c
        da = np.concatenate(
            [
                dc * c["c_prev"] * f * (1.0 - f),
                dc * gg * i * (1.0 - i),
                d_h * tc * o * (1.0 - o),
                dc * i * (1.0 - gg**2),
            ],
            axis=-1,
        )
        _acc_outer(g["w"], da, x)
        _acc_outer(g["u"], da, h_prev)
        _acc_bias(g["b"], da)
        return da @ v["w"], da @ v["u"], dc * f

    if p.arch == "gru":
        z, r, rh, hc = c["z"], c["r"], c["rh"], c["hc"]
        da_h = d_h * z * (1.0 - hc**2)
        u_h = v["u"][2 * H :]
        d_rh = da_h @ u_h
        da_zr = np.concatenate([d_h * (hc - h_prev) * z * (1.0 - z), d_rh * h_prev * r * (1.0 - r)], axis=-1)
        da = np.concatenate([da_zr, da_h], axis=-1)
        _acc_outer(g["w"], da, x)
        _acc_outer(g["u"][: 2 * H], da_zr, h_prev)
        _acc_outer(g["u"][2 * H :], da_h, rh)
        _acc_bias(g["b"], da)
        d_h_prev = d_h * (1.0 - z) + d_rh * r + da_zr @ v["u"][: 2 * H]
        return da @ v["w"], d_h_prev, None

    raise ArchitectureMismatch(f"unknown architecture {p.arch!r}")


def output_forward(h, p: CellParams):
    """``y = W_hy h + b_y`` for a vector or a batch of rows."""
    return np.asarray(h, dtype=DTYPE) @ p.values["w_hy"].T + p.values["b_y"]


def output_backward(h, d_y, p: CellParams):
    """Accumulate output-projection gradients and return ``d_h``."""
    d_y = np.asarray(d_y, dtype=DTYPE)
    _acc_outer(p.grads["w_hy"], d_y, h)
    _acc_bias(p.grads["b_y"], d_y)
    return d_y @ p.values["w_hy"]


def finite_diff_grad(loss_fn: Callable[[CellParams], float], p: CellParams, eps: float = 1e-5) -> dict[str, np.ndarray]:
    """Central differences ``(L(θ+eps) - L(θ-eps)) / (2 eps)`` for every entry.

    Entries are perturbed in place and restored exactly afterwards.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = {}
    for name, arr in p.values.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            plus = loss_fn(p)
            flat[k] = orig - eps
            minus = loss_fn(p)
            flat[k] = orig
            gflat[k] = (plus - minus) / (2.0 * eps)
        out[name] = grad
    return out


def relative_error(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
