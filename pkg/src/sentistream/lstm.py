"""From-scratch LSTM binary classifier: forward pass, BPTT, serialization.

Cell equations, per step t over the first true_length tokens of a sequence
(h_0 = c_0 = 0, padded steps are skipped):

    x_t = E[id_t]
    i_t = sigmoid(x_t W_i + h_{t-1} U_i + b_i)
    f_t = sigmoid(x_t W_f + h_{t-1} U_f + b_f)
    o_t = sigmoid(x_t W_o + h_{t-1} U_o + b_o)
    g_t = tanh   (x_t W_c + h_{t-1} U_c + b_c)
    c_t = f_t * c_{t-1} + i_t * g_t
    h_t = o_t * tanh(c_t)
    p   = sigmoid(h_T . w_out + b_out)

Internally the four gates are packed into single matrices (W: d x 4h,
U: h x 4h, b: 4h, gate order [i, f, o, c]) so each step is two matmuls;
per-gate matrices are exposed as views into them. Batched forward/backward
mask padded steps so padding never affects the output, and gradients are
exact sums over the non-padded steps (embedding row 0 is frozen at zero).

Model file format (save_model/load_model), all little-endian:

    magic "MLSA" | u32 version=1
    u32 x6: V, d, h, L, batch_size, epochs | f64 x2: learning_rate, clip_norm
    u64 seed
    float32 row-major matrices, in order:
        E, W_i, W_f, W_o, W_c, U_i, U_f, U_o, U_c,
        b_i, b_f, b_o, b_c, w_out, b_out
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .textprep import EncodedSequence

MAGIC = b"MLSA"
FORMAT_VERSION = 1
LOSS_CLAMP = 1e-7

_HYPER = struct.Struct("<6I2dQ")


class ModelShapeError(Exception):
    pass


class ModelLoadError(Exception):
    pass


@dataclass(frozen=True)
class LstmHyperparams:
    vocab_size: int
    embedding_dim: int = 64
    hidden_dim: int = 64
    seq_len: int = 40
    batch_size: int = 256
    epochs: int = 3
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 1234

    def __post_init__(self) -> None:
        if min(self.vocab_size, self.embedding_dim, self.hidden_dim, self.seq_len) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be > 0")


class LstmModel:
    """Parameter container; arrays are packed, per-gate fields are views."""

    PARAM_KEYS = ("E", "W", "U", "b", "w_out", "b_out")

    def __init__(
        self,
        hyper: LstmHyperparams,
        E: np.ndarray,
        W: np.ndarray,
        U: np.ndarray,
        b: np.ndarray,
        w_out: np.ndarray,
        b_out: np.ndarray,
    ):
        h = hyper.hidden_dim
        if E.shape != (hyper.vocab_size, hyper.embedding_dim):
            raise ModelShapeError(f"E shape {E.shape}")
        if W.shape != (hyper.embedding_dim, 4 * h) or U.shape != (h, 4 * h):
            raise ModelShapeError(f"W/U shapes {W.shape} {U.shape}")
        if b.shape != (4 * h,) or w_out.shape != (h,) or b_out.shape != ():
            raise ModelShapeError(f"b/w_out/b_out shapes {b.shape} {w_out.shape} {b_out.shape}")
        self.hyper = hyper
        self.E = E
        self.W = W
        self.U = U
        self.b = b
        self.w_out = w_out
        self.b_out = b_out

    @property
    def dtype(self) -> np.dtype:
        return self.E.dtype

    def _gate(self, arr: np.ndarray, gate: int) -> np.ndarray:
        h = self.hyper.hidden_dim
        return arr[..., gate * h : (gate + 1) * h]

    # per-gate views in [i, f, o, c] order
    @property
    def W_i(self) -> np.ndarray:
        return self._gate(self.W, 0)

    @property
    def W_f(self) -> np.ndarray:
        return self._gate(self.W, 1)

    @property
    def W_o(self) -> np.ndarray:
        return self._gate(self.W, 2)

    @property
    def W_c(self) -> np.ndarray:
        return self._gate(self.W, 3)

    @property
    def U_i(self) -> np.ndarray:
        return self._gate(self.U, 0)

    @property
    def U_f(self) -> np.ndarray:
        return self._gate(self.U, 1)

    @property
    def U_o(self) -> np.ndarray:
        return self._gate(self.U, 2)

    @property
    def U_c(self) -> np.ndarray:
        return self._gate(self.U, 3)

    @property
    def b_i(self) -> np.ndarray:
        return self._gate(self.b, 0)

    @property
    def b_f(self) -> np.ndarray:
        return self._gate(self.b, 1)

    @property
    def b_o(self) -> np.ndarray:
        return self._gate(self.b, 2)

    @property
    def b_c(self) -> np.ndarray:
        return self._gate(self.b, 3)

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.PARAM_KEYS}

    def copy(self) -> "LstmModel":
        return LstmModel(
            self.hyper,
            self.E.copy(),
            self.W.copy(),
            self.U.copy(),
            self.b.copy(),
            self.w_out.copy(),
            self.b_out.copy(),
        )

    def astype(self, dtype) -> "LstmModel":
        return LstmModel(
            self.hyper,
            self.E.astype(dtype),
            self.W.astype(dtype),
            self.U.astype(dtype),
            self.b.astype(dtype),
            self.w_out.astype(dtype),
            self.b_out.astype(dtype),
        )


def init_model(hyper: LstmHyperparams, dtype=np.float32) -> LstmModel:
    """Seeded uniform fan-based init; biases 0 except forget bias 1;
    padding embedding row frozen at zero."""
    rng = np.random.default_rng(hyper.seed)
    V, d, h = hyper.vocab_size, hyper.embedding_dim, hyper.hidden_dim

    def uniform(shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    E = uniform((V, d), V, d)
    E[0, :] = 0.0
    W = np.empty((d, 4 * h))
    U = np.empty((h, 4 * h))
    for gate in range(4):
        W[:, gate * h : (gate + 1) * h] = uniform((d, h), d, h)
        U[:, gate * h : (gate + 1) * h] = uniform((h, h), h, h)
    b = np.zeros(4 * h)
    b[h : 2 * h] = 1.0  # forget gate bias
    w_out = uniform((h,), h, 1)
    b_out = np.zeros(())
    return LstmModel(
        hyper,
        E.astype(dtype),
        W.astype(dtype),
        U.astype(dtype),
        b.astype(dtype),
        w_out.astype(dtype),
        b_out.astype(dtype),
    )


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp argument kept <= 0 so it can never overflow
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass
class ForwardCache:
    """Everything backward() needs; arrays are (L, B, ...) stacked per step."""

    ids: np.ndarray  # (B, L) int
    mask: np.ndarray  # (B, L) 1.0 where step is real
    gates: np.ndarray  # (L, B, 4h) post-activation [i, f, o, c~]
    c_raw: np.ndarray  # (L, B, h) cell state before masking
    h_states: np.ndarray  # (L+1, B, h) masked, h_states[0] = 0
    c_states: np.ndarray  # (L+1, B, h) masked
    p: np.ndarray  # (B,)


def forward_batch(model: LstmModel, ids: np.ndarray, lengths: np.ndarray) -> ForwardCache:
    """Run the cell over a batch; padded steps leave h and c unchanged."""
    hyper = model.hyper
    B, L = ids.shape
    if L != hyper.seq_len:
        raise ModelShapeError(f"sequence length {L} != model seq_len {hyper.seq_len}")
    if ids.max(initial=0) >= hyper.vocab_size or ids.min(initial=0) < 0:
        raise ModelShapeError("token id out of vocabulary range")
    h_dim = hyper.hidden_dim
    dtype = model.dtype

    mask = (np.arange(L)[None, :] < lengths[:, None]).astype(dtype)
    gates = np.empty((L, B, 4 * h_dim), dtype=dtype)
    c_raw = np.empty((L, B, h_dim), dtype=dtype)
    h_states = np.zeros((L + 1, B, h_dim), dtype=dtype)
    c_states = np.zeros((L + 1, B, h_dim), dtype=dtype)

    x_all = model.E[ids]  # (B, L, d)
    xw_all = x_all @ model.W  # (B, L, 4h)
    for t in range(L):
        h_prev = h_states[t]
        c_prev = c_states[t]
        a = xw_all[:, t, :] + h_prev @ model.U + model.b
        i = sigmoid(a[:, 0 * h_dim : 1 * h_dim])
        f = sigmoid(a[:, 1 * h_dim : 2 * h_dim])
        o = sigmoid(a[:, 2 * h_dim : 3 * h_dim])
        g = np.tanh(a[:, 3 * h_dim : 4 * h_dim])
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[t, :, 0 * h_dim : 1 * h_dim] = i
        gates[t, :, 1 * h_dim : 2 * h_dim] = f
        gates[t, :, 2 * h_dim : 3 * h_dim] = o
        gates[t, :, 3 * h_dim : 4 * h_dim] = g
        c_raw[t] = c_t
        m = mask[:, t : t + 1]
        h_states[t + 1] = m * h_t + (1.0 - m) * h_prev
        c_states[t + 1] = m * c_t + (1.0 - m) * c_prev

    z = h_states[L] @ model.w_out + model.b_out
    p = sigmoid(z)
    return ForwardCache(
        ids=ids, mask=mask, gates=gates, c_raw=c_raw,
        h_states=h_states, c_states=c_states, p=p,
    )


def forward(model: LstmModel, seq: EncodedSequence) -> tuple[float, ForwardCache]:
    """Positive-class probability for one encoded sequence.

    Single-sequence path: only the true_length real steps run, since
    padding leaves h and c unchanged. The cache is interchangeable with a
    batch-of-one forward_batch cache for backward(); zero-filled entries at
    padded steps are masked out there.
    """
    hyper = model.hyper
    L = hyper.seq_len
    h_dim = hyper.hidden_dim
    if len(seq.ids) != L:
        raise ModelShapeError(f"sequence length {len(seq.ids)} != model seq_len {L}")
    ids = np.asarray([seq.ids], dtype=np.int64)
    if ids.max(initial=0) >= hyper.vocab_size or ids.min(initial=0) < 0:
        raise ModelShapeError("token id out of vocabulary range")
    T = min(seq.true_length, L)
    dtype = model.dtype

    mask = (np.arange(L)[None, :] < T).astype(dtype)
    gates = np.zeros((L, 1, 4 * h_dim), dtype=dtype)
    c_raw = np.zeros((L, 1, h_dim), dtype=dtype)
    h_states = np.zeros((L + 1, 1, h_dim), dtype=dtype)
    c_states = np.zeros((L + 1, 1, h_dim), dtype=dtype)

    h_t = np.zeros(h_dim, dtype=dtype)
    c_t = np.zeros(h_dim, dtype=dtype)
    if T > 0:
        xw = model.E[ids[0, :T]] @ model.W  # all real steps in one matmul
        U, b = model.U, model.b
        three = 3 * h_dim
        for t in range(T):
            a = xw[t] + h_t @ U + b
            act = sigmoid(a[:three])  # i, f, o in one call
            g = np.tanh(a[three:])
            c_t = act[h_dim : 2 * h_dim] * c_t + act[:h_dim] * g
            h_t = act[2 * h_dim : three] * np.tanh(c_t)
            gates[t, 0, :three] = act
            gates[t, 0, three:] = g
            c_raw[t, 0] = c_t
            h_states[t + 1, 0] = h_t
            c_states[t + 1, 0] = c_t
        if T < L:
            h_states[T + 1 :, 0] = h_t
            c_states[T + 1 :, 0] = c_t
    z = np.asarray([h_t @ model.w_out + model.b_out], dtype=dtype)
    p = sigmoid(z)
    cache = ForwardCache(
        ids=ids, mask=mask, gates=gates, c_raw=c_raw,
        h_states=h_states, c_states=c_states, p=p,
    )
    return float(p[0]), cache


def loss(p: float, y: int) -> float:
    """Binary cross-entropy with p clamped to [1e-7, 1 - 1e-7]."""
    p = min(max(p, LOSS_CLAMP), 1.0 - LOSS_CLAMP)
    return -(y * np.log(p) + (1 - y) * np.log(1.0 - p))


def loss_batch(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def backward_batch(
    model: LstmModel, cache: ForwardCache, y: np.ndarray
) -> dict[str, np.ndarray]:
    """Exact gradients of the summed batch loss w.r.t. every parameter.

    Returns arrays keyed like model.params(). The padding embedding row's
    gradient is forced to zero.
    """
    hyper = model.hyper
    h_dim = hyper.hidden_dim
    L = hyper.seq_len
    B = cache.ids.shape[0]
    dtype = model.dtype
    y = y.astype(dtype)

    grads = {
        "E": np.zeros_like(model.E),
        "W": np.zeros_like(model.W),
        "U": np.zeros_like(model.U),
        "b": np.zeros_like(model.b),
        "w_out": np.zeros_like(model.w_out),
        "b_out": np.zeros_like(model.b_out),
    }

    dz = cache.p - y  # (B,) d(sum BCE)/dz
    grads["w_out"] = cache.h_states[L].T @ dz
    grads["b_out"] = np.asarray(dz.sum(), dtype=dtype)

    dh = dz[:, None] * model.w_out[None, :]  # (B, h)
    dc = np.zeros((B, h_dim), dtype=dtype)
    x_all = model.E[cache.ids]  # (B, L, d)
    dE_steps = np.zeros((B, L, hyper.embedding_dim), dtype=dtype)

    for t in range(L - 1, -1, -1):
        m = cache.mask[:, t : t + 1]
        i = cache.gates[t, :, 0 * h_dim : 1 * h_dim]
        f = cache.gates[t, :, 1 * h_dim : 2 * h_dim]
        o = cache.gates[t, :, 2 * h_dim : 3 * h_dim]
        g = cache.gates[t, :, 3 * h_dim : 4 * h_dim]
        c_prev = cache.c_states[t]
        h_prev = cache.h_states[t]
        tanh_c = np.tanh(cache.c_raw[t])

        dh_step = dh * m
        dh_pass = dh * (1.0 - m)
        dc_step = dc * m
        dc_pass = dc * (1.0 - m)

        do = dh_step * tanh_c
        dc_step = dc_step + dh_step * o * (1.0 - tanh_c * tanh_c)
        di = dc_step * g
        df = dc_step * c_prev
        dg = dc_step * i
        dc_prev = dc_step * f

        da = np.empty((B, 4 * h_dim), dtype=dtype)
        da[:, 0 * h_dim : 1 * h_dim] = di * i * (1.0 - i)
        da[:, 1 * h_dim : 2 * h_dim] = df * f * (1.0 - f)
        da[:, 2 * h_dim : 3 * h_dim] = do * o * (1.0 - o)
        da[:, 3 * h_dim : 4 * h_dim] = dg * (1.0 - g * g)

        grads["W"] += x_all[:, t, :].T @ da
        grads["U"] += h_prev.T @ da
        grads["b"] += da.sum(axis=0)
        dE_steps[:, t, :] = da @ model.W.T
        dh = da @ model.U.T + dh_pass
        dc = dc_prev + dc_pass

    flat_ids = cache.ids.reshape(-1)
    np.add.at(grads["E"], flat_ids, dE_steps.reshape(-1, hyper.embedding_dim))
    grads["E"][0, :] = 0.0  # padding row stays frozen
    return grads


def backward(model: LstmModel, cache: ForwardCache, y: int) -> dict[str, np.ndarray]:
    """Single-example gradients (batch core with B=1)."""
    return backward_batch(model, cache, np.asarray([y]))


def save_model(model: LstmModel, path: str | Path) -> None:
    hyper = model.hyper
    parts = [
        MAGIC,
        struct.pack("<I", FORMAT_VERSION),
        _HYPER.pack(
            hyper.vocab_size,
            hyper.embedding_dim,
            hyper.hidden_dim,
            hyper.seq_len,
            hyper.batch_size,
            hyper.epochs,
            hyper.learning_rate,
            hyper.clip_norm,
            hyper.seed,
        ),
    ]
    matrices = [
        model.E,
        model.W_i, model.W_f, model.W_o, model.W_c,
        model.U_i, model.U_f, model.U_o, model.U_c,
        model.b_i, model.b_f, model.b_o, model.b_c,
        model.w_out, np.atleast_1d(model.b_out),
    ]
    for mat in matrices:
        parts.append(np.ascontiguousarray(mat, dtype="<f4").tobytes())
    tmp = Path(path).with_suffix(".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_model(path: str | Path) -> LstmModel:
    """Read a model file; parameters come back as float32."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ModelLoadError(f"cannot read model file: {exc}") from exc
    header = 4 + 4 + _HYPER.size
    if len(blob) < header or blob[:4] != MAGIC:
        raise ModelLoadError(f"not a model file: {path}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelLoadError(f"unsupported model version {version}")
    V, d, h, L, batch_size, epochs, lr, clip, seed = _HYPER.unpack_from(blob, 8)
    hyper = LstmHyperparams(
        vocab_size=V,
        embedding_dim=d,
        hidden_dim=h,
        seq_len=L,
        batch_size=batch_size,
        epochs=epochs,
        learning_rate=lr,
        clip_norm=clip,
        seed=seed,
    )
    expected = V * d + 4 * (d * h) + 4 * (h * h) + 4 * h + h + 1
    body = blob[header:]
    if len(body) != expected * 4:
        raise ModelLoadError(
            f"model file truncated or padded: {len(body)} bytes, expected {expected * 4}"
        )
    flat = np.frombuffer(body, dtype="<f4").astype(np.float32)
    pos = 0

    def take(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal pos
        n = int(np.prod(shape))
        out = flat[pos : pos + n].reshape(shape).copy()
        pos += n
        return out

    E = take((V, d))
    W = np.empty((d, 4 * h), dtype=np.float32)
    for gate in range(4):
        W[:, gate * h : (gate + 1) * h] = take((d, h))
    U = np.empty((h, 4 * h), dtype=np.float32)
    for gate in range(4):
        U[:, gate * h : (gate + 1) * h] = take((h, h))
    b = np.empty(4 * h, dtype=np.float32)
    for gate in range(4):
        b[gate * h : (gate + 1) * h] = take((h,))
    w_out = take((h,))
    b_out = take((1,))[0]
    return LstmModel(hyper, E, W, U, b, w_out, np.asarray(b_out, dtype=np.float32))
