"""Dense, GRU, bidirectional GRU, and attention layers with exact reverse-mode
gradients (full backpropagation through time, no truncation).

All layers cache forward intermediates and accumulate parameter gradients into
``Param.grad`` on ``backward``. Batched inputs use shape (batch, time, features)
for recurrent layers and (..., features) for dense layers. Double precision
throughout.

The recurrent state update supports two merge conventions for combining the
previous state with the candidate state:

* ``"paper"``:  h_t = z * h_prev + (1 - z) * h_tilde
* ``"cho"``:    h_t = (1 - z) * h_prev + z * h_tilde

The convention is recorded in saved model manifests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .activations import activation_forward, activation_vjp, sigmoid
from .params import Param, glorot_uniform

MERGE_CONVENTIONS = ("paper", "cho")
DEFAULT_MERGE = "paper"


def _check_merge(merge: str) -> None:
    if merge not in MERGE_CONVENTIONS:
        raise ValueError(f"unknown merge convention: {merge!r}")


def _as_batch(x: np.ndarray, dims: int) -> tuple[np.ndarray, bool]:
    """Promote an unbatched array to a singleton batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == dims - 1:
        return x[None, ...], True
    if x.ndim != dims:
        raise ValueError(f"expected {dims - 1}- or {dims}-dim input, got {x.ndim}-dim")
    return x, False


@dataclass
class GruStepState:
    """Gate and state values of one recurrent step."""

    z: np.ndarray
    r: np.ndarray
    h_tilde: np.ndarray
    h: np.ndarray


@dataclass
class AttentionOutput:
    """Per-step scores, softmax weights, and the context vector."""

    scores: np.ndarray
    weights: np.ndarray
    context: np.ndarray


class Dense:
    """Affine map plus pointwise activation: a = act(x W + b)."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        activation: str,
        rng: np.random.Generator,
        name: str = "dense",
    ):
        activation_forward(activation, np.zeros(1))  # validate name early
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.name = name
        self.W = Param(f"{name}.W", glorot_uniform(rng, (in_dim, out_dim)))
        self.b = Param(f"{name}.b", np.zeros(out_dim))
        self._cache: tuple | None = None

    def params(self) -> list[Param]:
        return [self.W, self.b]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: input dim {x.shape[-1]} != {self.in_dim}")
        flat = x.reshape(-1, self.in_dim)
        z = flat @ self.W.value + self.b.value
        a = activation_forward(self.activation, z)
        self._cache = (x.shape, flat, z, a)
        return a.reshape(*x.shape[:-1], self.out_dim)

    def backward(self, da: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        shape, flat, z, a = self._cache
        da_flat = np.asarray(da, dtype=np.float64).reshape(-1, self.out_dim)
        dz = activation_vjp(self.activation, z, a, da_flat)
        self.W.grad += flat.T @ dz
        self.b.grad += dz.sum(axis=0)
        dx = dz @ self.W.value.T
        return dx.reshape(shape)


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, activation: str) -> np.ndarray:
    """Stateless activation(W x + b) for a single vector or a batch of rows."""
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} does not match weight rows {W.shape[0]}")
    return activation_forward(activation, x @ W + b)


class GruCell:
    """One recurrent cell with update gate z, reset gate r, candidate state.

    Parameters follow the split input/recurrent form: W_* maps the input,
    U_* maps the previous hidden state, b_* is the bias, for gates z, r and
    the candidate h.
    """

    GATE_NAMES = ("z", "r", "h")

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        name: str = "gru",
        merge: str = DEFAULT_MERGE,
    ):
        _check_merge(merge)
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.merge = merge
        self.name = name
        self.W: dict[str, Param] = {}
        self.U: dict[str, Param] = {}
        self.b: dict[str, Param] = {}
        for g in self.GATE_NAMES:
            self.W[g] = Param(f"{name}.W_{g}", glorot_uniform(rng, (in_dim, hidden_dim)))
            self.U[g] = Param(f"{name}.U_{g}", glorot_uniform(rng, (hidden_dim, hidden_dim)))
            self.b[g] = Param(f"{name}.b_{g}", np.zeros(hidden_dim))

    def params(self) -> list[Param]:
        out = []
        for g in self.GATE_NAMES:
            out.extend([self.W[g], self.U[g], self.b[g]])
        return out

    def step(self, x_t: np.ndarray, h_prev: np.ndarray) -> GruStepState:
        """Single step on a vector or batch; returns all gate values."""
        x_t, squeeze = _as_batch(x_t, 2)
        h_prev, _ = _as_batch(h_prev, 2)
        if x_t.shape[1] != self.in_dim or h_prev.shape[1] != self.hidden_dim:
            raise ValueError(
                f"{self.name}: shapes {x_t.shape}/{h_prev.shape} do not match "
                f"in_dim={self.in_dim}, hidden_dim={self.hidden_dim}"
            )
        z = sigmoid(x_t @ self.W["z"].value + h_prev @ self.U["z"].value + self.b["z"].value)
        r = sigmoid(x_t @ self.W["r"].value + h_prev @ self.U["r"].value + self.b["r"].value)
        h_tilde = np.tanh(
            x_t @ self.W["h"].value + (r * h_prev) @ self.U["h"].value + self.b["h"].value
        )
        if self.merge == "paper":
            h = z * h_prev + (1.0 - z) * h_tilde
        else:
            h = (1.0 - z) * h_prev + z * h_tilde
        if squeeze:
            return GruStepState(z[0], r[0], h_tilde[0], h[0])
        return GruStepState(z, r, h_tilde, h)


def gru_cell_step(cell: GruCell, x_t: np.ndarray, h_prev: np.ndarray) -> GruStepState:
    """Functional form of one GRU step."""
    return cell.step(x_t, h_prev)


class GruLayer:
    """A full-sequence GRU over (batch, time, in_dim) in either direction.

    A ``backward`` direction layer processes the reversed sequence and
    re-reverses its outputs, so output step t always aligns with input step t.
    """

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        name: str = "gru",
        direction: str = "forward",
        merge: str = DEFAULT_MERGE,
    ):
        if direction not in ("forward", "backward"):
            raise ValueError(f"unknown direction: {direction!r}")
        self.cell = GruCell(in_dim, hidden_dim, rng, name=name, merge=merge)
        self.direction = direction
        self.name = name
        self._cache: dict | None = None

    @property
    def in_dim(self) -> int:
        return self.cell.in_dim

    @property
    def hidden_dim(self) -> int:
        return self.cell.hidden_dim

    def params(self) -> list[Param]:
        return self.cell.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"{self.name}: expected (batch, time, features), got {x.shape}")
        if x.shape[1] < 1:
            raise ValueError(f"{self.name}: empty sequence")
        if x.shape[2] != self.in_dim:
            raise ValueError(f"{self.name}: input dim {x.shape[2]} != {self.in_dim}")
        if self.direction == "backward":
            x = x[:, ::-1]
        B, T, _ = x.shape
        H = self.hidden_dim
        cell = self.cell
        # Input projections for all steps at once; the recurrent part stays sequential.
        flat = x.reshape(B * T, self.in_dim)
        pre = {
            g: (flat @ cell.W[g].value + cell.b[g].value).reshape(B, T, H)
            for g in GruCell.GATE_NAMES
        }
        h = np.zeros((B, H))
        hs = np.empty((B, T, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        hts = np.empty((B, T, H))
        rhs = np.empty((B, T, H))
        for t in range(T):
            z = sigmoid(pre["z"][:, t] + h @ cell.U["z"].value)
            r = sigmoid(pre["r"][:, t] + h @ cell.U["r"].value)
            rh = r * h
            ht = np.tanh(pre["h"][:, t] + rh @ cell.U["h"].value)
            if cell.merge == "paper":
                h_new = z * h + (1.0 - z) * ht
            else:
                h_new = (1.0 - z) * h + z * ht
            zs[:, t], rs[:, t], hts[:, t], rhs[:, t] = z, r, ht, rh
            hs[:, t] = h_new
            h = h_new
        self._cache = {"x": x, "hs": hs, "zs": zs, "rs": rs, "hts": hts, "rhs": rhs}
        out = hs[:, ::-1] if self.direction == "backward" else hs
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        c = self._cache
        x, hs, zs, rs, hts, rhs = c["x"], c["hs"], c["zs"], c["rs"], c["hts"], c["rhs"]
        dout = np.asarray(dout, dtype=np.float64)
        if self.direction == "backward":
            dout = dout[:, ::-1]
        B, T, H = hs.shape
        cell = self.cell
        Uz, Ur, Uh = cell.U["z"].value, cell.U["r"].value, cell.U["h"].value
        dpre_z = np.empty((B, T, H))
        dpre_r = np.empty((B, T, H))
        dpre_h = np.empty((B, T, H))
        carry = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            h_prev = hs[:, t - 1] if t > 0 else np.zeros((B, H))
            z, r, ht = zs[:, t], rs[:, t], hts[:, t]
            dh = dout[:, t] + carry
            if cell.merge == "paper":
                dz = dh * (h_prev - ht)
                dht = dh * (1.0 - z)
                dh_prev = dh * z
            else:
                dz = dh * (ht - h_prev)
                dht = dh * z
                dh_prev = dh * (1.0 - z)
            dph = dht * (1.0 - ht * ht)
            ds = dph @ Uh.T  # gradient w.r.t. r * h_prev
            dr = ds * h_prev
            dh_prev = dh_prev + ds * r
            dpr = dr * r * (1.0 - r)
            dpz = dz * z * (1.0 - z)
            dh_prev = dh_prev + dpr @ Ur.T + dpz @ Uz.T
            dpre_z[:, t], dpre_r[:, t], dpre_h[:, t] = dpz, dpr, dph
            carry = dh_prev
        # Batched parameter and input gradients.
        flat_x = x.reshape(B * T, self.in_dim)
        h_prev_stack = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        flat_hp = h_prev_stack.reshape(B * T, H)
        flat_rh = rhs.reshape(B * T, H)
        dx = np.zeros_like(flat_x)
        for g, dpre, rec_in in (
            ("z", dpre_z, flat_hp),
            ("r", dpre_r, flat_hp),
            ("h", dpre_h, flat_rh),
        ):
            dp = dpre.reshape(B * T, H)
            cell.W[g].grad += flat_x.T @ dp
            cell.U[g].grad += rec_in.T @ dp
            cell.b[g].grad += dp.sum(axis=0)
            dx += dp @ cell.W[g].value.T
        dx = dx.reshape(B, T, self.in_dim)
        if self.direction == "backward":
            dx = dx[:, ::-1]
        return dx


def gru_layer_forward(cell: GruCell, inputs: np.ndarray, direction: str = "forward") -> np.ndarray:
    """Run a sequence through a cell in the given direction (h_0 = 0).

    Output step t aligns with input step t for both directions.
    """
    inputs, squeeze = _as_batch(inputs, 3)
    layer = GruLayer.__new__(GruLayer)
    layer.cell = cell
    layer.direction = direction
    layer.name = cell.name
    layer._cache = None
    if direction not in ("forward", "backward"):
        raise ValueError(f"unknown direction: {direction!r}")
    out = layer.forward(inputs)
    return out[0] if squeeze else out


class BiGru:
    """Forward and backward GRUs over the same input, merged by element-wise sum."""

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        rng: np.random.Generator,
        name: str = "bigru",
        merge: str = DEFAULT_MERGE,
    ):
        self.fwd = GruLayer(in_dim, hidden_dim, rng, name=f"{name}.fwd", direction="forward", merge=merge)
        self.bwd = GruLayer(in_dim, hidden_dim, rng, name=f"{name}.bwd", direction="backward", merge=merge)
        self.name = name

    @property
    def hidden_dim(self) -> int:
        return self.fwd.hidden_dim

    def params(self) -> list[Param]:
        return self.fwd.params() + self.bwd.params()

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.fwd.forward(x) + self.bwd.forward(x)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return self.fwd.backward(dout) + self.bwd.backward(dout)


def bigru_forward(fwd_cell: GruCell, bwd_cell: GruCell, inputs: np.ndarray) -> np.ndarray:
    """y_t = h_fwd_t + h_bwd_t, element-wise over aligned steps."""
    if fwd_cell.hidden_dim != bwd_cell.hidden_dim:
        raise ValueError(
            f"hidden dims differ: {fwd_cell.hidden_dim} != {bwd_cell.hidden_dim}"
        )
    return gru_layer_forward(fwd_cell, inputs, "forward") + gru_layer_forward(
        bwd_cell, inputs, "backward"
    )


class Attention:
    """Additive attention over per-step features.

    Per step i: e_i = tanh(W_h h_i), score_i = w . e_i, weights = softmax over
    steps, context = sum_i weight_i * h_i.
    """

    def __init__(
        self,
        feature_dim: int,
        attn_dim: int,
        rng: np.random.Generator,
        name: str = "attn",
    ):
        self.feature_dim = feature_dim
        self.attn_dim = attn_dim
        self.name = name
        self.W_h = Param(f"{name}.W_h", glorot_uniform(rng, (feature_dim, attn_dim)))
        self.w = Param(f"{name}.w", glorot_uniform(rng, (attn_dim, 1))[:, 0])
        self._cache: dict | None = None

    def params(self) -> list[Param]:
        return [self.W_h, self.w]

    def forward(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (context (B, F), weights (B, T))."""
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 3:
            raise ValueError(f"{self.name}: expected (batch, time, features), got {h.shape}")
        B, T, F = h.shape
        if T == 0:
            raise ValueError(f"{self.name}: empty sequence")
        if F != self.feature_dim:
            raise ValueError(f"{self.name}: feature dim {F} != {self.feature_dim}")
        e = np.tanh(h @ self.W_h.value)  # (B, T, A)
        scores = e @ self.w.value  # (B, T)
        shifted = scores - scores.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        alpha = ex / ex.sum(axis=1, keepdims=True)
        context = np.einsum("bt,btf->bf", alpha, h)
        self._cache = {"h": h, "e": e, "alpha": alpha}
        return context, alpha

    def backward(self, dcontext: np.ndarray, dalpha: np.ndarray | None = None) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called before forward")
        c = self._cache
        h, e, alpha = c["h"], c["e"], c["alpha"]
        dcontext = np.asarray(dcontext, dtype=np.float64)
        da = np.einsum("bf,btf->bt", dcontext, h)
        if dalpha is not None:
            da = da + dalpha
        dh = alpha[:, :, None] * dcontext[:, None, :]
        # Softmax backward over the time axis.
        dscores = alpha * (da - np.sum(da * alpha, axis=1, keepdims=True))
        de = dscores[:, :, None] * self.w.value[None, None, :]
        self.w.grad += np.einsum("bta,bt->a", e, dscores)
        dpre = de * (1.0 - e * e)
        B, T, _ = h.shape
        self.W_h.grad += h.reshape(B * T, -1).T @ dpre.reshape(B * T, -1)
        dh += dpre @ self.W_h.value.T
        return dh


def attention(h: np.ndarray, W_h: np.ndarray, w: np.ndarray) -> AttentionOutput:
    """Stateless attention over steps of h (T, F) or (B, T, F)."""
    h, squeeze = _as_batch(np.asarray(h, dtype=np.float64), 3)
    W_h = np.asarray(W_h, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if h.shape[1] == 0:
        raise ValueError("attention over an empty sequence")
    if h.shape[2] != W_h.shape[0]:
        raise ValueError(f"feature dim {h.shape[2]} does not match W_h rows {W_h.shape[0]}")
    e = np.tanh(h @ W_h)
    scores = e @ w
    shifted = scores - scores.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    alpha = ex / ex.sum(axis=1, keepdims=True)
    context = np.einsum("bt,btf->bf", alpha, h)
    if squeeze:
        return AttentionOutput(scores[0], alpha[0], context[0])
    return AttentionOutput(scores, alpha, context)
