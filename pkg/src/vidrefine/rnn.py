"""Stacked GRU with an affine output head, batched forward and exact BPTT.

Vectors are rows: a layer computes ``x @ Wx + h @ Wh + b``. The candidate
state uses the logistic function by default (``candidate="sigmoid"``);
``candidate="tanh"`` gives the conventional GRU.

All arrays may carry a leading batch axis: sequences are ``(T, D)`` or
``(N, T, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GATES = ("r", "u", "c")


def sigmoid(z):
    # tanh form avoids overflow warnings for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class GruLayerParams:
    Wxr: np.ndarray
    Wxu: np.ndarray
    Wxc: np.ndarray
    Whr: np.ndarray
    Whu: np.ndarray
    Whc: np.ndarray
    br: np.ndarray
    bu: np.ndarray
    bc: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.Wxr.shape[0]

    @property
    def hidden(self) -> int:
        return self.Wxr.shape[1]

    def named(self) -> dict[str, np.ndarray]:
        return {
            "Wxr": self.Wxr, "Wxu": self.Wxu, "Wxc": self.Wxc,
            "Whr": self.Whr, "Whu": self.Whu, "Whc": self.Whc,
            "br": self.br, "bu": self.bu, "bc": self.bc,
        }

    def check(self) -> None:
        n, H = self.in_dim, self.hidden
        for name, arr in self.named().items():
            want = (n, H) if name.startswith("Wx") else (H, H) if name.startswith("Wh") else (H,)
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")


@dataclass
class GruNetwork:
    layers: list[GruLayerParams]
    Wo: np.ndarray
    bo: np.ndarray
    dropout_prob: float = 0.0
    candidate: str = "sigmoid"

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")
        if self.candidate not in ("sigmoid", "tanh"):
            raise ValueError(f"unknown candidate activation {self.candidate!r}")
        prev = None
        for k, layer in enumerate(self.layers):
            layer.check()
            if prev is not None and layer.in_dim != prev:
                raise ValueError(f"layer {k} expects input {layer.in_dim}, previous layer gives {prev}")
            prev = layer.hidden
        if not self.layers:
            raise ValueError("network needs at least one GRU layer")
        if self.Wo.shape != (prev, self.bo.shape[0]):
            raise ValueError(f"output weights {self.Wo.shape} do not fit hidden size {prev}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.Wo.shape[1]

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.hidden for layer in self.layers)

    def params(self) -> dict[str, np.ndarray]:
        """Flat name -> array mapping. Arrays are the live parameters, not copies."""
        out = {}
        for k, layer in enumerate(self.layers):
            for name, arr in layer.named().items():
                out[f"layers.{k}.{name}"] = arr
        out["out.W"] = self.Wo
        out["out.b"] = self.bo
        return out

    def copy(self) -> "GruNetwork":
        layers = [GruLayerParams(**{k: v.copy() for k, v in l.named().items()}) for l in self.layers]
        return GruNetwork(layers, self.Wo.copy(), self.bo.copy(), self.dropout_prob, self.candidate)


@dataclass
class GruState:
    h: list[np.ndarray]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(
    in_dim: int,
    hidden_sizes: tuple[int, ...] | list[int],
    out_dim: int,
    rng_seed: int = 0,
    dropout_prob: float = 0.0,
    candidate: str = "sigmoid",
) -> GruNetwork:
    rng = np.random.default_rng(rng_seed)
    layers = []
    n = in_dim
    for H in hidden_sizes:
        layers.append(
            GruLayerParams(
                Wxr=_glorot(rng, n, H), Wxu=_glorot(rng, n, H), Wxc=_glorot(rng, n, H),
                Whr=_glorot(rng, H, H), Whu=_glorot(rng, H, H), Whc=_glorot(rng, H, H),
                br=np.zeros(H), bu=np.zeros(H), bc=np.zeros(H),
            )
        )
        n = H
    return GruNetwork(layers, _glorot(rng, n, out_dim), np.zeros(out_dim), dropout_prob, candidate)


def _candidate(z, kind):
    return sigmoid(z) if kind == "sigmoid" else np.tanh(z)


def _candidate_grad(c, kind):
    return c * (1.0 - c) if kind == "sigmoid" else 1.0 - c * c


def gru_step(params: GruLayerParams, x, h_prev, candidate: str = "sigmoid"):
    """One GRU update. Returns ``(h_new, cache)`` with the gate values and
    the recurrent candidate term ``h_prev @ Whc`` needed for backprop."""
    x = np.asarray(x, dtype=float)
    h_prev = np.asarray(h_prev, dtype=float)
    if x.shape[-1] != params.in_dim or h_prev.shape[-1] != params.hidden:
        raise ValueError(
            f"gru_step got x{x.shape}, h{h_prev.shape} for layer ({params.in_dim}->{params.hidden})"
        )
    r = sigmoid(x @ params.Wxr + h_prev @ params.Whr + params.br)
    u = sigmoid(x @ params.Wxu + h_prev @ params.Whu + params.bu)
    hc = h_prev @ params.Whc
    c = _candidate(x @ params.Wxc + r * hc + params.bc, candidate)
    h = (1.0 - u) * h_prev + u * c
    return h, {"r": r, "u": u, "c": c, "hc": hc}


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # per layer input, (N, T, in)
    hidden: list[np.ndarray]  # per layer states, (N, T+1, H); index 0 is the zero state
    gates: list[dict[str, np.ndarray]]  # per layer r, u, c, hc of shape (N, T, H)
    masks: list[np.ndarray | None]  # per layer inverted-dropout multiplier on the layer output
    top: np.ndarray  # input to the head, (N, T, H)
    batched: bool
    shapes: dict[str, tuple] = field(default_factory=dict)


def forward(net: GruNetwork, sequence, train: bool = False, rng_seed=None):
    """Run the network over a sequence (or a batch of sequences).

    In training mode each layer's output is multiplied by an inverted
    dropout mask before feeding the next layer or the head. ``rng_seed``
    may be an int, a SeedSequence or a Generator; it only matters in
    training mode with ``dropout_prob > 0``.
    Returns ``(predictions, cache)``.
    """
    x = np.asarray(sequence, dtype=float)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != net.in_dim:
        raise ValueError(f"expected sequence of shape (T, {net.in_dim}) or (N, T, {net.in_dim}), got {np.shape(sequence)}")
    N, T, _ = x.shape
    p = net.dropout_prob if train else 0.0
    rng = None
    if p > 0:
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    cache = ForwardCache([], [], [], [], None, batched, {k: v.shape for k, v in net.params().items()})
    inp = x
    for layer in net.layers:
        H = layer.hidden
        xr = inp @ layer.Wxr + layer.br
        xu = inp @ layer.Wxu + layer.bu
        xc = inp @ layer.Wxc + layer.bc
        hs = np.zeros((N, T + 1, H))
        g = {k: np.empty((N, T, H)) for k in ("r", "u", "c", "hc")}
        h = hs[:, 0]
        for t in range(T):
            r = sigmoid(xr[:, t] + h @ layer.Whr)
            u = sigmoid(xu[:, t] + h @ layer.Whu)
            hc = h @ layer.Whc
            c = _candidate(xc[:, t] + r * hc, net.candidate)
            h = (1.0 - u) * h + u * c
            hs[:, t + 1] = h
            g["r"][:, t], g["u"][:, t], g["c"][:, t], g["hc"][:, t] = r, u, c, hc
        out = hs[:, 1:]
        mask = None
        if p > 0:
            mask = (rng.random(out.shape) >= p) / (1.0 - p)
            out = out * mask
        cache.inputs.append(inp)
        cache.hidden.append(hs)
        cache.gates.append(g)
        cache.masks.append(mask)
        inp = out
    cache.top = inp
    y = inp @ net.Wo + net.bo
    return (y if batched else y[0]), cache


def final_state(cache: ForwardCache) -> GruState:
    return GruState([hs[:, -1] if cache.batched else hs[0, -1] for hs in cache.hidden])


def backward(net: GruNetwork, cache: ForwardCache, grad_outputs) -> dict[str, np.ndarray]:
    """Exact BPTT. ``grad_outputs`` holds dLoss/dprediction for every step;
    gradients are summed over the batch axis."""
    if cache.shapes != {k: v.shape for k, v in net.params().items()}:
        raise ValueError("cache was produced by a network with different shapes")
    dy = np.asarray(grad_outputs, dtype=float)
    if not cache.batched:
        dy = dy[None]
    N, T, _ = cache.top.shape
    if dy.shape != (N, T, net.out_dim):
        raise ValueError(f"grad_outputs shape {np.shape(grad_outputs)} does not match predictions")

    grads: dict[str, np.ndarray] = {}
    top = cache.top.reshape(N * T, -1)
    grads["out.W"] = top.T @ dy.reshape(N * T, -1)
    grads["out.b"] = dy.sum(axis=(0, 1))
    d_in = dy @ net.Wo.T

    for k in reversed(range(len(net.layers))):
        layer = net.layers[k]
        H = layer.hidden
        g = cache.gates[k]
        hs = cache.hidden[k]
        d_out = d_in if cache.masks[k] is None else d_in * cache.masks[k]

        da = {key: np.empty((N, T, H)) for key in GATES}
        dWhr = np.zeros((H, H))
        dWhu = np.zeros((H, H))
        dWhc = np.zeros((H, H))
        dh_next = np.zeros((N, H))
        for t in reversed(range(T)):
            dh = d_out[:, t] + dh_next
            h_prev = hs[:, t]
            r, u, c, hc = g["r"][:, t], g["u"][:, t], g["c"][:, t], g["hc"][:, t]
            dac = dh * u * _candidate_grad(c, net.candidate)
            dau = dh * (c - h_prev) * u * (1.0 - u)
            dar = dac * hc * r * (1.0 - r)
            dhc = dac * r
            dWhr += h_prev.T @ dar
            dWhu += h_prev.T @ dau
            dWhc += h_prev.T @ dhc
            dh_next = dh * (1.0 - u) + dar @ layer.Whr.T + dau @ layer.Whu.T + dhc @ layer.Whc.T
            da["r"][:, t], da["u"][:, t], da["c"][:, t] = dar, dau, dac

        inp = cache.inputs[k].reshape(N * T, -1)
        prefix = f"layers.{k}."
        for key in GATES:
            flat = da[key].reshape(N * T, H)
            grads[prefix + "Wx" + key] = inp.T @ flat
            grads[prefix + "b" + key] = flat.sum(axis=0)
        grads[prefix + "Whr"] = dWhr
        grads[prefix + "Whu"] = dWhu
        grads[prefix + "Whc"] = dWhc
        if k > 0:
            d_in = da["r"] @ layer.Wxr.T + da["u"] @ layer.Wxu.T + da["c"] @ layer.Wxc.T

    return {name: grads[name] for name in net.params()}
