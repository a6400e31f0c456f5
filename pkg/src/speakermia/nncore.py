"""Small numpy network kernel: the layers the SID, attack and detector nets use.

Layout convention: sequence tensors are channels-last, ``(batch, time, channels)``,
so a spectrogram stored as ``frames x bins`` feeds the first convolution with the
frequency bins as input channels and no transpose.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

FORMAT_VERSION = 1

LOSS_KINDS = ("ce_hard", "ce_soft", "bce")


# ---------------------------------------------------------------------------
# architecture description


@dataclass(frozen=True)
class Architecture:
    """Ordered layer menu plus the names of its parameter tensors."""

    name: str
    layers: tuple

    @property
    def n_outputs(self) -> int:
        for layer in reversed(self.layers):
            if layer["type"] == "dense":
                return layer["out"]
            if layer["type"] == "conv_block":
                return layer["out_channels"]
        raise ValueError("architecture has no parametric layer")

    @property
    def n_inputs(self) -> int:
        first = self.layers[0]
        return first["in_channels"] if first["type"] == "conv_block" else first["in"]

    @property
    def is_sequence(self) -> bool:
        return self.layers[0]["type"] == "conv_block"

    def param_shapes(self) -> dict:
        shapes = {}
        for i, layer in enumerate(self.layers):
            if layer["type"] == "conv_block":
                shapes[f"{i}.weight"] = (layer["out_channels"], layer["in_channels"], layer["kernel"])
                shapes[f"{i}.bias"] = (layer["out_channels"],)
            elif layer["type"] == "dense":
                shapes[f"{i}.weight"] = (layer["out"], layer["in"])
                shapes[f"{i}.bias"] = (layer["out"],)
        return shapes

    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes().values()))

    def trunk_shapes(self) -> dict:
        """Shapes of every parameter except the output layer's."""
        shapes = self.param_shapes()
        last = max(int(k.split(".")[0]) for k in shapes)
        return {k: v for k, v in shapes.items() if int(k.split(".")[0]) != last}

    def to_dict(self) -> dict:
        return {"name": self.name, "layers": [dict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(name=d["name"], layers=tuple(dict(l) for l in d["layers"]))


def sid_architecture(n_bins, n_classes, channels=(32, 64, 128), kernel=7, stride=2,
                     pool=2, hidden=256) -> Architecture:
    """Three conv blocks over time, global average pool, two dense layers."""
    layers = []
    c_in = n_bins
    for c_out in channels:
        layers.append({"type": "conv_block", "in_channels": c_in, "out_channels": c_out,
                       "kernel": kernel, "stride": stride, "pool": pool})
        c_in = c_out
    layers.append({"type": "global_avg_pool"})
    layers.append({"type": "dense", "in": c_in, "out": hidden})
    layers.append({"type": "relu"})
    layers.append({"type": "dense", "in": hidden, "out": n_classes})
    return Architecture("sid", tuple(layers))


def mlp_architecture(n_inputs, hidden=(64, 64), n_outputs=1, name="attack") -> Architecture:
    layers = []
    d = n_inputs
    for h in hidden:
        layers.append({"type": "dense", "in": d, "out": h})
        layers.append({"type": "relu"})
        d = h
    layers.append({"type": "dense", "in": d, "out": n_outputs})
    return Architecture(name, tuple(layers))


def conv_output_length(length, kernel, stride, pool=1) -> int:
    """Valid cross-correlation length, then floor division by the pool width."""
    if length < kernel:
        raise ValueError(f"input length {length} shorter than kernel {kernel}")
    n = (length - kernel) // stride + 1
    return n // pool if pool and pool > 1 else n


# ---------------------------------------------------------------------------
# parameters


@dataclass
class ParamSet:
    arch: Architecture
    tensors: dict
    init_seed: int

    @classmethod
    def init(cls, arch: Architecture, seed: int, dtype=np.float32,
             zero_final: bool = False) -> "ParamSet":
        """He-uniform weights, zero biases; a pure function of ``seed``."""
        rng = np.random.Generator(np.random.Philox(seed))
        shapes = arch.param_shapes()
        final = max(int(k.split(".")[0]) for k in shapes)
        tensors = {}
        for name, shape in shapes.items():
            if name.endswith(".bias"):
                tensors[name] = np.zeros(shape, dtype=dtype)
                continue
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=shape)
            if zero_final and int(name.split(".")[0]) == final:
                w = np.zeros(shape)
            tensors[name] = w.astype(dtype)
        return cls(arch, tensors, int(seed))

    def copy(self) -> "ParamSet":
        return ParamSet(self.arch, {k: v.copy() for k, v in self.tensors.items()}, self.init_seed)

    def astype(self, dtype) -> "ParamSet":
        return ParamSet(self.arch, {k: v.astype(dtype) for k, v in self.tensors.items()},
                        self.init_seed)

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def weight_sq_norm(self) -> float:
        return float(sum(np.sum(v.astype(np.float64) ** 2)
                         for k, v in self.tensors.items() if k.endswith(".weight")))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tensors[k].ravel() for k in sorted(self.tensors)])


def save_params(params: ParamSet, path, extra: Optional[dict] = None) -> None:
    """Write ``manifest.json`` plus one little-endian float32 file per tensor."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": params.arch.to_dict(),
        "init_seed": params.init_seed,
        "tensors": {k: list(v.shape) for k, v in params.tensors.items()},
    }
    if extra:
        manifest.update(extra)
    for name, value in params.tensors.items():
        np.asarray(value, dtype="<f4").tofile(os.path.join(path, f"{name}.f32"))
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_params(path) -> tuple:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
    arch = Architecture.from_dict(manifest["architecture"])
    expected = arch.param_shapes()
    tensors = {}
    for name, shape in manifest["tensors"].items():
        if tuple(shape) != tuple(expected.get(name, ())):
            raise ValueError(f"tensor {name} has shape {shape}, architecture wants {expected.get(name)}")
        data = np.fromfile(os.path.join(path, f"{name}.f32"), dtype="<f4")
        tensors[name] = data.reshape(shape).astype(np.float32)
    if set(tensors) != set(expected):
        raise ValueError("checkpoint tensors do not match architecture")
    return ParamSet(arch, tensors, manifest["init_seed"]), manifest


# ---------------------------------------------------------------------------
# layers


def _im2col(x, kernel, stride):
    # x: (B, L, C) -> (B, L_out, C*kernel), C-major to match weight.reshape(C_out, -1)
    win = sliding_window_view(x, kernel, axis=1)[:, ::stride]
    b, l_out, c, k = win.shape
    return win.reshape(b, l_out, c * k)


def _conv_forward(x, w, b, stride):
    cols = _im2col(x, w.shape[2], stride)
    out = cols @ w.reshape(w.shape[0], -1).T
    out += b
    return out, cols


def _conv_backward(dout, cols, w, stride, in_length, need_dx=True):
    c_out, c_in, k = w.shape
    dw = (dout.reshape(-1, c_out).T @ cols.reshape(-1, c_in * k)).reshape(w.shape)
    db = dout.sum(axis=(0, 1))
    if not need_dx:
        return dw, db, None
    dcols = (dout @ w.reshape(c_out, -1)).reshape(dout.shape[0], dout.shape[1], c_in, k)
    dx = np.zeros((dout.shape[0], in_length, c_in), dtype=dout.dtype)
    span = stride * (dout.shape[1] - 1) + 1
    for j in range(k):
        dx[:, j:j + span:stride, :] += dcols[:, :, :, j]
    return dw, db, dx


def _pool_forward(a, width):
    b, l, c = a.shape
    n = l // width
    r = a[:, :n * width].reshape(b, n, width, c)
    idx = r.argmax(axis=2)
    return np.take_along_axis(r, idx[:, :, None, :], axis=2)[:, :, 0, :], idx


def _pool_backward(dout, idx, width, in_length):
    b, n, c = dout.shape
    dr = np.zeros((b, n, width, c), dtype=dout.dtype)
    np.put_along_axis(dr, idx[:, :, None, :], dout[:, :, None, :], axis=2)
    dx = np.zeros((b, in_length, c), dtype=dout.dtype)
    dx[:, :n * width] = dr.reshape(b, n * width, c)
    return dx


def conv1d_forward(x, weights, bias, stride=1):
    """Valid-padding cross-correlation of a ``channels x time`` input (batched or not)."""
    x = np.asarray(x)
    w = np.asarray(weights)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape}, weights {w.shape}")
    conv_output_length(x.shape[2], w.shape[2], stride)
    out, _ = _conv_forward(np.ascontiguousarray(x.transpose(0, 2, 1)), w, np.asarray(bias), stride)
    out = out.transpose(0, 2, 1)
    return out[0] if squeeze else out


def conv1d_block_forward(x, weights, bias, stride=1, pool=2):
    """Cross-correlation + bias, ReLU, then max-pool of width ``pool`` (``pool=1`` skips it).

    Output length is ``((L - kernel) // stride + 1) // pool``.
    """
    z = np.maximum(conv1d_forward(x, weights, bias, stride), 0)
    if pool and pool > 1:
        squeeze = z.ndim == 2
        zz = z[None] if squeeze else z
        p, _ = _pool_forward(np.ascontiguousarray(zz.transpose(0, 2, 1)), pool)
        p = p.transpose(0, 2, 1)
        return p[0] if squeeze else p
    return z


def dense_forward(x, weights, bias):
    x = np.asarray(x)
    w = np.asarray(weights)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"shape mismatch: input {x.shape}, weights {w.shape}")
    return x @ w.T + bias


def forward(params: ParamSet, x, keep_cache=True):
    """Run the network; returns ``(output, caches)``."""
    h = x
    caches = []
    t = params.tensors
    for i, layer in enumerate(params.arch.layers):
        kind = layer["type"]
        if kind == "conv_block":
            w, b = t[f"{i}.weight"], t[f"{i}.bias"]
            if h.ndim != 3 or h.shape[2] != w.shape[1]:
                raise ValueError(f"layer {i}: input {h.shape} incompatible with weights {w.shape}")
            in_len = h.shape[1]
            if conv_output_length(in_len, layer["kernel"], layer["stride"], layer["pool"]) < 1:
                raise ValueError(f"layer {i}: input length {in_len} too short")
            z, cols = _conv_forward(h, w, b, layer["stride"])
            a = np.maximum(z, 0)
            if layer["pool"] and layer["pool"] > 1:
                out, idx = _pool_forward(a, layer["pool"])
            else:
                out, idx = a, None
            if keep_cache:
                caches.append((cols, z > 0, idx, z.shape[1], in_len))
            h = out
        elif kind == "global_avg_pool":
            if keep_cache:
                caches.append(h.shape[1])
            h = h.mean(axis=1)
        elif kind == "dense":
            w, b = t[f"{i}.weight"], t[f"{i}.bias"]
            if keep_cache:
                caches.append(h)
            h = dense_forward(h, w, b)
        elif kind == "relu":
            if keep_cache:
                caches.append(h > 0)
            h = np.maximum(h, 0)
        else:
            raise ValueError(f"unknown layer type {kind!r}")
    return h, caches


def backward(params: ParamSet, caches, dout, need_input_grad=False):
    """Reverse pass; returns ``(grads, d_input)`` (``d_input`` is None unless requested)."""
    grads = {}
    t = params.tensors
    layers = params.arch.layers
    g = dout
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        kind = layer["type"]
        cache = caches[i]
        last = i == 0 and not need_input_grad
        if kind == "dense":
            x = cache
            w = t[f"{i}.weight"]
            grads[f"{i}.weight"] = g.T @ x
            grads[f"{i}.bias"] = g.sum(axis=0)
            g = None if last else g @ w
        elif kind == "relu":
            g = g * cache
        elif kind == "global_avg_pool":
            length = cache
            g = np.repeat(g[:, None, :] / length, length, axis=1)
        elif kind == "conv_block":
            cols, mask, idx, z_len, in_len = cache
            if idx is not None:
                g = _pool_backward(g, idx, layer["pool"], z_len)
            g = g * mask
            dw, db, g = _conv_backward(g, cols, t[f"{i}.weight"], layer["stride"], in_len,
                                       need_dx=not last)
            grads[f"{i}.weight"] = dw
            grads[f"{i}.bias"] = db
    return grads, g


def predict(params: ParamSet, x, chunk=64):
    outs = [forward(params, x[i:i + chunk], keep_cache=False)[0] for i in range(0, len(x), chunk)]
    return np.concatenate(outs, axis=0)


# ---------------------------------------------------------------------------
# outputs and losses


def softmax_t(logits, temperature=1.0):
    """Temperature softmax along the last axis, max-subtracted."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    z = np.asarray(logits)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z):
    z = np.asarray(z)
    out = np.empty_like(z, dtype=np.result_type(z, np.float32))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def output_loss(out, y, loss_kind, temperature=1.0):
    """Mean loss over the batch and its gradient with respect to ``out``."""
    n = out.shape[0]
    if loss_kind == "bce":
        if out.ndim != 2 or out.shape[1] != 1:
            raise ValueError("bce needs a single-logit output head")
        z = out[:, 0]
        y = np.asarray(y, dtype=out.dtype).reshape(-1)
        loss = np.mean(np.logaddexp(0, z) - y * z)
        d = (sigmoid(z) - y) / n
        return float(loss), d[:, None].astype(out.dtype)
    if loss_kind not in ("ce_hard", "ce_soft"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if out.shape[1] < 2:
        raise ValueError(f"{loss_kind} needs at least two output classes")
    z = out / temperature
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    if loss_kind == "ce_hard":
        y = np.asarray(y, dtype=np.int64)
        loss = -np.mean(logp[np.arange(n), y])
        q = np.zeros_like(p)
        q[np.arange(n), y] = 1
    else:
        q = np.asarray(y, dtype=out.dtype)
        loss = -np.mean(np.sum(q * logp, axis=1))
    return float(loss), ((p - q) / (temperature * n)).astype(out.dtype)


def l2_penalty(params: ParamSet, alpha):
    """``alpha * sum ||W||^2`` over weight tensors, biases excluded."""
    if alpha == 0:
        return 0.0, {}
    loss = alpha * params.weight_sq_norm()
    grads = {k: 2 * alpha * v for k, v in params.tensors.items() if k.endswith(".weight")}
    return loss, grads


def loss_and_grads(params: ParamSet, batch, loss_kind, l2_alpha=0.0, temperature=1.0):
    x, y = batch
    out, caches = forward(params, x)
    loss, dout = output_loss(out, y, loss_kind, temperature)
    grads, _ = backward(params, caches, dout)
    reg, reg_grads = l2_penalty(params, l2_alpha)
    for k, v in reg_grads.items():
        grads[k] = grads[k] + v
    return loss + reg, grads


# ---------------------------------------------------------------------------
# optimization


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2_alpha: float = 0.0
    batch_size: int = 32  # 0 means full batch
    max_epochs: int = 60
    optimizer: str = "adam"
    seed: int = 0
    early_stop_train_acc: float = 0.995

    def __post_init__(self):
        if self.l2_alpha < 0:
            raise ValueError("l2_alpha must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 0 or self.max_epochs < 0:
            raise ValueError("batch_size and max_epochs must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **kw})


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def optimizer_step(params: ParamSet, grads: dict, state: OptimizerState, config: TrainConfig):
    """In-place update of ``params``; returns ``(params, state)``."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient names do not match parameters")
    lr = config.learning_rate
    state.step += 1
    if config.optimizer == "sgd":
        for k, g in grads.items():
            params.tensors[k] -= (lr * g).astype(params.tensors[k].dtype)
        return params, state
    if state.m and set(state.m) != set(params.tensors):
        raise ValueError("optimizer state does not match parameters")
    t = state.step
    c1 = 1 - ADAM_BETA1 ** t
    c2 = 1 - ADAM_BETA2 ** t
    for k, g in grads.items():
        p = params.tensors[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)
    return params, state


# ``hook(out, batch_index) -> (extra_loss, extra_dout)`` lets defenses add output-side terms
BatchHook = Callable[[np.ndarray, np.ndarray], tuple]


def accuracy(out, labels) -> float:
    if out.shape[1] == 1:
        pred = (out[:, 0] >= 0).astype(np.int64)
    else:
        pred = out.argmax(axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def fit(params: ParamSet, x, y, config: TrainConfig, *, loss_kind="ce_hard", temperature=1.0,
        acc_labels=None, hook: Optional[BatchHook] = None, eval_fn=None,
        early_stop=True) -> list:
    """Minibatch training loop, single threaded and deterministic per ``config.seed``.

    Stops after the first epoch whose train accuracy (measured with a clean pass over
    ``x`` against ``acc_labels``, default ``y``) reaches ``config.early_stop_train_acc``.
    Returns per-epoch history dicts.
    """
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    acc_labels = y if acc_labels is None else acc_labels
    rng = np.random.Generator(np.random.Philox(config.seed))
    state = OptimizerState()
    bs = n if config.batch_size == 0 else min(config.batch_size, n)
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            out, caches = forward(params, x[idx])
            loss, dout = output_loss(out, y[idx], loss_kind, temperature)
            if hook is not None:
                extra_loss, extra_dout = hook(out, idx)
                loss += extra_loss
                dout = dout + extra_dout
            grads, _ = backward(params, caches, dout)
            reg, reg_grads = l2_penalty(params, config.l2_alpha)
            for k, v in reg_grads.items():
                grads[k] = grads[k] + v
            optimizer_step(params, grads, state, config)
            total += (loss + reg) * len(idx)
        record = {"epoch": epoch, "loss": total / n}
        if loss_kind != "ce_soft" or acc_labels is not y:
            record["train_acc"] = accuracy(predict(params, x), acc_labels)
        if eval_fn is not None:
            record.update(eval_fn(params))
        history.append(record)
        if early_stop and record.get("train_acc", 0.0) >= config.early_stop_train_acc:
            break
    return history


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    n_params: int
    n_checked: int
    n_kink_skipped: int
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        # a check that skipped most entries proves nothing
        return bool(self.max_rel_error < self.tolerance and self.n_checked >= 0.75 * self.n_params)


def _activation_pattern(caches):
    pattern = []
    for c in caches:
        if isinstance(c, tuple):
            pattern.append(c[1])
            if c[2] is not None:
                pattern.append(c[2])
        elif isinstance(c, np.ndarray) and c.dtype == bool:
            pattern.append(c)
    return pattern


def _same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(arch: Architecture, seed=0, *, batch=4, input_length=100, eps=1e-3,
                   l2_alpha=0.01, loss_fn=None) -> GradCheckReport:
    """Compare backprop against central differences on a float64 copy of the network.

    Entries whose +/-eps perturbation flips a ReLU or max-pool decision are skipped,
    since the loss is not differentiable across those kinks. ``loss_fn(params, batch)
    -> (loss, grads)`` defaults to :func:`loss_and_grads`; a test can substitute a
    corrupted one as a negative control.
    """
    rng = np.random.Generator(np.random.Philox(seed + 1))
    params = ParamSet.init(arch, seed, dtype=np.float64)
    for k in params.tensors:
        if k.endswith(".bias"):
            params.tensors[k] = rng.normal(0, 0.1, size=params.tensors[k].shape)
    if arch.is_sequence:
        x = rng.normal(size=(batch, input_length, arch.n_inputs))
    else:
        x = rng.normal(size=(batch, arch.n_inputs))
    kind = "bce" if arch.n_outputs == 1 else "ce_hard"
    y = rng.integers(0, 2 if kind == "bce" else arch.n_outputs, size=batch)
    if loss_fn is None:
        def loss_fn(p, b):
            return loss_and_grads(p, b, kind, l2_alpha)
    _, grads = loss_fn(params, (x, y))

    def probe():
        out, caches = forward(params, x)
        loss, _ = output_loss(out, y, kind)
        return loss + l2_penalty(params, l2_alpha)[0], _activation_pattern(caches)

    _, base = probe()

    def central(tensor, j, h):
        orig = tensor.flat[j]
        tensor.flat[j] = orig + h
        lp, pp = probe()
        tensor.flat[j] = orig - h
        lm, pm = probe()
        tensor.flat[j] = orig
        return (lp - lm) / (2 * h), _same_pattern(pp, base) and _same_pattern(pm, base)

    worst, worst_name, checked, skipped = 0.0, "", 0, 0
    for name, tensor in params.tensors.items():
        g = grads[name]
        for j in range(tensor.size):
            d_full, ok_full = central(tensor, j, eps)
            d_half, ok_half = central(tensor, j, eps / 2)
            if not (ok_full and ok_half):
                skipped += 1
                continue
            checked += 1
            # Richardson combination cancels the O(eps^2) truncation term
            num = (4 * d_half - d_full) / 3
            ana = g.flat[j]
            err = abs(num - ana) / max(abs(num), abs(ana), 1e-8)
            if err > worst:
                worst, worst_name = err, f"{name}[{j}]"
    return GradCheckReport(float(worst), worst_name, arch.n_params(), checked, skipped)
