"""Cost-model network: upsampling MLP, attention/LSTM backbone, residual
blocks and one or more per-position heads whose outputs are summed over
positions into a score.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import ConfigError
from .features import Featurizer, stable_hash

BACKBONES = ("self_attention", "lstm")
LOSSES = ("lambda_rank", "mse")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    backbone: str = "self_attention"
    attention_heads: int = 8
    backbone_layers: int = 1
    residual_blocks: int = 2
    loss: str = "lambda_rank"
    positional_encoding: bool = False
    mask_padding: bool = False
    layer_norm: bool = False

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.hidden_dim < 2 or self.hidden_dim % 2:
            raise ConfigError("hidden_dim must be an even number >= 2")
        if self.backbone == "self_attention" and self.hidden_dim % self.attention_heads:
            raise ConfigError("hidden_dim must be divisible by attention_heads")
        if self.residual_blocks < 0 or self.backbone_layers < 0:
            raise ConfigError("layer counts must be non-negative")

    def digest(self) -> str:
        return stable_hash(asdict(self))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, embedding_size: int, sequence_length: int,
                num_heads: int = 1, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Seeded initialization, uniform in ``+-1/sqrt(fan_in)`` for every tensor."""
    rng = np.random.default_rng(seed)
    H, E = cfg.hidden_dim, embedding_size
    p: dict[str, np.ndarray] = {}

    def lin(name, i, o):
        p[name + "W"] = _uniform(rng, i, (i, o))
        p[name + "b"] = _uniform(rng, i, (o,))

    lin("up.0.", E, H // 2)
    lin("up.1.", H // 2, H)
    if cfg.positional_encoding:
        p["pos"] = rng.normal(0.0, 0.02, size=(sequence_length, H))
    for l in range(cfg.backbone_layers):
        if cfg.backbone == "self_attention":
            for n in "qkvo":
                p[f"att.{l}.W{n}"] = _uniform(rng, H, (H, H))
                p[f"att.{l}.b{n}"] = _uniform(rng, H, (H,))
            if cfg.layer_norm:
                p[f"att.{l}.ln_g"] = np.ones(H)
                p[f"att.{l}.ln_b"] = np.zeros(H)
        else:
            p[f"lstm.{l}.Wx"] = _uniform(rng, H, (H, 4 * H))
            p[f"lstm.{l}.Wh"] = _uniform(rng, H, (H, 4 * H))
            p[f"lstm.{l}.b"] = _uniform(rng, H, (4 * H,))
    for r in range(cfg.residual_blocks):
        p[f"res.{r}.W1"] = _uniform(rng, H, (H, H))
        p[f"res.{r}.b1"] = _uniform(rng, H, (H,))
        p[f"res.{r}.W2"] = _uniform(rng, H, (H, H))
        p[f"res.{r}.b2"] = _uniform(rng, H, (H,))
    for k in range(num_heads):
        lin(f"head.{k}.0.", H, H // 2)
        lin(f"head.{k}.1.", H // 2, 1)
    return {n: v.astype(dtype) for n, v in p.items()}


def is_head_param(name: str) -> bool:
    return name.startswith("head.")


def head_index(name: str) -> int:
    return int(name.split(".")[1])


def network_forward(params, cfg: ModelConfig, X: np.ndarray, num_heads: int):
    """Scores of every head, shape ``(B, num_heads)``, plus the backward cache."""
    valid = np.any(X != 0, axis=-1) if cfg.mask_padding else None
    u, c_up0 = nn.linear_forward(X, params["up.0.W"], params["up.0.b"])
    u, m_up0 = nn.relu_forward(u)
    u, c_up1 = nn.linear_forward(u, params["up.1.W"], params["up.1.b"])
    h, m_up1 = nn.relu_forward(u)
    if cfg.positional_encoding:
        h = h + params["pos"][None, : X.shape[1]]
    bb = []
    for l in range(cfg.backbone_layers):
        if cfg.backbone == "self_attention":
            h, c = nn.attention_forward(h, params, f"att.{l}.", cfg.attention_heads,
                                        valid, cfg.layer_norm)
        else:
            h, c = nn.lstm_forward(h, params, f"lstm.{l}.")
        bb.append(c)
    res = []
    for r in range(cfg.residual_blocks):
        h, c = nn.residual_forward(h, params, f"res.{r}.")
        res.append(c)
    scores = np.empty((X.shape[0], num_heads), dtype=h.dtype)
    heads = []
    for k in range(num_heads):
        a, c0 = nn.linear_forward(h, params[f"head.{k}.0.W"], params[f"head.{k}.0.b"])
        a, m0 = nn.relu_forward(a)
        s, c1 = nn.linear_forward(a, params[f"head.{k}.1.W"], params[f"head.{k}.1.b"])
        s = s[..., 0]
        if valid is not None:
            s = s * valid
        scores[:, k] = s.sum(axis=1)
        heads.append((c0, m0, c1))
    cache = (c_up0, m_up0, c_up1, m_up1, bb, res, heads, valid, X.shape)
    return scores, cache


def network_backward(params, cfg: ModelConfig, cache, dscores: np.ndarray,
                     segments=None, heads_only: bool = False) -> dict[str, np.ndarray]:
    """Parameter gradients for upstream ``dscores`` of shape ``(B, num_heads)``."""
    c_up0, m_up0, c_up1, m_up1, bb, res, heads, valid, (B, L, _) = cache
    grads: dict[str, np.ndarray] = {}
    dh = None
    for k, (c0, m0, c1) in enumerate(heads):
        ds = np.broadcast_to(dscores[:, k][:, None], (B, L))
        if valid is not None:
            ds = ds * valid
        ds = np.ascontiguousarray(ds)[..., None]
        da, grads[f"head.{k}.1.W"], grads[f"head.{k}.1.b"] = nn.linear_backward(
            c1, ds, params[f"head.{k}.1.W"], segments)
        da = nn.relu_backward(m0, da)
        dhk, grads[f"head.{k}.0.W"], grads[f"head.{k}.0.b"] = nn.linear_backward(
            c0, da, params[f"head.{k}.0.W"], segments)
        dh = dhk if dh is None else dh + dhk
    if heads_only:
        return grads
    for r in range(cfg.residual_blocks - 1, -1, -1):
        dh, g = nn.residual_backward(res[r], dh, params, f"res.{r}.", segments)
        grads.update(g)
    for l in range(cfg.backbone_layers - 1, -1, -1):
        if cfg.backbone == "self_attention":
            dh, g = nn.attention_backward(bb[l], dh, params, f"att.{l}.", segments)
        else:
            dh, g = nn.lstm_backward(bb[l], dh, params, f"lstm.{l}.", segments)
        grads.update(g)
    if cfg.positional_encoding:
        pos_grad = nn._reduce_rows(lambda d: d.sum(axis=0), segments, dh)
        full = np.zeros_like(params["pos"])
        full[:L] = pos_grad
        grads["pos"] = full
    dh = nn.relu_backward(m_up1, dh)
    dh, grads["up.1.W"], grads["up.1.b"] = nn.linear_backward(c_up1, dh, params["up.1.W"], segments)
    dh = nn.relu_backward(m_up0, dh)
    _, grads["up.0.W"], grads["up.0.b"] = nn.linear_backward(c_up0, dh, params["up.0.W"], segments)
    return grads


class CostModel:
    """A trained (or freshly initialized) network plus the featurizer it expects.

    ``tasks`` lists the hardware id served by each head; a plain single-task
    model has exactly one head.
    """

    def __init__(self, config: ModelConfig, featurizer: Featurizer,
                 params: dict[str, np.ndarray] | None = None,
                 tasks: list[str] | tuple[str, ...] = ("default",), seed: int = 0):
        self.config = config
        self.featurizer = featurizer
        self.tasks = list(tasks)
        if len(set(self.tasks)) != len(self.tasks):
            raise ConfigError("task ids must be unique")
        fc = featurizer.config
        expected = init_params(config, fc.embedding_size, fc.sequence_length,
                               num_heads=len(self.tasks), seed=seed)
        if params is None:
            params = expected
        else:
            shapes = {n: v.shape for n, v in params.items()}
            want = {n: v.shape for n, v in expected.items()}
            if shapes != want:
                raise ConfigError("parameter shapes do not match the model config")
        self.params = params

    @property
    def num_heads(self) -> int:
        return len(self.tasks)

    @property
    def dtype(self):
        return self.params["up.0.W"].dtype

    def task_index(self, task) -> int:
        if isinstance(task, int):
            if not 0 <= task < self.num_heads:
                raise KeyError(f"no task index {task}")
            return task
        try:
            return self.tasks.index(task)
        except ValueError:
            raise KeyError(f"unknown task {task!r}; model has {self.tasks}") from None

    def check_input(self, X: np.ndarray) -> None:
        shape = self.featurizer.config.shape
        if X.ndim != 3 or X.shape[1:] != shape:
            raise ConfigError(f"expected input (B, {shape[0]}, {shape[1]}), got {X.shape}")

    def forward_all(self, X: np.ndarray) -> np.ndarray:
        self.check_input(X)
        scores, _ = network_forward(self.params, self.config, X.astype(self.dtype, copy=False),
                                    self.num_heads)
        return scores

    def forward(self, X: np.ndarray, task=0, batch_size: int = 4096) -> np.ndarray:
        """Scores for one head; higher means predicted faster."""
        k = self.task_index(task)
        out = [self.forward_all(X[i:i + batch_size])[:, k] for i in range(0, len(X), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=self.dtype)

    def predict(self, sequences, task=0) -> np.ndarray:
        return self.forward(self.featurizer.transform(sequences, dtype=self.dtype), task)

    score_sequences = predict

    def astype(self, dtype) -> "CostModel":
        out = self.copy()
        out.params = {n: v.astype(dtype) for n, v in self.params.items()}
        return out

    def copy(self) -> "CostModel":
        out = copy.copy(self)
        out.params = {n: v.copy() for n, v in self.params.items()}
        out.tasks = list(self.tasks)
        return out

    def shared_names(self) -> list[str]:
        return [n for n in self.params if not is_head_param(n)]

    def head_names(self, k: int) -> list[str]:
        return [n for n in self.params if is_head_param(n) and head_index(n) == k]
