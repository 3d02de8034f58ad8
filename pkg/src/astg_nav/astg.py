"""Attention-based spatial-temporal graph value network.

Shapes: B states in a batch, n humans per state, K history frames.

* spatial branch: per-human embedding of (robot state ++ human state), one
  single-head GAT layer over the fully connected human graph with
  self-loops, residual sum.
* temporal branch: per-human MLP embedding of each history frame, a tanh RNN
  unrolled from a zero hidden state, then a GAT layer over the final hidden
  states, residual sum.
* social attention: scores each fused feature against the crowd mean and
  pools the features with the softmax of the scores.
* value head: MLP over (robot state ++ crowd feature).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import HUMAN_STATE_DIM, ROBOT_STATE_DIM, InvalidConfigError, JointState

MODES = ("full", "spatial_only", "temporal_only")


@dataclass(frozen=True)
class AstgConfig:
    mode: str = "full"
    spatial_hidden: tuple[int, ...] = (64, 32)
    temporal_embed: int = 32
    rnn_hidden: int = 32
    attention_hidden: tuple[int, ...] = (64,)
    value_hidden: tuple[int, ...] = (128, 64)
    leaky_slope: float = 0.2
    history_len: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown ablation mode {self.mode!r}")
        if self.history_len < 1:
            raise InvalidConfigError("history_len must be at least 1")
        object.__setattr__(self, "spatial_hidden", tuple(self.spatial_hidden))
        object.__setattr__(self, "attention_hidden", tuple(self.attention_hidden))
        object.__setattr__(self, "value_hidden", tuple(self.value_hidden))

    @property
    def use_spatial(self) -> bool:
        return self.mode != "temporal_only"

    @property
    def use_temporal(self) -> bool:
        return self.mode != "spatial_only"

    @property
    def feature_dim(self) -> int:
        return (self.spatial_hidden[-1] if self.use_spatial else 0) + (
            self.rnn_hidden if self.use_temporal else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("spatial_hidden", "attention_hidden", "value_hidden"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class HistoryWindow:
    """Last frames of every human, oldest first; ``frames`` is (n, k, 7)."""

    frames: np.ndarray

    def __post_init__(self):
        if self.frames.ndim != 3 or self.frames.shape[2] != HUMAN_STATE_DIM:
            raise InvalidConfigError(f"history frames must be (n, k, 7), got {self.frames.shape}")

    @property
    def length(self) -> int:
        return self.frames.shape[1]

    @classmethod
    def from_states(cls, states: Sequence[JointState], k: int) -> HistoryWindow:
        frames = [s.human_array for s in states[-k:]]
        return cls(np.stack(frames, axis=1))

    def appended(self, frame: np.ndarray, k: int) -> HistoryWindow:
        frames = np.concatenate([self.frames, frame[:, None, :]], axis=1)
        return HistoryWindow(frames[:, -k:])


@dataclass
class BranchFeatures:
    h_spatial: Optional[np.ndarray] = None
    h_temporal: Optional[np.ndarray] = None
    embed_spatial: Optional[np.ndarray] = None
    hidden_temporal: Optional[np.ndarray] = None
    st: Optional[np.ndarray] = None
    crowd: Optional[np.ndarray] = None
    alpha_spatial: Optional[np.ndarray] = None
    alpha_temporal: Optional[np.ndarray] = None
    social_weights: Optional[np.ndarray] = None


def _layer_sizes(cfg: AstgConfig) -> dict[str, list[int]]:
    sizes = {}
    if cfg.use_spatial:
        sizes["spatial_mlp"] = [ROBOT_STATE_DIM + HUMAN_STATE_DIM, *cfg.spatial_hidden]
    if cfg.use_temporal:
        sizes["temporal_mlp"] = [HUMAN_STATE_DIM, cfg.temporal_embed]
    st = cfg.feature_dim
    sizes["attention_mlp"] = [2 * st, *cfg.attention_hidden, 1]
    sizes["value_mlp"] = [ROBOT_STATE_DIM + st, *cfg.value_hidden, 1]
    return sizes


def init_params(cfg: AstgConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    params: dict[str, np.ndarray] = {}

    def uni(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    for name, dims in _layer_sizes(cfg).items():
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            params[f"{name}.w{i}"] = uni((din, dout), din)
            params[f"{name}.b{i}"] = uni((dout,), din)
    if cfg.use_spatial:
        d = cfg.spatial_hidden[-1]
        params["spatial_gat.w"] = uni((d, d), d)
        params["spatial_gat.a"] = uni((2 * d, 1), 2 * d)
    if cfg.use_temporal:
        h = cfg.rnn_hidden
        params["rnn.w_in"] = uni((cfg.temporal_embed, h), h)
        params["rnn.w_rec"] = uni((h, h), h)
        params["rnn.bias"] = uni((h,), h)
        params["temporal_gat.w"] = uni((h, h), h)
        params["temporal_gat.a"] = uni((2 * h, 1), 2 * h)
    return params


def mlp(x: Tensor, params: dict[str, Tensor], name: str, n_layers: int, last_relu: bool) -> Tensor:
    for i in range(n_layers):
        x = ad.add(ad.matmul(x, params[f"{name}.w{i}"]), params[f"{name}.b{i}"])
        if i < n_layers - 1 or last_relu:
            x = ad.relu(x)
    return x


def gat_layer(x: Tensor, w: Tensor, a: Tensor, slope: float) -> tuple[Tensor, Tensor]:
    """Single-head GAT over all nodes (self included). x: (B, n, d).

    Returns the aggregated features relu(sum_j alpha_ij W x_j) and alpha (B, n, n).
    """
    B, n, _ = x.shape
    wx = ad.matmul(x, w)
    d = wx.shape[-1]
    left = ad.repeat(ad.reshape(wx, (B, n, 1, d)), axis=2, count=n)
    right = ad.repeat(ad.reshape(wx, (B, 1, n, d)), axis=1, count=n)
    pairs = ad.concat([left, right], axis=-1)
    logits = ad.reshape(ad.matmul(pairs, a), (B, n, n))
    alpha = ad.softmax(ad.leaky_relu(logits, slope), axis=-1)
    return ad.relu(ad.matmul(alpha, wx)), alpha


class AstgNetwork:
    def __init__(self, cfg: AstgConfig = AstgConfig(), params: Optional[dict[str, np.ndarray]] = None,
                 seed: int = 0):
        self.cfg = cfg
        arrays = params if params is not None else init_params(cfg, np.random.default_rng(seed))
        expected = init_params(cfg, np.random.default_rng(0))
        check_shapes(expected, arrays)
        self.params = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True)
                       for k, v in arrays.items()}
        # untracked views sharing storage, for inference
        self._frozen = {k: Tensor(p.data) for k, p in self.params.items()}

    # -- parameter handling
    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        check_shapes({k: p.data for k, p in self.params.items()}, arrays)
        for k, p in self.params.items():
            p.data[...] = arrays[k]

    def copy(self) -> AstgNetwork:
        return AstgNetwork(self.cfg, self.arrays())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params.values())

    # -- forward
    def forward(self, robot: np.ndarray, humans: np.ndarray, history: np.ndarray,
                track: bool = True) -> tuple[Tensor, BranchFeatures]:
        """Values for a batch: robot (B, 5), humans (B, n, 7), history (B, n, K, 7)."""
        cfg = self.cfg
        p = self.params if track else self._frozen
        B, n = humans.shape[0], humans.shape[1]
        robot_t = Tensor(robot)
        feats = BranchFeatures()
        if n == 0:
            crowd = Tensor(np.zeros((B, cfg.feature_dim)))
        else:
            parts = []
            if cfg.use_spatial:
                h_s = self.spatial_branch(robot_t, Tensor(humans), p, feats)
                parts.append(h_s)
            if cfg.use_temporal:
                if history.ndim != 4 or history.shape[2] < 1:
                    raise InvalidConfigError(f"history must be (B, n, K>=1, 7), got {history.shape}")
                h_t = self.temporal_branch(Tensor(history), p, feats)
                parts.append(h_t)
            st = parts[0] if len(parts) == 1 else ad.concat(parts, axis=-1)
            crowd = self.social_attention(st, p, feats)
        x = ad.concat([robot_t, crowd], axis=-1)
        v = mlp(x, p, "value_mlp", len(cfg.value_hidden) + 1, last_relu=False)
        feats.crowd = crowd.data
        return ad.reshape(v, (B,)), feats

    def spatial_branch(self, robot: Tensor, humans: Tensor, p, feats: BranchFeatures) -> Tensor:
        B, n, _ = humans.shape
        rob = ad.repeat(ad.reshape(robot, (B, 1, ROBOT_STATE_DIM)), axis=1, count=n)
        e = mlp(ad.concat([rob, humans], axis=-1), p, "spatial_mlp",
                len(self.cfg.spatial_hidden), last_relu=True)
        e_tilde, alpha = gat_layer(e, p["spatial_gat.w"], p["spatial_gat.a"], self.cfg.leaky_slope)
        h = ad.add(e, e_tilde)
        feats.embed_spatial, feats.alpha_spatial, feats.h_spatial = e.data, alpha.data, h.data
        return h

    def temporal_branch(self, history: Tensor, p, feats: BranchFeatures) -> Tensor:
        K = history.shape[2]
        hidden = None
        for t in range(K):
            g = mlp(ad.take(history, t, axis=2), p, "temporal_mlp", 1, last_relu=True)
            pre = ad.add(ad.matmul(g, p["rnn.w_in"]), p["rnn.bias"])
            if hidden is not None:
                pre = ad.add(pre, ad.matmul(hidden, p["rnn.w_rec"]))
            hidden = ad.tanh(pre)
        h_tilde, alpha = gat_layer(hidden, p["temporal_gat.w"], p["temporal_gat.a"], self.cfg.leaky_slope)
        out = ad.add(hidden, h_tilde)
        feats.hidden_temporal, feats.alpha_temporal, feats.h_temporal = hidden.data, alpha.data, out.data
        return out

    def social_attention(self, st: Tensor, p, feats: BranchFeatures) -> Tensor:
        B, n, d = st.shape
        st_mean = ad.repeat(ad.mean(st, axis=1, keepdims=True), axis=1, count=n)
        scores = mlp(ad.concat([st, st_mean], axis=-1), p, "attention_mlp",
                     len(self.cfg.attention_hidden) + 1, last_relu=False)
        weights = ad.softmax(ad.transpose(scores), axis=-1)
        crowd = ad.reshape(ad.matmul(weights, st), (B, d))
        feats.st, feats.social_weights = st.data, weights.data.reshape(B, n)
        return crowd

    # -- convenience
    def value(self, state: JointState, history: Optional[HistoryWindow] = None) -> float:
        if history is None:
            history = HistoryWindow(state.human_array[:, None, :])
        v, _ = self.forward(state.robot_array[None], state.human_array[None],
                            history.frames[None], track=False)
        return float(v.data[0])

    def features(self, state: JointState, history: Optional[HistoryWindow] = None) -> BranchFeatures:
        if history is None:
            history = HistoryWindow(state.human_array[:, None, :])
        _, feats = self.forward(state.robot_array[None], state.human_array[None],
                                history.frames[None], track=False)
        return feats


def check_shapes(expected: dict[str, np.ndarray], got: dict[str, np.ndarray]) -> None:
    problems = [f"parameter {k}: checkpoint shape {tuple(np.shape(got[k]))} != configured {tuple(v.shape)}"
                for k, v in expected.items() if k in got and tuple(np.shape(got[k])) != tuple(v.shape)]
    missing = sorted(set(expected) - set(got))
    extra = sorted(set(got) - set(expected))
    if missing or extra:
        problems.append(f"parameter names differ: missing {missing}, unexpected {extra}")
    if problems:
        raise ad.CheckpointError("; ".join(problems))


def save_network(path, net: AstgNetwork, extra_meta: Optional[dict] = None) -> None:
    meta = {"model": net.cfg.to_dict(), **(extra_meta or {})}
    ad.save_checkpoint(path, net.arrays(), meta)


def load_network(path, cfg: Optional[AstgConfig] = None) -> AstgNetwork:
    """Load a checkpoint; with ``cfg`` given, shapes must match it."""
    arrays, meta = ad.load_checkpoint(path)
    if cfg is None:
        cfg = AstgConfig(**meta.get("model", {}))
    return AstgNetwork(cfg, arrays)
