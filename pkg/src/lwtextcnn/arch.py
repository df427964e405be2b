"""Declarative specs for the three text CNNs, model building, and parameter accounting.

All three share the same head: each branch is pooled over time, the pooled
vectors are concatenated, passed through dropout, and fed to a dense softmax
layer. They differ in the branches:

* ``base``: full-width convolutions of heights 3/4/5, 128 maps each, ReLU.
* ``optimized``: heights 2/3/5, 120 maps each, ReLU, L2 and learning-rate
  decay on. With ``stacked=True`` the height-5 branch becomes two stacked
  height-3 convolutions.
* ``lightweight``: batch norm on the embedding, then per branch one
  single-map spatial filter (heights 2, 3, and 3 at dilation 2), a 1x1
  projection to ``C`` channels, batch norm and leaky ReLU. The dilated
  branch gets an extra height-3 per-channel filter after its projection.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ContractError, DimensionError
from .layers import BatchNormState, ConvFilterSpec
from .tensor import Rng, Tensor

ARCH_NAMES = ("base", "optimized", "lightweight")


@dataclass(frozen=True)
class BranchSpec:
    """One parallel path from the embedding to a pooled feature vector."""

    name: str
    stages: tuple[ConvFilterSpec, ...]
    activation: str = "relu"
    batch_norm: bool = False
    activate_between: bool = False

    def __post_init__(self):
        if not self.stages:
            raise ContractError(f"branch {self.name!r} has no stages")
        if self.activation not in ("relu", "leaky_relu"):
            raise ContractError(f"branch {self.name!r}: unknown activation {self.activation!r}")

    @property
    def out_channels(self) -> int:
        return self.stages[-1].out_channels

    @property
    def receptive_field(self) -> int:
        return sum(s.effective_height - 1 for s in self.stages) + 1


@dataclass(frozen=True)
class ArchSpec:
    name: str
    vocab_size: int
    num_classes: int
    embedding_dim: int = 200
    branches: tuple[BranchSpec, ...] = ()
    dropout_rate: float = 0.5
    l2_coeff: float = 0.0
    lr_decay: bool = False
    embed_bn: bool = False
    leaky_alpha: float = 0.1
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    @property
    def pooled_features(self) -> int:
        return sum(b.out_channels for b in self.branches)

    @property
    def min_length(self) -> int:
        """Shortest token sequence every branch can convolve."""
        return max(b.receptive_field for b in self.branches)

    def validate(self) -> None:
        if self.vocab_size < 2 or self.num_classes < 2 or self.embedding_dim < 1:
            raise ContractError(
                f"need vocab_size >= 2, num_classes >= 2, embedding_dim >= 1; got "
                f"{self.vocab_size}, {self.num_classes}, {self.embedding_dim}")
        if not self.branches:
            raise ContractError("architecture has no branches")
        names = [b.name for b in self.branches]
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate branch names {names}")
        for b in self.branches:
            feats = self.embedding_dim
            for i, s in enumerate(b.stages):
                if s.features_in != feats:
                    raise DimensionError(
                        f"branch {b.name!r} stage {i}: filter consumes {s.features_in} features "
                        f"but receives {feats}")
                feats = s.out_channels

    # -- text form (key=value lines), used by checkpoints and the CLI --------

    def to_text(self) -> str:
        lines = [
            f"name={self.name}",
            f"vocab_size={self.vocab_size}",
            f"num_classes={self.num_classes}",
            f"embedding_dim={self.embedding_dim}",
            f"dropout_rate={self.dropout_rate!r}",
            f"l2_coeff={self.l2_coeff!r}",
            f"lr_decay={int(self.lr_decay)}",
            f"embed_bn={int(self.embed_bn)}",
            f"leaky_alpha={self.leaky_alpha!r}",
            f"bn_momentum={self.bn_momentum!r}",
            f"bn_eps={self.bn_eps!r}",
        ]
        for b in self.branches:
            stages = ";".join(
                f"{s.height},{s.width},{s.in_channels},{s.out_channels},{s.dilation},{int(s.depthwise)}"
                for s in b.stages)
            lines.append(f"branch={b.name}|{b.activation}|{int(b.batch_norm)}|{int(b.activate_between)}|{stages}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ArchSpec":
        kv: dict[str, str] = {}
        branches = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ContractError(f"malformed spec line {raw!r}")
            key, value = key.strip(), value.strip()
            if key == "branch":
                name, act, bn, between, stages = value.split("|")
                specs = []
                for chunk in stages.split(";"):
                    h, w, cin, cout, dil, dw = (int(v) for v in chunk.split(","))
                    specs.append(ConvFilterSpec(h, w, cin, cout, dil, bool(dw)))
                branches.append(BranchSpec(name, tuple(specs), act, bool(int(bn)), bool(int(between))))
            else:
                kv[key] = value
        try:
            spec = cls(
                name=kv["name"],
                vocab_size=int(kv["vocab_size"]),
                num_classes=int(kv["num_classes"]),
                embedding_dim=int(kv["embedding_dim"]),
                branches=tuple(branches),
                dropout_rate=float(kv.get("dropout_rate", 0.5)),
                l2_coeff=float(kv.get("l2_coeff", 0.0)),
                lr_decay=bool(int(kv.get("lr_decay", 0))),
                embed_bn=bool(int(kv.get("embed_bn", 0))),
                leaky_alpha=float(kv.get("leaky_alpha", 0.1)),
                bn_momentum=float(kv.get("bn_momentum", 0.9)),
                bn_eps=float(kv.get("bn_eps", 1e-5)),
            )
        except KeyError as exc:
            raise ContractError(f"spec text missing key {exc.args[0]!r}") from None
        spec.validate()
        return spec

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_text().encode()).digest()


# --------------------------------------------------------------------------
# the three architectures


def base_spec(vocab_size: int, num_classes: int, embedding_dim: int = 200, filters: int = 128,
              heights=(3, 4, 5), dropout_rate: float = 0.5) -> ArchSpec:
    branches = tuple(
        BranchSpec(f"h{h}", (ConvFilterSpec(h, embedding_dim, 1, filters),), "relu")
        for h in heights)
    return ArchSpec("base", vocab_size, num_classes, embedding_dim, branches,
                    dropout_rate=dropout_rate)


def optimized_spec(vocab_size: int, num_classes: int, embedding_dim: int = 200, filters: int = 120,
                   stacked: bool = False, l2_coeff: float = 1e-3,
                   dropout_rate: float = 0.5) -> ArchSpec:
    branches = [
        BranchSpec(f"h{h}", (ConvFilterSpec(h, embedding_dim, 1, filters),), "relu")
        for h in (2, 3)
    ]
    if stacked:
        branches.append(BranchSpec(
            "h3x3",
            (ConvFilterSpec(3, embedding_dim, 1, filters), ConvFilterSpec(3, 1, filters, filters)),
            "relu", activate_between=True))
    else:
        branches.append(BranchSpec("h5", (ConvFilterSpec(5, embedding_dim, 1, filters),), "relu"))
    return ArchSpec("optimized", vocab_size, num_classes, embedding_dim, tuple(branches),
                    dropout_rate=dropout_rate, l2_coeff=l2_coeff, lr_decay=True)


def lightweight_spec(vocab_size: int, num_classes: int, embedding_dim: int = 200,
                     pointwise_channels: int = 120, l2_coeff: float = 1e-3,
                     leaky_alpha: float = 0.1, dropout_rate: float = 0.5) -> ArchSpec:
    D, C = embedding_dim, pointwise_channels
    pointwise = ConvFilterSpec(1, 1, 1, C)
    branches = (
        BranchSpec("sep_h2", (ConvFilterSpec(2, D, 1, 1, depthwise=True), pointwise), "leaky_relu", batch_norm=True),
        BranchSpec("sep_h3", (ConvFilterSpec(3, D, 1, 1, depthwise=True), pointwise), "leaky_relu", batch_norm=True),
        BranchSpec("sep_h3_d2",
                   (ConvFilterSpec(3, D, 1, 1, dilation=2, depthwise=True), pointwise,
                    ConvFilterSpec(3, 1, C, C, depthwise=True)),
                   "leaky_relu", batch_norm=True),
    )
    return ArchSpec("lightweight", vocab_size, num_classes, D, branches,
                    dropout_rate=dropout_rate, l2_coeff=l2_coeff, lr_decay=True,
                    embed_bn=True, leaky_alpha=leaky_alpha)


def make_spec(name: str, vocab_size: int, num_classes: int, embedding_dim: int = 200, *,
              pointwise_channels: int = 120, stacked: bool = False, dropout_rate: float = 0.5,
              l2_coeff: float | None = None, filters: int | None = None) -> ArchSpec:
    """Build a named spec; ``l2_coeff``/``filters`` of ``None`` keep the arch defaults."""
    extra = {} if l2_coeff is None else {"l2_coeff": l2_coeff}
    if name == "base":
        spec = base_spec(vocab_size, num_classes, embedding_dim, filters or 128, dropout_rate=dropout_rate)
        if l2_coeff is not None:
            spec = replace(spec, l2_coeff=l2_coeff)
    elif name == "optimized":
        spec = optimized_spec(vocab_size, num_classes, embedding_dim, filters or 120, stacked=stacked,
                              dropout_rate=dropout_rate, **extra)
    elif name == "lightweight":
        spec = lightweight_spec(vocab_size, num_classes, embedding_dim, pointwise_channels,
                                dropout_rate=dropout_rate, **extra)
    else:
        raise ContractError(f"unknown architecture {name!r}; expected one of {ARCH_NAMES}")
    spec.validate()
    return spec


# --------------------------------------------------------------------------
# parameter accounting


@dataclass(frozen=True)
class ParamEntry:
    name: str
    shape: tuple
    count: int


def param_layout(spec: ArchSpec) -> list[ParamEntry]:
    """Every trainable tensor of ``build(spec)`` with its shape, in a stable order."""
    spec.validate()
    V, D, K = spec.vocab_size, spec.embedding_dim, spec.num_classes
    out = [ParamEntry("embedding", (V, D), V * D)]
    if spec.embed_bn:
        out += [ParamEntry("embed_bn.gamma", (D,), D), ParamEntry("embed_bn.beta", (D,), D)]
    for b in spec.branches:
        for i, s in enumerate(b.stages):
            n_bias = s.out_channels
            out.append(ParamEntry(f"{b.name}.conv{i}.weight", s.weight_shape, s.param_count - n_bias))
            out.append(ParamEntry(f"{b.name}.conv{i}.bias", (n_bias,), n_bias))
        if b.batch_norm:
            c = b.out_channels
            out += [ParamEntry(f"{b.name}.bn.gamma", (c,), c), ParamEntry(f"{b.name}.bn.beta", (c,), c)]
    F = spec.pooled_features
    out += [ParamEntry("dense.weight", (F, K), F * K), ParamEntry("dense.bias", (K,), K)]
    return out


def count_params(spec: ArchSpec) -> tuple[list[ParamEntry], int]:
    table = param_layout(spec)
    total = 0
    for entry in table:
        total += entry.count
    return table, total


def solve_vocab_size(total: int, spec_without_vocab: ArchSpec) -> int | None:
    """Vocabulary size ``V`` for which ``spec`` has exactly ``total`` parameters, if integral."""
    probe = replace(spec_without_vocab, vocab_size=2)
    _, at_two = count_params(probe)
    rest = at_two - 2 * probe.embedding_dim
    q, r = divmod(total - rest, probe.embedding_dim)
    return q if r == 0 and q >= 2 else None


# --------------------------------------------------------------------------
# built models


class Model:
    """Parameters, batch-norm states, and the forward pass for one ``ArchSpec``."""

    def __init__(self, spec: ArchSpec, params: dict[str, Tensor], bn: dict[str, BatchNormState]):
        self.spec = spec
        self.params = params
        self.bn = bn

    def forward(self, tokens, train: bool = False, rng: Rng | None = None) -> Tensor:
        spec = self.spec
        p = self.params
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise DimensionError(f"token batch must be [batch, length], got shape {tokens.shape}")
        x = L.embed(tokens, p["embedding"])
        if spec.embed_bn:
            x = L.batch_norm(x, self.bn["embed_bn"], train)
        pooled = []
        for b in spec.branches:
            h = x
            for i, s in enumerate(b.stages):
                w, bias = p[f"{b.name}.conv{i}.weight"], p[f"{b.name}.conv{i}.bias"]
                if s.depthwise and s.in_channels > 1:
                    h = L.channel_conv1d(h, w, bias, s.dilation)
                else:
                    h = L.conv1d(h, w, bias, s.dilation)
                if b.activate_between and i < len(b.stages) - 1:
                    h = self._activate(h, b)
            if b.batch_norm:
                h = L.batch_norm(h, self.bn[f"{b.name}.bn"], train)
            h = self._activate(h, b)
            pooled.append(L.max_over_time(h))
        feats = pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=1)
        feats = L.dropout(feats, spec.dropout_rate, train, rng)
        return L.affine(feats, p["dense.weight"], p["dense.bias"])

    def _activate(self, h: Tensor, b: BranchSpec) -> Tensor:
        if b.activation == "leaky_relu":
            return L.leaky_relu(h, self.spec.leaky_alpha)
        return L.relu(h)

    def loss(self, tokens, labels, train: bool = False, rng: Rng | None = None):
        """``(loss, probs)`` with the spec's L2 term on the dense weights."""
        logits = self.forward(tokens, train, rng)
        loss, probs = L.softmax_xent(logits, labels)
        if self.spec.l2_coeff > 0:
            reg = L.l2_penalty([self.params["dense.weight"]])
            loss = T.add(loss, T.mul(reg, self.spec.l2_coeff))
        return loss, probs

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def num_params(self) -> int:
        return int(np.sum([t.size for t in self.params.values()]))

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state (batch-norm running statistics)."""
        out = {}
        for key, st in self.bn.items():
            out[f"{key}.running_mean"] = st.running_mean
            out[f"{key}.running_var"] = st.running_var
        return out

    def load_state(self, params: dict[str, np.ndarray], buffers: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(params)
        if missing:
            raise ContractError(f"parameter names differ from the spec: {sorted(missing)}")
        for name, arr in params.items():
            if arr.shape != self.params[name].shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} != {self.params[name].shape}")
        for name, arr in params.items():
            self.params[name].data = np.array(arr, dtype=np.float64)
            self.params[name].grad = None
        for key, st in self.bn.items():
            st.running_mean = np.array(buffers[f"{key}.running_mean"], dtype=np.float64)
            st.running_var = np.array(buffers[f"{key}.running_var"], dtype=np.float64)


def build(spec: ArchSpec, rng: Rng, *, embed_range: float = 1.0, weight_sigma: float = 0.1) -> Model:
    """Allocate parameters for ``spec``.

    Embeddings are uniform in ``[-embed_range, embed_range]``, conv and dense
    weights truncated-normal with ``weight_sigma``, biases zero, batch-norm
    scale one and shift zero.
    """
    params: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}
    for entry in param_layout(spec):
        name = entry.name
        if name == "embedding":
            t = T.init("uniform", entry.shape, rng, lo=-embed_range, hi=embed_range, name=name)
        elif name.endswith(".gamma"):
            t = T.init("ones", entry.shape, name=name)
        elif name.endswith(".bias") or name.endswith(".beta"):
            t = T.init("zeros", entry.shape, name=name)
        else:
            t = T.init("truncated_normal", entry.shape, rng, sigma=weight_sigma, name=name)
        params[name] = t
    for name in params:
        if name.endswith(".gamma"):
            key = name[: -len(".gamma")]
            bn[key] = BatchNormState(params[name], params[f"{key}.beta"],
                                     momentum=spec.bn_momentum, eps=spec.bn_eps)
    return Model(spec, params, bn)
