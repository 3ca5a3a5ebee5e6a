"""Acoustic CNN with an optional word-embedding bottleneck branch."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import nn
from .corpus import N_DESCRIPTORS, Label

MODES = ("acoustic", "acoustic+embs", "embs_only")
N_CLASSES = 2


def canonical_mode(mode: str) -> str:
    mode = mode.replace("-", "_") if mode.startswith("embs") else mode
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


@dataclass(frozen=True)
class AcousticConfig:
    s_max: int
    d: int = N_DESCRIPTORS
    conv1_channels: int = 100
    conv1_kh: int = 6
    conv1_stride: int = 4
    conv2_channels: int = 100
    conv2_kh: int = 4
    conv2_stride: int = 2
    dropout_p: float = 0.2
    l2_lambda: float = 1e-4
    depthwise_conv2: bool = False

    def __post_init__(self):
        if self.s_max < self.conv1_kh:
            raise ValueError(f"s_max={self.s_max} shorter than the first kernel ({self.conv1_kh})")
        if self.depthwise_conv2 and self.conv2_channels != self.conv1_channels:
            raise ValueError("depthwise conv2 needs conv2_channels == conv1_channels")

    @property
    def conv1_kw(self) -> int:
        # spans every descriptor plus the position indicator row
        return self.d + 1

    def conv_lengths(self) -> tuple[int, int]:
        l1 = nn.conv_output_length(self.s_max, self.conv1_kh, self.conv1_stride)
        l2 = nn.conv_output_length(l1, self.conv2_kh, self.conv2_stride)
        return l1, l2


@dataclass(frozen=True)
class LexicalConfig:
    embed_dim: int = 300
    n_words: int = 1
    bottleneck_n: int = 10
    input_dropout_p: float = 0.8
    l2_lambda: float = 1e-4

    def __post_init__(self):
        if self.n_words not in (1, 3):
            raise ValueError(f"n_words must be 1 or 3, got {self.n_words}")
        if self.bottleneck_n < 1:
            raise ValueError("bottleneck_n must be >= 1")

    @property
    def input_size(self) -> int:
        return self.embed_dim * self.n_words


class LexicoAcousticModel:
    """Parameters and forward/backward passes for one of the three modes.

    Class index 0 is None and 1 is Accented in every probability vector.
    """

    def __init__(self, acoustic: AcousticConfig | None, lexical: LexicalConfig | None, mode: str,
                 params: dict, dtype=np.float64):
        self.acoustic = acoustic
        self.lexical = lexical
        self.mode = canonical_mode(mode)
        self.params = params
        self.dtype = np.dtype(dtype)

    @property
    def uses_acoustic(self) -> bool:
        return self.mode != "embs_only"

    @property
    def uses_lexical(self) -> bool:
        return self.mode != "acoustic"

    @property
    def acoustic_width(self) -> int:
        return self.acoustic.conv2_channels if self.uses_acoustic else 0

    @property
    def lexical_width(self) -> int:
        return self.lexical.bottleneck_n if self.uses_lexical else 0

    @property
    def fused_width(self) -> int:
        return self.acoustic_width + self.lexical_width

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    # -- forward/backward ---------------------------------------------------

    def _forward(self, matrices, lexical, train, rng, params=None):
        p = self.params if params is None else params
        caches = {}
        parts = []
        if self.uses_acoustic:
            if matrices is None:
                raise ValueError("acoustic branch needs input matrices")
            cfg = self.acoustic
            x = np.asarray(matrices, dtype=self.dtype)
            if x.ndim == 2:
                x = x[None]
            if x.shape[1:] != (cfg.d + 1, cfg.s_max):
                raise ValueError(f"input matrices must be ({cfg.d + 1}, {cfg.s_max}), got {x.shape[1:]}")
            x = x.transpose(0, 2, 1)[:, None]  # (N, 1, time, features)
            h1, caches["conv1"] = nn.conv2d_forward(x, p["conv1_W"], p["conv1_b"], (cfg.conv1_stride, 1))
            a1, caches["relu1"] = nn.relu_forward(h1)
            h2, caches["conv2"] = nn.conv2d_forward(a1, p["conv2_W"], p["conv2_b"], (cfg.conv2_stride, 1),
                                                    depthwise=cfg.depthwise_conv2)
            a2, caches["relu2"] = nn.relu_forward(h2)
            pooled, caches["pool"] = nn.maxpool_over_time_forward(a2)
            dropped, caches["drop_a"] = nn.dropout_forward(pooled, cfg.dropout_p, train, rng)
            parts.append(dropped)
        if self.uses_lexical:
            if lexical is None:
                raise ValueError("lexical branch needs embedding input")
            e = np.asarray(lexical, dtype=self.dtype)
            if e.ndim == 1:
                e = e[None]
            if e.shape[1] != self.lexical.input_size:
                raise ValueError(f"lexical input must have {self.lexical.input_size} values, got {e.shape[1]}")
            e, caches["drop_l"] = nn.dropout_forward(e, self.lexical.input_dropout_p, train, rng)
            b, caches["bottleneck"] = nn.dense_forward(e, p["lex_W"], p["lex_b"], "relu")
            parts.append(b)
        fused = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)
        logits, caches["out"] = nn.dense_forward(fused, p["out_W"], p["out_b"])
        return logits, caches

    def logits(self, matrices, lexical=None, train=False, rng=None):
        return self._forward(matrices, lexical, train, rng)[0]

    def _regularized(self, p):
        a = self.acoustic_width
        acoustic, lexical = {}, {}
        if self.uses_acoustic:
            acoustic = {"conv1_W": p["conv1_W"], "conv2_W": p["conv2_W"], "out_W": p["out_W"][:, :a]}
        if self.uses_lexical:
            lexical = {"lex_W": p["lex_W"], "out_W": p["out_W"][:, a:]}
        return acoustic, lexical

    def loss_and_grads(self, matrices, lexical, gold, train=False, rng=None, params=None):
        """Mean cross-entropy plus separate acoustic and lexical L2 terms."""
        p = self.params if params is None else params
        logits, c = self._forward(matrices, lexical, train, rng, p)
        loss, dlogits = nn.softmax_xent(logits, gold)
        grads = {}
        dfused, grads["out_W"], grads["out_b"] = nn.dense_backward(dlogits, c["out"])
        a = self.acoustic_width
        if self.uses_acoustic:
            d = nn.dropout_backward(dfused[:, :a], c["drop_a"])
            d = nn.maxpool_over_time_backward(d, c["pool"])
            d = nn.relu_backward(d, c["relu2"])
            d, grads["conv2_W"], grads["conv2_b"] = nn.conv2d_backward(d, c["conv2"])
            d = nn.relu_backward(d, c["relu1"])
            _, grads["conv1_W"], grads["conv1_b"] = nn.conv2d_backward(d, c["conv1"], need_dx=False)
        if self.uses_lexical:
            _, grads["lex_W"], grads["lex_b"] = nn.dense_backward(dfused[:, a:], c["bottleneck"])
        reg_a, reg_l = self._regularized(p)
        pen_a, g_a = nn.l2_penalty(reg_a, self.acoustic.l2_lambda if self.uses_acoustic else 0.0)
        pen_l, g_l = nn.l2_penalty(reg_l, self.lexical.l2_lambda if self.uses_lexical else 0.0)
        for name in ("conv1_W", "conv2_W", "lex_W"):
            if name in g_a:
                grads[name] += g_a[name]
            if name in g_l:
                grads[name] += g_l[name]
        if "out_W" in g_a:
            grads["out_W"][:, :a] += g_a["out_W"]
        if "out_W" in g_l:
            grads["out_W"][:, a:] += g_l["out_W"]
        return loss + pen_a + pen_l, grads

    def forward(self, matrices, lexical=None, train=False, rng=None):
        """Class probabilities, shape (N, 2)."""
        return nn.softmax(self.logits(matrices, lexical, train, rng))

    def predict(self, matrices, lexical=None, batch_size=256) -> np.ndarray:
        """Eval-mode argmax labels; ties resolve to None (index 0)."""
        n = len(matrices) if matrices is not None else len(lexical)
        out = np.empty(n, dtype=np.int64)
        for i in range(0, n, batch_size):
            sl = slice(i, i + batch_size)
            lg = self.logits(None if matrices is None else matrices[sl],
                             None if lexical is None else lexical[sl])
            out[sl] = np.argmax(lg, axis=1)
        return out


def build_model(acoustic: AcousticConfig | None, lexical: LexicalConfig | None = None,
                mode: str = "acoustic", rng=None, dtype=np.float64) -> LexicoAcousticModel:
    """Initialize a model with Glorot-uniform weights and zero biases."""
    mode = canonical_mode(mode)
    rng = np.random.default_rng(0) if rng is None else rng
    params = {}
    width = 0
    if mode != "embs_only":
        if acoustic is None:
            raise ValueError(f"mode {mode} needs an AcousticConfig")
        cfg = acoustic
        l1, l2 = cfg.conv_lengths()
        if l1 < cfg.conv2_kh or l2 < 1:
            raise ValueError(
                f"s_max={cfg.s_max} gives conv lengths ({l1}, {l2}); conv2 needs at least {cfg.conv2_kh} inputs"
            )
        c1, c2, k1, k2, kw = cfg.conv1_channels, cfg.conv2_channels, cfg.conv1_kh, cfg.conv2_kh, cfg.conv1_kw
        params["conv1_W"] = glorot(rng, (c1, 1, k1, kw), k1 * kw, c1 * k1 * kw)
        params["conv1_b"] = np.zeros(c1)
        if cfg.depthwise_conv2:
            params["conv2_W"] = glorot(rng, (c2, 1, k2, 1), k2, k2)
        else:
            params["conv2_W"] = glorot(rng, (c2, c1, k2, 1), c1 * k2, c2 * k2)
        params["conv2_b"] = np.zeros(c2)
        width += c2
    if mode != "acoustic":
        if lexical is None:
            raise ValueError(f"mode {mode} needs a LexicalConfig")
        n_in, n = lexical.input_size, lexical.bottleneck_n
        params["lex_W"] = glorot(rng, (n, n_in), n_in, n)
        params["lex_b"] = np.zeros(n)
        width += n
    params["out_W"] = glorot(rng, (N_CLASSES, width), width, N_CLASSES)
    params["out_b"] = np.zeros(N_CLASSES)
    params = {k: v.astype(dtype) for k, v in params.items()}
    return LexicoAcousticModel(acoustic, lexical, mode, params, dtype)


def glorot(rng, shape, fan_in, fan_out):
    return nn.glorot_uniform(rng, shape, fan_in, fan_out)


def forward(model: LexicoAcousticModel, matrix, lexical=None, train=False, rng=None) -> np.ndarray:
    """Probabilities for a single input matrix (or a batch)."""
    values = getattr(matrix, "values", matrix)
    probs = model.forward(values, lexical, train, rng)
    return probs[0] if np.ndim(values) == 2 or (values is None and np.ndim(lexical) == 1) else probs


def loss_and_grads(model: LexicoAcousticModel, batch):
    """Mean loss and gradients over ``batch``, a sequence of (matrix, lexical, gold)."""
    if not batch:
        raise ValueError("empty batch")
    mats = None if not model.uses_acoustic else np.stack([getattr(m, "values", m) for m, _, _ in batch])
    lex = None if not model.uses_lexical else np.stack([l for _, l, _ in batch])
    gold = np.array([int(g) for _, _, g in batch])
    return model.loss_and_grads(mats, lex, gold)


def predict(model: LexicoAcousticModel, matrix, lexical=None) -> Label:
    probs = forward(model, matrix, lexical)
    return label_from_probs(probs)


def label_from_probs(probs) -> Label:
    # strict comparison: a tie stays None
    return Label.ACCENTED if probs[Label.ACCENTED] > probs[Label.NONE] else Label.NONE


def gradient_check(seed: int = 0, mode: str = "acoustic+embs", s_max: int = 26, embed_dim: int = 12,
                   n_words: int = 3, batch: int = 8) -> float:
    """Max relative gradient error of a random small model, dropout off, 64-bit.

    Keeps the full layer widths but shrinks the input. Small batches leave
    some ReLU units dead on every example; their gradient is then only the L2
    term, tiny enough for roundoff to dominate, hence the default of 8.
    """
    rng = np.random.default_rng(seed)
    model = build_model(AcousticConfig(s_max=s_max), LexicalConfig(embed_dim=embed_dim, n_words=n_words), mode, rng)
    mats = rng.normal(size=(batch, N_DESCRIPTORS + 1, s_max)) if model.uses_acoustic else None
    lex = rng.normal(size=(batch, model.lexical.input_size)) if model.uses_lexical else None
    gold = rng.integers(0, N_CLASSES, batch)
    fn = lambda p: model.loss_and_grads(mats, lex, gold, params=p)
    return nn.grad_check(fn, model.params, rng=rng)


# -- config files -------------------------------------------------------------

def config_dict(acoustic: AcousticConfig | None, lexical: LexicalConfig | None, mode: str, seed: int) -> dict:
    out = {"mode": canonical_mode(mode), "seed": seed}
    if acoustic is not None:
        out.update({f"acoustic.{k}": v for k, v in asdict(acoustic).items()})
    if lexical is not None:
        out.update({f"lexical.{k}": v for k, v in asdict(lexical).items()})
    return out


def config_hash(values: dict) -> str:
    text = "\n".join(f"{k}={values[k]}" for k in sorted(values))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_config(path, acoustic, lexical, mode, seed) -> str:
    values = config_dict(acoustic, lexical, mode, seed)
    digest = config_hash(values)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash = {digest}\n")
        for k in sorted(values):
            fh.write(f"{k} = {values[k]}\n")
    return digest


_TYPES = {"int": int, "float": float, "bool": bool}


def _coerce(text: str, kind):
    if kind is bool:
        return text.strip().lower() in ("1", "true", "yes")
    return kind(text)


def read_config(path):
    """Inverse of ``write_config``: returns (acoustic, lexical, mode, seed)."""
    raw = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()

    def section(prefix, cls):
        keys = {k[len(prefix) + 1:]: v for k, v in raw.items() if k.startswith(prefix + ".")}
        if not keys:
            return None
        types = {f.name: _TYPES[f.type] for f in fields(cls)}
        return cls(**{k: _coerce(v, types.get(k, str)) for k, v in keys.items()})

    return section("acoustic", AcousticConfig), section("lexical", LexicalConfig), raw["mode"], int(raw["seed"])
