"""The presence-detection network and its losses.

Architecture (full variant): a shared-weight two-layer 1-D CNN maps the
current spatial vector s_n and the empty-room reference b to features c1 and
c0; their difference c conditions two two-layer GRU stacks (one over the
spatial window, one over the fused moving vector, which instead receives the
dense-projected scalar d). A softmax self-attention pools the static stack's
output sequence over time, the pooled context is concatenated with the moving
stack's last output, and a two-layer dense head emits 4-case probabilities.

Each GRU layer follows, for input x_t, condition c and state xi:

    reset   alpha = sigmoid(W_r . [xi_{t-1}, x_t, c])
    update  beta  = sigmoid(W_u . [xi_{t-1}, x_t, c])
    cand    xi~   = tanh(W_c . [alpha * xi_{t-1}, x_t, c])
    state   xi    = (1 - beta) * xi_{t-1} + beta * xi~
    output  g     = sigmoid(W_o . xi)

Layer 2 consumes layer-1 outputs g without condition re-injection. Inputs to
each stack are feature-normalized with batch statistics at train time and
running averages (momentum 0.9) at inference; the statistics are model state,
not trainable parameters.

Ablation variants: FERN (single stack on [S, m], last-output head), D-FERN
(dual stacks, no attention/condition), T-FERN (FERN + attention), C-FERN
(FERN + condition path and conditional loss), and the full TCD-FERN.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .das import DasSample, ReferenceSpatial
from .errors import ConfigError, DataIntegrityError, StructuralError

VARIANTS = ("FERN", "D-FERN", "T-FERN", "C-FERN", "TCD-FERN")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelConfig:
    tau: int = 50
    input_dim: int = 224
    cond_dim: int = 64
    gru_units: int = 32
    conv1_filters: int = 64
    conv2_filters: int = 32
    kernel: int = 3
    dropout: float = 0.2
    margin: float = 1.0
    lam: float = 0.5  # weight of the conditional-loss term
    attn_hidden: int = 3
    head_hidden: int = 32
    n_cases: int = 4
    variant: str = "TCD-FERN"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        dims = (self.tau, self.input_dim, self.cond_dim, self.gru_units,
                self.conv1_filters, self.conv2_filters, self.kernel,
                self.attn_hidden, self.head_hidden, self.n_cases)
        if min(dims) < 1:
            raise ConfigError(f"all dimensions must be positive: {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.margin <= 0 or self.lam < 0:
            raise ConfigError(f"margin must be > 0 and lambda >= 0, got {self.margin}, {self.lam}")
        if self.conv2_len < 1:
            raise ConfigError(
                f"conv output length {self.conv2_len} <= 0 for input_dim={self.input_dim}"
            )

    @property
    def conv1_len(self) -> int:
        return self.input_dim - (self.kernel - 1)

    @property
    def conv2_len(self) -> int:
        return self.conv1_len - (self.kernel - 1)

    @property
    def flat_dim(self) -> int:
        return self.conv2_len * self.conv2_filters

    @property
    def has_condition(self) -> bool:
        return self.variant in ("C-FERN", "TCD-FERN")

    @property
    def has_moving_stack(self) -> bool:
        return self.variant in ("D-FERN", "TCD-FERN")

    @property
    def has_attention(self) -> bool:
        return self.variant in ("T-FERN", "TCD-FERN")

    @property
    def static_in(self) -> int:
        if self.variant == "TCD-FERN":
            return self.input_dim + self.cond_dim
        if self.variant == "C-FERN":
            return self.input_dim + 1 + self.cond_dim
        if self.variant == "D-FERN":
            return self.input_dim
        return self.input_dim + 1  # FERN, T-FERN: [S, m]

    @property
    def moving_in(self) -> int:
        return 2 if self.variant == "TCD-FERN" else 1

    @property
    def head_in(self) -> int:
        return 2 * self.gru_units if self.has_moving_stack else self.gru_units

    def canonical(self) -> str:
        """Stable key=value string, the basis of the checkpoint config hash."""
        keys = ("tau", "input_dim", "cond_dim", "gru_units", "conv1_filters",
                "conv2_filters", "kernel", "dropout", "margin", "lam",
                "attn_hidden", "head_hidden", "n_cases", "variant")
        return ";".join(f"{k}={getattr(self, k)!r}" for k in keys)


@dataclass
class BnStats:
    """Running feature statistics for one GRU stack's input sequence."""

    mean: np.ndarray
    var: np.ndarray


@dataclass
class GruLayerParams:
    w_reset: Tensor
    w_update: Tensor
    w_cand: Tensor
    w_out: Tensor
    b_reset: Tensor
    b_update: Tensor
    b_cand: Tensor
    b_out: Tensor

    @property
    def units(self) -> int:
        return self.w_out.shape[1]


@dataclass
class ModelParams:
    """All weights of one pair-model plus non-trainable state.

    `bn` maps stack name to running input statistics; `reference` is the
    empty-room spatial vector b captured at training time so a checkpoint is
    self-contained for online inference.
    """

    cfg: ModelConfig
    conv1_w: Tensor | None = None
    conv1_b: Tensor | None = None
    conv2_w: Tensor | None = None
    conv2_b: Tensor | None = None
    cond_w: Tensor | None = None
    cond_b: Tensor | None = None
    mov_cond_w: Tensor | None = None
    mov_cond_b: Tensor | None = None
    static_gru: list[GruLayerParams] = field(default_factory=list)
    moving_gru: list[GruLayerParams] = field(default_factory=list)
    attn_w1: Tensor | None = None
    attn_b1: Tensor | None = None
    attn_w2: Tensor | None = None
    attn_b2: Tensor | None = None
    head_w1: Tensor | None = None
    head_b1: Tensor | None = None
    head_w2: Tensor | None = None
    head_b2: Tensor | None = None
    bn: dict[str, BnStats] = field(default_factory=dict)
    reference: np.ndarray | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        direct = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "cond_w", "cond_b",
                  "mov_cond_w", "mov_cond_b")
        for name in direct:
            t = getattr(self, name)
            if t is not None:
                out.append((name, t))
        for stack_name, layers in (("static_gru", self.static_gru), ("moving_gru", self.moving_gru)):
            for i, layer in enumerate(layers):
                for wname in ("w_reset", "w_update", "w_cand", "w_out",
                              "b_reset", "b_update", "b_cand", "b_out"):
                    out.append((f"{stack_name}{i}/{wname}", getattr(layer, wname)))
        for name in ("attn_w1", "attn_b1", "attn_w2", "attn_b2",
                     "head_w1", "head_b1", "head_w2", "head_b2"):
            t = getattr(self, name)
            if t is not None:
                out.append((name, t))
        return out

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.named_parameters())

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Non-trainable state persisted alongside the weights."""
        out = []
        for name in sorted(self.bn):
            out.append((f"bn/{name}/mean", self.bn[name].mean))
            out.append((f"bn/{name}/var", self.bn[name].var))
        if self.reference is not None:
            out.append(("reference", self.reference))
        return out


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _gru_layer(rng: np.random.Generator, d_in: int, units: int) -> GruLayerParams:
    full = d_in + units
    return GruLayerParams(
        w_reset=_uniform(rng, (full, units), full),
        w_update=_uniform(rng, (full, units), full),
        w_cand=_uniform(rng, (full, units), full),
        w_out=_uniform(rng, (units, units), units),
        b_reset=_zeros(units),
        b_update=_zeros(units),
        b_cand=_zeros(units),
        b_out=_zeros(units),
    )


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Initialize weights: uniform fan-in scaled, zero biases.

    Draw order (fixed for reproducibility): conv1, conv2, cond dense, moving
    cond dense, static stack layers, moving stack layers, attention, head.
    Groups absent from the variant are skipped.
    """
    p = ModelParams(cfg=cfg)
    u = cfg.gru_units
    if cfg.has_condition:
        p.conv1_w = _uniform(rng, (cfg.kernel, 1, cfg.conv1_filters), cfg.kernel)
        p.conv1_b = _zeros(cfg.conv1_filters)
        p.conv2_w = _uniform(rng, (cfg.kernel, cfg.conv1_filters, cfg.conv2_filters),
                             cfg.kernel * cfg.conv1_filters)
        p.conv2_b = _zeros(cfg.conv2_filters)
        p.cond_w = _uniform(rng, (cfg.flat_dim, cfg.cond_dim), cfg.flat_dim)
        p.cond_b = _zeros(cfg.cond_dim)
    if cfg.variant == "TCD-FERN":
        p.mov_cond_w = _uniform(rng, (cfg.cond_dim, 1), cfg.cond_dim)
        p.mov_cond_b = _zeros(1)
    p.static_gru = [_gru_layer(rng, cfg.static_in, u), _gru_layer(rng, u, u)]
    p.bn["static"] = BnStats(np.zeros(cfg.static_in), np.ones(cfg.static_in))
    if cfg.has_moving_stack:
        p.moving_gru = [_gru_layer(rng, cfg.moving_in, u), _gru_layer(rng, u, u)]
        p.bn["moving"] = BnStats(np.zeros(cfg.moving_in), np.ones(cfg.moving_in))
    if cfg.has_attention:
        p.attn_w1 = _uniform(rng, (u, cfg.attn_hidden), u)
        p.attn_b1 = _zeros(cfg.attn_hidden)
        p.attn_w2 = _uniform(rng, (cfg.attn_hidden, 1), cfg.attn_hidden)
        p.attn_b2 = _zeros(1)
    p.head_w1 = _uniform(rng, (cfg.head_in, cfg.head_hidden), cfg.head_in)
    p.head_b1 = _zeros(cfg.head_hidden)
    p.head_w2 = _uniform(rng, (cfg.head_hidden, cfg.n_cases), cfg.head_hidden)
    p.head_b2 = _zeros(cfg.n_cases)
    return p


def copy_params(p: ModelParams) -> ModelParams:
    """Deep copy of weights and state (used for best-checkpoint snapshots)."""
    def ct(t: Tensor | None) -> Tensor | None:
        return None if t is None else Tensor(t.data.copy(), requires_grad=True)

    def cl(layers):
        return [GruLayerParams(**{f: ct(getattr(l, f)) for f in (
            "w_reset", "w_update", "w_cand", "w_out",
            "b_reset", "b_update", "b_cand", "b_out")}) for l in layers]

    return ModelParams(
        cfg=p.cfg,
        conv1_w=ct(p.conv1_w), conv1_b=ct(p.conv1_b),
        conv2_w=ct(p.conv2_w), conv2_b=ct(p.conv2_b),
        cond_w=ct(p.cond_w), cond_b=ct(p.cond_b),
        mov_cond_w=ct(p.mov_cond_w), mov_cond_b=ct(p.mov_cond_b),
        static_gru=cl(p.static_gru), moving_gru=cl(p.moving_gru),
        attn_w1=ct(p.attn_w1), attn_b1=ct(p.attn_b1),
        attn_w2=ct(p.attn_w2), attn_b2=ct(p.attn_b2),
        head_w1=ct(p.head_w1), head_b1=ct(p.head_b1),
        head_w2=ct(p.head_w2), head_b2=ct(p.head_b2),
        bn={k: BnStats(v.mean.copy(), v.var.copy()) for k, v in p.bn.items()},
        reference=None if p.reference is None else p.reference.copy(),
    )


# ---------------------------------------------------------------------------
# building blocks


def spatial_domain_feature(x: Tensor, params: ModelParams, train: bool = False,
                           rng: np.random.Generator | None = None,
                           shapes: dict | None = None) -> Tensor:
    """Two tanh conv layers with dropout, flatten, dense to the condition width.

    Applied with the same weights to s_n (giving c1) and to the reference b
    (giving c0). Dropout masks at train time are drawn in call order.
    """
    cfg = params.cfg
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise StructuralError(f"spatial feature input must be (B, {cfg.input_dim}), got {x.shape}")
    batch = x.shape[0]
    h = ad.reshape(x, (batch, cfg.input_dim, 1))
    if shapes is not None:
        shapes["cnn_input"] = (cfg.input_dim, 1)
    h = ad.conv1d_act(h, params.conv1_w, params.conv1_b, act="tanh")
    h = ad.dropout(h, cfg.dropout, train, rng)
    if shapes is not None:
        shapes["conv1"] = h.shape[1:]
    h = ad.conv1d_act(h, params.conv2_w, params.conv2_b, act="tanh")
    h = ad.dropout(h, cfg.dropout, train, rng)
    if shapes is not None:
        shapes["conv2"] = h.shape[1:]
    h = ad.reshape(h, (batch, cfg.flat_dim))
    if shapes is not None:
        shapes["flatten"] = h.shape[1:]
    out = ad.dense_act(h, params.cond_w, params.cond_b, act=None)
    if shapes is not None:
        shapes["cond_dense"] = out.shape[1:]
    return out


def condition(c1: Tensor, c0: Tensor) -> Tensor:
    """Current spatial feature minus the empty-room feature."""
    if c1.shape[-1] != c0.shape[-1]:
        raise StructuralError(f"condition: feature widths differ, {c1.shape} vs {c0.shape}")
    return ad.sub(c1, c0)


def batch_norm_seq(x: Tensor, stats: BnStats, train: bool) -> tuple[Tensor, BnStats]:
    """Feature-wise normalization of a (B, tau, F) sequence.

    Train mode normalizes with the batch statistics (gradients flow through
    them) and returns updated running averages; the caller commits the update.
    """
    if train:
        y, mu, var = ad.batch_norm_train(x, eps=BN_EPS)
        new = BnStats(
            BN_MOMENTUM * stats.mean + (1.0 - BN_MOMENTUM) * mu,
            BN_MOMENTUM * stats.var + (1.0 - BN_MOMENTUM) * var,
        )
        return y, new
    scale = 1.0 / np.sqrt(stats.var + BN_EPS)
    return ad.mul(ad.sub(x, stats.mean), scale), stats


def conditional_gru_forward(seq: Tensor, cond: Tensor | None,
                            layers: list[GruLayerParams]) -> tuple[list[Tensor], Tensor, Tensor]:
    """Run a GRU stack over a (B, tau, D) sequence.

    `cond`, when given, is concatenated to every time step of the first
    layer's input (an empty cond reduces to an unconditional GRU). Later
    layers consume the previous layer's outputs only. Returns the final
    layer's per-step outputs (as a list and stacked (B, tau, U)) and its
    last hidden state.
    """
    if seq.ndim != 3:
        raise StructuralError(f"GRU stack expects (B, tau, D), got {seq.shape}")
    batch, tau = seq.shape[0], seq.shape[1]
    if cond is not None:
        seq = ad.concat([seq, ad.repeat_steps(cond, tau)], axis=2)
    expect = seq.shape[2] + layers[0].units
    if layers[0].w_reset.shape[0] != expect:
        raise StructuralError(
            f"GRU layer-1 weight rows {layers[0].w_reset.shape[0]} != state+input width {expect}"
        )
    outs: list[Tensor] = []
    last_state: Tensor | None = None
    x_seq = seq
    for layer in layers:
        u = layer.units
        # weight rows are laid out [state block | input block]; the input-side
        # projections of all time steps run as one batched matmul per gate
        proj_r = ad.matmul(x_seq, ad.rows(layer.w_reset, u, layer.w_reset.shape[0]))
        proj_u = ad.matmul(x_seq, ad.rows(layer.w_update, u, layer.w_update.shape[0]))
        proj_c = ad.matmul(x_seq, ad.rows(layer.w_cand, u, layer.w_cand.shape[0]))
        wh_r = ad.rows(layer.w_reset, 0, u)
        wh_u = ad.rows(layer.w_update, 0, u)
        wh_c = ad.rows(layer.w_cand, 0, u)
        h = Tensor(np.zeros((batch, u)))
        outs = []
        for t in range(tau):
            reset = ad.gru_gate(h, wh_r, proj_r, t, layer.b_reset, act="sigmoid")
            update = ad.gru_gate(h, wh_u, proj_u, t, layer.b_update, act="sigmoid")
            cand = ad.gru_gate(ad.mul(reset, h), wh_c, proj_c, t, layer.b_cand, act="tanh")
            h = ad.lerp(h, update, cand)
            outs.append(ad.dense_act(h, layer.w_out, layer.b_out, act="sigmoid"))
        x_seq = ad.stack(outs, axis=1)
        last_state = h
    if not np.isfinite(last_state.data).all():
        raise DataIntegrityError("non-finite GRU state; training aborted (check data and LR)")
    return outs, x_seq, last_state


def time_selection(g_seq: Tensor, params: ModelParams,
                   shapes: dict | None = None) -> tuple[Tensor, Tensor]:
    """Softmax self-attention over time: returns (context (B,U), weights (B,tau))."""
    raw = ad.dense_act(g_seq, params.attn_w1, params.attn_b1, act=None)  # (B, tau, A)
    if shapes is not None:
        shapes["attn_dense1"] = raw.shape[1:]
    scored = ad.dense_act(raw, params.attn_w2, params.attn_b2, act="sigmoid")  # (B, tau, 1)
    if shapes is not None:
        shapes["attn_dense2"] = scored.shape[1:]
    batch, tau = g_seq.shape[0], g_seq.shape[1]
    flat = ad.reshape(scored, (batch, tau))
    if shapes is not None:
        shapes["attn_flatten"] = flat.shape[1:]
    weights = ad.softmax(flat, axis=1)
    if shapes is not None:
        shapes["attn_softmax"] = weights.shape[1:]
    context = ad.tsum(ad.mul(ad.reshape(weights, (batch, tau, 1)), g_seq), axis=1)
    if shapes is not None:
        shapes["attn_context"] = (1,) + context.shape[1:]
    return context, weights


def feature_mapping(features: Tensor, params: ModelParams,
                    shapes: dict | None = None) -> tuple[Tensor, Tensor]:
    """Dense head: tanh hidden layer then softmax over the cases."""
    hidden = ad.dense_act(features, params.head_w1, params.head_b1, act="tanh")
    if shapes is not None:
        shapes["head_dense"] = hidden.shape[1:]
    logits = ad.dense_act(hidden, params.head_w2, params.head_b2, act=None)
    probs = ad.softmax(logits, axis=1)
    if shapes is not None:
        shapes["head_out"] = probs.shape[1:]
    return logits, probs


# ---------------------------------------------------------------------------
# losses


def conditional_loss(c1: Tensor, c0: Tensor, labels: np.ndarray, margin: float) -> Tensor:
    """Contrastive conditional loss over a batch.

    With nu_n the Euclidean distance between c1_n and c0: empty-room samples
    (y=0) contribute nu^2, occupied samples contribute max(y*margin - nu, 0)^2,
    so higher case indices demand proportionally larger feature distances.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise StructuralError("conditional_loss requires a nonempty 1-D label batch")
    diff = ad.sub(c1, c0)
    sq = ad.tsum(ad.square(diff), axis=1)  # nu^2, shape (B,)
    nu = ad.sqrt(ad.clamp_min(sq, 1e-24))  # floor avoids a 0/0 in the sqrt backward
    empty = (labels == 0).astype(np.float64)
    present = 1.0 - empty
    hinge = ad.clamp_min(ad.sub(Tensor(labels * float(margin)), nu), 0.0)
    per_sample = ad.add(ad.mul(Tensor(empty), sq), ad.mul(Tensor(present), ad.square(hinge)))
    return ad.tmean(per_sample)


def total_loss(probs: Tensor, onehot: np.ndarray, l_cond: Tensor | float, lam: float) -> Tensor:
    """Cross-entropy (log floored at 1e-12) plus lam times the conditional loss."""
    ce_terms = ad.mul(Tensor(onehot), ad.log(ad.clamp_min(probs, LOG_FLOOR)))
    ce = ad.mul(ad.tmean(ad.tsum(ce_terms, axis=1)), -1.0)
    if isinstance(l_cond, Tensor):
        return ad.add(ce, ad.mul(l_cond, lam))
    return ad.add(ce, l_cond * lam)


# ---------------------------------------------------------------------------
# full forward


@dataclass
class BatchTrace:
    """Forward intermediates for a batch (Tensors; None where variant-absent)."""

    c1: Tensor | None
    c0: Tensor | None
    c: Tensor | None
    d: Tensor | None
    g_seq: Tensor | None
    time_weights: Tensor | None
    context: Tensor | None
    u: Tensor | None
    logits: Tensor
    probs: Tensor
    bn_updates: dict[str, BnStats]
    shapes: dict[str, tuple] | None = None


@dataclass(frozen=True)
class ForwardTrace:
    """Single-sample forward intermediates as plain arrays."""

    c1: np.ndarray | None
    c0: np.ndarray | None
    c: np.ndarray | None
    d: np.ndarray | None
    g_seq: np.ndarray | None
    time_weights: np.ndarray | None
    context: np.ndarray | None
    u: np.ndarray | None
    logits: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        if abs(self.probs.sum() - 1.0) > 1e-9:
            raise DataIntegrityError("probabilities do not sum to 1")
        if self.time_weights is not None and abs(self.time_weights.sum() - 1.0) > 1e-9:
            raise DataIntegrityError("attention weights do not sum to 1")


def forward_batch(params: ModelParams, spatial: np.ndarray, fused: np.ndarray,
                  static: np.ndarray, reference: np.ndarray | None,
                  train: bool = False, rng: np.random.Generator | None = None,
                  shapes: dict | None = None) -> BatchTrace:
    """Run the variant's forward pass on a batch.

    spatial: (B, tau, input_dim), fused: (B, tau), static: (B, input_dim),
    reference: (input_dim,) empty-room vector (required when the variant has a
    condition path). Dropout masks are drawn from `rng` in the order: s_n conv1,
    s_n conv2, b conv1, b conv2.
    """
    cfg = params.cfg
    batch, tau = spatial.shape[0], spatial.shape[1]
    if tau != cfg.tau or spatial.shape[2] != cfg.input_dim:
        raise StructuralError(
            f"spatial batch {spatial.shape} does not match config (tau={cfg.tau}, "
            f"input_dim={cfg.input_dim})"
        )
    s_t = Tensor(spatial)
    m3 = Tensor(fused[:, :, None])
    bn_updates: dict[str, BnStats] = {}

    c1 = c0 = c = d = None
    if cfg.has_condition:
        if reference is None:
            raise StructuralError(f"variant {cfg.variant} requires an empty-room reference")
        sn = Tensor(static)
        c1 = spatial_domain_feature(sn, params, train, rng, shapes)
        c0 = spatial_domain_feature(Tensor(reference[None, :]), params, train, rng)
        c = condition(c1, c0)  # (B, cond_dim) by broadcast
        if shapes is not None:
            shapes["cond_duplicate"] = (cfg.tau, cfg.cond_dim)

    # static-stack input per variant
    if cfg.variant == "TCD-FERN":
        x_static = ad.concat([s_t, ad.repeat_steps(c, tau)], axis=2)
    elif cfg.variant == "C-FERN":
        x_static = ad.concat([s_t, m3, ad.repeat_steps(c, tau)], axis=2)
    elif cfg.variant == "D-FERN":
        x_static = s_t
    else:  # FERN, T-FERN
        x_static = ad.concat([s_t, m3], axis=2)
    if shapes is not None:
        shapes["static_concat"] = x_static.shape[1:]

    x_static, new_stats = batch_norm_seq(x_static, params.bn["static"], train)
    if train:
        bn_updates["static"] = new_stats
    outs_static, static_seq, _ = conditional_gru_forward(x_static, None, params.static_gru)
    if shapes is not None:
        shapes["static_gru1"] = (tau, cfg.gru_units)
        shapes["static_gru2"] = (tau, cfg.gru_units)

    g_seq = time_weights = context = None
    if cfg.has_attention:
        g_seq = static_seq  # (B, tau, U)
        context, time_weights = time_selection(g_seq, params, shapes)
        static_feat = context
    else:
        static_feat = outs_static[-1]

    u = None
    if cfg.has_moving_stack:
        if cfg.variant == "TCD-FERN":
            d = ad.dense_act(c, params.mov_cond_w, params.mov_cond_b, act=None)  # (B, 1)
            if shapes is not None:
                shapes["mov_dense"] = d.shape[1:]
                shapes["mov_duplicate"] = (tau, 1)
            x_moving = ad.concat([m3, ad.repeat_steps(d, tau)], axis=2)
        else:
            x_moving = m3
        if shapes is not None:
            shapes["moving_concat"] = x_moving.shape[1:]
        x_moving, new_mov = batch_norm_seq(x_moving, params.bn["moving"], train)
        if train:
            bn_updates["moving"] = new_mov
        outs_moving, _, _ = conditional_gru_forward(x_moving, None, params.moving_gru)
        u = outs_moving[-1]
        if shapes is not None:
            shapes["moving_gru1"] = (tau, cfg.gru_units)
            shapes["moving_gru2"] = (1, cfg.gru_units)
        features = ad.concat([static_feat, u], axis=1)
        if shapes is not None:
            shapes["head_concat"] = (1, 2 * cfg.gru_units)
            shapes["head_flatten"] = (2 * cfg.gru_units,)
    else:
        features = static_feat

    logits, probs = feature_mapping(features, params, shapes)
    return BatchTrace(c1=c1, c0=c0, c=c, d=d, g_seq=g_seq, time_weights=time_weights,
                      context=context, u=u, logits=logits, probs=probs,
                      bn_updates=bn_updates, shapes=shapes)


def forward(sample: DasSample, b: ReferenceSpatial | None, params: ModelParams,
            train: bool = False, rng: np.random.Generator | None = None) -> ForwardTrace:
    """Single-sample forward pass returning squeezed numpy intermediates."""
    ref = b.vector if b is not None else None
    with ad.no_grad():
        t = forward_batch(
            params,
            sample.spatial.values[None, :, :],
            sample.fused.values[None, :],
            sample.static[None, :],
            ref,
            train=train,
            rng=rng,
        )

    def sq(x: Tensor | None):
        return None if x is None else x.data[0]

    return ForwardTrace(c1=sq(t.c1), c0=sq(t.c0), c=sq(t.c), d=sq(t.d), g_seq=sq(t.g_seq),
                        time_weights=sq(t.time_weights), context=sq(t.context), u=sq(t.u),
                        logits=sq(t.logits), probs=sq(t.probs))


def batch_loss(trace: BatchTrace, labels: np.ndarray, cfg: ModelConfig) -> tuple[Tensor, Tensor | float]:
    """Total loss for a batch; labels are class indices 0..3 (case - 1)."""
    onehot = np.eye(cfg.n_cases)[labels]
    if cfg.has_condition:
        l_cond = conditional_loss(trace.c1, trace.c0, labels, cfg.margin)
    else:
        l_cond = 0.0
    return total_loss(trace.probs, onehot, l_cond, cfg.lam), l_cond


def tiny_config(variant: str = "TCD-FERN") -> ModelConfig:
    """Desk-scale config for finite-difference verification."""
    return ModelConfig(tau=5, input_dim=12, cond_dim=4, gru_units=3,
                       conv1_filters=4, conv2_filters=3, kernel=3, dropout=0.2,
                       attn_hidden=3, head_hidden=8, variant=variant)


def end_to_end_grad_check(cfg: ModelConfig | None = None, seed: int = 0,
                          eps: float = 1e-4, batch: int = 3) -> float:
    """Check total-loss gradients of every parameter tensor by central differences.

    Runs in train mode so the batch-statistics and dropout paths are exercised;
    the dropout rng is re-seeded per evaluation so masks stay frozen. Returns
    the worst relative error over all parameters.

    The default step is 1e-4, not the 1e-5 used for single-op checks: several
    end-to-end gradients are ~1e-8, where float64 roundoff in the loss (not
    truncation) dominates the difference quotient at smaller steps.
    """
    if cfg is None:
        cfg = tiny_config()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    spatial = rng.uniform(size=(batch, cfg.tau, cfg.input_dim))
    fused = rng.uniform(-1, 1, size=(batch, cfg.tau))
    static = spatial[:, -1, :].copy()
    reference = rng.uniform(size=cfg.input_dim)
    labels = np.arange(batch) % cfg.n_cases

    def f() -> Tensor:
        drop_rng = np.random.default_rng(seed + 1)
        trace = forward_batch(params, spatial, fused, static, reference,
                              train=True, rng=drop_rng)
        loss, _ = batch_loss(trace, labels, cfg)
        return loss

    return ad.grad_check(f, [t for _, t in params.named_parameters()], eps=eps)


def audit_shapes(cfg: ModelConfig, seed: int = 0) -> dict[str, tuple]:
    """Run one forward pass and record every named intermediate shape."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    shapes: dict[str, tuple] = {}
    spatial = rng.uniform(size=(1, cfg.tau, cfg.input_dim))
    fused = rng.uniform(-1, 1, size=(1, cfg.tau))
    static = spatial[:, -1, :]
    reference = rng.uniform(size=cfg.input_dim)
    with ad.no_grad():
        forward_batch(params, spatial, fused, static, reference, train=False, shapes=shapes)
    shapes = {k: tuple(int(x) for x in v) for k, v in shapes.items()}
    return shapes
