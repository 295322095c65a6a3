"""Gated multi-hop GNN encoder with a hand-derived backward pass.

Each layer maps ``X`` (n x d_in) to ``H`` (n x d_out):

* one-hop path ``H1 = act(A X W)`` with ``A`` the mean-pooling adjacency,
* for every hop ``m = 2..k`` an attentive path ``Hm = act(alpha_m X W_m)``
  where ``alpha_m`` is a softmax over exact-distance-``m`` neighbors plus self
  of ``leaky((X M1)_i . (X M2)_j)``,
* gates folded left to right: ``G <- g * G + (1 - g) * Hm`` with
  ``g = gate_act(Hm gate_M^T + gate_b)``.

The final representation concatenates the L2-normalized output of every
layer. Parameters live in a flat ``dict`` keyed by names such as
``layer1.W`` or ``layer2.hop2.M1``.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, ShapeError
from .graph import NeighborStructure
from .numerics import (
    activation_grad,
    apply_activation,
    l2_normalize_rows,
    l2_normalize_rows_backward,
    load_matrices,
    mask_coordinates,
    masked_row_softmax,
    rowwise_dot,
    save_matrices,
    segment_softmax_backward,
    spmm,
    xavier_init,
)

VARIANTS = ("alinet", "gcn_only", "mix", "add", "gat_shared")

ParameterSet = dict  # name -> float64 ndarray


@dataclass
class ModelConfig:
    layer_dims: list = field(default_factory=lambda: [500, 400, 300])
    num_layers: int | None = None
    hops: int = 2
    variant: str = "alinet"
    gate_activation: str = "relu"
    aggregation_activation: str = "tanh"
    leaky_slope: float = 0.2

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if self.num_layers is None:
            self.num_layers = len(self.layer_dims) - 1
        self.validate()

    def validate(self) -> None:
        if len(self.layer_dims) != self.num_layers + 1 or self.num_layers < 1:
            raise ConfigurationError(
                f"layer_dims {self.layer_dims} does not match num_layers={self.num_layers}")
        if any(d < 1 for d in self.layer_dims):
            raise ConfigurationError("layer dims must be positive")
        if self.hops < 1:
            raise ConfigurationError("hops must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.gate_activation not in ("relu", "sigmoid"):
            raise ConfigurationError(f"gate_activation must be relu or sigmoid, not {self.gate_activation!r}")
        if self.aggregation_activation not in ("tanh", "relu", "identity"):
            raise ConfigurationError(f"unsupported aggregation_activation {self.aggregation_activation!r}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigurationError("leaky_slope must be in (0, 1)")

    @property
    def uses_attention(self) -> bool:
        return self.hops >= 2 and self.variant in ("alinet", "add", "gat_shared")

    @property
    def uses_gate(self) -> bool:
        return self.hops >= 2 and self.variant in ("alinet", "gat_shared")

    @property
    def output_dim(self) -> int:
        return sum(self.layer_dims[1:])

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: ModelConfig, num_entities: int) -> dict:
    shapes = {"H0": (num_entities, config.layer_dims[0])}
    for l in range(1, config.num_layers + 1):
        d_in, d_out = config.layer_dims[l - 1], config.layer_dims[l]
        shapes[f"layer{l}.W"] = (d_in, d_out)
        if not config.uses_attention:
            continue
        for m in range(2, config.hops + 1):
            p = f"layer{l}.hop{m}"
            shapes[f"{p}.W"] = (d_in, d_out)
            if config.variant == "gat_shared":
                shapes[f"{p}.M"] = (d_in, d_out)
            else:
                shapes[f"{p}.M1"] = (d_in, d_out)
                shapes[f"{p}.M2"] = (d_in, d_out)
            if config.uses_gate:
                shapes[f"{p}.gate_M"] = (d_out, d_out)
                shapes[f"{p}.gate_b"] = (1, d_out)
    return shapes


def init_params(config: ModelConfig, num_entities: int, rng: np.random.Generator) -> ParameterSet:
    """Xavier-uniform init for every matrix; gate biases start at zero."""
    params = {}
    for name, shape in parameter_shapes(config, num_entities).items():
        if name.endswith("gate_b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = xavier_init(*shape, rng)
    return params


def check_params(params: ParameterSet, config: ModelConfig, num_entities: int) -> None:
    expected = parameter_shapes(config, num_entities)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ConfigurationError(f"parameter set mismatch: missing {missing}, unexpected {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ConfigurationError(f"{name}: expected shape {shape}, got {params[name].shape}")


# ---------------------------------------------------------------- kernels

def one_hop_aggregate(H_prev, adj_norm, W, act: str = "tanh"):
    if H_prev.shape[1] != W.shape[0]:
        raise ShapeError(f"H_prev {H_prev.shape} vs W {W.shape}")
    return apply_activation(spmm(adj_norm, H_prev @ W), act)


def _attention(H_in, M1, M2, mask, slope):
    rows, cols = mask_coordinates(mask)
    P = H_in @ M1
    Q = P if M2 is M1 else H_in @ M2
    s = rowwise_dot(P, Q, rows, cols)
    c = apply_activation(s, "leaky_relu", slope)
    alpha = masked_row_softmax(c, mask)
    return alpha, P, Q, s, rows, cols


def attention_weights(H_in, M1, M2, two_hop_mask, slope: float = 0.2) -> sp.csr_matrix:
    """Softmax-normalized attention on the mask pattern only (never densified)."""
    if H_in.shape[1] != M1.shape[0] or M1.shape != M2.shape:
        raise ShapeError(f"H_in {H_in.shape}, M1 {M1.shape}, M2 {M2.shape}")
    mask = sp.csr_matrix(two_hop_mask)
    mask.sort_indices()
    return _attention(H_in, M1, M2, mask, slope)[0]


def two_hop_aggregate(H_prev, alpha, W2, act: str = "tanh"):
    if H_prev.shape[1] != W2.shape[0]:
        raise ShapeError(f"H_prev {H_prev.shape} vs W2 {W2.shape}")
    return apply_activation(spmm(alpha, H_prev @ W2), act)


def gate_combine(H1, H2, gate_M, gate_b, gate_act: str = "relu"):
    if H1.shape != H2.shape:
        raise ShapeError(f"gate inputs differ: {H1.shape} vs {H2.shape}")
    g = apply_activation(H2 @ gate_M.T + gate_b, gate_act)
    return g * H1 + (1.0 - g) * H2, g


# ---------------------------------------------------------------- forward

@dataclass
class HopTrace:
    hop: int
    alpha: sp.csr_matrix
    P: np.ndarray
    Q: np.ndarray
    scores: np.ndarray  # pre-LeakyReLU, in mask CSR order
    rows: np.ndarray
    cols: np.ndarray
    U: np.ndarray  # X @ W_m
    Z: np.ndarray
    H: np.ndarray
    gate_pre: np.ndarray | None = None
    gate: np.ndarray | None = None
    combined_before: np.ndarray | None = None


@dataclass
class LayerTrace:
    X: np.ndarray
    U1: np.ndarray
    Z1: np.ndarray
    H1: np.ndarray
    hops: list
    H: np.ndarray
    normalized: np.ndarray
    norms: np.ndarray


@dataclass
class ForwardTrace:
    config: ModelConfig
    H0: np.ndarray
    layers: list
    Hfinal: np.ndarray

    @property
    def layer_outputs(self) -> list:
        return [lt.H for lt in self.layers]

    @property
    def normalized_outputs(self) -> list:
        return [lt.normalized for lt in self.layers]

    def alphas(self, layer: int) -> list:
        return [h.alpha for h in self.layers[layer - 1].hops]


def _layer_matrices(structure: NeighborStructure, config: ModelConfig):
    if config.variant == "mix" and config.hops >= 2:
        return structure.union_adjacency(config.hops), []
    if not config.uses_attention:
        return structure.adj_norm, []
    if config.hops > structure.max_hops:
        raise ConfigurationError(
            f"model needs {config.hops} hops but structure has {structure.max_hops}")
    return structure.adj_norm, [(m, structure.attention_mask(m)) for m in range(2, config.hops + 1)]


def forward(params: ParameterSet, structure: NeighborStructure, config: ModelConfig) -> ForwardTrace:
    n = structure.num_entities
    check_params(params, config, n)
    act = config.aggregation_activation
    adj, masks = _layer_matrices(structure, config)
    X = params["H0"]
    layers = []
    for l in range(1, config.num_layers + 1):
        U1 = X @ params[f"layer{l}.W"]
        Z1 = spmm(adj, U1)
        H1 = apply_activation(Z1, act)
        hops = []
        G = H1
        for m, mask in masks:
            p = f"layer{l}.hop{m}"
            if config.variant == "gat_shared":
                M1 = M2 = params[f"{p}.M"]
            else:
                M1, M2 = params[f"{p}.M1"], params[f"{p}.M2"]
            alpha, P, Q, s, rows, cols = _attention(X, M1, M2, mask, config.leaky_slope)
            U = X @ params[f"{p}.W"]
            Z = spmm(alpha, U)
            Hm = apply_activation(Z, act)
            ht = HopTrace(m, alpha, P, Q, s, rows, cols, U, Z, Hm)
            if config.uses_gate:
                ht.combined_before = G
                ht.gate_pre = Hm @ params[f"{p}.gate_M"].T + params[f"{p}.gate_b"]
                ht.gate = apply_activation(ht.gate_pre, config.gate_activation)
                G = ht.gate * G + (1.0 - ht.gate) * Hm
            else:
                G = G + Hm
            hops.append(ht)
        normalized, norms = l2_normalize_rows(G)
        layers.append(LayerTrace(X, U1, Z1, H1, hops, G, normalized, norms))
        X = G
    Hfinal = np.concatenate([lt.normalized for lt in layers], axis=1)
    return ForwardTrace(config, params["H0"], layers, Hfinal)


# ---------------------------------------------------------------- backward

def backward(trace: ForwardTrace, structure: NeighborStructure, params: ParameterSet,
             dL_dHfinal: np.ndarray, dL_dHlayers: dict | None = None) -> dict:
    """Reverse-mode gradients of a scalar loss for every parameter.

    ``dL_dHfinal`` is the upstream gradient w.r.t. the concatenated
    representation; ``dL_dHlayers`` optionally adds gradients w.r.t. the
    unnormalized per-layer outputs (keyed by 1-based layer index).
    """
    config = trace.config
    check_params(params, config, structure.num_entities)
    if dL_dHfinal.shape != trace.Hfinal.shape:
        raise ConfigurationError(f"upstream gradient {dL_dHfinal.shape} vs Hfinal {trace.Hfinal.shape}")
    if trace.H0 is not params["H0"] and trace.H0.shape != params["H0"].shape:
        raise ConfigurationError("trace was produced for different parameters")
    act = config.aggregation_activation
    adj, _ = _layer_matrices(structure, config)
    adj_t = adj.T.tocsr()
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    dL_dHlayers = dL_dHlayers or {}

    offsets = np.cumsum([0] + config.layer_dims[1:])
    dX_next = None
    for l in range(config.num_layers, 0, -1):
        lt = trace.layers[l - 1]
        dN = dL_dHfinal[:, offsets[l - 1]:offsets[l]]
        dG = l2_normalize_rows_backward(dN, lt.normalized, lt.norms)
        if dX_next is not None:
            dG = dG + dX_next
        if l in dL_dHlayers:
            dG = dG + dL_dHlayers[l]
        X = lt.X
        dX = np.zeros_like(X)
        for ht in reversed(lt.hops):
            p = f"layer{l}.hop{ht.hop}"
            if config.uses_gate:
                g = ht.gate
                dg = dG * (ht.combined_before - ht.H)
                dHm = dG * (1.0 - g)
                dG = dG * g
                da = dg * activation_grad(ht.gate_pre, g, config.gate_activation)
                gate_M = params[f"{p}.gate_M"]
                grads[f"{p}.gate_M"] += da.T @ ht.H
                grads[f"{p}.gate_b"] += da.sum(axis=0, keepdims=True)
                dHm = dHm + da @ gate_M
            else:
                dHm = dG
            dZ = dHm * activation_grad(ht.Z, ht.H, act)
            alpha = ht.alpha
            # Z = alpha U
            dU = spmm(alpha.T.tocsr(), dZ)
            d_alpha = rowwise_dot(dZ, ht.U, ht.rows, ht.cols)
            W = params[f"{p}.W"]
            grads[f"{p}.W"] += X.T @ dU
            dX += dU @ W.T
            dc = segment_softmax_backward(alpha.data, d_alpha, alpha.indptr)
            ds = dc * np.where(ht.scores >= 0.0, 1.0, config.leaky_slope)
            S = sp.csr_matrix((ds, alpha.indices, alpha.indptr), shape=alpha.shape)
            dP = spmm(S, ht.Q)
            dQ = spmm(S.T.tocsr(), ht.P)
            if config.variant == "gat_shared":
                M = params[f"{p}.M"]
                grads[f"{p}.M"] += X.T @ (dP + dQ)
                dX += (dP + dQ) @ M.T
            else:
                M1, M2 = params[f"{p}.M1"], params[f"{p}.M2"]
                grads[f"{p}.M1"] += X.T @ dP
                grads[f"{p}.M2"] += X.T @ dQ
                dX += dP @ M1.T + dQ @ M2.T
        dH1 = dG
        dZ1 = dH1 * activation_grad(lt.Z1, lt.H1, act)
        dU1 = spmm(adj_t, dZ1)
        W = params[f"layer{l}.W"]
        grads[f"layer{l}.W"] += X.T @ dU1
        dX += dU1 @ W.T
        dX_next = dX
    grads["H0"] += dX_next
    return grads


# ---------------------------------------------------------------- representations

def select_representation(trace: ForwardTrace, selector: str) -> np.ndarray:
    """``combined``, ``input`` or ``layer<l>`` / ``layer(l)``."""
    if selector == "combined":
        return trace.Hfinal
    if selector == "input":
        return trace.H0
    match = re.fullmatch(r"layer\(?(\d+)\)?", selector)
    if match:
        l = int(match.group(1))
        if not 1 <= l <= len(trace.layers):
            raise ConfigurationError(f"no layer {l}; model has {len(trace.layers)}")
        return trace.layers[l - 1].normalized
    raise ConfigurationError(f"unknown layer selector {selector!r}")


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, params: ParameterSet, config: ModelConfig, extra: dict | None = None) -> None:
    header = {"model": config.to_dict(), "num_entities": int(params["H0"].shape[0])}
    if extra:
        header.update(extra)
    save_matrices(path, params, header)


def load_checkpoint(path, expected: ModelConfig | None = None, num_entities: int | None = None):
    """Return ``(params, model_config, header)``; dimension mismatches raise."""
    params, header = load_matrices(path)
    try:
        config = ModelConfig(**header["model"])
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path}: checkpoint has no usable model config ({exc})") from None
    n = header.get("num_entities", params.get("H0", np.empty((0, 0))).shape[0])
    check_params(params, config, n)
    if expected is not None:
        if (expected.layer_dims != config.layer_dims or expected.hops != config.hops
                or expected.variant != config.variant):
            raise ConfigurationError(
                f"checkpoint model (dims {config.layer_dims}, hops {config.hops}, {config.variant}) "
                f"does not match config (dims {expected.layer_dims}, hops {expected.hops}, {expected.variant})")
    if num_entities is not None and n != num_entities:
        raise ConfigurationError(f"checkpoint has {n} entities, graph has {num_entities}")
    return params, config, header
