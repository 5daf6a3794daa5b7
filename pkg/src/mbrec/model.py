"""Model forward pass: embeddings, propagation, fusion, attention refinement.

Users, items and behavior types all carry d-dimensional embeddings. Each
propagation layer mixes node embeddings across the union of the per-behavior
bipartite graphs, gating every hop elementwise by the embedding of the
behavior type that produced the edge; behavior-type embeddings themselves
are updated through a degree-scaled linear map. Layer outputs are fused with
a learned softmax over layers, then refined by a per-node attention over
behavior types before scoring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import TrainConfig
from .data import NUM_BEHAVIORS
from .graph import BehaviorGraph

LEAKY_SLOPE = 0.2
ACTIVATION_IDS = {"identity": 0, "relu": 1, "leaky-relu": 2, "tanh": 3}
NORMAL_STD = 0.01


def activation_fn(name: str):
    if name == "identity":
        return lambda x: x
    if name == "relu":
        return torch.relu
    if name == "leaky-relu":
        return lambda x: torch.nn.functional.leaky_relu(x, LEAKY_SLOPE)
    if name == "tanh":
        return torch.tanh
    raise KeyError(f"unknown activation {name!r}")


@dataclass
class ParameterSet:
    """All model tensors. ``W_type`` rows follow the (view, add, purchase) order."""

    P: torch.Tensor        # [M, d] user embeddings
    Q: torch.Tensor        # [N, d] item embeddings
    W_type: torch.Tensor   # [K, d] behavior-type embeddings
    W_beh: torch.Tensor    # [K, d, d], or [L, K, d, d] with per-layer maps
    theta: torch.Tensor    # [L + 1] layer-fusion logits
    W_fus: torch.Tensor    # [d, d] refinement map, shared by users and items
    W_int: torch.Tensor    # [d] item-intensity projection
    W_pre: torch.Tensor    # [K, d] per-behavior prediction vectors

    def named(self) -> list:
        return [
            ("P", self.P),
            ("Q", self.Q),
            ("W_type", self.W_type),
            ("W_beh", self.W_beh),
            ("theta", self.theta),
            ("W_fus", self.W_fus),
            ("W_int", self.W_int),
            ("W_pre", self.W_pre),
        ]

    def trainable(self) -> list:
        return [(name, t) for name, t in self.named() if t.requires_grad]

    @property
    def num_users(self) -> int:
        return self.P.shape[0]

    @property
    def num_items(self) -> int:
        return self.Q.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.P.shape[1]

    @property
    def num_layers(self) -> int:
        return self.theta.shape[0] - 1

    def clone(self) -> "ParameterSet":
        copies = {}
        for name, t in self.named():
            c = t.detach().clone()
            c.requires_grad_(t.requires_grad)
            copies[name] = c
        return ParameterSet(**copies)

    def to_dtype(self, dtype) -> "ParameterSet":
        copies = {}
        for name, t in self.named():
            c = t.detach().to(dtype=dtype).clone()
            c.requires_grad_(t.requires_grad)
            copies[name] = c
        return ParameterSet(**copies)


def init_params(
    cfg: TrainConfig,
    num_users: int,
    num_items: int,
    dtype=torch.float32,
) -> ParameterSet:
    """Seeded initialization with a fixed draw order.

    P, Q and the type embeddings are small-variance normals; the linear maps
    use Xavier-uniform ranges; fusion logits start at zero (uniform layer
    weights) and the intensity projection starts at the all-1/d vector.
    """
    d = cfg.embed_dim
    k = cfg.num_behaviors
    layers = cfg.effective_layers
    gen = torch.Generator(device="cpu")
    gen.manual_seed(cfg.seed)

    def normal(*shape):
        t = torch.empty(*shape, dtype=dtype)
        t.normal_(0.0, NORMAL_STD, generator=gen)
        return t

    def xavier(*shape, fan_in, fan_out):
        bound = (6.0 / (fan_in + fan_out)) ** 0.5
        t = torch.empty(*shape, dtype=dtype)
        t.uniform_(-bound, bound, generator=gen)
        return t

    P = normal(num_users, d)
    Q = normal(num_items, d)
    W_type = normal(k, d)
    if cfg.per_layer_wbeh:
        W_beh = xavier(max(layers, 1), k, d, d, fan_in=d, fan_out=d)
    else:
        W_beh = xavier(k, d, d, fan_in=d, fan_out=d)
    theta = torch.zeros(layers + 1, dtype=dtype)
    W_fus = xavier(d, d, fan_in=d, fan_out=d)
    W_int = torch.full((d,), 1.0 / d, dtype=dtype)
    W_pre = xavier(k, d, fan_in=d, fan_out=1)

    for t in (P, Q, W_type, W_beh, theta, W_fus, W_pre):
        t.requires_grad_(True)
    W_int.requires_grad_(cfg.wint_through_gradient)
    return ParameterSet(P, Q, W_type, W_beh, theta, W_fus, W_int, W_pre)


@dataclass
class GraphTensors:
    """Edge lists and degree tables of a :class:`BehaviorGraph` as torch tensors."""

    num_users: int
    num_items: int
    edge_user: list          # per behavior, int64 [E_k]
    edge_item: list
    user_deg: torch.Tensor   # [K, M] per-behavior user degrees
    item_deg: torch.Tensor   # [K, N]
    edge_norm_mean: tuple    # per behavior, mean of 1 / (deg_k(u) + deg_k(v))

    @classmethod
    def from_graph(cls, graph: BehaviorGraph) -> "GraphTensors":
        edge_user = [torch.from_numpy(u).long() for u in graph.edge_user]
        edge_item = [torch.from_numpy(v).long() for v in graph.edge_item]
        return cls(
            num_users=graph.num_users,
            num_items=graph.num_items,
            edge_user=edge_user,
            edge_item=edge_item,
            user_deg=torch.from_numpy(graph.user_deg).long(),
            item_deg=torch.from_numpy(graph.item_deg).long(),
            edge_norm_mean=tuple(
                graph.edge_norm_mean(k) for k in range(NUM_BEHAVIORS)
            ),
        )

    @property
    def user_deg_total(self) -> torch.Tensor:
        return self.user_deg.sum(dim=0)

    @property
    def item_deg_total(self) -> torch.Tensor:
        return self.item_deg.sum(dim=0)


def _aggregate(
    side_states: torch.Tensor,
    w_layer: torch.Tensor,
    gt: GraphTensors,
    onto_users: bool,
    acg: str,
) -> torch.Tensor:
    """One half of a propagation step: gather neighbor (x) type products."""
    if onto_users:
        n_out = gt.num_users
        out_idx, src_idx = gt.edge_user, gt.edge_item
        out_deg, src_deg = gt.user_deg_total, gt.item_deg_total
    else:
        n_out = gt.num_items
        out_idx, src_idx = gt.edge_item, gt.edge_user
        out_deg, src_deg = gt.item_deg_total, gt.user_deg_total

    d = side_states.shape[1]
    agg = side_states.new_zeros(n_out, d)
    for k in range(NUM_BEHAVIORS):
        if out_idx[k].numel() == 0:
            continue
        contrib = side_states[src_idx[k]] * w_layer[k]
        if acg == "sym":
            norm = (
                out_deg[out_idx[k]].to(side_states.dtype)
                * src_deg[src_idx[k]].to(side_states.dtype)
            ).clamp(min=1.0).rsqrt()
            contrib = contrib * norm.unsqueeze(1)
        agg = agg.index_add(0, out_idx[k], contrib)
    if acg == "mean":
        denom = out_deg.to(side_states.dtype).clamp(min=1.0).unsqueeze(1)
        agg = agg / denom
    return agg


@dataclass
class LayerStack:
    """Per-layer states, index 0 being the raw embeddings."""

    P: list
    Q: list
    W: list


def run_propagation(params: ParameterSet, gt: GraphTensors, cfg: TrainConfig) -> LayerStack:
    act = activation_fn(cfg.activation)
    layers = cfg.effective_layers
    stack = LayerStack(P=[params.P], Q=[params.Q], W=[params.W_type])
    if layers == 0:
        return stack

    user_mask = (gt.user_deg_total > 0).unsqueeze(1)
    item_mask = (gt.item_deg_total > 0).unsqueeze(1)
    for layer in range(layers):
        p_l, q_l, w_l = stack.P[-1], stack.Q[-1], stack.W[-1]
        p_agg = _aggregate(q_l, w_l, gt, onto_users=True, acg=cfg.acg)
        q_agg = _aggregate(p_l, w_l, gt, onto_users=False, acg=cfg.acg)
        # nodes with no edges at all carry their previous state forward
        p_next = torch.where(user_mask, p_agg, p_l)
        q_next = torch.where(item_mask, q_agg, q_l)

        if cfg.edge_update_enabled:
            beh = params.W_beh[layer] if cfg.per_layer_wbeh else params.W_beh
            mapped = torch.einsum("kij,kj->ki", beh, w_l)
            scale = torch.tensor(
                gt.edge_norm_mean, dtype=w_l.dtype
            ).unsqueeze(1)
            updated = act(scale * mapped)
            # behaviors with no edges keep their current embedding
            has_edges = torch.tensor(
                [gt.edge_user[k].numel() > 0 for k in range(NUM_BEHAVIORS)]
            ).unsqueeze(1)
            w_next = torch.where(has_edges, updated, w_l)
        else:
            w_next = w_l
        stack.P.append(p_next)
        stack.Q.append(q_next)
        stack.W.append(w_next)
    return stack


@dataclass
class FusedReps:
    P: torch.Tensor
    Q: torch.Tensor
    W: torch.Tensor
    alpha: torch.Tensor


def fuse_layers(stack: LayerStack, theta: torch.Tensor) -> FusedReps:
    """Softmax-weighted sum over layer states, one shared weight per layer."""
    alpha = torch.softmax(theta, dim=0)
    fuse = lambda states: sum(a * s for a, s in zip(alpha, states))
    return FusedReps(P=fuse(stack.P), Q=fuse(stack.Q), W=fuse(stack.W), alpha=alpha)


def behavior_attention(
    reps: torch.Tensor,
    w_types: torch.Tensor,
    counts: torch.Tensor,
) -> tuple:
    """Count-weighted attention of each node over behavior-type embeddings.

    counts is [K, n]; behaviors a node never interacted under are excluded.
    Returns (context [n, d], weights [n, K]); nodes with no edges get a zero
    context vector and all-zero weights.
    """
    d = reps.shape[1]
    logits = (reps @ w_types.T) / (d ** 0.5)  # [n, K]
    cnt = counts.T.to(reps.dtype)             # [n, K]
    valid = cnt > 0
    masked = torch.where(valid, logits, logits.new_tensor(float("-inf")))
    m = masked.max(dim=1, keepdim=True).values
    m = torch.where(torch.isfinite(m), m, torch.zeros_like(m))
    scores = cnt * torch.exp(logits - m) * valid.to(reps.dtype)
    denom = scores.sum(dim=1, keepdim=True)
    weights = scores / denom.clamp(min=torch.finfo(reps.dtype).tiny)
    context = weights @ w_types
    return context, weights


@dataclass
class ModelOutput:
    user_final: torch.Tensor   # [M, d]
    item_final: torch.Tensor   # [N, d]
    alpha: torch.Tensor        # [L + 1]
    user_attention: torch.Tensor  # [M, K], zero rows for edge-less users
    item_attention: torch.Tensor  # [N, K]
    diagnostics: dict = field(default_factory=dict)


def forward(params: ParameterSet, gt: GraphTensors, cfg: TrainConfig) -> ModelOutput:
    act = activation_fn(cfg.activation)
    stack = run_propagation(params, gt, cfg)
    fused = fuse_layers(stack, params.theta)

    if cfg.attention_enabled:
        u_ctx, u_att = behavior_attention(fused.P, fused.W, gt.user_deg)
        v_ctx, v_att = behavior_attention(fused.Q, fused.W, gt.item_deg)
    else:
        u_ctx = torch.ones_like(fused.P)
        v_ctx = torch.ones_like(fused.Q)
        u_att = fused.P.new_zeros(gt.num_users, NUM_BEHAVIORS)
        v_att = fused.Q.new_zeros(gt.num_items, NUM_BEHAVIORS)

    user_final = act((fused.P * u_ctx) @ params.W_fus.T)
    item_final = act((fused.Q * v_ctx) @ params.W_fus.T)
    diagnostics = {
        "isolated_users": int((gt.user_deg_total == 0).sum()),
        "isolated_items": int((gt.item_deg_total == 0).sum()),
        "empty_behaviors": sum(
            1 for k in range(NUM_BEHAVIORS) if gt.edge_user[k].numel() == 0
        ),
    }
    return ModelOutput(user_final, item_final, fused.alpha, u_att, v_att, diagnostics)


def min_preactivation_gap(params: ParameterSet, gt: GraphTensors, cfg: TrainConfig) -> float:
    """Smallest |x| fed to the nonlinearity anywhere in the forward pass.

    Piecewise-linear activations are non-differentiable at zero; callers that
    compare analytic and numeric gradients use this to keep perturbations
    away from the kink.
    """
    gaps = []
    with torch.no_grad():
        stack = run_propagation(params, gt, cfg)
        if cfg.edge_update_enabled:
            for layer in range(cfg.effective_layers):
                w_l = stack.W[layer]
                beh = params.W_beh[layer] if cfg.per_layer_wbeh else params.W_beh
                mapped = torch.einsum("kij,kj->ki", beh, w_l)
                scale = torch.tensor(gt.edge_norm_mean, dtype=w_l.dtype).unsqueeze(1)
                gaps.append((scale * mapped).abs().min())
        fused = fuse_layers(stack, params.theta)
        if cfg.attention_enabled:
            u_ctx, _ = behavior_attention(fused.P, fused.W, gt.user_deg)
            v_ctx, _ = behavior_attention(fused.Q, fused.W, gt.item_deg)
        else:
            u_ctx = torch.ones_like(fused.P)
            v_ctx = torch.ones_like(fused.Q)
        gaps.append(((fused.P * u_ctx) @ params.W_fus.T).abs().min())
        gaps.append(((fused.Q * v_ctx) @ params.W_fus.T).abs().min())
    return float(min(gaps)) if gaps else float("inf")


def predict_scores(
    output: ModelOutput, w_pre: torch.Tensor, behavior: int
) -> torch.Tensor:
    """Score every (user, item) pair for one behavior; unbounded values."""
    return (output.user_final * w_pre[behavior]) @ output.item_final.T


def predict_pairs(
    output: ModelOutput,
    w_pre: torch.Tensor,
    behavior: int,
    users: torch.Tensor,
    items: torch.Tensor,
) -> torch.Tensor:
    """Scores for aligned (users, items) index vectors under one behavior."""
    u = output.user_final[users]
    v = output.item_final[items]
    return (u * v) @ w_pre[behavior]
