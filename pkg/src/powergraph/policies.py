"""Policy parameterizations.

All strategies share one interface: a forward pass mapping the [V, F]
node-feature matrix to per-agent action logits. The graph strategies run
k rounds of

    h' = act(W1 h + W2 AGG({e[u, v] * h_u for in-neighbors u}) + bias)

with shared weight matrices across agents; the learned strategy first
runs the auxiliary network over the line graph to produce the edge
weights, on the same tape, so one backward pass reaches both parameter
sets. The MLP baseline applies the same shared per-agent network without
any message passing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .graphs import CommGraph, LineGraph

_ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid}


@dataclass(frozen=True)
class GnnPolicyConfig:
    layers: int = 2
    hidden: int = 64
    activation: str = "relu"
    agg: str = "mean"

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden dim must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class AuxGnnConfig:
    layers: int = 2
    hidden: int = 16
    activation: str = "relu"
    input_dim: int = 3
    distance_scale_m: float = 1000.0


@dataclass(frozen=True)
class MlpConfig:
    layers: int = 2
    hidden: int = 64
    activation: str = "relu"


@dataclass
class PolicyOutput:
    probs: np.ndarray                # [V, A], rows sum to 1
    logits: Tensor                   # [V, A], differentiable
    actions: np.ndarray = None       # [V] indices, set by sample_actions
    log_prob: Tensor = None          # scalar, differentiable
    entropy: Tensor = None           # scalar, differentiable


def _uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _row_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_gnn_params(store: ParamStore, rng, feature_dim, num_actions,
                    cfg: GnnPolicyConfig, prefix="policy", head="head"):
    dims = [feature_dim] + [cfg.hidden] * cfg.layers
    for l in range(cfg.layers):
        fan_in, out = dims[l], dims[l + 1]
        store.add(f"{prefix}.layer{l}.W1", _uniform_init(rng, fan_in, (fan_in, out)))
        store.add(f"{prefix}.layer{l}.W2", _uniform_init(rng, fan_in, (fan_in, out)))
        store.add(f"{prefix}.layer{l}.bias", np.zeros(out))
    store.add(f"{head}.W", _uniform_init(rng, cfg.hidden, (cfg.hidden, num_actions)))
    store.add(f"{head}.bias", np.zeros(num_actions))


def init_mlp_params(store: ParamStore, rng, feature_dim, num_actions, cfg: MlpConfig):
    dims = [feature_dim] + [cfg.hidden] * cfg.layers
    for l in range(cfg.layers):
        store.add(f"mlp.layer{l}.W", _uniform_init(rng, dims[l], (dims[l], dims[l + 1])))
        store.add(f"mlp.layer{l}.bias", np.zeros(dims[l + 1]))
    store.add("mlp.head.W", _uniform_init(rng, cfg.hidden, (cfg.hidden, num_actions)))
    store.add("mlp.head.bias", np.zeros(num_actions))


def gnn_forward(obs, weights, mask, store: ParamStore, cfg: GnnPolicyConfig,
                prefix="policy", head="head") -> PolicyOutput:
    """k conv rounds over the communication graph, then the action head.

    `weights` is the dense [V, V] edge-weight matrix (Tensor for learned
    edges, array otherwise); `mask` is the structural edge pattern.
    """
    obs = ad.as_tensor(obs)
    if obs.data.ndim != 2:
        raise ad.ShapeMismatchError(f"observations must be [V, F], got {tuple(obs.shape)}")
    w1 = store[f"{prefix}.layer0.W1"]
    if obs.shape[1] != w1.shape[0]:
        raise ad.ShapeMismatchError(
            f"feature dim {obs.shape[1]} does not match {prefix}.layer0.W1 "
            f"fan-in {w1.shape[0]}")
    act = _ACTIVATIONS[cfg.activation]
    h = obs
    for l in range(cfg.layers):
        own = ad.matmul(h, store[f"{prefix}.layer{l}.W1"])
        agg = ad.neighbor_agg(h, weights, mask=mask, mode=cfg.agg)
        msg = ad.matmul(agg, store[f"{prefix}.layer{l}.W2"])
        h = act(ad.add_bias(ad.add(own, msg), store[f"{prefix}.layer{l}.bias"]))
    logits = ad.add_bias(ad.matmul(h, store[f"{head}.W"]), store[f"{head}.bias"])
    return PolicyOutput(probs=_row_softmax(logits.data), logits=logits)


def aux_forward(line_graph: LineGraph, store: ParamStore, cfg: AuxGnnConfig):
    """Edge weights in (0, 1) for the base graph from its line graph.

    Returns a dense [V, V] Tensor with sigmoid outputs scattered onto the
    directed candidate edges; fully differentiable into the aux parameters.
    """
    n_base = line_graph.base_node_count
    if line_graph.node_count == 0:
        return Tensor(np.zeros((n_base, n_base)))
    feats = line_graph.feature_matrix()
    feats = feats.copy()
    feats[:, 0] /= cfg.distance_scale_m   # meters -> network-scale units
    act = _ACTIVATIONS[cfg.activation]
    h = Tensor(feats)
    adj = line_graph.adjacency
    mask = adj != 0.0
    for l in range(cfg.layers):
        own = ad.matmul(h, store[f"aux.layer{l}.W1"])
        agg = ad.neighbor_agg(h, adj, mask=mask, mode="mean")
        msg = ad.matmul(agg, store[f"aux.layer{l}.W2"])
        h = act(ad.add_bias(ad.add(own, msg), store[f"aux.layer{l}.bias"]))
    raw = ad.add_bias(ad.matmul(h, store["aux.head.W"]), store["aux.head.bias"])
    w = ad.sigmoid(ad.reshape(raw, (line_graph.node_count,)))
    return ad.scatter_edges(w, line_graph.edges, n_base)


def composed_forward(obs, line_graph: LineGraph, candidate_mask, store: ParamStore,
                     policy_cfg: GnnPolicyConfig, aux_cfg: AuxGnnConfig) -> PolicyOutput:
    """Learned-edges forward: aux network, then the policy conv stack.

    Both run under the caller's tape, so backward() updates both
    parameter sets jointly.
    """
    weights = aux_forward(line_graph, store, aux_cfg)
    return gnn_forward(obs, weights, candidate_mask, store, policy_cfg)


def mlp_forward(obs, store: ParamStore, cfg: MlpConfig) -> PolicyOutput:
    """Shared per-agent MLP on local features; no message passing."""
    obs = ad.as_tensor(obs)
    w0 = store["mlp.layer0.W"]
    if obs.data.ndim != 2 or obs.shape[1] != w0.shape[0]:
        raise ad.ShapeMismatchError(
            f"feature dim {tuple(obs.shape)} does not match mlp.layer0.W "
            f"fan-in {w0.shape[0]}")
    act = _ACTIVATIONS[cfg.activation]
    h = obs
    for l in range(cfg.layers):
        h = act(ad.add_bias(ad.matmul(h, store[f"mlp.layer{l}.W"]),
                            store[f"mlp.layer{l}.bias"]))
    logits = ad.add_bias(ad.matmul(h, store["mlp.head.W"]), store["mlp.head.bias"])
    return PolicyOutput(probs=_row_softmax(logits.data), logits=logits)


def sample_actions(output: PolicyOutput, rng, mode="sample"):
    """Draw one action per agent and attach the joint log-prob/entropy.

    `sample` draws per-agent categoricals; `greedy` takes the argmax with
    ties resolved to the lowest index. Recorded on the active tape.
    """
    probs = output.probs
    if mode == "greedy":
        actions = np.argmax(probs, axis=1)
    elif mode == "sample":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        u = rng.uniform(size=probs.shape[0])
        cdf = np.cumsum(probs, axis=1)
        cdf[:, -1] = 1.0   # guard against rounding at the top end
        actions = (u[:, None] > cdf).sum(axis=1)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    actions = actions.astype(np.intp)
    output.actions = actions
    output.log_prob = ad.softmax_logprob(output.logits, actions)
    output.entropy = ad.softmax_entropy(output.logits)
    return actions


class Policy:
    """One strategy bound to a scenario's graphs and dimensions."""

    def __init__(self, strategy, scenario, store: ParamStore = None):
        self.strategy = strategy
        self.scenario = scenario
        cfg = scenario.cfg
        self.policy_cfg = GnnPolicyConfig(layers=cfg["policy.layers"],
                                          hidden=cfg["policy.hidden"],
                                          activation=cfg["policy.activation"],
                                          agg=cfg["policy.agg"])
        self.aux_cfg = AuxGnnConfig(layers=cfg["aux.layers"], hidden=cfg["aux.hidden"],
                                    distance_scale_m=cfg["aux.distance_scale_m"])
        self.mlp_cfg = MlpConfig(layers=cfg["mlp.layers"], hidden=cfg["mlp.hidden"])
        env = scenario.make_env()
        self.feature_dim = env.feature_dim
        self.num_actions = env.num_actions
        self.store = store
        if strategy == "mlp":
            self.graph = None
            self.line_graph = None
        elif strategy == "learned":
            self.graph = scenario.comm_graph("learned")
            self.line_graph = scenario.line_graph()
        elif strategy in ("binary", "distance", "relation"):
            self.graph = scenario.comm_graph(strategy)
            self.line_graph = None
        else:
            raise ValueError(f"unknown strategy {strategy!r}")

    def init_params(self, rng) -> ParamStore:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        store = ParamStore()
        if self.strategy == "mlp":
            init_mlp_params(store, rng, self.feature_dim, self.num_actions, self.mlp_cfg)
        else:
            init_gnn_params(store, rng, self.feature_dim, self.num_actions, self.policy_cfg)
            if self.strategy == "learned":
                init_gnn_params(store, rng, self.aux_cfg.input_dim, 1, GnnPolicyConfig(
                    layers=self.aux_cfg.layers, hidden=self.aux_cfg.hidden,
                    activation=self.aux_cfg.activation), prefix="aux", head="aux.head")
        self.store = store
        return store

    def forward(self, obs) -> PolicyOutput:
        if self.store is None:
            raise RuntimeError("policy parameters not initialized or loaded")
        if self.strategy == "mlp":
            return mlp_forward(obs, self.store, self.mlp_cfg)
        if self.strategy == "learned":
            return composed_forward(obs, self.line_graph, self.graph.mask(),
                                    self.store, self.policy_cfg, self.aux_cfg)
        g = self.graph
        return gnn_forward(obs, g.adjacency, g.mask(), self.store, self.policy_cfg)
