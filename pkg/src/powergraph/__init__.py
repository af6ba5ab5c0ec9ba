"""Graph-based multi-agent power control for cellular networks.

A desk-scale simulator plus trainer: base-station agents with a shared
graph-convolutional policy pick transmit powers against a spectral
efficiency + load-balancing objective, trained with single-step REINFORCE.
Four communication-graph strategies are available, including end-to-end
learned edge weights via an auxiliary network over the line graph.
"""

from .autodiff import (ParamStore, Tape, Tensor, backward, load_checkpoint,
                       save_checkpoint)
from .env import GridSpec, PowerControlEnv, UserSet, observe, sample_users
from .graphs import (CommGraph, EdgeFeature, LineGraph, binary_edges,
                     build_line_graph, candidate_edges, distance_edges,
                     edge_features, relation_edges)
from .policies import (AuxGnnConfig, GnnPolicyConfig, MlpConfig, Policy,
                       PolicyOutput, aux_forward, composed_forward, gnn_forward,
                       mlp_forward, sample_actions)
from .radio import CategoryProfile, RadioParams, ber_mqam, path_loss_db, select_mcs
from .scenario import Scenario, build_scenario, load_scenario, resolve_config
from .topology import NetworkTopology, generate_topology, load_topology, save_topology
from .training import TrainConfig, evaluate, reinforce_update, run_episode, train

__version__ = "0.1.0"
