"""Gated graph neural network encoder over code graphs.

Per timestep and edge type, each sender's state passes through a linear
map; incoming messages are summed per receiver and fed to a shared GRU.
A gated weighted sum of final node states yields the global graph state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nncore as nn
from .codegraph import ALL_EDGE_TYPES, CodeGraph
from .vocab import Vocab


@dataclass
class GgnnConfig:
    hidden_dim: int = 256
    timesteps: int = 4
    tie_timesteps: bool = False
    edge_types: tuple = field(default=ALL_EDGE_TYPES)


@dataclass
class EncodedGraph:
    h: nn.Tensor      # (|V|, d_h) final node representations
    x: nn.Tensor      # (|V|, d_h) node embeddings
    r_g: nn.Tensor    # (1, d_h) global graph state
    graph: CodeGraph


class GraphEncoder:
    def __init__(
        self,
        store: nn.ParamStore,
        config: GgnnConfig,
        embedding: nn.Tensor,
        prefix: str = "ggnn",
    ):
        self.config = config
        self.embedding = embedding
        d = config.hidden_dim
        n_steps = 1 if config.tie_timesteps else max(config.timesteps, 1)
        self.edge_w: dict[tuple[str, int], tuple[nn.Tensor, nn.Tensor]] = {}
        for etype in config.edge_types:
            for t in range(n_steps):
                w = store.add(f"{prefix}.edge.{etype}.{t}.W", (d, d))
                b = store.add(f"{prefix}.edge.{etype}.{t}.b", (1, d), init="zeros")
                self.edge_w[(etype, t)] = (w, b)
        self.gru = nn.GRUCell(store, f"{prefix}.gru", d, d)
        self.W_i = store.add(f"{prefix}.readout.W_i", (2 * d, 1))
        self.W_j = store.add(f"{prefix}.readout.W_j", (d, d))

    def _edge_fn(self, etype: str, t: int) -> tuple[nn.Tensor, nn.Tensor]:
        if self.config.tie_timesteps:
            t = 0
        return self.edge_w[(etype, t)]

    def embed_nodes(self, graph: CodeGraph, vocab: Vocab) -> nn.Tensor:
        ids = np.array([vocab.id_of(n.surface) for n in graph.nodes], dtype=np.intp)
        return nn.gather_rows(self.embedding, ids)

    def message_pass_step(self, states: nn.Tensor, graph: CodeGraph, t: int) -> nn.Tensor:
        num_nodes = len(graph.nodes)
        pieces = []
        for etype in self.config.edge_types:
            pairs = graph.edges.get(etype, [])
            if not pairs:
                continue
            src = np.array([p[0] for p in pairs], dtype=np.intp)
            dst = np.array([p[1] for p in pairs], dtype=np.intp)
            w, b = self._edge_fn(etype, t)
            msgs = nn.gather_rows(states, src) @ w + b
            pieces.append(nn.scatter_add_rows(msgs, dst, num_nodes))
        if pieces:
            agg = pieces[0]
            for p in pieces[1:]:
                agg = agg + p
        else:
            agg = nn.Tensor(np.zeros((num_nodes, self.config.hidden_dim)))
        return self.gru(agg, states)

    def graph_readout(self, h: nn.Tensor, x: nn.Tensor) -> nn.Tensor:
        gate = nn.sigmoid(nn.concat([h, x], axis=1) @ self.W_i)  # (|V|, 1)
        weighted = gate * (h @ self.W_j)
        return nn.tsum(weighted, axis=0, keepdims=True)

    def encode(self, graph: CodeGraph, vocab: Vocab) -> EncodedGraph:
        x = self.embed_nodes(graph, vocab)
        h = x
        for t in range(self.config.timesteps):
            h = self.message_pass_step(h, graph, t)
        return EncodedGraph(h=h, x=x, r_g=self.graph_readout(h, x), graph=graph)
