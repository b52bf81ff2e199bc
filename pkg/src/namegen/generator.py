"""Keywords-guided graph-to-sequence name generator.

BiLSTM keyword encoding, dual selective gate between node and keyword
representations, LSTM decoder with dual attention and a pointer-style
copy channel over lexical graph nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nncore as nn
from .codegraph import CodeGraph
from .errors import DataError, TrainingError
from .ggnn import EncodedGraph, GgnnConfig, GraphEncoder
from .metrics import evaluate_corpus
from .vocab import Vocab


@dataclass
class GeneratorConfig:
    hidden_dim: int = 256
    timesteps: int = 4
    tie_timesteps: bool = False
    use_key_gate: bool = True
    use_graph_gate: bool = True
    use_dual_attention: bool = True
    max_decode_len: int = 8
    beam_width: int = 1

    def __post_init__(self):
        if self.hidden_dim % 2:
            raise ValueError("hidden_dim must be even (BiLSTM halves)")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


@dataclass
class TrainSettings:
    lr: float = 5e-4
    decay_factor: float = 0.95
    decay_interval: int = 3000
    batch_size: int = 32
    max_epochs: int = 30
    clip_norm: float = 5.0
    patience: int = 5
    eval_every: int = 1  # epochs between validation evaluations
    seed: int = 0


@dataclass
class GatedStates:
    h_nodes: nn.Tensor     # (|V|, d)
    h_keywords: nn.Tensor  # (n, d)


@dataclass
class StepOutput:
    hidden: nn.Tensor
    cell: nn.Tensor
    context: nn.Tensor
    node_attention: nn.Tensor  # (|V|, 1)
    p_gen: nn.Tensor           # (1, 1)


class GeneratorModel:
    def __init__(self, store: nn.ParamStore, vocab_size: int, config: GeneratorConfig):
        d = config.hidden_dim
        self.config = config
        self.vocab_size = vocab_size
        self.embedding = store.add("embed", (vocab_size, d), init="uniform")
        ggnn_cfg = GgnnConfig(hidden_dim=d, timesteps=config.timesteps,
                              tie_timesteps=config.tie_timesteps)
        self.encoder = GraphEncoder(store, ggnn_cfg, self.embedding, prefix="gen.ggnn")
        half = d // 2
        self.kw_fw = nn.LSTMCell(store, "gen.kw.fw", d, half)
        self.kw_bw = nn.LSTMCell(store, "gen.kw.bw", d, half)
        self.W_rk = store.add("gen.kw.W_rk", (2 * d, d))
        if config.use_graph_gate:
            self.W_k = store.add("gen.gate.W_k", (d, d))
            self.U_k = store.add("gen.gate.U_k", (d, d))
        if config.use_key_gate:
            self.W_g = store.add("gen.gate.W_g", (d, d))
            self.U_g = store.add("gen.gate.U_g", (d, d))
        self.cell = nn.LSTMCell(store, "gen.dec", d, d)
        self.W_init = store.add("gen.dec.W_init", (d, d))
        self.W_a = store.add("gen.attn.node.W_a", (2 * d, d))
        self.b_a = store.add("gen.attn.node.b_a", (1, d), init="zeros")
        self.Wp_a = store.add("gen.attn.node.Wp_a", (d, 1))
        if config.use_dual_attention:
            self.W_ak = store.add("gen.attn.kw.W_a", (2 * d, d))
            self.b_ak = store.add("gen.attn.kw.b_a", (1, d), init="zeros")
            self.Wp_ak = store.add("gen.attn.kw.Wp_a", (d, 1))
            self.U_c = store.add("gen.ctx.U_c", (2 * d, d))
        else:
            self.U_c = store.add("gen.ctx.U_c", (d, d))
        self.W_v = store.add("gen.out.W_v", (2 * d, d))
        self.b_v = store.add("gen.out.b_v", (1, d), init="zeros")
        self.Wp_v = store.add("gen.out.Wp_v", (d, vocab_size))
        self.bp_v = store.add("gen.out.bp_v", (1, vocab_size), init="zeros")
        self.W_s = store.add("gen.ptr.W_s", (d, 1))
        self.W_c = store.add("gen.ptr.W_c", (d, 1))
        self.W_x = store.add("gen.ptr.W_x", (d, 1))
        self.b_gen = store.add("gen.ptr.b_gen", (1, 1), init="zeros")

    # ---- keyword encoding ------------------------------------------------

    def encode_keywords(self, keyword_ids: list[int]) -> tuple[nn.Tensor, nn.Tensor]:
        if not keyword_ids:
            raise DataError("keyword list must be non-empty (use the sentinel)")
        n = len(keyword_ids)
        half = self.config.hidden_dim // 2
        x = nn.gather_rows(self.embedding, np.asarray(keyword_ids, dtype=np.intp))
        zeros = nn.Tensor(np.zeros((1, half)))
        fw_states: list[nn.Tensor] = []
        h, c = zeros, zeros
        for i in range(n):
            h, c = self.kw_fw(nn.gather_rows(x, [i]), h, c)
            fw_states.append(h)
        bw_states: list[nn.Tensor | None] = [None] * n
        h, c = zeros, zeros
        for i in reversed(range(n)):
            h, c = self.kw_bw(nn.gather_rows(x, [i]), h, c)
            bw_states[i] = h
        rows = [nn.concat([fw_states[i], bw_states[i]], axis=1) for i in range(n)]
        hk = rows[0] if n == 1 else nn.concat(rows, axis=0)
        r_k = nn.concat([nn.gather_rows(hk, [0]), nn.gather_rows(hk, [n - 1])], axis=1) @ self.W_rk
        return hk, r_k

    # ---- dual selective gate ---------------------------------------------

    def dual_selective_gate(self, enc: EncodedGraph, hk: nn.Tensor, r_k: nn.Tensor) -> GatedStates:
        h_nodes = enc.h
        if self.config.use_key_gate:
            h_nodes = h_nodes * nn.sigmoid(enc.h @ self.W_g + r_k @ self.U_g)
        h_kw = hk
        if self.config.use_graph_gate:
            h_kw = h_kw * nn.sigmoid(hk @ self.W_k + enc.r_g @ self.U_k)
        return GatedStates(h_nodes=h_nodes, h_keywords=h_kw)

    # ---- decoder ---------------------------------------------------------

    def init_decoder_state(self, r_g: nn.Tensor) -> tuple[nn.Tensor, nn.Tensor]:
        return nn.tanh(r_g @ self.W_init), nn.Tensor(np.zeros((1, self.config.hidden_dim)))

    def _attend(self, s: nn.Tensor, mem: nn.Tensor, W, b, Wp) -> tuple[nn.Tensor, nn.Tensor]:
        n = mem.data.shape[0]
        s_rep = nn.gather_rows(s, np.zeros(n, dtype=np.intp))
        e = nn.tanh(nn.concat([s_rep, mem], axis=1) @ W + b) @ Wp
        alpha = nn.softmax(e, axis=0)
        ctx = nn.transpose(alpha) @ mem
        return alpha, ctx

    def decoder_step(
        self, s: nn.Tensor, cell: nn.Tensor, x_emb: nn.Tensor, gated: GatedStates
    ) -> StepOutput:
        s_new, cell_new = self.cell(x_emb, s, cell)
        alpha_n, c_n = self._attend(s_new, gated.h_nodes, self.W_a, self.b_a, self.Wp_a)
        if self.config.use_dual_attention:
            _, c_k = self._attend(s_new, gated.h_keywords, self.W_ak, self.b_ak, self.Wp_ak)
            c_t = nn.concat([c_n, c_k], axis=1) @ self.U_c
        else:
            c_t = c_n @ self.U_c
        p_gen = nn.sigmoid(s_new @ self.W_s + c_t @ self.W_c + x_emb @ self.W_x + self.b_gen)
        return StepOutput(hidden=s_new, cell=cell_new, context=c_t,
                          node_attention=alpha_n, p_gen=p_gen)

    def copy_plan(self, graph: CodeGraph, vocab: Vocab) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Map lexical nodes to extended-vocabulary ids. Returns (lexical
        node indices, their extended ids, oov surfaces in extended order).
        Masked name positions carry no copyable surface and are skipped."""
        lex = np.asarray([i for i in graph.lexical_indices()
                          if i not in graph.masked_name_positions], dtype=np.intp)
        oov: dict[str, int] = {}
        ext_ids = []
        for i in lex:
            surf = graph.nodes[i].surface.lower()
            if surf in vocab:
                ext_ids.append(vocab.surface_to_id[surf])
            else:
                if surf not in oov:
                    oov[surf] = len(vocab) + len(oov)
                ext_ids.append(oov[surf])
        return lex, np.asarray(ext_ids, dtype=np.intp), list(oov)

    def output_distribution(
        self,
        step: StepOutput,
        plan: tuple[np.ndarray, np.ndarray, list[str]],
    ) -> nn.Tensor:
        """Mixture distribution over vocab plus in-graph OOV surfaces,
        shaped (|vocab| + n_oov, 1). Copy mass aggregates node attention on
        lexical nodes only, renormalized over them."""
        lex, ext_ids, oov = plan
        n_ext = self.vocab_size + len(oov)
        s, c_t = step.hidden, step.context
        p_vocab = nn.softmax((nn.concat([s, c_t], axis=1) @ self.W_v + self.b_v)
                             @ self.Wp_v + self.bp_v, axis=1)
        p_vocab_col = nn.transpose(p_vocab)  # (|vocab|, 1)
        if len(oov):
            p_vocab_ext = nn.concat([p_vocab_col, nn.Tensor(np.zeros((len(oov), 1)))], axis=0)
        else:
            p_vocab_ext = p_vocab_col
        alpha_lex = nn.gather_rows(step.node_attention, lex)
        denom = nn.tsum(alpha_lex, axis=0, keepdims=True)
        copy_ext = nn.scatter_add_rows(alpha_lex / denom, ext_ids, n_ext)
        return step.p_gen * p_vocab_ext + (1.0 - step.p_gen) * copy_ext

    # ---- losses ----------------------------------------------------------

    def example_loss(
        self,
        graph: CodeGraph,
        keyword_ids: list[int],
        target_subtokens: list[str],
        vocab: Vocab,
    ) -> tuple[nn.Tensor, int]:
        """Teacher-forced mean per-step NLL; second value counts gold tokens
        scored as UNK (neither in vocab nor copyable)."""
        enc = self.encoder.encode(graph, vocab)
        hk, r_k = self.encode_keywords(keyword_ids)
        gated = self.dual_selective_gate(enc, hk, r_k)
        plan = self.copy_plan(graph, vocab)
        oov_index = {surf: self.vocab_size + i for i, surf in enumerate(plan[2])}
        s, cell = self.init_decoder_state(enc.r_g)
        targets = [t.lower() for t in target_subtokens] + [None]  # None = EOS
        prev_vocab_id = vocab.bos_id
        step_losses = []
        unk_scored = 0
        for gold in targets:
            x_emb = nn.gather_rows(self.embedding, [prev_vocab_id])
            step = self.decoder_step(s, cell, x_emb, gated)
            dist = self.output_distribution(step, plan)
            if gold is None:
                gid = vocab.eos_id
            elif gold in vocab:
                gid = vocab.surface_to_id[gold]
            elif gold in oov_index:
                gid = oov_index[gold]
            else:
                gid = vocab.unk_id
                unk_scored += 1
            p_gold = nn.gather_rows(dist, [gid])
            step_losses.append(-nn.log(nn.clamp(p_gold, 1e-12, 1.0)))
            s, cell = step.hidden, step.cell
            prev_vocab_id = vocab.eos_id if gold is None else vocab.id_of(gold)
        total = step_losses[0]
        for sl in step_losses[1:]:
            total = total + sl
        return total * (1.0 / len(step_losses)), unk_scored

    # ---- decoding --------------------------------------------------------

    def decode(
        self,
        graph: CodeGraph,
        keyword_ids: list[int],
        vocab: Vocab,
        forbidden_ids: tuple | None = None,
    ) -> tuple[list[str], list[float]]:
        """Greedy or beam search; returns (subtokens, per-step P_gen)."""
        if forbidden_ids is None:
            forbidden_ids = (vocab.pad_id, vocab.bos_id, vocab.unk_id,
                             vocab.mask_id, vocab.no_keyword_id)
        with nn.no_grad():
            enc = self.encoder.encode(graph, vocab)
            hk, r_k = self.encode_keywords(keyword_ids)
            gated = self.dual_selective_gate(enc, hk, r_k)
            plan = self.copy_plan(graph, vocab)
            oov = plan[2]
            s0, c0 = self.init_decoder_state(enc.r_g)
            # beam entries: (neg log prob, tokens, pgen trace, s, cell, prev id, done)
            beams = [(0.0, [], [], s0, c0, vocab.bos_id, False)]
            for _ in range(self.config.max_decode_len + 1):
                if all(b[6] for b in beams):
                    break
                candidates = []
                for nlp, toks, pgens, s, cell, prev, done in beams:
                    if done:
                        candidates.append((nlp, toks, pgens, s, cell, prev, True))
                        continue
                    x_emb = nn.gather_rows(self.embedding, [prev])
                    step = self.decoder_step(s, cell, x_emb, gated)
                    dist = self.output_distribution(step, plan).data.reshape(-1)
                    dist = dist.copy()
                    for fid in forbidden_ids:
                        dist[fid] = 0.0
                    if len(toks) >= self.config.max_decode_len:
                        order = [vocab.eos_id]
                    else:
                        order = np.argsort(-dist)[: self.config.beam_width]
                    for ext_id in order:
                        ext_id = int(ext_id)
                        p = max(float(dist[ext_id]), 1e-12)
                        if ext_id == vocab.eos_id:
                            candidates.append((nlp - np.log(p), toks, pgens,
                                               step.hidden, step.cell, prev, True))
                        else:
                            surf = (vocab.surface_of(ext_id) if ext_id < len(vocab)
                                    else oov[ext_id - len(vocab)])
                            nxt = vocab.id_of(surf)
                            candidates.append((
                                nlp - np.log(p), toks + [surf],
                                pgens + [step.p_gen.item()],
                                step.hidden, step.cell, nxt, False))
                candidates.sort(key=lambda b: (b[0], len(b[1])))
                beams = candidates[: self.config.beam_width]
            best = min(beams, key=lambda b: b[0])
            return best[1], best[2]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainExample:
    graph: CodeGraph
    keyword_ids: list[int]
    target: list[str]
    method_id: str = ""


def train_generator(
    model: GeneratorModel,
    store: nn.ParamStore,
    train: list[TrainExample],
    valid: list[TrainExample],
    vocab: Vocab,
    settings: TrainSettings,
    log=None,
) -> dict:
    """Adam training with teacher forcing, early stopping on validation
    ROUGE-1 F1 when a validation set is given."""
    if not train:
        raise TrainingError("empty training corpus")
    rng = np.random.default_rng(settings.seed)
    history = {"train_loss": [], "valid_rouge1": []}
    best_r1, best_snapshot, since_best = -1.0, None, 0
    for epoch in range(settings.max_epochs):
        order = rng.permutation(len(train))
        epoch_loss, n_batches = 0.0, 0
        for lo in range(0, len(order), settings.batch_size):
            batch = [train[i] for i in order[lo : lo + settings.batch_size]]
            store.zero_grad()
            total = None
            for ex in batch:
                loss, _ = model.example_loss(ex.graph, ex.keyword_ids, ex.target, vocab)
                total = loss if total is None else total + loss
            total = total * (1.0 / len(batch))
            if not np.isfinite(total.item()):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} step {store.step}")
            total.backward()
            store.clip_gradients(settings.clip_norm)
            store.adam_step(lr=settings.lr, decay_factor=settings.decay_factor,
                            decay_interval=settings.decay_interval)
            epoch_loss += total.item()
            n_batches += 1
        history["train_loss"].append(epoch_loss / n_batches)
        if log:
            log(f"epoch {epoch}: train loss {epoch_loss / n_batches:.4f}")
        if valid and (epoch + 1) % settings.eval_every == 0:
            r1 = _corpus_rouge1(model, valid, vocab)
            history["valid_rouge1"].append(r1)
            if log:
                log(f"epoch {epoch}: valid ROUGE-1 {r1:.4f}")
            if r1 > best_r1:
                best_r1 = r1
                best_snapshot = {k: t.data.copy() for k, t in store.params.items()}
                since_best = 0
            else:
                since_best += 1
                if since_best >= settings.patience:
                    break
    if best_snapshot is not None:
        for k, t in store.params.items():
            t.data = best_snapshot[k]
    history["best_valid_rouge1"] = best_r1
    return history


def _corpus_rouge1(model: GeneratorModel, examples: list[TrainExample], vocab: Vocab) -> float:
    preds, refs = {}, {}
    for i, ex in enumerate(examples):
        key = ex.method_id or str(i)
        toks, _ = model.decode(ex.graph, ex.keyword_ids, vocab)
        preds[key] = toks
        refs[key] = [t.lower() for t in ex.target]
    return evaluate_corpus(preds, refs).rouge1.f1


def count_parameters(store: nn.ParamStore, prefix: str = "") -> int:
    return sum(t.data.size for name, t in store.params.items()
               if name.startswith(prefix))
