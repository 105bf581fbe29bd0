"""Motion-to-language model: BiGRU motion encoder, stacked GRU word decoder,
softmax vocabulary head, masked cross-entropy and discrete beam search."""
from dataclasses import dataclass

import numpy as np

from .motion import pad_batch
from .nn.autodiff import Tensor, no_grad
from .nn.layers import bigru_stack, dense, dropout_mask, gru_cell, gru_cell_params
from .seq2seq import ModelConfig, Seq2SeqModel
from .text import EOS, SOS, sentence_mask

LOG_CLAMP = 1e-12


@dataclass
class M2LConfig(ModelConfig):
    pass


@dataclass
class TextHypothesis:
    indices: list
    log_prob: float


@dataclass
class M2LBatch:
    motion: np.ndarray      # [B, T, J+1]
    inputs: np.ndarray      # [B, M] previous words, SOS first
    targets: np.ndarray     # [B, M] next words, EOS included
    target_mask: np.ndarray  # [B, M]


def m2l_loss(probs, targets, mask):
    """Mean over active steps of ``-log p(target)``, probabilities clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if probs.shape[-2] < np.asarray(targets).shape[-1]:
        raise ValueError("fewer prediction steps than targets")
    p_t = np.take_along_axis(probs, np.asarray(targets, dtype=np.intp)[..., None], axis=-1)[..., 0]
    nll = -np.log(np.maximum(p_t, LOG_CLAMP))
    return float(np.sum(np.where(mask, nll, 0.0)) / mask.sum())


class M2LModel(Seq2SeqModel):
    kind = "m2l"
    config_class = M2LConfig

    @property
    def head_size(self):
        return self.config.vocab_size

    def gru_inputs(self):
        cfg = self.config
        out = []
        for layer in range(cfg.encoder_layers):
            n_in = cfg.joints + 1 if layer == 0 else 2 * cfg.encoder_units
            for d in ("fwd", "bwd"):
                out.append((f"encoder.l{layer}.{d}", n_in, cfg.encoder_units))
        for layer in range(cfg.decoder_layers):
            n_in = cfg.context_dim + cfg.embedding_dim + (cfg.decoder_units if layer else 0)
            out.append((f"decoder.l{layer}", n_in, cfg.decoder_units))
        return out

    # -- batching
    def make_batch(self, examples):
        motion = pad_batch([e.motion for e in examples])
        idx = np.stack([np.asarray(e.indices) for e in examples])
        full_mask = sentence_mask(idx)
        M = int(full_mask.sum(axis=1).max())
        idx = idx[:, :M]
        return M2LBatch(motion, idx[:, :-1].copy(), idx[:, 1:].copy(), full_mask[:, 1:M])

    # -- recorded forward
    def encode(self, ctx, P, motion, training=False, rng=None):
        cfg = self.config
        _, context = bigru_stack(ctx, Tensor(motion, name="motion"), motion[..., -1], P, "encoder",
                                 cfg.encoder_layers, cfg.dropout, training, rng)
        return context

    def logits(self, ctx, P, batch, training=False, rng=None):
        cfg = self.config
        context = self.encode(ctx, P, batch.motion, training, rng)
        B, M = batch.inputs.shape
        crep = ctx.repeat_time(context, M, name="decoder.context")
        emb = ctx.embedding(P["embedding"], batch.inputs, name="decoder.embedding")
        prev, outs = None, []
        for layer in range(cfg.decoder_layers):
            inp = ctx.concat([crep, emb] + ([prev] if prev is not None else []), name=f"decoder.l{layer}.in")
            if training and cfg.dropout > 0:
                inp = ctx.scale(inp, dropout_mask(rng, (B, 1, inp.shape[-1]), cfg.dropout), name=f"decoder.l{layer}.dropout")
            p = f"decoder.l{layer}"
            prev = ctx.gru(inp, P[f"{p}.W"], P[f"{p}.U"], batch.target_mask, b=P[f"{p}.b"], name=p)
            outs.append(prev)
        head_in = ctx.concat(outs, name="head.in")
        if training and cfg.dropout > 0:
            head_in = ctx.scale(head_in, dropout_mask(rng, head_in.shape, cfg.dropout), name="head.dropout")
        return ctx.add(ctx.matmul(head_in, P["head.W"], name="head.matmul"), P["head.b"], name="head.logits")

    def batch_loss(self, ctx, P, batch, training=False, rng=None):
        logits = self.logits(ctx, P, batch, training, rng)
        return ctx.softmax_cross_entropy(logits, batch.targets, batch.target_mask, name="loss")

    def loss(self, examples):
        """Deterministic (no dropout) mean loss over ``examples``."""
        ctx = no_grad()
        P = {k: Tensor(v, name=k) for k, v in self.params.items()}
        return float(self.batch_loss(ctx, P, self.make_batch(examples)).data)

    # -- inference
    def encode_motion(self, motion):
        """Context vector(s) for padded motion input ``[T, J+1]`` or ``[B, T, J+1]``."""
        motion = np.asarray(getattr(motion, "frames", motion), dtype=np.float64)
        single = motion.ndim == 2
        if single:
            motion = motion[None]
        ctx = no_grad()
        P = {k: Tensor(v, name=k) for k, v in self.params.items()}
        context = self.encode(ctx, P, motion).data
        return context[0] if single else context

    def decode_step(self, context, prev_word, states):
        """One decoder step for ``N`` hypotheses.

        ``context`` is ``[N, C]`` (or ``[C]``), ``prev_word`` ``[N]`` indices and
        ``states`` one ``[N, H]`` array per decoder layer.  Returns
        ``(probabilities [N, V], new_states)``.
        """
        cfg = self.config
        prev_word = np.atleast_1d(np.asarray(prev_word, dtype=np.intp))
        N = prev_word.shape[0]
        context = np.broadcast_to(np.asarray(context, dtype=np.float64), (N, cfg.context_dim))
        emb = self.params["embedding"][prev_word]
        prev, new_states = None, []
        for layer in range(cfg.decoder_layers):
            inp = np.concatenate([context, emb] + ([prev] if prev is not None else []), axis=1)
            prev = gru_cell(inp, states[layer], **gru_cell_params(self.params, f"decoder.l{layer}"))
            new_states.append(prev)
        probs = dense(np.concatenate(new_states, axis=1), self.params["head.W"], self.params["head.b"], "softmax")
        return probs, new_states

    def beam_search(self, context, width=None, max_len=None):
        """Top ``width`` descriptions for one context vector, best first."""
        cfg = self.config
        width = cfg.beam_width if width is None else width
        max_len = cfg.max_sentence_length if max_len is None else max_len
        context = np.asarray(context, dtype=np.float64)

        def step(prev, states):
            return self.decode_step(context, prev, states)
        return beam_search_discrete(step, self.zero_states(1), width, max_len - 1)

    def score(self, context, indices):
        """Sum of step log-probabilities of ``indices`` (SOS excluded, EOS included)."""
        states = self.zero_states(1)
        prev, total = SOS, 0.0
        for tok in indices:
            probs, states = self.decode_step(context, [prev], states)
            total += float(np.log(probs[0, tok]))
            prev = tok
        return total


def beam_search_discrete(step_fn, init_states, width, max_steps, eos=EOS, sos=SOS):
    """Beam search over a discrete next-token distribution.

    ``step_fn(prev_tokens [N], states) -> (probs [N, V], states)``.  Every live
    hypothesis expands over the whole vocabulary; the best ``width`` of
    finished + new candidates survive (finished ones are frozen but still
    occupy a slot).  At the last step only EOS may be emitted.  Scores are
    raw accumulated log probabilities.
    """
    if width < 1:
        raise ValueError("beam width must be >= 1")
    live = [([], 0.0)]
    live_states = init_states
    finished = []
    for step in range(max_steps):
        prev = np.array([toks[-1] if toks else sos for toks, _ in live], dtype=np.intp)
        probs, states = step_fn(prev, live_states)
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        V = logp.shape[1]
        base = np.array([s for _, s in live])[:, None]
        if step == max_steps - 1:
            allowed = np.full(V, -np.inf)
            allowed[eos] = 0.0
            cand = base + logp + allowed
        else:
            cand = base + logp
        cand = cand.reshape(-1)
        # finished first so they win ties
        scores = np.concatenate([np.array([s for _, s in finished]), cand])
        order = np.argsort(-scores, kind="stable")[:width]
        n_fin = len(finished)
        new_finished, new_live, keep_rows = [], [], []
        for i in order:
            if not np.isfinite(scores[i]):
                continue
            if i < n_fin:
                new_finished.append(finished[i])
                continue
            h, tok = divmod(int(i - n_fin), V)
            toks = live[h][0] + [tok]
            if tok == eos:
                new_finished.append((toks, float(scores[i])))
            else:
                new_live.append((toks, float(scores[i])))
                keep_rows.append(h)
        finished = new_finished
        live = new_live
        if not live:
            break
        live_states = [s[keep_rows] for s in states]
    finished.sort(key=lambda x: -x[1])
    return [TextHypothesis(toks, score) for toks, score in finished[:width]]

