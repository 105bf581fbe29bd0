"""Language-to-motion model: layer-normalized BiGRU text encoder, stacked
layer-normalized GRU frame decoder with a mixture-density + Bernoulli head,
surrogate-loss training and sampling-based beam search."""
from dataclasses import dataclass

import numpy as np

from .kernels import HALF_LOG_2PI, LOG_CLAMP, SIGMA_FLOOR, sigmoid, softplus
from .motion import invert_standardizer
from .nn.autodiff import Tensor, no_grad
from .nn.layers import bigru_stack, dropout_mask, gru_cell, gru_cell_params
from .seq2seq import ModelConfig, Seq2SeqModel
from .text import sentence_mask


@dataclass
class L2MConfig(ModelConfig):
    decoder_layers: int = 3
    decoder_units: int = 400
    dropout: float = 0.1
    gradient_clip: float = 25.0
    layer_norm: bool = True
    mixture_components: int = 20
    samples_per_hypothesis: int = 4

    def __post_init__(self):
        super().__post_init__()
        if self.mixture_components < 1 or self.samples_per_hypothesis < 1:
            raise ValueError("mixture_components and samples_per_hypothesis must be >= 1")


@dataclass
class MdnParams:
    """Mixture weights ``[..., K]``, means and spreads ``[..., K, J]``, activity ``[...]``."""

    alphas: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray
    p_active: np.ndarray

    def __getitem__(self, i):
        return MdnParams(self.alphas[i], self.mus[i], self.sigmas[i], self.p_active[i])


@dataclass
class MotionHypothesis:
    frames: np.ndarray
    log_likelihood: float
    truncated: bool = False
    frames_destandardized: np.ndarray = None


@dataclass
class L2MBatch:
    sentences: np.ndarray     # [B, M]
    sentence_mask: np.ndarray
    decoder_inputs: np.ndarray  # [B, T, J+1], first row all ones
    targets: np.ndarray       # [B, T, J+1]
    target_mask: np.ndarray   # [B, T]


def split_head(raw, K, J):
    """Activate raw head outputs ``[..., K + 2KJ + 1]`` into :class:`MdnParams`."""
    raw = np.asarray(raw, dtype=np.float64)
    lead = raw.shape[:-1]
    logits = raw[..., :K]
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    alphas = e / e.sum(axis=-1, keepdims=True)
    mus = raw[..., K:K + K * J].reshape(lead + (K, J))
    # keep both strictly inside their domains where float64 saturates
    sigmas = np.maximum(softplus(raw[..., K + K * J:K + 2 * K * J]), np.finfo(np.float64).tiny).reshape(lead + (K, J))
    p_active = np.clip(sigmoid(raw[..., K + 2 * K * J]), LOG_CLAMP, 1.0 - LOG_CLAMP)
    return MdnParams(alphas, mus, sigmas, p_active)


def component_log_densities(joints, mdn):
    """``log N(joints | mu_k, sigma_k)`` per component, spreads floored at 1e-6."""
    sig = np.maximum(mdn.sigmas, SIGMA_FLOOR)
    d = np.asarray(joints)[..., None, :] - mdn.mus
    return (-HALF_LOG_2PI - np.log(sig) - d * d / (2.0 * sig * sig)).sum(axis=-1)


def _bernoulli_log(flag, p):
    return np.where(flag > 0.5, np.log(np.maximum(p, LOG_CLAMP)), np.log(np.maximum(1.0 - p, LOG_CLAMP)))


def mdn_log_likelihood(frame, mdn):
    """Exact log p(frame): log-sum-exp over components plus the Bernoulli mass."""
    frame = np.asarray(frame, dtype=np.float64)
    J = mdn.mus.shape[-1]
    ell = component_log_densities(frame[..., :J], mdn) + np.log(np.maximum(mdn.alphas, 1e-300))
    m = ell.max(axis=-1)
    cont = m + np.log(np.exp(ell - m[..., None]).sum(axis=-1))
    return cont + _bernoulli_log(frame[..., J], mdn.p_active)


def l2m_surrogate_loss(mdn, targets, mask):
    """Mean over active steps of ``-sum_k alpha_k log N_k`` plus Bernoulli cross-entropy."""
    targets = np.asarray(targets, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    J = mdn.mus.shape[-1]
    cont = -(mdn.alphas * component_log_densities(targets[..., :J], mdn)).sum(axis=-1)
    per_step = cont - _bernoulli_log(targets[..., J], mdn.p_active)
    return float(np.sum(np.where(mask, per_step, 0.0)) / mask.sum())


def l2m_exact_loss(mdn, targets, mask):
    """Mean negative log-likelihood over active steps (mixture log-sum-exp form)."""
    mask = np.asarray(mask, dtype=bool)
    ll = mdn_log_likelihood(targets, mdn)
    return float(-np.sum(np.where(mask, ll, 0.0)) / mask.sum())


def sample_frame(mdn, rng):
    """Draw a component, then the joints from its diagonal Gaussian, then the flag."""
    K, J = mdn.mus.shape
    k = rng.choice(K, p=mdn.alphas / mdn.alphas.sum())
    joints = mdn.mus[k] + mdn.sigmas[k] * rng.standard_normal(J)
    flag = 1.0 if rng.random() < mdn.p_active else 0.0
    return np.append(joints, flag)


class L2MModel(Seq2SeqModel):
    kind = "l2m"
    config_class = L2MConfig

    @property
    def head_size(self):
        K, J = self.config.mixture_components, self.config.joints
        return K + 2 * K * J + 1

    def gru_inputs(self):
        cfg = self.config
        out = []
        for layer in range(cfg.encoder_layers):
            n_in = cfg.embedding_dim if layer == 0 else 2 * cfg.encoder_units
            for d in ("fwd", "bwd"):
                out.append((f"encoder.l{layer}.{d}", n_in, cfg.encoder_units))
        for layer in range(cfg.decoder_layers):
            n_in = cfg.context_dim + cfg.joints + 1 + (cfg.decoder_units if layer else 0)
            out.append((f"decoder.l{layer}", n_in, cfg.decoder_units))
        return out

    # -- batching
    def make_batch(self, examples):
        """Teacher-forced batch.

        Targets are the active frames followed by one stop frame (zeros, flag
        0) unless the motion already fills ``max_motion_length``; decoder
        inputs are the all-ones start frame followed by the targets shifted by
        one step.
        """
        cfg = self.config
        J = cfg.joints
        idx = np.stack([np.asarray(e.indices) for e in examples])
        smask = sentence_mask(idx)
        M = int(smask.sum(axis=1).max())
        lengths = [min(e.motion.shape[0] + 1, cfg.max_motion_length) for e in examples]
        T = max(lengths)
        B = len(examples)
        targets = np.zeros((B, T, J + 1))
        tmask = np.zeros((B, T))
        for b, e in enumerate(examples):
            t = min(e.motion.shape[0], cfg.max_motion_length)
            targets[b, :t, :J] = e.motion[:t]
            targets[b, :t, J] = 1.0
            tmask[b, :lengths[b]] = 1.0
        dec_in = np.concatenate([np.ones((B, 1, J + 1)), targets[:, :-1]], axis=1)
        return L2MBatch(idx[:, :M], smask[:, :M], dec_in, targets, tmask)

    # -- recorded forward
    def encode(self, ctx, P, sentences, smask, training=False, rng=None):
        cfg = self.config
        emb = ctx.embedding(P["embedding"], sentences, name="encoder.embedding")
        _, context = bigru_stack(ctx, emb, smask, P, "encoder", cfg.encoder_layers, cfg.dropout, training, rng)
        return context

    def head_outputs(self, ctx, P, batch, training=False, rng=None):
        cfg = self.config
        context = self.encode(ctx, P, batch.sentences, batch.sentence_mask, training, rng)
        B, T, _ = batch.decoder_inputs.shape
        crep = ctx.repeat_time(context, T, name="decoder.context")
        din = Tensor(batch.decoder_inputs, name="decoder.frames")
        prev, outs = None, []
        for layer in range(cfg.decoder_layers):
            inp = ctx.concat([crep, din] + ([prev] if prev is not None else []), name=f"decoder.l{layer}.in")
            if training and cfg.dropout > 0:
                inp = ctx.scale(inp, dropout_mask(rng, (B, 1, inp.shape[-1]), cfg.dropout), name=f"decoder.l{layer}.dropout")
            p = f"decoder.l{layer}"
            prev = ctx.gru(inp, P[f"{p}.W"], P[f"{p}.U"], batch.target_mask,
                           gain=P[f"{p}.gain"], beta=P[f"{p}.beta"], name=p)
            outs.append(prev)
        head_in = ctx.concat(outs, name="head.in")
        if training and cfg.dropout > 0:
            head_in = ctx.scale(head_in, dropout_mask(rng, head_in.shape, cfg.dropout), name="head.dropout")
        return ctx.add(ctx.matmul(head_in, P["head.W"], name="head.matmul"), P["head.b"], name="head.raw")

    def batch_loss(self, ctx, P, batch, training=False, rng=None):
        raw = self.head_outputs(ctx, P, batch, training, rng)
        return ctx.mdn_surrogate_loss(raw, batch.targets, batch.target_mask,
                                      self.config.mixture_components, self.config.joints, name="loss")

    def loss(self, examples):
        ctx = no_grad()
        P = {k: Tensor(v, name=k) for k, v in self.params.items()}
        return float(self.batch_loss(ctx, P, self.make_batch(examples)).data)

    # -- inference
    def encode_text(self, indices):
        """Context vector(s) for padded index rows ``[M]`` or ``[B, M]``."""
        indices = np.asarray(getattr(indices, "indices", indices))
        single = indices.ndim == 1
        if single:
            indices = indices[None]
        ctx = no_grad()
        P = {k: Tensor(v, name=k) for k, v in self.params.items()}
        context = self.encode(ctx, P, indices, sentence_mask(indices)).data
        return context[0] if single else context

    def decode_step(self, context, prev_frame, states):
        """One decoder step for ``N`` hypotheses; returns ``(MdnParams, new_states)``."""
        cfg = self.config
        prev_frame = np.atleast_2d(np.asarray(prev_frame, dtype=np.float64))
        N = prev_frame.shape[0]
        context = np.broadcast_to(np.asarray(context, dtype=np.float64), (N, cfg.context_dim))
        prev, new_states = None, []
        for layer in range(cfg.decoder_layers):
            inp = np.concatenate([context, prev_frame] + ([prev] if prev is not None else []), axis=1)
            prev = gru_cell(inp, states[layer], **gru_cell_params(self.params, f"decoder.l{layer}"))
            new_states.append(prev)
        raw = np.concatenate(new_states, axis=1) @ self.params["head.W"] + self.params["head.b"]
        return split_head(raw, cfg.mixture_components, cfg.joints), new_states

    def start_frame(self):
        return np.ones(self.config.joints + 1)

    def beam_search(self, context, rng, width=None, samples=None, max_len=None, standardizer=None):
        """Sampling beam search; hypotheses sorted by accumulated log-likelihood.

        Each live hypothesis draws ``samples`` continuations from its predicted
        distribution, each scored by the exact log-likelihood of the drawn
        frame.  Finished hypotheses keep their slot and the best new
        candidates fill the rest.  A hypothesis ends when it draws flag 0 or
        reaches ``max_len`` frames.
        """
        cfg = self.config
        width = cfg.beam_width if width is None else width
        samples = cfg.samples_per_hypothesis if samples is None else samples
        max_len = cfg.max_motion_length if max_len is None else max_len
        if width < 1 or samples < 1:
            raise ValueError("width and samples must be >= 1")
        context = np.asarray(context, dtype=np.float64)
        live = [([], 0.0)]
        states = self.zero_states(1)
        prev = self.start_frame()[None]
        finished = []
        for step in range(max_len):
            mdn, new_states = self.decode_step(context, prev, states)
            cands = []
            for h, (frames, score) in enumerate(live):
                params = mdn[h]
                for _ in range(samples):
                    frame = sample_frame(params, rng)
                    cands.append((h, frame, score + float(mdn_log_likelihood(frame, params))))
            # finished hypotheses keep their slots; new candidates fill the rest
            order = sorted(range(len(cands)), key=lambda i: -cands[i][2])[: width - len(finished)]
            new_finished, new_live, rows, next_prev = list(finished), [], [], []
            for i in order:
                h, frame, score = cands[i]
                frames = live[h][0] + [frame]
                if frame[-1] < 0.5:
                    new_finished.append((frames, score, False))
                elif step == max_len - 1:
                    new_finished.append((frames, score, True))
                else:
                    new_live.append((frames, score))
                    rows.append(h)
                    next_prev.append(frame)
            finished = new_finished
            live = new_live
            if not live:
                break
            states = [s[rows] for s in new_states]
            prev = np.stack(next_prev)
        finished.sort(key=lambda f: -f[1])
        out = []
        for frames, score, truncated in finished[:width]:
            arr = np.stack(frames)
            hyp = MotionHypothesis(arr, score, truncated)
            if standardizer is not None:
                hyp.frames_destandardized = invert_standardizer(arr, standardizer)
            out.append(hyp)
        return out
