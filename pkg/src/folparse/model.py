"""Sequence-to-sequence FOL parsers.

Six variants share one encoder (biLSTM) and decoder (LSTM with dot-product
attention over encoder states):

=====================  ==========  ==============  =========
variant                heads       self-attention  alignment
=====================  ==========  ==============  =========
vanilla                merged      no              no
vanilla-selfattn       merged      yes             no
vanilla-align          merged      no              yes
sepheads               separate    no              no
sepheads-selfattn      separate    yes             no
sepheads-align         separate    no              yes
=====================  ==========  ==============  =========

Training runs the whole teacher-forced sequence at once: the decoder LSTM
only sees gold tokens, so all attention blocks can be computed over the
stacked decoder states with causal masks.  Greedy decoding rebuilds the
same blocks over the growing prefix and reads off the last row.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import diff_engine as de
from .corpus import NEW_VARIABLE, START, UNK, Example, Vocabs
from .linearizer import (SCOPE_CLOSE, SCOPE_OPEN_NOT, SCOPE_OPEN_TOP, AlignTarget, Category,
                         TokenSequence, is_variable_token)

__all__ = [
    "VARIANTS", "ModelConfig", "Seq2SeqParser", "Batch", "make_batch", "LossBreakdown",
    "CategoryMismatch", "MissingTargets", "LengthExceeded", "EmptyKeys", "attend",
]

VARIANTS = ("vanilla", "vanilla-selfattn", "vanilla-align",
            "sepheads", "sepheads-selfattn", "sepheads-align")
_CATS = (Category.U, Category.B, Category.V, Category.S)


class CategoryMismatch(ValueError):
    pass


class MissingTargets(ValueError):
    pass


class LengthExceeded(ValueError):
    pass


class EmptyKeys(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "sepheads-align"
    input_dim: int = 100          # D, encoder (and baseline decoder) embeddings
    hidden: int = 400             # d_h = d_c
    max_input_len: int = 100      # m
    max_output_len: int = 30      # n
    scope_dim: int = 50
    pred_dim: int = 100           # unary and binary embeddings
    heads_use_context: bool = True
    init_decoder_from_encoder: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        for f in ("input_dim", "hidden", "max_input_len", "max_output_len", "scope_dim", "pred_dim"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.hidden % 2:
            raise ValueError("hidden must be even (split across encoder directions)")

    @property
    def separate_heads(self) -> bool:
        return self.variant.startswith("sepheads")

    @property
    def self_attention(self) -> bool:
        return self.variant.endswith("selfattn")

    @property
    def align(self) -> bool:
        return self.variant.endswith("align")

    def loss_terms(self) -> tuple[str, ...]:
        terms = ["L_CE"]
        if self.separate_heads:
            terms.append("L_aux")
        if self.align:
            terms += ["L_dec", "L_pos"]
        return tuple(terms)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


# ---------------------------------------------------------------------------
# batches

@dataclass
class Batch:
    src: np.ndarray         # (B, L) input indices
    src_mask: np.ndarray    # (B, L) bool
    tgt_mask: np.ndarray    # (B, T) bool
    lengths: np.ndarray     # (B,) target lengths
    tgt_cat: np.ndarray     # (B, T) category index (U/B/V/S)
    tgt_idx: np.ndarray     # (B, T) index within the category vocabulary
    tgt_joint: np.ndarray   # (B, T) index in the merged vocabulary
    in_cat: np.ndarray      # (B, T) decoder input category (START at step 0)
    in_idx: np.ndarray      # (B, T)
    in_joint: np.ndarray    # (B, T), -1 for the all-zero start embedding
    align_dec: np.ndarray   # (B, T) 1/0 at variable steps, -1 elsewhere
    align_pos: np.ndarray   # (B, T) earlier position when align_dec == 1, else 0


def make_batch(examples: list[Example], vocabs: Vocabs) -> Batch:
    B = len(examples)
    L = max(max(len(e.src), 1) for e in examples)
    T = max(len(e.tgt_idx) for e in examples)
    start = vocabs.category.index(START)
    b = Batch(
        src=np.zeros((B, L), np.int64), src_mask=np.zeros((B, L), bool),
        tgt_mask=np.zeros((B, T), bool), lengths=np.zeros(B, np.int64),
        tgt_cat=np.zeros((B, T), np.int64), tgt_idx=np.zeros((B, T), np.int64),
        tgt_joint=np.zeros((B, T), np.int64), in_cat=np.full((B, T), start, np.int64),
        in_idx=np.zeros((B, T), np.int64), in_joint=np.full((B, T), -1, np.int64),
        align_dec=np.full((B, T), -1, np.int64), align_pos=np.zeros((B, T), np.int64),
    )
    for k, e in enumerate(examples):
        if not e.tgt_idx:
            raise MissingTargets("example has not been indexed against the vocabularies")
        n = len(e.tgt_idx)
        b.src[k, :len(e.src)] = e.src
        b.src_mask[k, :len(e.src)] = True
        if not e.src:
            # empty sentence: attend to a single padding position
            b.src_mask[k, 0] = True
        b.tgt_mask[k, :n] = True
        b.lengths[k] = n
        b.tgt_cat[k, :n] = e.tgt_cat
        b.tgt_idx[k, :n] = e.tgt_idx
        b.tgt_joint[k, :n] = e.tgt_joint
        b.in_cat[k, 1:n] = e.tgt_cat[:n - 1]
        b.in_idx[k, 1:n] = e.tgt_idx[:n - 1]
        b.in_joint[k, 1:n] = e.tgt_joint[:n - 1]
        for i, a in enumerate(e.align):
            if a is not None:
                b.align_dec[k, i] = a.decision
                b.align_pos[k, i] = a.position if a.decision else 0
    return b


@dataclass
class LossBreakdown:
    terms: dict[str, de.Value]
    total: de.Value

    def values(self) -> dict[str, float]:
        out = {k: float(v.data) for k, v in self.terms.items()}
        out["total"] = float(self.total.data)
        return out


def attend(query: de.Value, keys: de.Value, values: de.Value, mask=None):
    """Dot-product attention for (B, T, d) queries over (B, S, d) keys/values.

    Returns ``(weights, context)``; ``mask`` is a bool array broadcastable to
    (B, T, S).
    """
    if keys.shape[-2] == 0:
        raise EmptyKeys("attention needs at least one key")
    scores = de.matmul(query, de.transpose(keys))
    weights = de.softmax(scores, mask)
    return weights, de.matmul(weights, values)


# ---------------------------------------------------------------------------
# the model

class Seq2SeqParser:
    def __init__(self, config: ModelConfig, vocabs: Vocabs):
        self.config = config
        self.vocabs = vocabs
        rng = np.random.default_rng(config.seed)
        c = config
        He = c.hidden // 2
        self.params: dict[str, de.Value] = {}

        def dense(name, shape):
            self.params[name] = de.Parameter(de.xavier_uniform(rng, shape), name)

        def zeros(name, shape):
            self.params[name] = de.Parameter(np.zeros(shape), name)

        dense("E_enc", (len(vocabs.input), c.input_dim))
        for d in ("f", "b"):
            dense(f"enc_{d}_Wx", (4 * He, c.input_dim))
            dense(f"enc_{d}_Wh", (4 * He, He))
            zeros(f"enc_{d}_b", (4 * He,))

        if c.separate_heads:
            dense("E_u", (len(vocabs.unary), c.pred_dim))
            dense("E_b", (len(vocabs.binary), c.pred_dim))
            dense("E_s", (len(vocabs.scope), c.scope_dim))
            dec_in = 2 * c.pred_dim + len(vocabs.variable) + c.scope_dim + len(vocabs.category)
        else:
            dense("E_dec", (len(vocabs.joint), c.input_dim))
            dec_in = c.input_dim
        self.dec_in = dec_in
        dense("dec_Wx", (4 * c.hidden, dec_in))
        dense("dec_Wh", (4 * c.hidden, c.hidden))
        zeros("dec_b", (4 * c.hidden,))

        head_in = c.hidden
        if c.heads_use_context or not c.separate_heads:
            head_in += c.hidden
        if c.self_attention:
            head_in += c.hidden
        self.head_in = head_in
        if c.separate_heads:
            dense("W_u", (len(vocabs.unary), head_in))
            dense("W_b", (len(vocabs.binary), head_in))
            dense("W_v", (len(vocabs.variable), head_in))
            dense("W_s", (len(vocabs.scope), head_in))
            dense("W_t", (len(vocabs.category), head_in))
        else:
            dense("W_o", (len(vocabs.joint), head_in))
        if c.align:
            dense("W_ali", (1, c.hidden))
            dense("W_proj", (c.hidden, c.hidden))

        self.cat_index = {cat: vocabs.category.index(cat.value) for cat in _CATS}
        self.start_cat = vocabs.category.index(START)
        self.instrument = None  # optional callback(step, decoder_input_ids)

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> list[de.Value]:
        return [self.params[k] for k in sorted(self.params)]

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        if missing:
            raise ValueError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in self.params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arrays[k].shape} != {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    # -- encoder --------------------------------------------------------------

    def encode(self, src: np.ndarray, src_mask: np.ndarray):
        """biLSTM over (B, L) indices; returns H_e (B, L, d_h) and the final
        forward/backward (h, c) pairs."""
        src = np.atleast_2d(src)
        src_mask = np.atleast_2d(src_mask)
        if src.shape[1] > self.config.max_input_len:
            raise LengthExceeded(f"input has {src.shape[1]} tokens (limit {self.config.max_input_len})")
        P = self.params
        B, L = src.shape
        He = self.config.hidden // 2
        emb = de.embedding(P["E_enc"], src)
        outs = {}
        finals = {}
        for d, steps in (("f", range(L)), ("b", range(L - 1, -1, -1))):
            xw = de.linear(emb, P[f"enc_{d}_Wx"])
            h = de.constant(np.zeros((B, He)))
            c = de.constant(np.zeros((B, He)))
            seq = [None] * L
            for t in steps:
                hc = de.lstm_step(de.select(xw, t, 1), h, c, P[f"enc_{d}_Wh"], P[f"enc_{d}_b"])
                h_new = de.slice_last(hc, 0, He)
                c_new = de.slice_last(hc, He, 2 * He)
                m = src_mask[:, t]
                if m.all():
                    h, c = h_new, c_new
                else:
                    gate = de.constant(m.astype(float))
                    h, c = de.mix(gate, h_new, h), de.mix(gate, c_new, c)
                seq[t] = h
            outs[d] = seq
            finals[d] = (h, c)
        H_e = de.stack([de.concat([outs["f"][t], outs["b"][t]]) for t in range(L)], axis=1)
        return H_e, finals

    def initial_state(self, finals, batch_size: int):
        if self.config.init_decoder_from_encoder:
            (hf, cf), (hb, cb) = finals["f"], finals["b"]
            return de.concat([hf, hb]), de.concat([cf, cb])
        z = np.zeros((batch_size, self.config.hidden))
        return de.constant(z), de.constant(z.copy())

    # -- decoder inputs ---------------------------------------------------------

    def decoder_inputs(self, in_cat: np.ndarray, in_idx: np.ndarray, in_joint: np.ndarray) -> de.Value:
        """Embeddings of the previous tokens, (B, T, dec_in)."""
        if self.instrument is not None:
            self.instrument(in_cat, in_idx, in_joint)
        P = self.params
        if not self.config.separate_heads:
            emb = de.embedding(P["E_dec"], np.maximum(in_joint, 0))
            return de.mul_const(emb, (in_joint >= 0)[..., None].astype(float))
        v = self.vocabs
        parts = []
        for cat, table in ((Category.U, "E_u"), (Category.B, "E_b")):
            on = in_cat == self.cat_index[cat]
            emb = de.embedding(P[table], np.where(on, in_idx, 0))
            parts.append(de.mul_const(emb, on[..., None].astype(float)))
        on_v = in_cat == self.cat_index[Category.V]
        onehot_v = np.zeros(in_cat.shape + (len(v.variable),))
        np.put_along_axis(onehot_v, np.where(on_v, in_idx, 0)[..., None], 1.0, axis=-1)
        onehot_v *= on_v[..., None]
        parts.append(de.constant(onehot_v))
        on_s = in_cat == self.cat_index[Category.S]
        emb = de.embedding(P["E_s"], np.where(on_s, in_idx, 0))
        parts.append(de.mul_const(emb, on_s[..., None].astype(float)))
        onehot_c = np.zeros(in_cat.shape + (len(v.category),))
        np.put_along_axis(onehot_c, in_cat[..., None], 1.0, axis=-1)
        parts.append(de.constant(onehot_c))
        return de.concat(parts)

    def run_decoder(self, x: de.Value, h: de.Value, c: de.Value):
        """Decoder LSTM over (B, T, dec_in) inputs; returns the stacked
        states (B, T, d_h) and the final (h, c)."""
        P = self.params
        H = self.config.hidden
        xw = de.linear(x, P["dec_Wx"])
        states = []
        for t in range(x.shape[1]):
            hc = de.lstm_step(de.select(xw, t, 1), h, c, P["dec_Wh"], P["dec_b"])
            h, c = de.slice_last(hc, 0, H), de.slice_last(hc, H, 2 * H)
            states.append(h)
        return de.stack(states, axis=1), (h, c)

    # -- heads ------------------------------------------------------------------

    def head_blocks(self, H_d: de.Value, H_e: de.Value, src_mask: np.ndarray) -> dict:
        """Attention, self-attention, alignment and head logits for every
        decoder position.  ``src_mask`` is (B, L)."""
        c = self.config
        P = self.params
        T = H_d.shape[1]
        out = {}
        alpha, C_e = attend(H_d, H_e, H_e, src_mask[:, None, :])
        out["alpha"], out["C_e"] = alpha, C_e
        causal = np.tril(np.ones((T, T), bool), k=-1)[None]
        ctx = [C_e] if (c.heads_use_context or not c.separate_heads) else []
        if c.self_attention:
            beta, C_d = attend(H_d, H_d, H_d, causal)
            out["beta"], out["C_d"] = beta, C_d
            ctx.append(C_d)
        base = de.concat([H_d] + ctx) if ctx else H_d
        if c.align:
            Ha = de.linear(H_d, P["W_proj"])
            g_scores = de.matmul(Ha, de.transpose(Ha))
            gamma = de.softmax(g_scores, causal)
            C_a = de.matmul(gamma, Ha)
            a_logit = de.select(de.linear(H_d, P["W_ali"]), 0, 2)
            A = de.sigmoid(a_logit)
            H_ali = de.mix(A, C_a, H_d)
            out.update(gamma_scores=g_scores, gamma=gamma, C_a=C_a, A_logit=a_logit, A=A,
                       H_a=Ha, H_ali=H_ali, causal=causal)
            ali_in = de.concat([H_ali] + ctx) if ctx else H_ali
        if c.separate_heads:
            out["t"] = de.linear(base, P["W_t"])
            out["u"] = de.linear(base, P["W_u"])
            out["b"] = de.linear(base, P["W_b"])
            out["s"] = de.linear(base, P["W_s"])
            out["v"] = de.linear(ali_in if c.align else base, P["W_v"])
        else:
            out["o"] = de.linear(ali_in if c.align else base, P["W_o"])
        return out

    # -- training ---------------------------------------------------------------

    def forward(self, batch: Batch) -> dict:
        H_e, finals = self.encode(batch.src, batch.src_mask)
        h0, c0 = self.initial_state(finals, batch.src.shape[0])
        x = self.decoder_inputs(batch.in_cat, batch.in_idx, batch.in_joint)
        H_d, _ = self.run_decoder(x, h0, c0)
        out = self.head_blocks(H_d, H_e, batch.src_mask)
        out["H_e"], out["H_d"], out["h0"] = H_e, H_d, h0
        return out

    def compute_losses(self, batch: Batch, out: dict | None = None) -> LossBreakdown:
        """Per-variant loss terms, each a mean over target length then over
        the batch."""
        c = self.config
        if out is None:
            out = self.forward(batch)
        B = batch.src.shape[0]
        w = batch.tgt_mask / batch.lengths[:, None] / B
        terms: dict[str, de.Value] = {}
        if c.separate_heads:
            parts = []
            for cat, key in ((Category.U, "u"), (Category.B, "b"), (Category.V, "v"), (Category.S, "s")):
                on = batch.tgt_cat == self.cat_index[cat]
                if on.any():
                    parts.append(de.cross_entropy(out[key], np.where(on, batch.tgt_idx, 0), w * on))
            ce = parts[0]
            for p in parts[1:]:
                ce = de.add(ce, p)
            terms["L_CE"] = ce
            terms["L_aux"] = de.cross_entropy(out["t"], batch.tgt_cat, w)
        else:
            terms["L_CE"] = de.cross_entropy(out["o"], batch.tgt_joint, w)
        if c.align:
            is_v = batch.align_dec >= 0
            if c.separate_heads:
                dec_w = w * is_v
                dec_t = np.maximum(batch.align_dec, 0)
            else:
                # merged head: the gate runs at every step, non-variables target 0
                dec_w = w
                dec_t = np.maximum(batch.align_dec, 0)
            terms["L_dec"] = de.bce_with_logits(out["A_logit"], dec_t.astype(float), dec_w)
            pos_w = w * (batch.align_dec == 1)
            terms["L_pos"] = de.cross_entropy(out["gamma_scores"], batch.align_pos, pos_w,
                                              mask=out["causal"])
        total = terms["L_CE"]
        for k in ("L_aux", "L_dec", "L_pos"):
            if k in terms:
                total = de.add(total, terms[k])
        return LossBreakdown(terms, total)

    # -- decoding ---------------------------------------------------------------

    def greedy_decode(self, src_tokens: list[int], return_trace: bool = False):
        """Greedy decoding of one sentence (vocabulary indices)."""
        with de.no_grad():
            return self._greedy(src_tokens, return_trace)

    def _greedy(self, src_tokens, return_trace):
        c = self.config
        v = self.vocabs
        n = c.max_output_len
        src = np.array([src_tokens if len(src_tokens) else [0]], np.int64)
        mask = np.ones_like(src, bool)
        H_e, finals = self.encode(src, mask)
        h, cell = self.initial_state(finals, 1)
        tokens: list[str] = []
        cats: list[Category] = []
        states: list[de.Value] = []
        prev = (self.start_cat, 0, -1)
        depth = 0
        pending = 0
        opened = False
        trace = []
        var_u = v.variable
        letters = [t for t in var_u.itos if t != NEW_VARIABLE]
        for i in range(n):
            x = self.decoder_inputs(np.array([[prev[0]]]), np.array([[prev[1]]]), np.array([[prev[2]]]))
            H_d_step, (h, cell) = self.run_decoder(x, h, cell)
            states.append(de.select(H_d_step, 0, 1))
            H_d = de.stack(states, axis=1)
            out = self.head_blocks(H_d, H_e, mask)
            last = {k: val.data[0, -1] for k, val in out.items()
                    if isinstance(val, de.Value) and val.data.ndim >= 2 and k in
                    ("t", "u", "b", "s", "v", "o", "A", "gamma")}
            step = {"A": float(last["A"]) if "A" in last else None}
            if c.separate_heads:
                cat, tok = self._choose_sep(last, i, n, depth, pending, tokens, cats, letters)
            else:
                cat, tok = self._choose_vanilla(last, tokens, cats)
            step.update(cat=cat.value, token=tok)
            trace.append(step)
            tokens.append(tok)
            cats.append(cat)
            if cat == Category.S:
                if tok == SCOPE_CLOSE:
                    depth -= 1
                else:
                    depth += 1
                    opened = True
            elif cat in (Category.U, Category.B):
                pending = 1 if cat == Category.U else 2
            elif cat == Category.V:
                pending = max(0, pending - 1)
            if c.separate_heads:
                vocab = v.of_category(cat)
                prev = (self.cat_index[cat], vocab.index(tok), v.joint.index(tok))
            else:
                prev = (self.cat_index[cat], 0, v.joint.index(tok))
            if opened and depth <= 0:
                break
        ts = TokenSequence(tokens, cats, unclosed=not (opened and depth <= 0))
        return (ts, trace) if return_trace else ts

    def _choose_vanilla(self, last, tokens, cats):
        v = self.vocabs
        logits = last["o"].copy()
        logits[v.joint.index(UNK)] = -np.inf
        tok = v.joint.token(int(np.argmax(logits)))
        if self.config.align and is_variable_token(tok) and last["A"] >= 0.5:
            prior = [j for j, cat in enumerate(cats) if cat == Category.V]
            if prior:
                j = max(prior, key=lambda k: last["gamma"][k])
                tok = tokens[j]
        if tok in (SCOPE_OPEN_TOP, SCOPE_OPEN_NOT, SCOPE_CLOSE):
            cat = Category.S
        elif is_variable_token(tok):
            cat = Category.V
        elif tok in v.binary:
            cat = Category.B
        else:
            cat = Category.U
        return cat, tok

    def _choose_sep(self, last, i, n, depth, pending, tokens, cats, letters):
        v = self.vocabs
        if i == 0:
            return Category.S, SCOPE_OPEN_TOP
        after_open = bool(tokens) and tokens[-1] in (SCOPE_OPEN_TOP, SCOPE_OPEN_NOT)
        if pending:
            allowed = {Category.V}
        else:
            allowed = set()
            if i + 2 + depth <= n and len(v.unary) > 1:
                allowed.add(Category.U)
            if i + 3 + depth <= n and len(v.binary) > 1:
                allowed.add(Category.B)
            can_open = i + 4 + depth <= n
            if not after_open or can_open:
                allowed.add(Category.S)
        scores = last["t"].copy()
        best, cat = -np.inf, None
        for k in _CATS:
            if k in allowed and scores[self.cat_index[k]] > best:
                best, cat = scores[self.cat_index[k]], k
        if cat is None:
            cat = Category.S
        if cat == Category.S:
            opts = []
            if not after_open:
                opts.append(SCOPE_CLOSE)
            if i + 4 + depth <= n:
                opts.append(SCOPE_OPEN_NOT)
            if not opts:
                opts = [SCOPE_CLOSE]
            logits = last["s"]
            tok = max(opts, key=lambda t: logits[v.scope.index(t)])
            return cat, tok
        if cat == Category.V:
            if self.config.align:
                prior = [j for j, k in enumerate(cats) if k == Category.V]
                if last["A"] >= 0.5 and prior:
                    j = max(prior, key=lambda k: last["gamma"][k])
                    return cat, tokens[j]
                used = set(t for t, k in zip(tokens, cats) if k == Category.V)
                for letter in letters:
                    if letter not in used:
                        return cat, letter
                return cat, letters[-1]
            logits = last["v"].copy()
            logits[v.variable.index(NEW_VARIABLE)] = -np.inf
            return cat, v.variable.token(int(np.argmax(logits)))
        key, vocab = ("u", v.unary) if cat == Category.U else ("b", v.binary)
        logits = last[key].copy()
        logits[vocab.index(UNK)] = -np.inf
        return cat, vocab.token(int(np.argmax(logits)))
