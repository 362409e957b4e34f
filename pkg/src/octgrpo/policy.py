"""Autoregressive token policy over a joint semantic + geometric vocabulary.

Token ids ``[0, n_sem_vocab)`` are semantic symbols, ``[n_sem_vocab,
n_sem_vocab + n_geo_vocab)`` are codebook indices offset by ``n_sem_vocab``,
and the last embedding row is the begin token. A sequence is ``n_sem``
semantic steps followed by ``n_geo`` geometric steps; each step may only emit
ids of its own segment.

The hidden state at step ``t`` is the mean embedding of the previous
``min(window, t)`` tokens (the begin token at ``t = 0``) plus an absolute
position embedding plus a prompt embedding; logits are a linear read-out.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, PolicyError

PARAMS_MAGIC = b"CRPP"
TABLES = ("tok_emb", "pos_emb", "cond_emb", "out_w")
INIT_SCALE = 0.05


@dataclass(frozen=True)
class PolicyShape:
    n_sem_vocab: int = 64
    n_geo_vocab: int = 256
    width: int = 32
    window: int = 8
    n_sem: int = 8
    n_geo: int = 512
    n_prompts: int = 1

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 1:
                raise PolicyError(f"{name} must be >= 1, got {v}")

    @property
    def vocab(self) -> int:
        return self.n_sem_vocab + self.n_geo_vocab

    @property
    def bos(self) -> int:
        return self.vocab

    @property
    def length(self) -> int:
        return self.n_sem + self.n_geo

    def segment(self, t: int) -> tuple[int, int]:
        """Half-open id range legal at step ``t``."""
        if t < self.n_sem:
            return 0, self.n_sem_vocab
        return self.n_sem_vocab, self.vocab

    def table_shapes(self) -> dict:
        return {
            "tok_emb": (self.vocab + 1, self.width),
            "pos_emb": (self.length, self.width),
            "cond_emb": (self.n_prompts, self.width),
            "out_w": (self.width, self.vocab),
        }


class PolicyParams:
    """Parameter tables; gradients and optimizer moments use the same class."""

    def __init__(self, shape: PolicyShape, tables: dict | None = None):
        self.shape = shape
        shapes = shape.table_shapes()
        if tables is None:
            tables = {k: np.zeros(s) for k, s in shapes.items()}
        for k in TABLES:
            arr = np.asarray(tables[k], dtype=float)
            if arr.shape != shapes[k]:
                raise PolicyError(f"{k} has shape {arr.shape}, expected {shapes[k]}")
            setattr(self, k, arr)

    tok_emb: np.ndarray
    pos_emb: np.ndarray
    cond_emb: np.ndarray
    out_w: np.ndarray

    @classmethod
    def init(cls, shape: PolicyShape, seed: int = 0, scale: float = INIT_SCALE) -> "PolicyParams":
        rng = np.random.default_rng(seed)
        return cls(shape, {k: rng.uniform(-scale, scale, size=s) for k, s in shape.table_shapes().items()})

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in TABLES]

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.shape, {k: getattr(self, k).copy() for k in TABLES})

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(self.shape)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, shape: PolicyShape, vec) -> "PolicyParams":
        out, i = {}, 0
        for k, s in shape.table_shapes().items():
            n = int(np.prod(s))
            out[k] = np.asarray(vec[i:i + n], dtype=float).reshape(s)
            i += n
        return cls(shape, out)

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float((a * a).sum()) for a in self.arrays())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class Rollout:
    tokens: np.ndarray
    logp_old: np.ndarray
    prompt_id: int


def split_tokens(shape: PolicyShape, tokens) -> tuple[np.ndarray, np.ndarray]:
    """``(semantic ids, codebook indices)`` of a full sequence."""
    tokens = np.asarray(tokens)
    return tokens[:shape.n_sem], tokens[shape.n_sem:] - shape.n_sem_vocab


def _check_tokens(shape: PolicyShape, tokens, prompt_id: int, partial: bool = False) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if not 0 <= prompt_id < shape.n_prompts:
        raise PolicyError(f"prompt id {prompt_id} out of range")
    if len(tokens) > shape.length or (not partial and len(tokens) != shape.length):
        raise PolicyError(f"sequence length {len(tokens)} != {shape.length}")
    if np.any(tokens < 0) or np.any(tokens >= shape.vocab):
        raise PolicyError("token id out of vocabulary")
    sem = tokens[:shape.n_sem]
    geo = tokens[shape.n_sem:]
    if np.any(sem >= shape.n_sem_vocab) or np.any(geo < shape.n_sem_vocab):
        raise PolicyError("illegal segment token")
    return tokens


def _context(params: PolicyParams, tokens: np.ndarray, t: int) -> np.ndarray:
    if t == 0:
        return params.tok_emb[params.shape.bos].copy()
    k = min(params.shape.window, t)
    acc = np.zeros(params.shape.width)
    for j in range(1, k + 1):
        acc += params.tok_emb[tokens[t - j]]
    return acc / k


def _hidden_all(params: PolicyParams, tokens: np.ndarray, prompt_id: int) -> np.ndarray:
    """Hidden states for every step of ``tokens``; same arithmetic order as ``_context``."""
    s = params.shape
    T = len(tokens)
    emb = params.tok_emb[tokens]
    acc = np.zeros((T, s.width))
    for j in range(1, s.window + 1):
        if j >= T + 1:
            break
        acc[j:] += emb[:T - j]
    k = np.minimum(np.arange(T), s.window).astype(float)
    h = np.empty((T, s.width))
    h[0] = params.tok_emb[s.bos]
    h[1:] = acc[1:] / k[1:, None]
    return h + params.pos_emb[:T] + params.cond_emb[prompt_id]


def _mask_logits(shape: PolicyShape, logits: np.ndarray, t0: int = 0) -> np.ndarray:
    """Set illegal-segment entries to -inf; rows are steps ``t0, t0+1, ...``."""
    out = logits.copy()
    steps = np.arange(t0, t0 + len(out))
    sem = steps < shape.n_sem
    out[sem, shape.n_sem_vocab:] = -np.inf
    out[~sem, :shape.n_sem_vocab] = -np.inf
    return out


def step_logits(params: PolicyParams, prefix, t: int, prompt_id: int) -> np.ndarray:
    s = params.shape
    if not 0 <= t < s.length:
        raise PolicyError(f"step {t} outside [0, {s.length})")
    prefix = _check_tokens(s, np.asarray(prefix, dtype=np.int64)[:t], prompt_id, partial=True)
    if len(prefix) < t:
        raise PolicyError(f"prefix shorter than step {t}")
    h = _context(params, prefix, t) + params.pos_emb[t] + params.cond_emb[prompt_id]
    return _mask_logits(s, (h @ params.out_w)[None], t)[0]


def log_softmax(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _all_log_probs(params: PolicyParams, tokens: np.ndarray, prompt_id: int):
    h = _hidden_all(params, tokens, prompt_id)
    # row-wise products: a batched matmul rounds differently from the sampler's per-step product
    logits = _mask_logits(params.shape, np.stack([row @ params.out_w for row in h]))
    return h, log_softmax(logits)


def sequence_logprob(params: PolicyParams, tokens, prompt_id: int) -> np.ndarray:
    """Per-step log-probability of ``tokens``; the sum is the joint log-probability."""
    tokens = _check_tokens(params.shape, tokens, prompt_id)
    _, lp = _all_log_probs(params, tokens, prompt_id)
    return lp[np.arange(len(tokens)), tokens]


def grad_logprob(params: PolicyParams, tokens, prompt_id: int, coef=None) -> PolicyParams:
    """Gradient of ``sum_t coef[t] * log pi(tokens[t] | prefix)``; ``coef`` defaults to ones."""
    s = params.shape
    tokens = _check_tokens(s, tokens, prompt_id)
    T = len(tokens)
    coef = np.ones(T) if coef is None else np.asarray(coef, dtype=float)
    h, lp = _all_log_probs(params, tokens, prompt_id)
    g_logits = -np.exp(lp) * coef[:, None]
    g_logits[np.arange(T), tokens] += coef

    g = params.zeros_like()
    g.out_w = h.T @ g_logits
    g_h = g_logits @ params.out_w.T
    g.pos_emb[:T] = g_h
    g.cond_emb[prompt_id] = g_h.sum(axis=0)
    g.tok_emb[s.bos] += g_h[0]
    k = np.minimum(np.arange(T), s.window).astype(float)
    scaled = np.zeros_like(g_h)
    scaled[1:] = g_h[1:] / k[1:, None]
    for j in range(1, min(s.window, T - 1) + 1):
        np.add.at(g.tok_emb, tokens[:T - j], scaled[j:])
    return g


def sample_sequence(params: PolicyParams, prompt_id: int, temperature: float = 1.0, rng_seed=0) -> Rollout:
    """Ancestral sampling. ``logp_old`` is recorded at temperature 1."""
    if not temperature > 0:
        raise PolicyError(f"temperature must be > 0, got {temperature}")
    s = params.shape
    if not 0 <= prompt_id < s.n_prompts:
        raise PolicyError(f"prompt id {prompt_id} out of range")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    tokens = np.zeros(s.length, dtype=np.int64)
    logp = np.zeros(s.length)
    base = params.cond_emb[prompt_id]
    for t in range(s.length):
        lo, hi = s.segment(t)
        h = _context(params, tokens, t) + params.pos_emb[t] + base
        # same masked full-row softmax as sequence_logprob so logp_old matches bit for bit
        row = h @ params.out_w
        lp = log_softmax(_mask_logits(s, row[None], t))[0, lo:hi]
        logits = row[lo:hi]
        scaled = log_softmax(logits / temperature)
        p = np.exp(scaled)
        cdf = np.cumsum(p)
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        i = min(i, hi - lo - 1)
        tokens[t] = lo + i
        logp[t] = lp[i]
    return Rollout(tokens, logp, prompt_id)


# -- CRPP checkpoints --------------------------------------------------------

def save_params(path, params: PolicyParams) -> None:
    s = params.shape
    header = PARAMS_MAGIC + struct.pack("<7I", s.n_sem_vocab, s.n_geo_vocab, s.width, s.window,
                                        s.n_sem, s.n_geo, s.n_prompts)
    body = b"".join(a.astype("<f4").tobytes() for a in params.arrays())
    Path(path).write_bytes(header + body)


def load_params(path) -> PolicyParams:
    data = Path(path).read_bytes()
    if len(data) < 32:
        raise FormatError("truncated checkpoint header")
    if data[:4] != PARAMS_MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {PARAMS_MAGIC!r}")
    try:
        shape = PolicyShape(*struct.unpack("<7I", data[4:32]))
    except PolicyError as exc:
        raise FormatError(str(exc)) from exc
    need = sum(int(np.prod(v)) for v in shape.table_shapes().values())
    if len(data) - 32 != 4 * need:
        raise FormatError(f"checkpoint body is {len(data) - 32} bytes, expected {4 * need}")
    vec = np.frombuffer(data[32:], dtype="<f4")
    return PolicyParams.from_flat(shape, vec.astype(float))
