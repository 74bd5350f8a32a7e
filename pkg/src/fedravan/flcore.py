"""Federated round loop: client sampling, head selection, local training,
compute budgets and the server aggregation rules of every strategy.

All means are plain ``1/|C|`` averages (no sample-count weighting). Client
results are always aggregated in ascending client-id order, so the global state
does not depend on the order in which clients ran.
"""
from __future__ import annotations

import math
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import adapters as ad
from . import linalg
from . import model as mdl
from .data import Dataset
from .errors import ClientError, ProtocolError, ShapeError, UndefinedRankError
from .linalg import RngStream, make_stream

STRATEGIES = ("fullft", "fedit", "fedexlora", "ffalora", "fedsb", "hetlora", "flexlora", "ravan")
SCORE_FNS = ("random", "weight", "gradient")
BUDGET_TIERS = (0.25, 0.5, 0.75, 1.0)
BUDGET_DISTS = {
    "uniform": (0.25, 0.25, 0.25, 0.25),
    "bell_shaped": (0.15, 0.35, 0.35, 0.15),
    "skewed_right": (0.55, 0.25, 0.15, 0.05),
}
FACTOR_STRATEGIES = ("fedit", "fedexlora", "ffalora")
BOOTSTRAP_FRACTION = 0.01


@dataclass(frozen=True)
class AggregationStrategy:
    tag: str
    rank: int = 4  # LoRA rank, r_max (HetLoRA/FlexLoRA), Fed-SB rank, or per-head rank
    heads: int = 4
    score_fn: str = "random"
    trainable_scaling: bool = True
    init_scheme: ad.InitScheme = ad.InitScheme()
    reselect_each_step: bool = False
    scale_lr: Optional[float] = None

    def __post_init__(self):
        if self.tag not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.tag!r}; expected one of {STRATEGIES}")
        if self.score_fn not in SCORE_FNS:
            raise ValueError(f"unknown score function {self.score_fn!r}")
        if self.rank < 1 or self.heads < 1:
            raise ValueError("rank and heads must be >= 1")


def rank_for_budget(tag: str, n_budget: int, d: int, heads: int = 1) -> int:
    """Rank that spends at most ``n_budget`` trainable parameters on one d x d matrix."""
    if tag in ("fedit", "fedexlora", "hetlora", "flexlora"):
        r = n_budget // (2 * d)
    elif tag == "ffalora":
        r = n_budget // d
    elif tag == "fedsb":
        r = math.isqrt(n_budget)
    elif tag == "ravan":
        r = ad.heads_rank(n_budget, heads)
    else:
        raise ValueError(f"{tag} has no rank")
    return max(0, min(r, d))


@dataclass(frozen=True)
class FedConfig:
    seed: int = 0
    clients_per_round: int = 3
    local_steps: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eff_rank_tau: float = 0.01
    track_spectra: bool = True


@dataclass
class ClientState:
    id: int
    shard: np.ndarray
    budget_fraction: float = 1.0

    def k_heads(self, h: int) -> int:
        return max(1, int(math.floor(self.budget_fraction * h)))

    def rank(self, r_max: int) -> int:
        return max(1, int(math.floor(self.budget_fraction * r_max)))

    def stream(self, seed: int, round_idx: int) -> RngStream:
        return make_stream(seed, "client", self.id, round_idx)


@dataclass
class RoundRecord:
    round: int
    strategy: str
    seed: int
    train_loss: float
    eval_loss: float
    eval_acc: float
    agg_gap: Optional[float]
    upload_bytes: int
    eff_rank_entropy: Optional[float]
    eff_rank_threshold: Optional[float]
    head_norms: List[float]
    sampled_clients: List[int] = field(default_factory=list)
    head_counts: List[int] = field(default_factory=list)
    client_upload_bytes: List[int] = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class ClientUpdate:
    client_id: int
    payload: object
    heads: List[int]
    train_loss: float
    upload_bytes: int
    model: mdl.ToyModel
    broadcast_scales: Optional[np.ndarray] = None


@dataclass
class FederatedState:
    strategy: AggregationStrategy
    fed: FedConfig
    train: Dataset
    test: Dataset
    clients: List[ClientState]
    global_model: mdl.ToyModel
    initial_weight: np.ndarray
    round_idx: int = 0


# ---------------------------------------------------------------- sampling / budgets

def sample_clients(all_ids: Sequence[int], m: int, stream: RngStream) -> List[int]:
    ids = list(all_ids)
    if m > len(ids):
        raise ValueError(f"cannot sample {m} of {len(ids)} clients")
    picked = stream.choice(len(ids), size=m, replace=False)
    return sorted(ids[i] for i in picked)


def largest_remainder(proportions: Sequence[float], total: int) -> List[int]:
    raw = [p * total for p in proportions]
    counts = [int(math.floor(x)) for x in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def sample_budgets(n_clients: int, dist, stream: RngStream) -> np.ndarray:
    """Budget fraction per client from {1/4, 1/2, 3/4, 1}.

    ``dist`` is "homogeneous", a key of ``BUDGET_DISTS`` or an explicit
    four-way proportion tuple. Tier sizes use largest-remainder rounding and
    are assigned to clients by a random permutation.
    """
    if dist == "homogeneous":
        return np.ones(n_clients)
    props = BUDGET_DISTS[dist] if isinstance(dist, str) else tuple(dist)
    if len(props) != 4 or abs(sum(props) - 1.0) > 1e-9:
        raise ValueError("budget proportions must be four values summing to one")
    tiers = np.repeat(BUDGET_TIERS, largest_remainder(props, n_clients))
    return tiers[stream.permutation(n_clients)]


# ---------------------------------------------------------------- head selection

def head_scores(adapter: ad.RavanAdapter, score_fn: str, stream: Optional[RngStream] = None,
                model: Optional[mdl.ToyModel] = None, minibatch=None) -> np.ndarray:
    if score_fn == "random":
        return stream.random(adapter.h)
    if score_fn == "weight":
        return np.array([linalg.frobenius_norm(adapter.scales[i] * adapter.cores[i])
                         for i in range(adapter.h)])
    if score_fn == "gradient":
        x, y = minibatch
        if len(y) == 0:
            raise ValueError("gradient scoring needs a non-empty minibatch")
        taps = mdl.backprop(model, x, y).taps[model.adapted_index()]
        prod = adapter.product_grads(*taps)
        return np.array([linalg.frobenius_norm(p) for p in prod])
    raise ValueError(f"unknown score function {score_fn!r}")


def select_heads(k_heads: int, adapter: ad.RavanAdapter, score_fn: str, *,
                 stream: Optional[RngStream] = None, model: Optional[mdl.ToyModel] = None,
                 minibatch=None) -> List[int]:
    """Top-``k_heads`` heads by score, ties to the lower index. Selecting every
    head consumes no randomness and computes no scores."""
    if k_heads > adapter.h:
        raise ValueError(f"k_heads={k_heads} exceeds h={adapter.h}")
    if k_heads == adapter.h:
        return list(range(adapter.h))
    scores = head_scores(adapter, score_fn, stream, model, minibatch)
    order = np.lexsort((np.arange(adapter.h), -scores))
    return sorted(int(i) for i in order[:k_heads])


# ---------------------------------------------------------------- aggregation rules

def _mean(mats: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean(np.stack(mats), axis=0)


def _check_same(mats, what):
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise ShapeError(f"{what}: mismatched shapes {sorted(shapes)}")


def aggregate_ravan(payloads: Mapping[int, Mapping[int, np.ndarray]], previous_cores: np.ndarray):
    """Per-head mean of uploaded s_i H_i products.

    ``payloads`` maps client id -> {head index: s_i H_i}. Heads nobody trained keep
    their previous core. Returns ``(new_cores, counts)``; global scales are reset
    to one by the caller.
    """
    h, r, _ = previous_cores.shape
    new = previous_cores.copy()
    counts = [0] * h
    for i in range(h):
        received = []
        for cid in sorted(payloads):
            if i in payloads[cid]:
                mat = np.asarray(payloads[cid][i])
                if mat.shape != (r, r):
                    raise ProtocolError(f"client {cid} sent head {i} with shape {mat.shape}, "
                                        f"expected {(r, r)}")
                received.append(mat)
        for cid in payloads:
            bad = [k for k in payloads[cid] if not 0 <= k < h]
            if bad:
                raise ProtocolError(f"client {cid} sent unknown head {bad[0]}")
        counts[i] = len(received)
        if received:
            new[i] = _mean(received)
    return new, counts


def aggregate_fedit(bs: Sequence[np.ndarray], as_: Sequence[np.ndarray]):
    _check_same(bs, "B")
    _check_same(as_, "A")
    return _mean(bs), _mean(as_)


def aggregate_fedex(bs, as_, w):
    """FedIT means plus the residual mean(B_c A_c) - mean(B) mean(A) folded into W."""
    b, a = aggregate_fedit(bs, as_)
    residual = _mean([bc @ ac for bc, ac in zip(bs, as_)]) - b @ a
    return b, a, w + residual


def aggregate_ffa(bs: Sequence[np.ndarray]) -> np.ndarray:
    _check_same(bs, "B")
    return _mean(bs)


def aggregate_fedsb(cores: Sequence[np.ndarray]) -> np.ndarray:
    _check_same(cores, "core")
    return _mean(cores)


def pad_factors(b, a, r_max):
    r = b.shape[1]
    if r > r_max or a.shape[0] != r:
        raise ShapeError(f"factor rank {r} incompatible with r_max={r_max}")
    bp = np.zeros((b.shape[0], r_max))
    ap = np.zeros((r_max, a.shape[1]))
    bp[:, :r] = b
    ap[:r] = a
    return bp, ap


def aggregate_hetlora(bs, as_, r_max: int):
    """Zero-pad to r_max, then sum weighted by ||B_c A_c||_F / sum_c ||B_c A_c||_F.

    All-zero norms fall back to uniform weights. Returns ``(B, A, weights)``;
    clients receive ``B[:, :r_c], A[:r_c]`` (see ``truncate_factors``).
    """
    norms = np.array([linalg.frobenius_norm(b @ a) for b, a in zip(bs, as_)])
    total = norms.sum()
    weights = norms / total if total > 0 else np.full(len(bs), 1.0 / len(bs))
    padded = [pad_factors(b, a, r_max) for b, a in zip(bs, as_)]
    b = sum(w * p[0] for w, p in zip(weights, padded))
    a = sum(w * p[1] for w, p in zip(weights, padded))
    return b, a, weights


def truncate_factors(b, a, r_c: int):
    return b[:, :r_c].copy(), a[:r_c].copy()


def aggregate_flexlora(bs, as_, ranks: Sequence[int]):
    """SVD of mean(B_c A_c); for each requested rank r returns (U_r Sigma_r, V^T_r)."""
    m = _mean([b @ a for b, a in zip(bs, as_)])
    u, s, vt = linalg.svd(m)
    return [(u[:, :r] * s[:r], vt[:r].copy()) for r in ranks]


def aggregation_gap(bs, as_) -> float:
    if len(bs) < 2:
        raise ValueError("aggregation gap needs at least two clients")
    b, a = aggregate_fedit(bs, as_)
    return linalg.frobenius_norm(_mean([bc @ ac for bc, ac in zip(bs, as_)]) - b @ a)


# ---------------------------------------------------------------- payload wire format

def encode_ravan_payload(payload: Mapping[int, np.ndarray]) -> bytes:
    """Per head: uint32 head index, uint32 r, r*r little-endian float64 of s_i H_i."""
    out = []
    for i in sorted(payload):
        mat = np.asarray(payload[i], dtype=np.float64)
        out.append(struct.pack("<II", i, mat.shape[0]) + mat.astype("<f8").tobytes())
    return b"".join(out)


def decode_ravan_payload(buf: bytes) -> Dict[int, np.ndarray]:
    out = {}
    offset = 0
    while offset < len(buf):
        i, r = struct.unpack_from("<II", buf, offset)
        offset += 8
        out[i] = np.frombuffer(buf, "<f8", r * r, offset).astype(np.float64).reshape(r, r)
        offset += 8 * r * r
    return out


def payload_bytes(payload) -> int:
    """Bytes of parameter values uploaded (8 per float64), excluding record headers."""
    if isinstance(payload, np.ndarray):
        return 8 * payload.size
    if isinstance(payload, Mapping):
        return sum(payload_bytes(v) for v in payload.values())
    return sum(payload_bytes(v) for v in payload)


# ---------------------------------------------------------------- setup

def _attach_adapter(model: mdl.ToyModel, strategy: AggregationStrategy, stream: RngStream,
                    train: Dataset, fed: FedConfig) -> None:
    layer = model.adapted_layer()
    d_out, d_in = layer.w.shape
    tag = strategy.tag
    if tag == "fullft":
        model.full_ft = True
    elif tag in ("fedit", "fedexlora", "hetlora", "flexlora"):
        layer.adapter = ad.init_lora(d_out, d_in, strategy.rank, stream)
    elif tag == "ffalora":
        layer.adapter = ad.init_lora(d_out, d_in, strategy.rank, stream, freeze_a=True)
    elif tag == "ravan":
        layer.adapter = ad.init_ravan(d_out, d_in, strategy.rank, strategy.heads,
                                      strategy.init_scheme, stream, strategy.trainable_scaling)
    elif tag == "fedsb":
        layer.adapter = ad.init_fedsb(bootstrap_delta(model, train, fed), strategy.rank)


def bootstrap_delta(model: mdl.ToyModel, train: Dataset, fed: FedConfig) -> np.ndarray:
    """Adapted-layer update from one centralized Full-FT epoch on a 1% server split."""
    stream = make_stream(fed.seed, "bootstrap")
    n_boot = max(fed.batch_size, int(round(BOOTSTRAP_FRACTION * train.n)))
    idx = stream.choice(train.n, size=min(n_boot, train.n), replace=False)
    full = model.clone()
    full.full_ft = True
    for layer in full.layers:
        layer.adapter = None
    before = full.clone()
    steps = max(1, len(idx) // fed.batch_size)
    state = mdl.AdamState(fed.lr, fed.beta1, fed.beta2, fed.eps)
    mdl.train_steps(full, train.features[:, idx], train.labels[idx], steps, state, stream,
                    fed.batch_size)
    return mdl.full_ft_delta(before, full)[model.adapted_index()]


def setup_federation(train: Dataset, test: Dataset, shards: Sequence[np.ndarray],
                     strategy: AggregationStrategy, fed: FedConfig, budgets=None,
                     n_layers: int = 2, adapter: Optional[ad.Adapter] = None,
                     backbone: Optional[mdl.ToyModel] = None) -> FederatedState:
    """Global model plus one client per shard.

    The backbone is ``backbone`` (copied, adapters stripped) or, if absent, a fresh
    random network from the seed's "backbone" stream. ``adapter`` overrides the
    strategy's own initialization.
    """
    if backbone is not None:
        model = backbone.clone()
        model.full_ft = False
        for layer in model.layers:
            layer.adapter = None
    else:
        model = mdl.build_toy_model(train.d, train.n_classes, make_stream(fed.seed, "backbone"),
                                    n_layers=n_layers)
    initial = model.adapted_layer().w.copy()
    if adapter is not None:
        model.adapted_layer().adapter = adapter
    else:
        _attach_adapter(model, strategy, make_stream(fed.seed, "adapter-init"), train, fed)
    if budgets is None:
        budgets = np.ones(len(shards))
    clients = [ClientState(i, np.asarray(s), float(b)) for i, (s, b) in enumerate(zip(shards, budgets))]
    if fed.clients_per_round > len(clients):
        raise ValueError("clients_per_round exceeds the number of clients")
    return FederatedState(strategy, fed, train, test, clients, model, initial)


# ---------------------------------------------------------------- local training

def broadcast(global_model: mdl.ToyModel, strategy: AggregationStrategy,
              client: ClientState) -> mdl.ToyModel:
    """Client copy of the global model: scales reset to one, factors truncated to r_c."""
    local = global_model.clone()
    layer = local.adapted_layer()
    if strategy.tag == "ravan":
        layer.adapter.scales = np.ones(layer.adapter.h)
        layer.adapter.active_mask = np.ones(layer.adapter.h, dtype=bool)
    elif strategy.tag in ("hetlora", "flexlora"):
        r_c = client.rank(layer.adapter.r)
        b, a = truncate_factors(layer.adapter.b, layer.adapter.a, r_c)
        layer.adapter = ad.VanillaLoraAdapter(b, a)
    return local


def _payload(local: mdl.ToyModel, strategy: AggregationStrategy, heads: List[int]):
    adapter = local.adapted_layer().adapter
    tag = strategy.tag
    if tag == "ravan":
        return {i: adapter.scales[i] * adapter.cores[i] for i in heads}
    if tag in ("fedit", "fedexlora", "hetlora", "flexlora"):
        return (adapter.b.copy(), adapter.a.copy())
    if tag == "ffalora":
        return adapter.b.copy()
    if tag == "fedsb":
        return adapter.core.copy()
    return {k: v.copy() for k, v in mdl.trainable_params(local).items()}


def local_train(client: ClientState, global_model: mdl.ToyModel, strategy: AggregationStrategy,
                fed: FedConfig, train: Dataset, round_idx: int, n_steps: Optional[int] = None,
                on_start: Optional[Callable] = None) -> ClientUpdate:
    n_steps = fed.local_steps if n_steps is None else n_steps
    if len(client.shard) == 0:
        raise ValueError("client holds no samples")
    stream = client.stream(fed.seed, round_idx)
    local = broadcast(global_model, strategy, client)
    x = train.features[:, client.shard]
    y = train.labels[client.shard]

    adam = mdl.AdamState(fed.lr, fed.beta1, fed.beta2, fed.eps)
    if strategy.scale_lr is not None:
        adam.lr_overrides["adapter.scales"] = strategy.scale_lr

    heads: List[int] = []
    adapter = local.adapted_layer().adapter
    is_ravan = strategy.tag == "ravan"

    def choose():
        k = client.k_heads(adapter.h)
        minibatch = None
        if strategy.score_fn == "gradient" and k < adapter.h:
            idx = stream.integers(0, len(y), size=fed.batch_size)
            minibatch = (x[:, idx], y[idx])
        sel = select_heads(k, adapter, strategy.score_fn, stream=stream, model=local,
                           minibatch=minibatch)
        mask = np.zeros(adapter.h, dtype=bool)
        mask[sel] = True
        adapter.active_mask = mask
        return sel

    broadcast_scales = adapter.scales.copy() if is_ravan else None
    if is_ravan:
        heads = choose()
    if on_start is not None:
        on_start(client, local)

    if is_ravan and strategy.reselect_each_step:
        touched = set(heads)
        losses = []
        for step in range(n_steps):
            if step:
                touched.update(choose())
            losses += mdl.train_steps(local, x, y, 1, adam, stream, fed.batch_size)
        heads = sorted(touched)
    else:
        losses = mdl.train_steps(local, x, y, n_steps, adam, stream, fed.batch_size)

    payload = _payload(local, strategy, heads)
    train_loss = float(np.mean(losses)) if losses else float("nan")
    return ClientUpdate(client.id, payload, heads, train_loss, payload_bytes(payload), local,
                        broadcast_scales)


# ---------------------------------------------------------------- server step

def _aggregate(state: FederatedState, updates: Dict[int, ClientUpdate]):
    """New global model, per-head counts and the FedIT-style gap (where defined)."""
    strategy = state.strategy
    new = state.global_model.clone()
    layer = new.adapted_layer()
    ids = sorted(updates)
    payloads = [updates[c].payload for c in ids]
    gap = None
    counts: List[int] = []
    tag = strategy.tag

    if tag == "ravan":
        cores, counts = aggregate_ravan({c: updates[c].payload for c in ids}, layer.adapter.cores)
        layer.adapter.cores = cores
        layer.adapter.scales = np.ones(layer.adapter.h)
        layer.adapter.active_mask = np.ones(layer.adapter.h, dtype=bool)
    elif tag in ("fedit", "fedexlora"):
        bs = [p[0] for p in payloads]
        as_ = [p[1] for p in payloads]
        if len(ids) >= 2:
            gap = aggregation_gap(bs, as_)
        if tag == "fedit":
            layer.adapter.b, layer.adapter.a = aggregate_fedit(bs, as_)
        else:
            layer.adapter.b, layer.adapter.a, layer.w = aggregate_fedex(bs, as_, layer.w)
    elif tag == "ffalora":
        if len(ids) >= 2:
            gap = aggregation_gap(payloads, [layer.adapter.a] * len(ids))
        layer.adapter.b = aggregate_ffa(payloads)
    elif tag == "fedsb":
        layer.adapter.core = aggregate_fedsb(payloads)
    elif tag == "hetlora":
        r_max = layer.adapter.r
        b, a, _ = aggregate_hetlora([p[0] for p in payloads], [p[1] for p in payloads], r_max)
        layer.adapter.b, layer.adapter.a = b, a
    elif tag == "flexlora":
        r_max = layer.adapter.r
        [(b, a)] = aggregate_flexlora([p[0] for p in payloads], [p[1] for p in payloads], [r_max])
        layer.adapter.b, layer.adapter.a = b, a
    else:  # fullft
        merged = {k: _mean([p[k] for p in payloads]) for k in payloads[0]}
        mdl.set_params(new, merged)
    return new, counts, gap


def global_delta(state: FederatedState, model: Optional[mdl.ToyModel] = None) -> np.ndarray:
    """Effective adapted-layer weight minus the initial backbone weight."""
    model = state.global_model if model is None else model
    return model.adapted_layer().effective_weight() - state.initial_weight


def spectrum_summary(delta: np.ndarray, tau: float):
    sv = linalg.svd(delta).singular_values
    try:
        return (linalg.effective_rank(sv, linalg.EntropyExp()),
                linalg.effective_rank(sv, linalg.ThresholdFraction(tau)))
    except UndefinedRankError:
        return None, None


def run_round(state: FederatedState, client_order: Optional[Callable[[List[int]], List[int]]] = None,
              on_client_start: Optional[Callable] = None, max_workers: int = 1,
              on_updates: Optional[Callable[[Dict[int, ClientUpdate]], None]] = None):
    """Sample, broadcast, train locally, aggregate, evaluate.

    ``client_order`` may permute the execution order of the sampled clients;
    ``on_client_start(client, local_model)`` runs after broadcast and head
    selection, before the first local step. Returns ``(record, new_state)``.
    """
    start = time.perf_counter()
    t = state.round_idx + 1
    fed = state.fed
    sampled = sample_clients([c.id for c in state.clients], fed.clients_per_round,
                             make_stream(fed.seed, "sampling", t))
    order = list(client_order(list(sampled))) if client_order else sampled
    if sorted(order) != sampled:
        raise ValueError("client_order must be a permutation of the sampled clients")
    by_id = {c.id: c for c in state.clients}

    def work(cid):
        try:
            return local_train(by_id[cid], state.global_model, state.strategy, fed, state.train, t,
                               on_start=on_client_start)
        except Exception as exc:
            raise ClientError(cid, exc) from exc

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            results = list(pool.map(work, order))
    else:
        results = [work(cid) for cid in order]
    updates = {u.client_id: u for u in results}
    if on_updates is not None:
        on_updates(updates)

    new_model, counts, gap = _aggregate(state, updates)
    new_state = replace(state, global_model=new_model, round_idx=t)
    eval_loss, eval_acc = mdl.evaluate(new_model, state.test.features, state.test.labels)

    eff_h = eff_t = None
    if fed.track_spectra:
        eff_h, eff_t = spectrum_summary(global_delta(new_state), fed.eff_rank_tau)
    head_norms: List[float] = []
    adapter = new_model.adapted_layer().adapter
    if isinstance(adapter, ad.RavanAdapter):
        head_norms = [linalg.frobenius_norm(adapter.scales[i] * adapter.cores[i])
                      for i in range(adapter.h)]

    record = RoundRecord(
        round=t,
        strategy=state.strategy.tag,
        seed=fed.seed,
        train_loss=float(np.mean([updates[c].train_loss for c in sampled])),
        eval_loss=eval_loss,
        eval_acc=eval_acc,
        agg_gap=gap,
        upload_bytes=int(sum(updates[c].upload_bytes for c in sampled)),
        eff_rank_entropy=eff_h,
        eff_rank_threshold=eff_t,
        head_norms=head_norms,
        sampled_clients=sampled,
        head_counts=counts,
        client_upload_bytes=[updates[c].upload_bytes for c in sampled],
        wall_time=time.perf_counter() - start,
    )
    return record, new_state


def run_rounds(state: FederatedState, rounds: int, **kwargs):
    records = []
    for _ in range(rounds):
        record, state = run_round(state, **kwargs)
        records.append(record)
    return records, state
