"""Named invariant checks on small instances, run by ``fedravan verify``."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from . import adapters as ad
from . import config as C
from . import flcore as fl
from . import linalg
from . import model as mdl
from .experiment import build_state, with_overrides
from .linalg import make_stream

EXACT_TOL = 1e-12
FD_TOL = 1e-5
FD_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def tiny_config(strategy: str = "ravan", **strategy_fields) -> C.ExperimentConfig:
    """A federation small enough for sub-second rounds (d=12, 6 clients)."""
    raw = {
        "schema_version": 1,
        "strategy": {"name": strategy, "rank": 2, "heads": 3, **strategy_fields},
        "federation": {"n_clients": 6, "clients_per_round": 3, "rounds": 3, "local_steps": 5,
                       "batch_size": 8, "alpha": 0.3},
        "task": {"d": 12, "n_classes": 4, "n_per_class": 30, "n_test_per_class": 10,
                 "pretrain_steps": 20},
        "optimizer": {"lr": 1e-2},
        "analysis": {"track_spectra": False},
    }
    return C.from_dict(raw)


# ---------------------------------------------------------------- gradient checks

def fd_relative_error(model: mdl.ToyModel, x, y, step: float = FD_STEP) -> float:
    """Max over tensors of max|analytic - central FD| / max|central FD|."""
    _, grads = mdl.loss_and_grads(model, x, y)
    worst = 0.0
    for name, p in mdl.trainable_params(model).items():
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + step
            lp = mdl.loss_and_grads(model, x, y)[0]
            p[idx] = old - step
            lm = mdl.loss_and_grads(model, x, y)[0]
            p[idx] = old
            num[idx] = (lp - lm) / (2 * step)
        scale = max(np.abs(num).max(), 1e-8)
        worst = max(worst, float(np.abs(num - grads[name]).max() / scale))
    return worst


def random_adapted_model(family: str, stream, d: int = 6, n_classes: int = 3, r: int = 2,
                         h: int = 2) -> mdl.ToyModel:
    """Random two-layer model with generic (nonzero) adapter parameters."""
    model = mdl.build_toy_model(d, n_classes, stream)
    if family == "ravan":
        adapter = ad.init_ravan(d, d, r, h, ad.InitScheme("random_normal"), stream)
        adapter.cores = stream.standard_normal(adapter.cores.shape) * 0.5
        adapter.scales = 1.0 + 0.5 * stream.standard_normal(h)
    elif family in ("lora", "ffa"):
        adapter = ad.init_lora(d, d, r, stream, freeze_a=family == "ffa")
        adapter.b = stream.standard_normal(adapter.b.shape) * 0.5
    elif family == "fedsb":
        adapter = ad.FedSbAdapter(stream.standard_normal((d, r)), stream.standard_normal((r, r)),
                                  stream.standard_normal((r, d)))
    else:
        raise ValueError(family)
    model.adapted_layer().adapter = adapter
    return model


def check_gradients(instances: int = 5) -> Optional[str]:
    for family in ("ravan", "lora", "ffa", "fedsb"):
        for k in range(instances):
            stream = make_stream(k, "verify-grad", family)
            model = random_adapted_model(family, stream)
            x = stream.standard_normal((model.d_in, 4))
            y = stream.integers(0, model.n_classes, size=4)
            err = fd_relative_error(model, x, y)
            if not err < FD_TOL:
                return f"{family} instance {k}: relative error {err:.2e}"
    return None


# ---------------------------------------------------------------- algebra

def check_svd() -> Optional[str]:
    stream = make_stream(0, "verify-svd")
    for shape in ((9, 6), (5, 11), (8, 8)):
        m = stream.standard_normal(shape)
        u, s, vt = linalg.svd(m)
        err = np.abs(u * s @ vt - m).max()
        if err > 1e-10:
            return f"{shape}: reconstruction error {err:.2e}"
    return None


def check_orthogonality() -> Optional[str]:
    adapter = ad.init_ravan(16, 16, 2, 4, ad.InitScheme("gram_schmidt"), make_stream(0, "verify-gs"))
    b = np.concatenate(list(adapter.bases_b), axis=1)
    a = np.concatenate(list(adapter.bases_a), axis=0)
    err = max(np.abs(b.T @ b - np.eye(8)).max(), np.abs(a @ a.T - np.eye(8)).max())
    return None if err < 1e-10 else f"max |Q^T Q - I| = {err:.2e}"


def check_rank_bounds() -> Optional[str]:
    d, r = 16, 2
    for h in (1, 2, 4):
        stream = make_stream(h, "verify-rank")
        adapter = ad.init_ravan(d, d, r, h, ad.InitScheme("gram_schmidt"), stream)
        adapter.cores = stream.standard_normal(adapter.cores.shape)
        rank = linalg.numerical_rank(adapter.delta_w())
        if rank != h * r:
            return f"h={h}: rank {rank}, expected {h * r}"
    const = ad.init_ravan(d, d, r, 4, ad.InitScheme("constant"), make_stream(0, "verify-const"))
    const.cores = make_stream(1, "verify-const").standard_normal(const.cores.shape)
    rank = linalg.numerical_rank(const.delta_w())
    return None if rank <= r else f"constant init: rank {rank} > r={r}"


# ---------------------------------------------------------------- federated

def exactness_gaps(state: fl.FederatedState, rounds: int) -> List[float]:
    """Per round: ||post-aggregation dW - mean of client dW||_F."""
    gaps = []
    for _ in range(rounds):
        captured: Dict[int, fl.ClientUpdate] = {}
        _, new_state = fl.run_round(state, on_updates=captured.update)
        clients = [fl.global_delta(state, u.model) for _, u in sorted(captured.items())]
        target = np.mean(np.stack(clients), axis=0)
        gaps.append(linalg.frobenius_norm(fl.global_delta(new_state) - target))
        state = new_state
    return gaps


def check_exactness() -> Optional[str]:
    for tag in ("ravan", "ffalora", "fedsb", "fedexlora"):
        state = build_state(tiny_config(tag), 0)
        worst = max(exactness_gaps(state, 3))
        if not worst <= EXACT_TOL:
            return f"{tag}: aggregated dW differs from client mean by {worst:.2e}"
    return None


def check_fedit_gap() -> Optional[str]:
    records, _ = fl.run_rounds(build_state(tiny_config("fedit"), 0), 3)
    gaps = [r.agg_gap for r in records]
    return None if all(g > 1e-9 for g in gaps) else f"FedIT gaps {gaps}"


def _same_model(a: mdl.ToyModel, b: mdl.ToyModel) -> bool:
    pa, pb = a.adapted_layer(), b.adapted_layer()
    return (np.array_equal(pa.effective_weight(), pb.effective_weight())
            and np.array_equal(pa.w, pb.w))


def check_order_independence() -> Optional[str]:
    for tag in ("ravan", "fedit", "hetlora"):
        cfg = tiny_config(tag)
        if tag == "hetlora":
            cfg = with_overrides(cfg, federation={"budget_dist": "skewed_right"})
        state = build_state(cfg, 0)
        rec_a, a = fl.run_round(state)
        rec_b, b = fl.run_round(state, client_order=lambda ids: ids[::-1])
        if rec_a != rec_b or not _same_model(a.global_model, b.global_model):
            return f"{tag}: reversed client order changed the round"
    return None


def check_scale_reset() -> Optional[str]:
    seen = []

    def hook(client, local):
        seen.append(local.adapted_layer().adapter.scales.copy())

    fl.run_rounds(build_state(tiny_config("ravan"), 0), 3, on_client_start=hook)
    bad = [s for s in seen if not np.array_equal(s, np.ones_like(s))]
    return None if not bad else f"broadcast scales {bad[0]}"


def check_determinism() -> Optional[str]:
    from .analysis import format_report
    cfg = tiny_config("ravan")
    a, _ = fl.run_rounds(build_state(cfg, 0), 2)
    b, _ = fl.run_rounds(build_state(cfg, 0), 2)
    return None if format_report(a) == format_report(b) else "identical configs gave different reports"


CHECKS: Dict[str, Callable[[], Optional[str]]] = {
    "svd_reconstruction": check_svd,
    "gradient_check": check_gradients,
    "basis_orthogonality": check_orthogonality,
    "rank_bounds": check_rank_bounds,
    "exact_aggregation": check_exactness,
    "fedit_inexactness": check_fedit_gap,
    "order_independence": check_order_independence,
    "scale_reset": check_scale_reset,
    "determinism": check_determinism,
}


def run_all(checks: Optional[Dict[str, Callable[[], Optional[str]]]] = None) -> List[CheckResult]:
    results = []
    for name, fn in (checks or CHECKS).items():
        start = time.perf_counter()
        try:
            detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            detail = f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, detail is None, detail or "ok", time.perf_counter() - start))
    return results


def format_table(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.seconds:6.2f}s  {r.detail}"
             for r in results]
    return "\n".join(lines)
