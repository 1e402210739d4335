"""Trial-engine backend selection: compiled kernel with pure-Python fallback.

The compiled extension (`repeaterchain._engine_c`, Cython) and the Python
reference (`repeaterchain.protocols.simulate_trial`) implement the same
trial semantics with identical RNG draw order and floating-point expression
order, so they produce bit-identical results; the tests enforce this.  The
compiled kernel is selected automatically at import when present.
"""

from __future__ import annotations

import numpy as np

from . import protocols
from .physics import DEFAULT_CONSTANTS, f_req, p_gen

try:  # pragma: no cover - depends on the build
    from . import _engine_c
except ImportError:  # pragma: no cover
    _engine_c = None

DEFAULT_BACKEND = "compiled" if _engine_c is not None else "python"


def available_backends():
    return ("compiled", "python") if _engine_c is not None else ("python",)


def run_trial_raw(
    lengths,
    tc_ext,
    protocol,
    mode,
    T_sim,
    seed,
    f_min=0.81,
    capacity=20,
    f_mean=0.9575,
    interval_ticks=7.36,
    jitter=0.0,
    tc_int=1.0,
    f_gen=0.92,
    f0=0.94,
    step_cap=200,
    policy=None,
    policy_stochastic=True,
    collect_events=False,
    backend=None,
    consts=DEFAULT_CONSTANTS,
):
    """Run one trial and return raw aggregates.

    Returns (n_deliveries, sum_F, t_last, sum_dwell, events) with events
    either None or a tuple of float64 arrays (F, t_emit, age, dwell).
    """
    backend = backend or DEFAULT_BACKEND
    if backend == "compiled" and _engine_c is None:
        raise RuntimeError("compiled engine requested but not built")
    lengths = tuple(float(L) for L in lengths)
    n = len(lengths)
    if backend == "compiled" and n > 64:
        backend = "python"  # beyond the kernel's stack arrays; same results
    taus = np.array([L / consts.c_fiber for L in lengths], dtype=np.float64)
    pgens = np.array([p_gen(L, consts) for L in lengths], dtype=np.float64)
    floor_link = f_req(n, f_min)
    floor_chain = f_req(1, f_min)
    bitgen = np.random.PCG64(seed)
    policy_sizes = policy_params = None
    if policy is not None:
        policy_sizes = np.asarray(policy.sizes, dtype=np.int64)
        policy_params = np.ascontiguousarray(policy.params, dtype=np.float64)

    impl = protocols.simulate_trial if backend == "python" else _engine_c.simulate_trial
    return impl(
        lengths,
        tc_ext,
        f_min,
        capacity,
        protocol,
        mode,
        T_sim,
        bitgen,
        taus,
        pgens,
        floor_link,
        floor_chain,
        f_mean=f_mean,
        interval_ticks=interval_ticks,
        jitter=jitter,
        tc_int=tc_int,
        f_gen=f_gen,
        f0=f0,
        step_cap=step_cap,
        policy_sizes=policy_sizes,
        policy_params=policy_params,
        policy_stochastic=policy_stochastic,
        collect_events=collect_events,
    )
