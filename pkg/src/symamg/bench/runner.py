"""Build the configured problems and preconditioners, solve, and collect report rows."""
from __future__ import annotations

import dataclasses
import statistics
import time

from ..amg import AmgConfig, natural_amg
from ..amgr import AmgrConfig, build_amgr
from ..amgs import AmgsConfig, SchurPrecond, build_amgs
from ..fsai import build_fsai
from ..krylov import IdentityPreconditioner, JacobiPreconditioner, solve
from ..lowrank import (build_lrcamg, build_lrcfsai, subsystem_eigs_amg, subsystem_eigs_fsai, transformed)
from ..problems import build_stretched_grid, make_compatible_rhs, make_symmetric_problem
from ..symmetry import BlockDiagonalPreconditioner, SymmetryBasis, extract_subsystems
from .config import ExperimentConfig, PreconditionerSpec
from .report import ReportRow


def _pick(cls, params, allowed=None):
    names = {f.name for f in dataclasses.fields(cls)}
    allowed = names if allowed is None else allowed
    unknown = set(params) - allowed
    if unknown:
        raise ValueError(f"unknown option(s) {sorted(unknown)} for {cls.__name__}")
    return {k: v for k, v in params.items() if k in names}


_AMG_KEYS = {f.name for f in dataclasses.fields(AmgConfig)}


def _amg_config(params):
    return AmgConfig(**_pick(AmgConfig, params))


class _Case:
    """One problem instance plus shared setup products (subsystems, eigenpairs)."""

    def __init__(self, problem, config: ExperimentConfig):
        self.problem = problem
        self.config = config
        self._subset = None
        self._eigs = {}

    @property
    def mirrored(self):
        return self.problem.kind != "repeated"

    @property
    def subset(self):
        if self._subset is None:
            self._subset = extract_subsystems(self.problem.blocks)
        return self._subset

    @property
    def basis(self):
        return SymmetryBasis(self.problem.s, self.problem.n)

    def max_k(self, name):
        return max((p.params.get("k", 0) for p in self.config.preconditioners if p.name == name), default=0)

    def eigs(self, key, compute):
        """Eigenpairs shared by every rank of one family.

        Returns ``(pairs, seconds)`` where ``seconds`` is the cost of the
        original solve when it is being reused (0 when computed just now, as
        the caller's own timer already covers it).
        """
        if key in self._eigs:
            return self._eigs[key]
        t = time.perf_counter()
        out = compute()
        self._eigs[key] = (out, time.perf_counter() - t)
        return out, 0.0


def build_preconditioner(spec: PreconditionerSpec, case: _Case):
    """Returns ``(preconditioner, coarsening_ratio, avg_nnzr)``."""
    p, prob = spec.params, case.problem
    name = spec.name
    if name in ("lrcfsai", "lrcamg", "amgs") and not case.mirrored:
        raise ValueError(f"{name} needs a mirrored problem")
    if name == "none":
        return IdentityPreconditioner(), None, None
    if name == "jacobi":
        return JacobiPreconditioner(prob.matrix), None, None
    if name == "fsai":
        power = int(p.get("pattern_power", 1))
        if not case.mirrored or prob.s == 0:
            return build_fsai(prob.matrix, power), None, None
        parts = [build_fsai(A, power) for A in case.subset.subsystems]
        return transformed(case.basis, BlockDiagonalPreconditioner(parts, "fsai")), None, None
    if name == "amg":
        _pick(AmgConfig, p)
        M = natural_amg(prob, _amg_config(p))
        st = M.inner.stats
        return M, st.coarsening_ratio, st.avg_nnzr
    if name == "lrcfsai":
        allowed = {"k", "pattern_power", "eig_tol", "eig_floor"}
        if set(p) - allowed:
            raise ValueError(f"unknown option(s) {sorted(set(p) - allowed)} for lrcfsai")
        k, power, tol = int(p.get("k", 0)), int(p.get("pattern_power", 1)), float(p.get("eig_tol", 1e-2))
        fsai = build_fsai(case.subset.inner, power)
        eig_t = 0.0
        pairs = None
        kmax = case.max_k("lrcfsai")
        if k:
            pairs, eig_t = case.eigs(("lrcfsai", power, tol),
                                     lambda: subsystem_eigs_fsai(case.subset, fsai, kmax, tol, case.config.seed))
        M = build_lrcfsai(case.subset, k, fsai=fsai, eigenpairs=pairs, eig_floor=float(p.get("eig_floor", 1e-8)))
        return transformed(case.basis, M), None, None, eig_t
    if name == "lrcamg":
        opts = {k_: v for k_, v in p.items() if k_ in _AMG_KEYS}
        rest = set(p) - _AMG_KEYS - {"k", "eig_tol", "eig_floor"}
        if rest:
            raise ValueError(f"unknown option(s) {sorted(rest)} for lrcamg")
        k, tol = int(p.get("k", 0)), float(p.get("eig_tol", 1e-2))
        from ..amg import setup_amg
        amg = setup_amg(case.subset.inner, AmgConfig(**opts))
        eig_t = 0.0
        pairs = None
        kmax = case.max_k("lrcamg")
        if k:
            key = ("lrcamg", tol, tuple(sorted(opts.items())))
            pairs, eig_t = case.eigs(key, lambda: subsystem_eigs_amg(case.subset, amg, kmax, tol, case.config.seed))
        M = build_lrcamg(case.subset, k, amg=amg, eigenpairs=pairs, eig_floor=float(p.get("eig_floor", 1e-8)))
        return transformed(case.basis, M), amg.stats.coarsening_ratio, amg.stats.avg_nnzr, eig_t
    if name == "amgs":
        opts = {k_: v for k_, v in p.items() if k_ in _AMG_KEYS}
        cfg = AmgsConfig(**_pick(AmgsConfig, {k_: v for k_, v in p.items() if k_ not in _AMG_KEYS}),
                         amg_config=AmgConfig(**opts), seed=case.config.seed)
        M = build_amgs(prob, config=cfg)
        if isinstance(M, SchurPrecond):
            return M, M.amg_K.stats.coarsening_ratio, M.amg_K.stats.avg_nnzr
        return M, M.stats.coarsening_ratio, M.stats.avg_nnzr
    if name == "amgr":
        own = {f.name for f in dataclasses.fields(AmgrConfig)} - {"amg_config"}
        rest = set(p) - own - _AMG_KEYS
        if rest:
            raise ValueError(f"unknown option(s) {sorted(rest)} for amgr")
        coarse = AmgConfig(**{k_: v for k_, v in p.items() if k_ in _AMG_KEYS and k_ not in own})
        M = build_amgr(prob, config=AmgrConfig(**{k_: v for k_, v in p.items() if k_ in own}, amg_config=coarse))
        return M, M.stats.coarsening_ratio, M.stats.avg_nnzr
    raise ValueError(f"unknown preconditioner {name!r}")


def _problems(config: ExperimentConfig, full):
    ps = config.problem
    for size in (ps.full_sizes if full else ps.sizes):
        grid = build_stretched_grid(size, size, size, ps.gamma)
        for c in ps.cases:
            if ps.kind == "mirrored":
                yield make_symmetric_problem(grid, s=c, kind="mirrored")
            else:
                yield make_symmetric_problem(grid, kind="repeated", n_b=c)


def run_experiment(config: ExperimentConfig, full=False, progress=None):
    """Rows ordered by problem case, then by the configured preconditioner list."""
    rows = []
    for prob in _problems(config, full):
        case = _Case(prob, config)
        b = make_compatible_rhs(prob.n, config.seed)
        base_t = None
        for spec in config.preconditioners:
            t0 = time.perf_counter()
            built = build_preconditioner(spec, case)
            t_setup = time.perf_counter() - t0
            M, ratio, nnzr = built[:3]
            if len(built) > 3:
                t_setup += built[3]  # reused eigensolve, charged to every rank that uses it
            method = config.method
            if method == "auto":
                method = "pcg" if M.symmetric else "gmres"
            cfg = config.krylov(method)
            times = []
            for _ in range(config.repetitions):
                x, st = solve(prob.matrix, M, b, cfg)
                times.append(st.wall_time)
            t_sol = statistics.median(times)
            if base_t is None:
                base_t = t_sol
            row = ReportRow(
                preconditioner=spec.label, method=method,
                s=prob.s if prob.kind != "repeated" else None, n_b=prob.n_b, n=prob.n,
                coarsening_ratio=ratio, avg_nnzr=nnzr, iterations=st.iterations, converged=st.converged,
                t_setup_seconds=t_setup, t_sol_seconds=t_sol,
                speedup_vs_baseline=base_t / t_sol if t_sol > 0 else float("nan"))
            rows.append(row)
            if progress:
                progress(row)
    return rows
