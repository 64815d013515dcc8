"""``forrelate`` command line: estimators, samplers and recursive QAOA drivers.

All randomness derives from ``--seed`` through named streams, so identical
arguments give identical CSV output whatever ``--jobs`` is.  Wall times go to
the report on stdout only.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import __version__
from .formats import ParseError, parse_function_spec, parse_graph, parse_ops, parse_tn_system, parse_two_local
from .graph_core import Graph, generate_grid, generate_triangular, min_fill_td
from .graph_forrelation import GraphForrelationInstance, phi_graph_estimate, phi_graph_exact
from .oracle_forrelation import phi_estimate, phi_exact
from .qaoa import (
    IsingInstance,
    QAOAAngles,
    edge_means,
    energy_statevector,
    exact_maxcut,
    rqaoa,
)
from .query_sim import amplitude_estimate, amplitude_exact, kfold_circuit
from .streams import derive_rng
from .tn_sampler import connectivity_graph, sample as tn_sample
from .two_local import TwoLocalFunction

__all__ = ["main", "build_parser", "RunConfig", "SweepResult"]


@dataclass
class RunConfig:
    subcommand: str
    seed: int
    epsilon: Optional[float]
    out: Optional[str]
    jobs: int
    args: argparse.Namespace


@dataclass
class SweepResult:
    header: List[str]
    rows: List[list] = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r[0], r[1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_fmt(x) for x in r])
        return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, complex):
        return f"{x.real!r}{x.imag:+}j"
    return str(x)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- shared inputs


def _sweep_values(text: str) -> List[float]:
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            count = int(round((b - a) / step)) + 1
            vals = [a + i * step for i in range(count)]
        else:
            vals = [float(x) for x in text.split(",") if x]
    except ValueError:
        raise UsageError(f"bad --sweep value {text!r}; use a,b,c or start:stop:step") from None
    if not vals or any(not v > 0 for v in vals):
        raise UsageError("--sweep values must be positive")
    return sorted(vals)


def _graph_from_args(args) -> tuple:
    chosen = [x for x in (args.graph, args.grid, args.triangular) if x is not None]
    if len(chosen) != 1:
        raise UsageError("give exactly one of --graph, --grid, --triangular")
    if args.grid is not None:
        try:
            r, c = (int(x) for x in args.grid.lower().split("x"))
        except ValueError:
            raise UsageError(f"bad --grid {args.grid!r}; use RxC") from None
        if r < 1 or c < 1:
            raise UsageError("--grid sizes must be positive")
        return generate_grid(r, c), None
    if args.triangular is not None:
        if args.triangular < 1:
            raise UsageError("--triangular must be positive")
        return generate_triangular(args.triangular), None
    return parse_graph(args.graph)


def _two_local_from_spec(spec: str, graph: Graph, seed: int, label: str) -> TwoLocalFunction:
    """``one``, ``rand:<seed>`` (random unit-modulus phases) or a two-local file."""
    if spec == "one":
        return TwoLocalFunction(graph)
    if spec.startswith("rand:"):
        try:
            s = int(spec[5:], 0)
        except ValueError:
            raise ParseError(f"bad seed in {spec!r}", 1, 6, "function spec") from None
        rng = derive_rng(s, "two-local-" + label)
        et = {e: np.exp(2j * np.pi * rng.random((2, 2))) for e in graph.edge_list()}
        vt = {u: np.exp(2j * np.pi * rng.random(2)) for u in range(graph.n)}
        return TwoLocalFunction(graph, et, vt)
    return parse_two_local(spec, graph)


def _ising_from_args(args) -> IsingInstance:
    g, weights = _graph_from_args(args)
    if weights is None:
        return IsingInstance.random_pm1(g, derive_rng(args.seed, "couplings"))
    return IsingInstance.create(g, weights)


def _write_csv(cfg: RunConfig, text: str, default_stdout: bool = True) -> None:
    if cfg.out and cfg.out != "-":
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
    elif default_stdout:
        sys.stdout.write(text)


def _run_trials(fn: Callable, tasks: Sequence[tuple], jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# ---------------------------------------------------------------- oracle / kfold


def _oracle_trial(n, fspec, gspec, eps, seed, index, trial):
    f, g = parse_function_spec(fspec, n), parse_function_spec(gspec, n)
    t0 = time.perf_counter()
    est = phi_estimate(f, g, eps, derive_rng(seed, "oracle", index, trial))
    return est.value, est.queries_used, est.method, time.perf_counter() - t0


def cmd_oracle(cfg: RunConfig) -> int:
    a = cfg.args
    if a.n is None or a.n < 1:
        raise UsageError("--n must be a positive integer")
    f, g = parse_function_spec(a.f, a.n), parse_function_spec(a.g, a.n)
    exact = phi_exact(f, g) if (a.exact or a.sweep) and a.n <= 24 else None
    if a.sweep:
        res = SweepResult(["epsilon", "trial", "estimate", "exact", "error", "queries"])
        eps_list = _sweep_values(a.sweep)
        tasks = [(a.n, a.f, a.g, e, cfg.seed, i, t) for i, e in enumerate(eps_list) for t in range(a.trials)]
        out = _run_trials(_oracle_trial, tasks, cfg.jobs)
        for (n, _, _, e, _, _, t), (val, q, _, _) in zip(tasks, out):
            res.rows.append([e, t, val, exact, abs(val - exact) if exact is not None else "", q])
        res.sort()
        for e in eps_list:
            errs = [r[4] for r in res.rows if r[0] == e and r[4] != ""]
            if errs:
                print(f"# epsilon={e:g} mean_error={np.mean(errs):.6g} max_error={np.max(errs):.6g}", file=sys.stderr)
        _write_csv(cfg, res.to_csv())
        return 0
    if cfg.epsilon is None and not a.exact:
        raise UsageError("--epsilon is required unless --exact is given")
    if cfg.epsilon is not None:
        val, q, method, secs = _oracle_trial(a.n, a.f, a.g, cfg.epsilon, cfg.seed, 0, 0)
        print(f"estimate {val!r}")
        print(f"queries {q}")
        print(f"method {method}")
        print(f"seconds {secs:.4f}")
    if exact is not None:
        print(f"exact {exact!r}")
        if cfg.epsilon is not None:
            print(f"error {abs(val - exact)!r}")
    return 0


def cmd_kfold(cfg: RunConfig) -> int:
    a = cfg.args
    if a.n is None or a.n < 1 or a.k is None or a.k < 1:
        raise UsageError("--n and --k must be positive integers")
    specs = [a.f if i % 2 == 0 else a.g for i in range(a.k)]
    oracles = [parse_function_spec(s, a.n) for s in specs]
    circ = kfold_circuit(oracles)
    if cfg.epsilon is None and not a.exact:
        raise UsageError("--epsilon is required unless --exact is given")
    if cfg.epsilon is not None:
        t0 = time.perf_counter()
        est = amplitude_estimate(circ, cfg.epsilon, derive_rng(cfg.seed, "kfold"), a.samples_override)
        print(f"estimate {est.value.real!r} {est.value.imag!r}")
        print(f"queries {est.queries_used}")
        print(f"samples_per_level {est.L}")
        print(f"method {est.method}")
        print(f"seconds {time.perf_counter() - t0:.4f}")
    if a.exact:
        ex = amplitude_exact(circ)
        print(f"exact {ex.real!r} {ex.imag!r}")
        if cfg.epsilon is not None:
            print(f"error {abs(est.value - ex)!r}")
    return 0


# ---------------------------------------------------------------- graph forrelation


def _graph_instance(a, seed) -> GraphForrelationInstance:
    g, _ = _graph_from_args(a)
    f = _two_local_from_spec(a.f, g, seed, "f")
    gg = _two_local_from_spec(a.g, g, seed, "g")
    ops = parse_ops(a.ops, g.n)
    return GraphForrelationInstance(g, f, gg, ops)


def _graph_trial(a, eps, seed, index, trial):
    inst = _graph_instance(a, seed)
    est = phi_graph_estimate(inst, eps, derive_rng(seed, "graph-phi", index, trial), a.sampler, a.samples_override)
    return est.value, est.samples


def cmd_graph_phi(cfg: RunConfig) -> int:
    a = cfg.args
    inst = _graph_instance(a, cfg.seed)
    exact = phi_graph_exact(inst) if (a.exact or a.sweep) and inst.n <= 20 else None
    if a.sweep:
        res = SweepResult(["epsilon", "trial", "estimate_re", "estimate_im", "exact_re", "exact_im", "error", "samples"])
        eps_list = _sweep_values(a.sweep)
        tasks = [(a, e, cfg.seed, i, t) for i, e in enumerate(eps_list) for t in range(a.trials)]
        out = _run_trials(_graph_trial, tasks, cfg.jobs)
        for (_, e, _, _, t), (val, s) in zip(tasks, out):
            ex = exact if exact is not None else complex("nan")
            res.rows.append([e, t, val.real, val.imag, ex.real, ex.imag, abs(val - ex) if exact is not None else "", s])
        res.sort()
        _write_csv(cfg, res.to_csv())
        return 0
    if cfg.epsilon is None and not a.exact:
        raise UsageError("--epsilon is required unless --exact is given")
    print(f"n {inst.n}")
    print(f"partition {inst.partition_method} |A|={len(inst.partition.A)} |B|={len(inst.partition.B)} "
          f"widths {inst.td_A.width},{inst.td_B.width}")
    if cfg.epsilon is not None:
        t0 = time.perf_counter()
        est = phi_graph_estimate(inst, cfg.epsilon, derive_rng(cfg.seed, "graph-phi", 0, 0), a.sampler, a.samples_override)
        print(f"estimate {est.value.real!r} {est.value.imag!r}")
        print(f"samples {est.samples}")
        print(f"omega {est.omega!r}")
        print(f"seconds {time.perf_counter() - t0:.4f}")
    if exact is not None:
        print(f"exact {exact.real!r} {exact.imag!r}")
        if cfg.epsilon is not None:
            print(f"error {abs(est.value - exact)!r}")
    return 0


# ---------------------------------------------------------------- tensor-network sampler


def cmd_tnsample(cfg: RunConfig) -> int:
    a = cfg.args
    if not a.system:
        raise UsageError("tnsample needs a system file")
    sys_ = parse_tn_system(a.system)
    count = a.samples_override if a.samples_override is not None else 1000
    if count < 1:
        raise UsageError("sample count must be positive")
    td = min_fill_td(connectivity_graph(sys_))
    t0 = time.perf_counter()
    xs = tn_sample(sys_, td, derive_rng(cfg.seed, "tnsample"), count)
    secs = time.perf_counter() - t0
    res = SweepResult([f"x{j}" for j in range(sys_.n)], [list(map(int, r)) for r in xs])
    print(f"# n={sys_.n} d={sys_.d} width={td.width} samples={count} seconds={secs:.4f}", file=sys.stderr)
    _write_csv(cfg, res.to_csv())
    return 0


# ---------------------------------------------------------------- QAOA


def cmd_qaoa_energy(cfg: RunConfig) -> int:
    a = cfg.args
    if a.angles is None:
        raise UsageError("--angles b1,b2,g1,g2 is required")
    if cfg.epsilon is None:
        raise UsageError("--epsilon is required")
    try:
        angles = QAOAAngles.parse(a.angles)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    inst = _ising_from_args(a)
    t0 = time.perf_counter()
    reps = edge_means(
        inst, angles, cfg.epsilon, derive_rng(cfg.seed, "qaoa-energy"), a.method, a.cutoff_seconds,
        "per-instance" if a.per_instance else "chebyshev", a.budget, a.samples_override,
    )
    total = inst.energy_offset + sum(inst.J[r.edge] * r.value for r in reps)
    res = SweepResult(["u", "v", "J", "zz_mean", "method", "samples"])
    for r in reps:
        res.rows.append([r.edge[0], r.edge[1], inst.J[r.edge], r.value, r.method, r.samples])
    print(f"energy {total!r}")
    print(f"edges {len(reps)} seconds {time.perf_counter() - t0:.4f}")
    if a.exact and inst.n <= 22:
        ex = energy_statevector(inst, angles)
        print(f"exact {ex!r}")
        print(f"error {abs(total - ex)!r}")
    _write_csv(cfg, res.to_csv(), default_stdout=False)
    return 0


def cmd_rqaoa(cfg: RunConfig) -> int:
    a = cfg.args
    inst = _ising_from_args(a)
    eps = cfg.epsilon if cfg.epsilon is not None else 0.03
    t0 = time.perf_counter()
    result = rqaoa(
        inst, eps, a.brute_threshold, a.gamma_grid, seed=cfg.seed, cutoff=a.cutoff_seconds,
        sample_rule="chebyshev" if a.chebyshev else "per-instance", method=a.method,
    )
    print(f"vertices {inst.n} edges {inst.graph.num_edges}")
    print(f"steps {len(result.steps)} brute_force_vertices {result.brute_force_vertices}")
    print(f"achieved {result.cost!r}")
    if inst.n <= 26:
        _, opt = exact_maxcut(inst)
        print(f"optimal {opt!r}")
        print(f"ratio {result.cost / opt if opt else float('nan')!r}")
    print(f"seconds {time.perf_counter() - t0:.2f}")
    trace = "\n".join(result.trace_lines(timing=a.timing)) + "\n"
    _write_csv(cfg, trace, default_stdout=cfg.out is None)
    if a.assignment:
        with open(a.assignment, "w") as fh:
            fh.write("vertex,spin\n")
            for v, z in enumerate(result.assignment):
                fh.write(f"{v},{int(z)}\n")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="forrelate", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"forrelate {__version__}")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, eps_default=None):
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        sp.add_argument("--epsilon", type=float, default=eps_default)
        sp.add_argument("--out", help="CSV output path ('-' for stdout)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")

    def graph_args(sp):
        sp.add_argument("--graph", help="graph file")
        sp.add_argument("--grid", help="RxC grid")
        sp.add_argument("--triangular", type=int, help="triangular lattice with R rows")

    sp = sub.add_parser("oracle", help="oracle-based forrelation estimate")
    common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--f", default="rand:1")
    sp.add_argument("--g", default="rand:2")
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--sweep", help="epsilon list a,b,c or start:stop:step")
    sp.add_argument("--trials", type=int, default=10)
    sp.set_defaults(run=cmd_oracle)

    sp = sub.add_parser("kfold", help="k-fold forrelation (oracles alternate f, g, f, ...)")
    common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--f", default="rand:1")
    sp.add_argument("--g", default="rand:2")
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--samples-override", type=int, help="samples per level")
    sp.set_defaults(run=cmd_kfold)

    sp = sub.add_parser("graph-phi", help="graph-based forrelation estimate")
    common(sp)
    graph_args(sp)
    sp.add_argument("--f", default="one", help="'one', 'rand:<seed>' or a two-local file")
    sp.add_argument("--g", default="one")
    sp.add_argument("--ops", default="H", help="operator spec for every qubit, or a '<v> <spec>' file")
    sp.add_argument("--sampler", choices=["marginal", "linear"], default="marginal")
    sp.add_argument("--samples-override", type=int)
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--sweep")
    sp.add_argument("--trials", type=int, default=10)
    sp.set_defaults(run=cmd_graph_phi)

    sp = sub.add_parser("tnsample", help="sample a diagonal-gate qudit system")
    common(sp)
    sp.add_argument("system", nargs="?", help="system file")
    sp.add_argument("--samples-override", type=int, help="number of samples (default 1000)")
    sp.set_defaults(run=cmd_tnsample)

    methods = ["auto", "statevector", "Aprime", "Adoubleprime", "forrelation"]
    sp = sub.add_parser("qaoa-energy", help="level-2 QAOA energy and per-edge means")
    common(sp, 0.05)
    graph_args(sp)
    sp.add_argument("--angles", help="b1,b2,g1,g2")
    sp.add_argument("--method", choices=methods, default="auto")
    sp.add_argument("--cutoff-seconds", type=float, default=0.1)
    sp.add_argument("--budget", choices=["weighted", "per-term"], default="weighted")
    sp.add_argument("--per-instance", action="store_true", help="epsilon^-2 samples per forrelation instance")
    sp.add_argument("--samples-override", type=int)
    sp.add_argument("--exact", action="store_true")
    sp.set_defaults(run=cmd_qaoa_energy)

    sp = sub.add_parser("rqaoa", help="recursive level-2 QAOA")
    common(sp, 0.03)
    graph_args(sp)
    sp.add_argument("--brute-threshold", type=int, default=10)
    sp.add_argument("--gamma-grid", type=int, default=30)
    sp.add_argument("--cutoff-seconds", type=float, default=0.1)
    sp.add_argument("--method", choices=methods, default="auto")
    sp.add_argument("--chebyshev", action="store_true", help="size forrelation samples for 99%% confidence")
    sp.add_argument("--assignment", help="write the final spins to this CSV file")
    sp.add_argument("--timing", action="store_true", help="add per-step wall time to the trace (not byte-reproducible)")
    sp.set_defaults(run=cmd_rqaoa)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = RunConfig(args.subcommand, args.seed, args.epsilon, args.out, max(1, args.jobs), args)
    if cfg.epsilon is not None and not cfg.epsilon > 0:
        print("error: --epsilon must be positive", file=sys.stderr)
        return 2
    try:
        return args.run(cfg)
    except (ParseError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FloatingPointError, MemoryError) as exc:
        print(f"error: {args.subcommand}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
