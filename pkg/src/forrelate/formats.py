"""Text formats read by the command line.

Every parser raises ParseError carrying the 1-based line and column of the
offending token.  Lines starting with ``#`` and blank lines are ignored.
"""

from __future__ import annotations

import cmath
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graph_core import Graph
from .oracle_forrelation import BooleanOracle
from .tn_sampler import DiagonalGate, QuditSystem
from .two_local import TwoLocalFunction

__all__ = [
    "ParseError",
    "parse_function_spec",
    "parse_graph",
    "parse_two_local",
    "parse_op_spec",
    "parse_ops",
    "parse_tn_system",
]


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0, source: str = "<input>"):
        self.line, self.col, self.source = line, col, source
        where = f"{source}:{line}:{col}: " if line else f"{source}: "
        super().__init__(where + message)


class _Tokens:
    """Whitespace tokens of one line with their columns."""

    def __init__(self, text: str, lineno: int, source: str):
        self.lineno, self.source = lineno, source
        self.items: List[Tuple[str, int]] = []
        i = 0
        while i < len(text):
            if text[i].isspace():
                i += 1
                continue
            j = i
            while j < len(text) and not text[j].isspace():
                j += 1
            self.items.append((text[i:j], i + 1))
            i = j

    def __len__(self):
        return len(self.items)

    def error(self, msg: str, k: Optional[int] = None) -> ParseError:
        col = self.items[k][1] if k is not None and k < len(self.items) else (self.items[-1][1] if self.items else 1)
        return ParseError(msg, self.lineno, col, self.source)

    def word(self, k: int) -> str:
        if k >= len(self.items):
            raise self.error(f"expected {k + 1} fields, found {len(self.items)}")
        return self.items[k][0]

    def int(self, k: int) -> int:
        w = self.word(k)
        try:
            return int(w)
        except ValueError:
            raise self.error(f"expected an integer, found {w!r}", k) from None

    def float(self, k: int) -> float:
        w = self.word(k)
        try:
            v = float(w)
        except ValueError:
            raise self.error(f"expected a number, found {w!r}", k) from None
        if not math.isfinite(v):
            raise self.error(f"non-finite number {w!r}", k)
        return v


def _lines(text: str, source: str):
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if line.strip():
            yield _Tokens(line, i, source)


def _read(path_or_text: str) -> Tuple[str, str]:
    p = Path(path_or_text)
    if "\n" not in path_or_text and p.exists():
        return p.read_text(), str(p)
    if "\n" not in path_or_text:
        raise ParseError(f"file not found: {path_or_text}")
    return path_or_text, "<input>"


# ---------------------------------------------------------------- boolean functions


def parse_function_spec(spec: str, n: int) -> BooleanOracle:
    """``table:<path>``, ``rand:<seed>``, ``const:+1``/``const:-1``, ``parity:<hex mask>``."""
    kind, _, arg = spec.partition(":")
    if kind == "rand":
        try:
            return BooleanOracle.random(n, int(arg, 0))
        except ValueError:
            raise ParseError(f"bad seed in {spec!r}", 1, 6, "function spec") from None
    if kind == "const":
        if arg not in ("+1", "1", "-1"):
            raise ParseError(f"constant must be +1 or -1 in {spec!r}", 1, 7, "function spec")
        return BooleanOracle.constant(n, int(arg))
    if kind == "parity":
        try:
            mask = int(arg, 16)
        except ValueError:
            raise ParseError(f"bad hex mask in {spec!r}", 1, 8, "function spec") from None
        if mask >> n:
            raise ParseError(f"mask {arg} has bits beyond n={n}", 1, 8, "function spec")
        return BooleanOracle.parity(n, mask)
    if kind == "table":
        text, source = _read(arg)
        values = []
        for tok in _lines(text, source):
            w = tok.word(0)
            if w not in ("+1", "1", "-1") or len(tok) != 1:
                raise tok.error(f"expected +1 or -1, found {w!r}", 0)
            values.append(int(w))
        if len(values) != 1 << n:
            raise ParseError(f"table has {len(values)} entries, expected 2^{n}", 0, 0, source)
        return BooleanOracle.from_table(values, f"table:{arg}")
    raise ParseError(f"unknown function spec {spec!r}", 1, 1, "function spec")


# ---------------------------------------------------------------- graphs


def parse_graph(path_or_text: str) -> Tuple[Graph, Optional[Dict[Tuple[int, int], float]]]:
    """Graph text format; returns the graph and the edge weights (None if no edge carries one)."""
    text, source = _read(path_or_text)
    n = None
    edges: List[Tuple[int, int]] = []
    weights: Dict[Tuple[int, int], float] = {}
    rot: Dict[int, List[int]] = {}
    outer = None
    for tok in _lines(text, source):
        key = tok.word(0)
        if key == "n":
            if n is not None:
                raise tok.error("vertex count given twice", 0)
            n = tok.int(1)
            if n < 0:
                raise tok.error("negative vertex count", 1)
            continue
        if n is None:
            raise tok.error("the first record must be 'n <count>'", 0)

        def vertex(k):
            v = tok.int(k)
            if not 0 <= v < n:
                raise tok.error(f"vertex {v} out of range 0..{n - 1}", k)
            return v

        if key == "e":
            if len(tok) not in (3, 4):
                raise tok.error("edge record is 'e <u> <v> [J]'")
            u, v = vertex(1), vertex(2)
            if u == v:
                raise tok.error("self-loop", 2)
            e = (min(u, v), max(u, v))
            if e in weights or e in edges:
                raise tok.error(f"edge {e} repeated", 1)
            edges.append(e)
            if len(tok) == 4:
                weights[e] = tok.float(3)
        elif key == "rot":
            v = vertex(1)
            if v in rot:
                raise tok.error(f"rotation of {v} given twice", 1)
            rot[v] = [vertex(k) for k in range(2, len(tok))]
        elif key == "outer":
            outer = [vertex(k) for k in range(1, len(tok))]
        else:
            raise tok.error(f"unknown record {key!r}", 0)
    if n is None:
        raise ParseError("missing 'n <count>' header", 0, 0, source)
    if weights and len(weights) != len(edges):
        raise ParseError("either every edge or no edge carries a weight", 0, 0, source)
    rotation = None
    if rot:
        rotation = [rot.get(v, []) for v in range(n)]
    try:
        g = Graph.from_edges(n, edges, rotation, outer)
    except ValueError as exc:
        raise ParseError(str(exc), 0, 0, source) from None
    return g, (weights or None)


# ---------------------------------------------------------------- two-local functions


def _entry(tok: _Tokens, k: int, phase: bool) -> Tuple[complex, int]:
    """One complex entry: ``phase:<a>`` (e^{i pi a}) or a (re, im) pair; returns (value, tokens used)."""
    w = tok.word(k)
    if w.startswith("phase:"):
        try:
            a = float(w[6:])
        except ValueError:
            raise tok.error(f"bad phase {w!r}", k) from None
        return cmath.exp(1j * math.pi * a), 1
    if phase:
        raise tok.error("phase records take 'phase:<multiple of pi>' entries", k)
    return complex(tok.float(k), tok.float(k + 1)), 2


def _entries(tok: _Tokens, start: int, count: int, phase: bool) -> List[complex]:
    out, k = [], start
    for _ in range(count):
        v, used = _entry(tok, k, phase)
        out.append(v)
        k += used
    if k != len(tok):
        raise tok.error(f"expected {count} entries", min(k, len(tok) - 1))
    return out


def parse_two_local(path_or_text: str, graph: Graph) -> TwoLocalFunction:
    """``v <u> <re0> <im0> <re1> <im1>``, ``e <u> <v> <4 complex row-major>``; ``ve``/``ee`` take phases."""
    text, source = _read(path_or_text)
    vt: Dict[int, np.ndarray] = {}
    et: Dict[Tuple[int, int], np.ndarray] = {}
    scalar = 1.0 + 0j
    for tok in _lines(text, source):
        key = tok.word(0)

        def vertex(k):
            v = tok.int(k)
            if not 0 <= v < graph.n:
                raise tok.error(f"vertex {v} out of range", k)
            return v

        if key in ("v", "ve"):
            u = vertex(1)
            vals = np.array(_entries(tok, 2, 2, key == "ve"))
            vt[u] = vt[u] * vals if u in vt else vals
        elif key in ("e", "ee"):
            u, v = vertex(1), vertex(2)
            if not graph.has_edge(u, v):
                raise tok.error(f"({u},{v}) is not an edge of the graph", 1)
            vals = np.array(_entries(tok, 3, 4, key == "ee")).reshape(2, 2)
            if u > v:
                u, v, vals = v, u, vals.T
            et[(u, v)] = et[(u, v)] * vals if (u, v) in et else vals
        elif key == "scalar":
            scalar *= _entries(tok, 1, 1, False)[0]
        else:
            raise tok.error(f"unknown record {key!r}", 0)
    return TwoLocalFunction(graph, et, vt, 2, scalar)


# ---------------------------------------------------------------- operators


def parse_op_spec(spec: str) -> np.ndarray:
    """``H``, ``I``, ``rx:<angle>``, ``rz:<angle>`` (e^{-i angle P/2}), ``proj:<a><b>`` (|a><b|), ``mat:<8 floats>``."""
    spec = spec.strip()
    if spec == "H":
        return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
    if spec == "I":
        return np.eye(2, dtype=complex)
    kind, _, arg = spec.partition(":")
    try:
        if kind == "rx":
            t = float(arg) / 2
            return np.array([[math.cos(t), -1j * math.sin(t)], [-1j * math.sin(t), math.cos(t)]])
        if kind == "rz":
            t = float(arg) / 2
            return np.diag([cmath.exp(-1j * t), cmath.exp(1j * t)])
        if kind == "proj":
            if len(arg) != 2 or set(arg) - {"0", "1"}:
                raise ValueError
            m = np.zeros((2, 2), dtype=complex)
            m[int(arg[0]), int(arg[1])] = 1
            return m
        if kind == "mat":
            xs = [float(x) for x in arg.split(",")]
            if len(xs) != 8:
                raise ValueError
            return (np.array(xs[0::2]) + 1j * np.array(xs[1::2])).reshape(2, 2)
    except ValueError:
        raise ParseError(f"bad operator spec {spec!r}", 1, len(kind) + 2, "operator spec") from None
    raise ParseError(f"unknown operator spec {spec!r}", 1, 1, "operator spec")


def parse_ops(spec_or_path: str, n: int) -> np.ndarray:
    """One operator spec for every qubit, or a file of ``<v> <spec>`` lines (unlisted qubits get I)."""
    p = Path(spec_or_path)
    if not p.exists():
        return np.broadcast_to(parse_op_spec(spec_or_path), (n, 2, 2)).copy()
    ops = np.broadcast_to(np.eye(2, dtype=complex), (n, 2, 2)).copy()
    for tok in _lines(p.read_text(), str(p)):
        v = tok.int(0)
        if not 0 <= v < n:
            raise tok.error(f"vertex {v} out of range", 0)
        if len(tok) != 2:
            raise tok.error("operator record is '<v> <spec>'")
        try:
            ops[v] = parse_op_spec(tok.word(1))
        except ParseError as exc:
            raise tok.error(str(exc), 1) from None
    return ops


# ---------------------------------------------------------------- qudit systems


def parse_tn_system(path_or_text: str) -> QuditSystem:
    """Diagonal-gate qudit system.

    Records: ``qudits <n> <d>``; ``chi <v> <d reals>`` (diagonal state,
    normalised; default uniform); ``pure <v> <d complex as re im pairs>``;
    ``gate <u> [<v> ...] : <d^k complex as re im pairs>`` (row-major over the
    listed qudits); ``op <v> <d*d complex as re im pairs>`` (default identity).
    """
    text, source = _read(path_or_text)
    n = d = None
    chis: Dict[int, np.ndarray] = {}
    pures: Dict[int, np.ndarray] = {}
    gates: List[DiagonalGate] = []
    ops: Dict[int, np.ndarray] = {}
    for tok in _lines(text, source):
        key = tok.word(0)
        if key == "qudits":
            if n is not None:
                raise tok.error("'qudits' given twice", 0)
            n, d = tok.int(1), tok.int(2)
            if n < 1 or d < 2:
                raise tok.error("need n >= 1 and d >= 2", 1)
            continue
        if n is None:
            raise tok.error("the first record must be 'qudits <n> <d>'", 0)

        def vertex(k):
            v = tok.int(k)
            if not 0 <= v < n:
                raise tok.error(f"qudit {v} out of range", k)
            return v

        def complexes(start, count):
            if len(tok) != start + 2 * count:
                raise tok.error(f"expected {count} complex entries (re im pairs)")
            return np.array([complex(tok.float(start + 2 * i), tok.float(start + 2 * i + 1)) for i in range(count)])

        if key == "chi":
            v = vertex(1)
            if len(tok) != 2 + d:
                raise tok.error(f"expected {d} diagonal entries")
            p = np.array([tok.float(2 + i) for i in range(d)])
            if p.min() < 0 or p.sum() <= 0:
                raise tok.error("diagonal entries must be nonnegative and not all zero", 2)
            chis[v] = np.diag(p / p.sum()).astype(complex)
        elif key == "pure":
            v = vertex(1)
            psi = complexes(2, d)
            if np.linalg.norm(psi) == 0:
                raise tok.error("zero state", 2)
            pures[v] = psi / np.linalg.norm(psi)
        elif key == "gate":
            try:
                colon = [w for w, _ in tok.items].index(":")
            except ValueError:
                raise tok.error("gate record needs ':' before the diagonal") from None
            support = [vertex(k) for k in range(1, colon)]
            if not support or len(set(support)) != len(support):
                raise tok.error("gate support must be non-empty and distinct", 1)
            diag = complexes(colon + 1, d ** len(support)).reshape((d,) * len(support))
            gates.append(DiagonalGate.make(support, diag))
        elif key == "op":
            v = vertex(1)
            ops[v] = complexes(2, d * d).reshape(d, d)
        else:
            raise tok.error(f"unknown record {key!r}", 0)
    if n is None:
        raise ParseError("missing 'qudits <n> <d>' header", 0, 0, source)
    chi_arr = np.empty((n, d, d), dtype=complex)
    for v in range(n):
        if v in pures:
            chi_arr[v] = np.outer(pures[v], pures[v].conj())
        else:
            chi_arr[v] = chis.get(v, np.eye(d) / d)
    op_arr = np.stack([ops.get(v, np.eye(d, dtype=complex)) for v in range(n)])
    try:
        return QuditSystem(n, d, chi_arr, gates, op_arr)
    except ValueError as exc:
        raise ParseError(str(exc), 0, 0, source) from None
