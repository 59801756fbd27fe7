"""Case parsing, validation, and admittance assembly.

The case format is a whitespace-separated text format with three tables.
``#`` starts a comment that runs to end of line; blank lines are ignored.

::

    baseMVA 100
    bus
    # id  type  Pd     Qd    Gs   Bs   Vm
    1     3     0.0    0.0   0.0  0.0  1.06
    ...
    gen
    # bus  Pg     Vset
    1      232.4  1.06
    ...
    branch
    # from  to  r        x        b       tap  shift
    1       2   0.01938  0.05917  0.0528  0    0
    ...

Bus types: 1 = PQ, 2 = PV, 3 = slack.  Pd/Qd/Gs/Bs/Pg are in MW/MVAr on
baseMVA; Vm and Vset are per-unit; r/x/b are per-unit on the system base;
tap 0 means no off-nominal ratio (treated as 1); shift is in radians.
After parsing, everything is stored per-unit and buses are reordered to
slack first, then PV, then PQ (ascending id inside each group), with the
original numbering kept for labeling output.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import CaseError


class BusKind(Enum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    """One bus, post conversion to per-unit.

    p_inj is the net scheduled active injection (generation minus load).
    q_inj is the net scheduled reactive injection and is meaningful for PQ
    buses only (None otherwise); v_set is the controlled magnitude for
    slack/PV buses only (None for PQ).  gs/bs are shunt admittance terms
    and belong to the bus admittance matrix, not to the injections.
    """

    id: int
    kind: BusKind
    p_inj: float
    q_inj: float | None
    v_set: float | None
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Two-port pi branch from -> to with optional tap/shift on the from side."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float
    tap: float = 1.0
    shift: float = 0.0
    line: int | None = None


def build_admittance(buses, branches) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the bus admittance matrix, returned as (G, B) real/imag parts.

    Bus order follows the ``buses`` sequence.  Each branch contributes the
    standard two-port: series admittance y = 1/(r + jx), half the charging
    susceptance at each end, diagonal scaled by 1/tap^2 on the from side
    and off-diagonals by 1/tap (with the shift rotating them).
    """
    pos = {bus.id: k for k, bus in enumerate(buses)}
    n = len(buses)
    y = np.zeros((n, n), dtype=complex)
    for br in branches:
        if br.r == 0.0 and br.x == 0.0:
            raise CaseError(
                f"branch {br.from_bus}-{br.to_bus} has zero impedance", br.line
            )
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        ysh = complex(0.0, 0.5 * br.b)
        tap = br.tap * np.exp(1j * br.shift)
        y[f, f] += (ys + ysh) / (br.tap * br.tap)
        y[t, t] += ys + ysh
        y[f, t] += -ys / np.conj(tap)
        y[t, f] += -ys / tap
    for k, bus in enumerate(buses):
        y[k, k] += complex(bus.gs, bus.bs)
    return np.ascontiguousarray(y.real), np.ascontiguousarray(y.imag)


class NetworkModel:
    """Validated, per-unit grid model with the canonical bus ordering.

    Buses are ordered slack, PV..., PQ...; nb is the bus count, ng the
    generator count (slack + PV), npq = nb - ng, and n = 2*nb - ng - 1 is
    the dimension of the power-flow state (PQ magnitudes first, then all
    non-slack angles).  The instance is immutable after construction and
    safe to share across threads.
    """

    def __init__(self, buses, branches, base_mva: float):
        self.buses: tuple[Bus, ...] = tuple(buses)
        self.branches: tuple[Branch, ...] = tuple(branches)
        self.base_mva = float(base_mva)
        _validate(self.buses, self.branches, self.base_mva)

        order = sorted(
            range(len(self.buses)),
            key=lambda k: (-self.buses[k].kind.value, self.buses[k].id),
        )
        self.buses = tuple(self.buses[k] for k in order)

        self.nb = len(self.buses)
        self.ng = sum(1 for b in self.buses if b.kind is not BusKind.PQ)
        self.npq = self.nb - self.ng
        self.n = 2 * self.nb - self.ng - 1

        self.bus_ids: tuple[int, ...] = tuple(b.id for b in self.buses)
        self._pos = {b.id: k for k, b in enumerate(self.buses)}

        self.G, self.B = build_admittance(self.buses, self.branches)
        self.G.setflags(write=False)
        self.B.setflags(write=False)

        # scheduled values in internal order
        self.v_sched = np.array(
            [b.v_set if b.v_set is not None else 1.0 for b in self.buses]
        )
        self.p_sched = np.array([b.p_inj for b in self.buses[1:]])
        self.q_sched = np.array([b.q_inj for b in self.buses[self.ng:]])
        for a in (self.v_sched, self.p_sched, self.q_sched):
            a.setflags(write=False)

        pattern = (self.G != 0.0) | (self.B != 0.0)
        np.fill_diagonal(pattern, False)
        self.adjacency: tuple[np.ndarray, ...] = tuple(
            np.flatnonzero(pattern[k]) for k in range(self.nb)
        )

    def position(self, bus_id: int) -> int:
        """Internal position of an original bus id."""
        try:
            return self._pos[bus_id]
        except KeyError:
            raise CaseError(f"unknown bus id {bus_id}") from None

    @property
    def pq_bus_ids(self) -> tuple[int, ...]:
        return self.bus_ids[self.ng:]

    @property
    def nonslack_bus_ids(self) -> tuple[int, ...]:
        return self.bus_ids[1:]

    def __repr__(self):
        return (
            f"NetworkModel(nb={self.nb}, ng={self.ng}, npq={self.npq}, "
            f"branches={len(self.branches)})"
        )


def _validate(buses, branches, base_mva):
    if base_mva <= 0:
        raise CaseError(f"baseMVA must be positive, got {base_mva}")
    if not buses:
        raise CaseError("case has no buses")
    seen = set()
    for b in buses:
        if b.id in seen:
            raise CaseError(f"duplicate bus id {b.id}")
        seen.add(b.id)
    slacks = [b.id for b in buses if b.kind is BusKind.SLACK]
    if len(slacks) != 1:
        raise CaseError(f"expected exactly one slack bus, found {len(slacks)}")
    for b in buses:
        if b.kind is not BusKind.PQ and (b.v_set is None or b.v_set <= 0):
            raise CaseError(f"bus {b.id} is {b.kind.name} but has no positive Vset")
    for br in branches:
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch connects bus {br.from_bus} to itself", br.line)
        if br.from_bus not in seen or br.to_bus not in seen:
            raise CaseError(
                f"branch {br.from_bus}-{br.to_bus} references an unknown bus", br.line
            )
        if br.tap <= 0:
            raise CaseError(
                f"branch {br.from_bus}-{br.to_bus} has nonpositive tap {br.tap}",
                br.line,
            )
        if br.r == 0.0 and br.x == 0.0:
            raise CaseError(
                f"branch {br.from_bus}-{br.to_bus} has zero impedance", br.line
            )
    # connectivity over the undirected branch graph
    neighbors: dict[int, set[int]] = {b.id: set() for b in buses}
    for br in branches:
        neighbors[br.from_bus].add(br.to_bus)
        neighbors[br.to_bus].add(br.from_bus)
    start = buses[0].id
    reached = {start}
    stack = [start]
    while stack:
        for nxt in neighbors[stack.pop()]:
            if nxt not in reached:
                reached.add(nxt)
                stack.append(nxt)
    if len(reached) != len(buses):
        missing = sorted(set(seen) - reached)
        raise CaseError(f"network is disconnected; unreachable buses {missing}")


def parse_case(text: str) -> NetworkModel:
    """Parse the documented case format into a validated NetworkModel."""
    base_mva = None
    bus_rows: list[tuple[int, list[float]]] = []
    gen_rows: list[tuple[int, list[float]]] = []
    branch_rows: list[tuple[int, list[float]]] = []
    section = None
    tables = {"bus": bus_rows, "gen": gen_rows, "branch": branch_rows}
    widths = {"bus": 7, "gen": 3, "branch": 7}

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key = tokens[0].lower()
        if key == "basemva":
            if len(tokens) != 2:
                raise CaseError("baseMVA expects a single value", lineno)
            base_mva = _num(tokens[1], lineno)
            continue
        if key in tables:
            if len(tokens) != 1:
                raise CaseError(f"unexpected tokens after '{tokens[0]}'", lineno)
            section = key
            continue
        if section is None:
            raise CaseError(f"data row outside any table: {line!r}", lineno)
        if len(tokens) != widths[section]:
            raise CaseError(
                f"{section} row expects {widths[section]} fields, got {len(tokens)}",
                lineno,
            )
        tables[section].append((lineno, [_num(tok, lineno) for tok in tokens]))

    if base_mva is None:
        raise CaseError("missing baseMVA line")
    if not bus_rows:
        raise CaseError("missing bus table")

    kinds = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}
    gens: dict[int, list[tuple[int, float, float]]] = {}
    for lineno, row in gen_rows:
        gens.setdefault(int(row[0]), []).append((lineno, row[1], row[2]))

    buses = []
    for lineno, row in bus_rows:
        bid = int(row[0])
        if int(row[1]) not in kinds:
            raise CaseError(f"bus {bid} has unknown type {int(row[1])}", lineno)
        kind = kinds[int(row[1])]
        pd, qd, gs, bs = row[2], row[3], row[4], row[5]
        pg = 0.0
        v_set = None
        if bid in gens:
            entries = gens.pop(bid)
            pg = sum(e[1] for e in entries)
            v_set = entries[0][2]
            for lno, _, vs in entries[1:]:
                if abs(vs - v_set) > 1e-9:
                    raise CaseError(f"conflicting Vset values at bus {bid}", lno)
        if kind is BusKind.PQ:
            v_set = None
        elif v_set is None or v_set <= 0:
            raise CaseError(
                f"bus {bid} is {kind.name} but has no generator with positive Vset",
                lineno,
            )
        buses.append(
            Bus(
                id=bid,
                kind=kind,
                p_inj=(pg - pd) / base_mva,
                q_inj=(-qd / base_mva) if kind is BusKind.PQ else None,
                v_set=v_set,
                gs=gs / base_mva,
                bs=bs / base_mva,
            )
        )
    if gens:
        lineno = min(e[0] for entries in gens.values() for e in entries)
        raise CaseError(
            f"generator at unknown bus {sorted(gens)[0]}", lineno
        )

    branches = [
        Branch(
            from_bus=int(row[0]),
            to_bus=int(row[1]),
            r=row[2],
            x=row[3],
            b=row[4],
            tap=row[5] if row[5] != 0.0 else 1.0,
            shift=row[6],
            line=lineno,
        )
        for lineno, row in branch_rows
    ]
    return NetworkModel(buses, branches, base_mva)


def load_case(path) -> NetworkModel:
    """Read and parse a case file from disk."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_case(fh.read())


def serialize_case(model: NetworkModel) -> str:
    """Write a model back to the documented text format.

    Net injections are emitted as loads (PQ buses) or generator outputs
    (slack/PV), so parse_case(serialize_case(m)) reproduces m up to float
    round-off.
    """
    base = model.base_mva
    out = [f"baseMVA {_fmt(base)}"]
    out.append("bus")
    out.append("# id type Pd Qd Gs Bs Vm")
    for b in model.buses:
        if b.kind is BusKind.PQ:
            pd, qd = -b.p_inj * base, -b.q_inj * base
            vm = 1.0
        else:
            pd, qd = 0.0, 0.0
            vm = b.v_set
        out.append(
            f"{b.id} {b.kind.value} {_fmt(pd)} {_fmt(qd)} "
            f"{_fmt(b.gs * base)} {_fmt(b.bs * base)} {_fmt(vm)}"
        )
    out.append("gen")
    out.append("# bus Pg Vset")
    for b in model.buses:
        if b.kind is not BusKind.PQ:
            out.append(f"{b.id} {_fmt(b.p_inj * base)} {_fmt(b.v_set)}")
    out.append("branch")
    out.append("# from to r x b tap shift")
    for br in model.branches:
        out.append(
            f"{br.from_bus} {br.to_bus} {_fmt(br.r)} {_fmt(br.x)} {_fmt(br.b)} "
            f"{_fmt(br.tap)} {_fmt(br.shift)}"
        )
    return "\n".join(out) + "\n"


def _num(token: str, lineno: int) -> float:
    try:
        return float(token)
    except ValueError:
        raise CaseError(f"expected a number, got {token!r}", lineno) from None


def _fmt(v: float) -> str:
    return format(float(v), ".17g")
