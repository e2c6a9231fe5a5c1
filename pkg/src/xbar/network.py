"""Brute-force nodal model of crossbar subarrays.

Every line is expanded into one node per cell junction, every PCM cell is a
branch, and the resulting conductance system is solved directly. This is
the reference the analytical models are checked against.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .device import CellState, OtsParams, PcmCellParams, ots_conductance
from .drive import BL_ACTIVE, BL_FLOAT, BL_GROUND, DrivePattern
from .interconnect import LineConfiguration, SubarrayGeometry, line_conductances

RESIDUAL_TOL = 1e-10


class SingularNetworkError(RuntimeError):
    def __init__(self, msg, nodes=()):
        super().__init__(msg)
        self.nodes = list(nodes)


@dataclass
class ResistiveNetwork:
    node_names: List[str]
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    tags: List[str]
    fixed: Dict[int, float]
    floated: Tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    def branch_index(self, tag: str) -> int:
        idx = self.meta.setdefault("_tag_index", {t: i for i, t in enumerate(self.tags)})
        return idx[tag]

    def node_index(self, name: str) -> int:
        idx = self.meta.setdefault("_node_index", {n: i for i, n in enumerate(self.node_names)})
        return idx[name]

    def scaled(self, k: float) -> "ResistiveNetwork":
        """Same network with every source voltage multiplied by k."""
        return ResistiveNetwork(self.node_names, self.a, self.b, self.g, self.tags,
                                {n: v * k for n, v in self.fixed.items()}, self.floated,
                                {k_: v for k_, v in self.meta.items() if not k_.startswith("_")})

    def netlist(self) -> str:
        """Plain-text netlist: one ``node node conductance tag`` line per branch."""
        out = ["# branches: node_a node_b conductance[S] tag"]
        for a, b, g, t in zip(self.a, self.b, self.g, self.tags):
            out.append(f"{self.node_names[a]} {self.node_names[b]} {g:.12g} {t}")
        out.append("# sources: node voltage[V]")
        for n, v in sorted(self.fixed.items()):
            out.append(f"V {self.node_names[n]} {v:.12g}")
        for f in self.floated:
            out.append(f"FLOAT {f}")
        return "\n".join(out) + "\n"


@dataclass
class SolveResult:
    node_voltages: np.ndarray
    branch_currents: np.ndarray
    residual_norm: float

    def voltage(self, net: ResistiveNetwork, name: str) -> float:
        return float(self.node_voltages[net.node_index(name)])

    def current(self, net: ResistiveNetwork, tag: str) -> float:
        return float(self.branch_currents[net.branch_index(tag)])


class NetworkBuilder:
    """Accumulates nodes and branches; shorted nodes are merged at build time."""

    def __init__(self):
        self.names: List[str] = []
        self._index: Dict[str, int] = {}
        self._parent: List[int] = []
        self.branches: List[Tuple[int, int, float, str]] = []
        self.fixed: Dict[int, float] = {}
        self.floated: List[str] = []
        self.meta: dict = {}

    def node(self, name: str) -> int:
        i = self._index.get(name)
        if i is None:
            i = len(self.names)
            self.names.append(name)
            self._index[name] = i
            self._parent.append(i)
        return i

    def has(self, name: str) -> bool:
        return name in self._index

    def _find(self, i: int) -> int:
        p = self._parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def short(self, a: str, b: str):
        ra, rb = self._find(self.node(a)), self._find(self.node(b))
        if ra != rb:
            self._parent[max(ra, rb)] = min(ra, rb)

    def branch(self, a: str, b: str, g: float, tag: str):
        if np.isinf(g):
            self.short(a, b)
            return
        if not g > 0:
            raise ValueError(f"branch {tag}: conductance must be positive, got {g}")
        self.branches.append((self.node(a), self.node(b), float(g), tag))

    def fix(self, name: str, volts: float):
        self.fixed[self.node(name)] = float(volts)

    def build(self, prune: bool = True) -> ResistiveNetwork:
        roots = [self._find(i) for i in range(len(self.names))]
        # representatives keep the name of the first node of each merged group
        rep = sorted(set(roots))
        fixed: Dict[int, float] = {}
        for n, v in self.fixed.items():
            r = roots[n]
            if r in fixed and abs(fixed[r] - v) > 0:
                raise ValueError(f"conflicting sources shorted together at {self.names[r]}")
            fixed[r] = v
        br = [(roots[a], roots[b], g, t) for a, b, g, t in self.branches if roots[a] != roots[b]]
        keep = set(rep)
        if prune and rep:
            # drop pieces with no source at all: they float and carry no current
            pos = {r: k for k, r in enumerate(rep)}
            if br:
                ii = np.array([pos[x[0]] for x in br])
                jj = np.array([pos[x[1]] for x in br])
                adj = sp.coo_matrix((np.ones(len(br)), (ii, jj)), shape=(len(rep), len(rep)))
            else:
                adj = sp.coo_matrix((len(rep), len(rep)))
            _, lab = csgraph.connected_components(adj, directed=False)
            anchored = {lab[pos[r]] for r in fixed}
            keep = {r for r in rep if lab[pos[r]] in anchored}
            br = [x for x in br if x[0] in keep]
        order = [r for r in rep if r in keep]
        new = {r: k for k, r in enumerate(order)}
        meta = dict(self.meta)
        meta["node_alias"] = {n: self.names[roots[self._index[n]]] for n in self.names
                              if roots[self._index[n]] in keep}
        net = ResistiveNetwork(
            node_names=[self.names[r] for r in order],
            a=np.array([new[x[0]] for x in br], dtype=np.int64),
            b=np.array([new[x[1]] for x in br], dtype=np.int64),
            g=np.array([x[2] for x in br], dtype=float),
            tags=[x[3] for x in br],
            fixed={new[r]: v for r, v in fixed.items() if r in new},
            floated=tuple(self.floated),
            meta=meta,
        )
        return net


def node_of(net: ResistiveNetwork, name: str) -> int:
    """Index of a (possibly merged) node by any of its original names."""
    return net.node_index(net.meta["node_alias"].get(name, name))


def _laplacian(net: ResistiveNetwork) -> sp.csr_matrix:
    n = net.n_nodes
    a, b, g = net.a, net.b, net.g
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([a, b, b, a])
    vals = np.concatenate([g, g, -g, -g])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def solve_network(net: ResistiveNetwork, injections: Optional[Dict[int, float]] = None,
                  zero_sources: bool = False) -> SolveResult:
    """Nodal analysis with the source nodes eliminated.

    injections maps node index -> current injected into the node (A).
    zero_sources replaces every source by ground, for port extraction.
    """
    if not net.fixed:
        raise SingularNetworkError("network has no source or ground node")
    n = net.n_nodes
    fixed_idx = np.array(sorted(net.fixed), dtype=np.int64)
    fixed_v = np.array([0.0 if zero_sources else net.fixed[i] for i in fixed_idx])
    is_free = np.ones(n, dtype=bool)
    is_free[fixed_idx] = False
    free = np.flatnonzero(is_free)
    L = _laplacian(net)
    inj = np.zeros(n)
    if injections:
        for node, cur in injections.items():
            inj[node] += cur
    # refinement runs in extended precision: currents are differences of
    # nearly equal node voltages across low-resistance wires
    ld = np.longdouble
    g = net.g.astype(ld)
    v = np.zeros(n, dtype=ld)
    v[fixed_idx] = fixed_v
    resid = 0.0
    if len(free):
        Lff = L[free][:, free].tocsc()
        _check_anchored(net, free)
        try:
            lu = spla.splu(Lff)
        except RuntimeError as exc:  # exactly singular factor
            raise SingularNetworkError(f"singular system: {exc}") from exc
        for it in range(6):
            i_br = g * (v[net.a] - v[net.b])
            out = np.zeros(n, dtype=ld)
            np.add.at(out, net.a, i_br)
            np.add.at(out, net.b, -i_br)
            r = (inj.astype(ld) - out)[free]
            flow = np.zeros(n, dtype=ld)
            np.add.at(flow, net.a, np.abs(i_br))
            np.add.at(flow, net.b, np.abs(i_br))
            scale = max(float(flow.max(initial=0.0)), np.abs(inj).max(initial=0.0), 1e-300)
            resid = float(np.abs(r).max(initial=0.0)) / scale
            if it and resid < 1e-3 * RESIDUAL_TOL:
                break
            v[free] += lu.solve(np.asarray(r, dtype=float)).astype(ld)
        # voltages are only representable to eps(longdouble)*|v| per node
        floor = 16 * float(np.finfo(ld).eps) * float(
            np.max(g * (np.abs(v[net.a]) + np.abs(v[net.b])), initial=0.0)) / scale
        if resid > max(RESIDUAL_TOL, floor):
            raise SingularNetworkError(f"residual {resid:.2e} above tolerance")
    i_br = (g * (v[net.a] - v[net.b])).astype(float)
    return SolveResult(v.astype(float), i_br, resid)


def _check_anchored(net: ResistiveNetwork, free: np.ndarray):
    n = net.n_nodes
    adj = sp.coo_matrix((np.ones(len(net.a)), (net.a, net.b)), shape=(n, n))
    _, lab = csgraph.connected_components(adj, directed=False)
    anchored = {lab[i] for i in net.fixed}
    bad = [net.node_names[i] for i in free if lab[i] not in anchored]
    if bad:
        raise SingularNetworkError(f"{len(bad)} node(s) not connected to any source", bad)


def solve_batch(nets: Sequence[ResistiveNetwork]) -> List[SolveResult]:
    """Solve independent networks as one block-diagonal system."""
    offs = np.cumsum([0] + [n.n_nodes for n in nets])
    big = ResistiveNetwork(
        node_names=[f"{k}:{nm}" for k, n in enumerate(nets) for nm in n.node_names],
        a=np.concatenate([n.a + o for n, o in zip(nets, offs)]),
        b=np.concatenate([n.b + o for n, o in zip(nets, offs)]),
        g=np.concatenate([n.g for n in nets]),
        tags=[t for n in nets for t in n.tags],
        fixed={k + o: v for n, o in zip(nets, offs) for k, v in n.fixed.items()},
    )
    res = solve_network(big)
    out, bo = [], 0
    for n, o in zip(nets, offs):
        nb = len(n.g)
        out.append(SolveResult(res.node_voltages[o:o + n.n_nodes],
                               res.branch_currents[bo:bo + nb], res.residual_norm))
        bo += nb
    return out


# ---------------------------------------------------------------- crossbar


def _states(m, shape) -> np.ndarray:
    m = np.asarray(m, dtype=int)
    if m.shape != shape:
        raise ValueError(f"state matrix shape {m.shape} does not match subarray {shape}")
    return m


def add_subarray(bld: NetworkBuilder, geom: SubarrayGeometry, config: LineConfiguration,
                 top, bottom, drive: DrivePattern, params: PcmCellParams = PcmCellParams(), *,
                 prefix: str = "", ideal_wires: bool = False, wlt_active=None,
                 wlb_active=None, ots: Optional[OtsParams] = None, ots_on=None,
                 include_floated: bool = False, skip_cells: Iterable[Tuple[str, int, int]] = ()):
    """Add one subarray's lines and cells to a builder.

    Node names: ``{p}wt{i}.{k}`` is WLT i at row k (k=-1 is the driver end),
    ``{p}wb{j}.{k}`` likewise for WLB j, ``{p}bl{k}.{c}`` is BL k at column c
    (c=-1 is its driver end). Cells are tagged ``{p}top.k.i`` / ``{p}bot.k.j``.

    wlt_active / wlb_active mark lines that carry no source but are wired to
    another subarray (chaining). With ``ots`` given, each cell gets a series
    selector whose conductance comes from ``ots_on`` (default: all on).
    include_floated keeps floated lines and their cells as free nodes, which
    is only meaningful together with ``ots`` for sneak-path checks.
    """
    R, C = geom.n_row, geom.n_column
    top = _states(top, (R, C))
    bottom = _states(bottom, (R, C))
    if drive.n_row != R or drive.n_column != C:
        raise ValueError("drive pattern does not match subarray dimensions")
    p = prefix
    if ideal_wires:
        g_wlt = g_wlb = g_bl = np.inf
    else:
        gl = line_conductances(config, geom)
        g_wlt, g_bl, g_wlb = gl["wlt"], gl["bl"], gl["wlb"]
    g_drv = np.inf if geom.r_driver == 0 else 1.0 / geom.r_driver
    wlt_active = np.zeros(C, bool) if wlt_active is None else np.asarray(wlt_active, bool)
    wlb_active = np.zeros(C, bool) if wlb_active is None else np.asarray(wlb_active, bool)
    skip = set(skip_cells)

    wlt_on = drive.driven | wlt_active
    wlb_on = drive.wlb_ground | wlb_active
    bl_on = drive.bl != BL_FLOAT
    if include_floated:
        wlt_use = np.ones(C, bool)
        wlb_use = np.ones(C, bool)
        bl_use = np.ones(R, bool)
    else:
        wlt_use, wlb_use, bl_use = wlt_on, wlb_on, bl_on
    volts = drive.wlt_volts()

    for i in range(C):
        if not wlt_use[i]:
            bld.floated.append(f"{p}WLT{i}")
            continue
        if not wlt_on[i]:
            bld.floated.append(f"{p}WLT{i}")
        for k in range(R):
            bld.branch(f"{p}wt{i}.{k - 1}", f"{p}wt{i}.{k}", g_wlt, f"{p}wlt.{i}.{k}")
        if drive.driven[i]:
            bld.fix(f"{p}vs{i}", volts[i])
            bld.branch(f"{p}vs{i}", f"{p}wt{i}.-1", g_drv, f"{p}drv.wlt.{i}")
    for j in range(C):
        if not wlb_use[j]:
            bld.floated.append(f"{p}WLB{j}")
            continue
        if not wlb_on[j]:
            bld.floated.append(f"{p}WLB{j}")
        for k in range(R):
            bld.branch(f"{p}wb{j}.{k - 1}", f"{p}wb{j}.{k}", g_wlb, f"{p}wlb.{j}.{k}")
        if drive.wlb_ground[j]:
            bld.fix("gnd", 0.0)
            bld.branch("gnd", f"{p}wb{j}.-1", g_drv, f"{p}drv.wlb.{j}")
    for k in range(R):
        if not bl_use[k]:
            bld.floated.append(f"{p}BL{k}")
            continue
        if not bl_on[k]:
            bld.floated.append(f"{p}BL{k}")
        for c in range(C):
            bld.branch(f"{p}bl{k}.{c - 1}", f"{p}bl{k}.{c}", g_bl, f"{p}bl.{k}.{c}")
        if drive.bl[k] == BL_GROUND:
            bld.fix("gnd", 0.0)
            bld.branch("gnd", f"{p}bl{k}.-1", g_drv, f"{p}drv.bl.{k}")

    def cell(tag, n1, n2, g):
        if ots is None:
            bld.branch(n1, n2, g, tag)
        else:
            on = True if ots_on is None else ots_on.get(tag, True)
            g_sel = ots.g_on if on else ots.g_off
            bld.branch(n1, f"{tag}.m", g, tag)
            bld.branch(f"{tag}.m", n2, g_sel, f"ots.{tag}")

    for k in range(R):
        if not bl_use[k]:
            continue
        for i in range(C):
            if wlt_use[i] and ("top", k, i) not in skip:
                cell(f"{p}top.{k}.{i}", f"{p}wt{i}.{k}", f"{p}bl{k}.{i}",
                     params.gc if top[k, i] else params.ga)
        for j in range(C):
            if wlb_use[j] and ("bot", k, j) not in skip:
                cell(f"{p}bot.{k}.{j}", f"{p}bl{k}.{j}", f"{p}wb{j}.{k}",
                     params.gc if bottom[k, j] else params.ga)
    return bld


def build_crossbar_network(geom: SubarrayGeometry, config: LineConfiguration, top_states,
                           bottom_states, drive: DrivePattern,
                           params: PcmCellParams = PcmCellParams(), *,
                           ideal_wires: bool = False, ots: Optional[OtsParams] = None,
                           ots_on=None, include_floated: bool = False) -> ResistiveNetwork:
    """Full resistive network of one subarray under a drive pattern.

    Floated lines and every cell touching them are left out, so they carry
    no current; pass ``ots`` and ``include_floated`` to keep them with their
    selectors for a sneak-path check.
    """
    if not (drive.driven.any() or drive.wlb_ground.any() or (drive.bl == BL_GROUND).any()):
        raise ValueError("every line floats: the network has no source")
    bld = NetworkBuilder()
    add_subarray(bld, geom, config, top_states, bottom_states, drive, params,
                 ideal_wires=ideal_wires, ots=ots, ots_on=ots_on,
                 include_floated=include_floated)
    bld.meta.update(n_row=geom.n_row, n_column=geom.n_column,
                    outputs=[int(j) for j in drive.output_columns()])
    return bld.build()


def output_cell_currents(net: ResistiveNetwork, res: SolveResult, column: int) -> np.ndarray:
    """Current into the bottom cell of every row at an output column (NaN if absent)."""
    out = np.full(net.meta["n_row"], np.nan)
    idx = net.meta.setdefault("_tag_index", {t: i for i, t in enumerate(net.tags)})
    for k in range(len(out)):
        b = idx.get(f"bot.{k}.{column}")
        if b is not None:
            out[k] = abs(res.branch_currents[b])
    return out


def corner_case_network(geom: SubarrayGeometry, config: LineConfiguration, v_dd: float,
                        params: PcmCellParams = PcmCellParams(), *, ideal_wires=False):
    """Single driven WLT (column 0), output WLB at the last column, crystalline cells."""
    R, C = geom.n_row, geom.n_column
    top = np.zeros((R, C), int)
    bottom = np.zeros((R, C), int)
    top[:, 0] = 1
    bottom[:, C - 1] = 1
    drive = DrivePattern.corner_case(R, C, v_dd)
    return build_crossbar_network(geom, config, top, bottom, drive, params,
                                  ideal_wires=ideal_wires)


def last_row_current(net: ResistiveNetwork, params: PcmCellParams = PcmCellParams()) -> float:
    """Current through the last row's output cell of a corner-case network."""
    res = solve_network(net)
    col = net.meta["outputs"][0]
    return float(output_cell_currents(net, res, col)[net.meta["n_row"] - 1])


def port_thevenin(net: ResistiveNetwork, p: int, q: int) -> Tuple[float, float]:
    """(open-circuit voltage, resistance) between nodes p and q."""
    res = solve_network(net)
    v_oc = res.node_voltages[p] - res.node_voltages[q]
    inj = solve_network(net, injections={p: 1.0, q: -1.0}, zero_sources=True)
    r = inj.node_voltages[p] - inj.node_voltages[q]
    return float(v_oc), float(r)


def last_row_port(geom: SubarrayGeometry, config: LineConfiguration, v_dd: float = 1.0,
                  params: PcmCellParams = PcmCellParams(), *, row: Optional[int] = None,
                  ideal_wires: bool = False) -> Tuple[float, float]:
    """Thevenin pair seen by the input/output cell pair of one corner-case row.

    Both cells of the row are taken out; the output cell position is shorted
    and the port sits where the input cell was. Returns (r_th, alpha_th).
    """
    R, C = geom.n_row, geom.n_column
    row = R - 1 if row is None else row
    top = np.zeros((R, C), int)
    bottom = np.zeros((R, C), int)
    top[:, 0] = 1
    bottom[:, C - 1] = 1
    drive = DrivePattern.corner_case(R, C, v_dd)
    bld = NetworkBuilder()
    add_subarray(bld, geom, config, top, bottom, drive, params, ideal_wires=ideal_wires,
                 skip_cells=[("top", row, 0), ("bot", row, C - 1)])
    bld.short(f"bl{row}.{C - 1}", f"wb{C - 1}.{row}")
    net = bld.build(prune=False)
    p = node_of(net, f"wt0.{row}")
    q = node_of(net, f"bl{row}.0")
    v_oc, r = port_thevenin(net, p, q)
    return r, v_oc / v_dd


def ots_fixed_point(geom, config, top, bottom, drive, params=PcmCellParams(),
                    ots: OtsParams = OtsParams(), **kw):
    """Two-pass selector evaluation with floated lines kept in the network.

    Pass one assumes every selector on; each selector is then re-decided from
    the voltage across its whole cell stack and the network is solved again.
    Returns ``(net, result, flips)`` where flips lists the cells whose
    decision would change again given the second-pass voltages.
    """
    def decide(net, res):
        on = {}
        for t, a, b in zip(net.tags, net.a, net.b):
            if t.startswith("ots."):
                cell = t[4:]
                top_node = net.a[net.branch_index(cell)]
                v = res.node_voltages[top_node] - res.node_voltages[b]
                on[cell] = ots_conductance(v, ots) == ots.g_on
        return on

    net1 = build_crossbar_network(geom, config, top, bottom, drive, params, ots=ots,
                                  include_floated=True, **kw)
    on1 = decide(net1, solve_network(net1))
    net2 = build_crossbar_network(geom, config, top, bottom, drive, params, ots=ots,
                                  ots_on=on1, include_floated=True, **kw)
    res2 = solve_network(net2)
    on2 = decide(net2, res2)
    flips = sorted(c for c in on1 if on1[c] != on2.get(c, on1[c]))
    return net2, res2, flips
