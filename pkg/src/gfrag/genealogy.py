"""Genealogical trees of particle systems as rooted edge-weighted real trees.

A particle ``u`` is an edge of length ``lifetime(u)`` hanging from its parent's
edge at distance ``b_u - b_parent`` from the parent's base. Lengths are kept as
stored (integers for discrete runs) together with a global scale factor, so
rescaling is the only lossy step.

Text format, one node per bracket group (children in label order)::

    (length:graft[child,child,...])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class Node:
    length: float
    offset: float  # graft position on the parent edge (0 for the root)
    children: tuple = ()


@dataclass
class GenealogyTree:
    nodes: dict
    scale: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other):
        return isinstance(other, GenealogyTree) and self.scale == other.scale and self.nodes == other.nodes

    @property
    def labels(self) -> list[tuple]:
        return sorted(self.nodes, key=lambda l: (len(l), l))

    def length(self, label) -> float:
        return self.nodes[label].length * self.scale

    def offset(self, label) -> float:
        return self.nodes[label].offset * self.scale

    def bases(self) -> dict:
        """Distance from the root to the base of every edge."""
        if "bases" not in self._cache:
            out = {(): 0.0}
            for lab in self.labels:
                for c in self.nodes[lab].children:
                    out[c] = out[lab] + self.offset(c)
            self._cache["bases"] = out
        return self._cache["bases"]

    def height(self) -> float:
        b = self.bases()
        return max(b[l] + self.length(l) for l in self.nodes)

    def subtree_height(self, label) -> float:
        """Height of the subtree of ``label`` measured from its graft point."""
        key = ("sub", label)
        if key not in self._cache:
            node = self.nodes[label]
            h = self.length(label)
            for c in node.children:
                h = max(h, self.offset(c) + self.subtree_height(c))
            self._cache[key] = h
        return self._cache[key]

    def to_bracket(self) -> str:
        def num(x):
            v = x * self.scale
            return str(int(v)) if float(v).is_integer() else repr(float(v))

        def rec(lab):
            nd = self.nodes[lab]
            kids = ",".join(rec(c) for c in nd.children)
            return f"({num(nd.length)}:{num(nd.offset)}[{kids}])"

        return rec(())


class TreeError(ValueError):
    pass


def build_tree(run) -> GenealogyTree:
    """Tree of a finished :class:`~gfrag.branching.SystemRun`."""
    if not run.extinct:
        raise TreeError(f"run is not extinct (capped={run.capped}, exploded={run.exploded})")
    nodes = {}
    for lab, rec in run.particles.items():
        parent_birth = run.particles[lab[:-1]].birth_time if lab else rec.birth_time
        nodes[lab] = Node(rec.lifetime, rec.birth_time - parent_birth, tuple(rec.children))
    return GenealogyTree(nodes)


def truncate(tree: GenealogyTree, h: int) -> GenealogyTree:
    """Restriction to labels over {1..h} of length at most h."""
    if h < 0:
        raise ValueError("h must be non-negative")

    def inside(lab):
        return len(lab) <= h and all(x <= h for x in lab)

    nodes = {}
    for lab, nd in tree.nodes.items():
        if inside(lab):
            nodes[lab] = Node(nd.length, nd.offset, tuple(c for c in nd.children if inside(c)))
    return GenealogyTree(nodes, tree.scale)


def rescale(tree: GenealogyTree, factor: float) -> GenealogyTree:
    if not factor > 0:
        raise ValueError("factor must be positive")
    return GenealogyTree(dict(tree.nodes), tree.scale * factor)


def parse_bracket(text: str) -> GenealogyTree:
    """Inverse of :meth:`GenealogyTree.to_bracket`; children get labels 1, 2, ..."""
    s = "".join(text.split())
    pos = 0
    nodes = {}

    def number(stop):
        nonlocal pos
        j = pos
        while s[j] not in stop:
            j += 1
        tok, pos = s[pos:j], j
        v = float(tok)
        return int(v) if v.is_integer() and "." not in tok and "e" not in tok.lower() else v

    def node(lab):
        nonlocal pos
        if s[pos] != "(":
            raise ValueError(f"expected '(' at {pos}")
        pos += 1
        length = number(":")
        pos += 1
        graft = number("[")
        pos += 1
        kids = []
        while s[pos] != "]":
            if s[pos] == ",":
                pos += 1
            child = lab + (len(kids) + 1,)
            node(child)
            kids.append(child)
        pos += 2  # "])"
        if s[pos - 1] != ")":
            raise ValueError(f"expected ')' at {pos - 1}")
        nodes[lab] = Node(length, graft, tuple(kids))

    node(())
    if pos != len(s):
        raise ValueError("trailing characters after tree")
    return GenealogyTree(nodes)


@dataclass
class TreeStats:
    height: float
    total_length: float
    leaves: int
    max_degree: int  # largest number of children of one particle
    diameter: float


class _Metric:
    """The tree as a weighted graph: vertices at bases, grafts and tips."""

    def __init__(self, tree: GenealogyTree):
        bases = tree.bases()
        vid: dict = {}
        depth: list[float] = []
        adj: list[list] = []
        segs = []

        def vertex(lab, pos):
            key = (lab, pos)
            if key not in vid:
                vid[key] = len(depth)
                depth.append(bases[lab] + pos)
                adj.append([])
            return vid[key]

        for lab in tree.labels:
            nd = tree.nodes[lab]
            base = vid[(lab[:-1], tree.offset(lab))] if lab else vertex((), 0.0)
            vid[(lab, 0.0)] = base
            L = tree.length(lab)
            stops = sorted({0.0, L, *(tree.offset(c) for c in nd.children)})
            prev = base
            for a, b in zip(stops[:-1], stops[1:]):
                v = vertex(lab, b)
                adj[prev].append((v, b - a))
                adj[v].append((prev, b - a))
                segs.append((prev, v, b - a))
                prev = v
        self.depth = np.array(depth)
        self.adj = adj
        self.segs = segs

    def distances(self, src: int) -> np.ndarray:
        dist = np.full(len(self.adj), -1.0)
        dist[src] = 0.0
        stack = [src]
        while stack:
            v = stack.pop()
            for w, l in self.adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + l
                    stack.append(w)
        return dist

    def diameter(self):
        a = int(np.argmax(self.depth))
        da = self.distances(a)
        b = int(np.argmax(da))
        return float(da[b]), a, b

    def mesh(self, spacing: float):
        """(depth, eccentricity) at vertices and points along every segment."""
        _, a, b = self.diameter()
        da, db = self.distances(a), self.distances(b)
        dep, ecc = [self.depth], [np.maximum(da, db)]
        for u, v, w in self.segs:
            k = int(math.ceil(w / spacing)) if spacing > 0 else 0
            if k <= 1:
                continue
            t = np.arange(1, k) * (w / k)
            dep.append(self.depth[u] + t)
            ecc.append(np.maximum(np.minimum(da[u] + t, da[v] + w - t),
                                  np.minimum(db[u] + t, db[v] + w - t)))
        return np.concatenate(dep), np.concatenate(ecc)


def tree_stats(tree: GenealogyTree) -> TreeStats:
    met = _Metric(tree)
    return TreeStats(
        height=tree.height(),
        total_length=math.fsum(tree.length(l) for l in tree.nodes),
        leaves=sum(1 for nd in tree.nodes.values() if not nd.children),
        max_degree=max(len(nd.children) for nd in tree.nodes.values()),
        diameter=met.diameter()[0],
    )


def _nested(t1: GenealogyTree, t2: GenealogyTree) -> bool:
    small, big = (t1, t2) if len(t1.nodes) <= len(t2.nodes) else (t2, t1)
    for lab in small.nodes:
        if lab not in big.nodes:
            return False
        if small.length(lab) != big.length(lab) or small.offset(lab) != big.offset(lab):
            return False
    return True


def _match(t1, kids1, t2, kids2, by_label):
    if by_label:
        common = [c for c in kids1 if c in set(kids2)]
        return ([(c, c) for c in common], [c for c in kids1 if c not in set(common)],
                [c for c in kids2 if c not in set(common)])
    r1 = sorted(kids1, key=lambda c: (-t1.subtree_height(c), c))
    r2 = sorted(kids2, key=lambda c: (-t2.subtree_height(c), c))
    k = min(len(r1), len(r2))
    return list(zip(r1[:k], r2[:k])), r1[k:], r2[k:]


def gh_upper(t1: GenealogyTree, t2: GenealogyTree) -> float:
    """Upper bound on the rooted GH distance from an explicit correspondence.

    Matched edges are related by clamped distance from their bases; unmatched
    subtrees are collapsed onto their graft points. The bound is the maximum
    over matched edges of the accumulated length/graft mismatch along the
    ancestry plus the tallest collapsed subtree on that edge.
    """
    by_label = _nested(t1, t2)
    best = 0.0
    stack = [((), (), 0.0)]
    while stack:
        u1, u2, acc = stack.pop()
        k1, k2 = t1.nodes[u1].children, t2.nodes[u2].children
        pairs, rest1, rest2 = _match(t1, k1, t2, k2, by_label)
        eps = abs(t1.length(u1) - t2.length(u2))
        for c1, c2 in pairs:
            eps = max(eps, abs(t1.offset(c1) - t2.offset(c2)))
        acc += eps
        pruned = max([t1.subtree_height(c) for c in rest1] + [t2.subtree_height(c) for c in rest2],
                     default=0.0)
        best = max(best, acc + pruned)
        stack.extend((c1, c2, acc) for c1, c2 in pairs)
    return best


def _three_point(m1, m2, spacing2):
    """Half of sup_x inf_y max(|ecc diff|, |depth diff|) with mesh correction."""
    d1, e1 = m1
    d2, e2 = m2
    kd = cKDTree(np.column_stack([d2, e2]))
    dist, _ = kd.query(np.column_stack([d1, e1]), p=np.inf)
    return max(0.0, 0.5 * (float(dist.max()) - spacing2 / 2))


def gh_bounds(t1: GenealogyTree, t2: GenealogyTree, mesh_points: int = 2000) -> tuple[float, float]:
    """(lower, upper) bounds on the rooted Gromov-Hausdorff distance."""
    if t1 == t2:
        return 0.0, 0.0
    s1, s2 = _Metric(t1), _Metric(t2)
    h1, h2 = t1.height(), t2.height()
    diam1, diam2 = s1.diameter()[0], s2.diameter()[0]
    total = max(math.fsum(t1.length(l) for l in t1.nodes), math.fsum(t2.length(l) for l in t2.nodes))
    spacing = total / mesh_points if total > 0 else 0.0
    m1, m2 = s1.mesh(spacing), s2.mesh(spacing)
    lower = max(0.5 * abs(h1 - h2), 0.5 * abs(diam1 - diam2),
                _three_point(m1, m2, spacing), _three_point(m2, m1, spacing))
    return lower, gh_upper(t1, t2)


def truncation_gh_upper(tree: GenealogyTree, h: int) -> float:
    """GH upper bound between a tree and its U_h truncation (the Hausdorff bound)."""
    return gh_upper(tree, truncate(tree, h))
