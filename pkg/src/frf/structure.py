"""Combinatorial self-similar cell structures and their level-n vertex/cell complexes.

A fractal is described by ``m`` maps and a boundary of ``b`` vertices.  A vertex
of the level-n complex is an equivalence class of *slots* ``(w, a)`` with ``w`` a
word of length n and ``a`` a boundary index, meaning the point psi_w(v_a).  The
classes are generated by the level-1 gluing table, propagated self-similarly.
Ambient geometry is never used to identify vertices.

Indices are 0-based in code and 1-based in definition files and reports.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import networkx as nx
import numpy as np
import yaml
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

DEFAULT_CELL_BUDGET = 2_000_000

BUILTINS = ("interval", "sg", "hexagasket", "vicsek", "pci9", "pci6a", "pci6b")


class StructureError(ValueError):
    """Invalid cell structure (bad gluing, budget exceeded, ...)."""


class DefinitionParseError(ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


@dataclass(frozen=True)
class Geometry:
    """Affine reference realisation: ``x -> matrix @ x + offset`` per map."""

    dim: int
    boundary: np.ndarray  # (b, dim)
    matrices: np.ndarray  # (m, dim, dim)
    offsets: np.ndarray  # (m, dim)

    def level_points(self, n):
        """Coordinates of every slot at level n, shape (m**n, b, dim)."""
        pts = self.boundary[None, :, :]
        for _ in range(n):
            # psi_{i w'}(v) = A_i psi_{w'}(v) + t_i
            pts = np.einsum("ide,wbe->iwbd", self.matrices, pts) + self.offsets[:, None, None, :]
            pts = pts.reshape(-1, pts.shape[2], pts.shape[3])
        return pts


@dataclass(frozen=True, eq=False)
class FractalDef:
    """Combinatorial description of a finitely ramified self-similar set.

    ``boundary_images`` maps a level-1 slot ``(i, a)`` to the global boundary
    index it lands on; ``gluing`` lists pairs of level-1 slots that are the same
    point.  ``symmetry`` holds boundary permutations generating a group action.
    """

    name: str
    m: int
    b: int
    boundary_images: tuple  # ((i, a, c), ...)
    gluing: tuple  # (((i, a), (j, b)), ...)
    symmetry: tuple = ()
    geometry: Geometry | None = None
    cell_budget: int = DEFAULT_CELL_BUDGET
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 2:
            raise StructureError(f"{self.name}: need at least 2 maps, got m={self.m}")
        if self.b < 2:
            raise StructureError(f"{self.name}: need at least 2 boundary vertices, got b={self.b}")
        for i, a, c in self.boundary_images:
            self._check_slot(i, a)
            if not 0 <= c < self.b:
                raise StructureError(f"{self.name}: boundary index {c + 1} out of range")
        for (i, a), (j, bb) in self.gluing:
            self._check_slot(i, a)
            self._check_slot(j, bb)
        for perm in self.symmetry:
            if sorted(perm) != list(range(self.b)):
                raise StructureError(f"{self.name}: symmetry {[p + 1 for p in perm]} is not a permutation")

    def _check_slot(self, i, a):
        if not (0 <= i < self.m and 0 <= a < self.b):
            raise StructureError(f"{self.name}: slot ({i + 1}, {a + 1}) out of range")

    def canonical(self):
        return {
            "name": self.name,
            "m": self.m,
            "b": self.b,
            "boundary_images": sorted(list(t) for t in self.boundary_images),
            "gluing": sorted([list(p), list(q)] for p, q in self.gluing),
            "symmetry": [list(p) for p in self.symmetry],
            "geometry": None
            if self.geometry is None
            else {
                "boundary": self.geometry.boundary.round(12).tolist(),
                "matrices": self.geometry.matrices.round(12).tolist(),
                "offsets": self.geometry.offsets.round(12).tolist(),
            },
        }

    def digest(self):
        """Content hash of the definition (whitespace and comments ignored)."""
        if "digest" not in self._cache:
            blob = json.dumps(self.canonical(), sort_keys=True).encode()
            self._cache["digest"] = hashlib.sha256(blob).hexdigest()[:16]
        return self._cache["digest"]

    def preimages(self, c):
        """Level-1 slots landing on global boundary vertex ``c``."""
        return [(i, a) for i, a, cc in sorted(self.boundary_images) if cc == c]

    def level(self, n):
        """Cached :func:`build_level`."""
        return build_level(self, n)


# ----------------------------------------------------------------------------
# definition files


def _node_line(node):
    return node.start_mark.line + 1


def _int_list(node, source, what):
    if not isinstance(node, yaml.SequenceNode):
        raise DefinitionParseError(f"{what} must be a list", _node_line(node), source)
    out = []
    for item in node.value:
        if not isinstance(item, yaml.ScalarNode):
            raise DefinitionParseError(f"{what} entries must be integers", _node_line(item), source)
        try:
            out.append(int(item.value))
        except ValueError:
            raise DefinitionParseError(
                f"{what}: {item.value!r} is not an integer", _node_line(item), source
            ) from None
    return out


def _float_rows(node, source, what):
    try:
        arr = np.asarray(yaml.safe_load(yaml.serialize(node)), dtype=float)
    except (TypeError, ValueError):
        raise DefinitionParseError(f"{what} must be numeric", _node_line(node), source) from None
    return arr


def parse_definition(text, source=None):
    """Parse definition-file text into a :class:`FractalDef`.

    Errors carry the offending line number.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise DefinitionParseError(f"malformed file: {getattr(exc, 'problem', exc)}", line, source) from None
    if not isinstance(root, yaml.MappingNode):
        raise DefinitionParseError("expected a key/value mapping at top level", 1, source)
    fields = {k.value: v for k, v in root.value}
    for key in ("name", "m", "b", "gluing"):
        if key not in fields:
            raise DefinitionParseError(f"missing required field '{key}'", _node_line(root), source)
    name = str(fields["name"].value)
    try:
        m = int(fields["m"].value)
        b = int(fields["b"].value)
    except (TypeError, ValueError):
        raise DefinitionParseError("m and b must be integers", _node_line(fields["m"]), source) from None

    gnode = fields["gluing"]
    if not isinstance(gnode, yaml.SequenceNode):
        raise DefinitionParseError("gluing must be a list of 4-tuples", _node_line(gnode), source)
    images, gluing = [], []
    for entry in gnode.value:
        tup = _int_list(entry, source, "gluing")
        line = _node_line(entry)
        if len(tup) != 4:
            raise DefinitionParseError(f"gluing entry {tup} must have 4 integers (i, a, j, b)", line, source)
        i, a, j, bb = tup
        if not (1 <= i <= m and 1 <= a <= b and 0 <= j <= m and 1 <= bb <= b):
            raise DefinitionParseError(f"gluing entry {tup} out of range for m={m}, b={b}", line, source)
        if j == 0:
            images.append((i - 1, a - 1, bb - 1))
        else:
            gluing.append(((i - 1, a - 1), (j - 1, bb - 1)))

    symmetry = []
    if "symmetry" in fields and isinstance(fields["symmetry"], yaml.SequenceNode):
        for entry in fields["symmetry"].value:
            perm = _int_list(entry, source, "symmetry")
            if sorted(perm) != list(range(1, b + 1)):
                raise DefinitionParseError(f"symmetry {perm} is not a permutation of 1..{b}", _node_line(entry), source)
            symmetry.append(tuple(p - 1 for p in perm))

    geometry = None
    if "geometry" in fields and isinstance(fields["geometry"], yaml.MappingNode):
        gfields = {k.value: v for k, v in fields["geometry"].value}
        try:
            dim = int(gfields["dim"].value)
            bpts = _float_rows(gfields["boundary"], source, "geometry.boundary").reshape(b, dim)
            mats, offs = [], []
            for mnode in gfields["maps"].value:
                mf = {k.value: v for k, v in mnode.value}
                mats.append(_float_rows(mf["matrix"], source, "geometry matrix").reshape(dim, dim))
                offs.append(_float_rows(mf["offset"], source, "geometry offset").reshape(dim))
        except (KeyError, ValueError, AttributeError):
            raise DefinitionParseError("geometry needs dim, boundary and maps", _node_line(fields["geometry"]), source) from None
        if len(mats) != m:
            raise DefinitionParseError(f"geometry has {len(mats)} maps, expected {m}", _node_line(fields["geometry"]), source)
        geometry = Geometry(dim, bpts, np.array(mats), np.array(offs))

    try:
        return FractalDef(name, m, b, tuple(images), tuple(gluing), tuple(symmetry), geometry)
    except StructureError as exc:
        raise DefinitionParseError(str(exc), None, source) from None


def load_definition(name_or_path):
    """Load a built-in by name, or a definition file by path."""
    if name_or_path in BUILTINS:
        text = resources.files("frf.data").joinpath(f"{name_or_path}.yaml").read_text()
        return parse_definition(text, source=f"{name_or_path}.yaml")
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(f"no built-in or file named {name_or_path!r} (built-ins: {', '.join(BUILTINS)})")
    return parse_definition(path.read_text(), source=str(path))


# ----------------------------------------------------------------------------
# words


def word_index(word, m):
    idx = 0
    for s in word:
        idx = idx * m + s
    return idx


def index_word(idx, n, m):
    out = []
    for _ in range(n):
        idx, s = divmod(idx, m)
        out.append(s)
    return tuple(reversed(out))


def format_word(word):
    """1-based string form, e.g. (0, 2) -> '13'; separators for m > 9."""
    if not word:
        return "()"
    if max(word) < 9:
        return "".join(str(s + 1) for s in word)
    return ".".join(str(s + 1) for s in word)


def parse_word(text, m):
    text = text.strip()
    if text in ("", "()"):
        return ()
    parts = text.split(".") if "." in text else list(text)
    word = tuple(int(p) - 1 for p in parts)
    if any(not 0 <= s < m for s in word):
        raise ValueError(f"word {text!r} has symbols outside 1..{m}")
    return word


# ----------------------------------------------------------------------------
# level complexes


@dataclass(frozen=True, eq=False)
class LevelGraph:
    """Vertices and cells of V_n.

    ``cells[k]`` lists the vertex ids of the cell with word ``index_word(k)`` in
    boundary order.  Ids are nested: the vertices of V_{n-1} keep their ids in
    V_n, and ids ``0..b-1`` are the global boundary.
    """

    n: int
    m: int
    b: int
    cells: np.ndarray
    n_vertices: int

    @property
    def boundary(self):
        return np.arange(self.b)

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def word(self, k):
        return index_word(k, self.n, self.m)

    def cell(self, word):
        if len(word) != self.n:
            raise ValueError(f"word of length {len(word)} at level {self.n}")
        return self.cells[word_index(word, self.m)]

    def vertex_cells(self):
        """Sparse incidence (vertex x cell)."""
        rows = self.cells.ravel()
        cols = np.repeat(np.arange(self.n_cells), self.b)
        inc = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.n_vertices, self.n_cells))
        inc.data[:] = 1.0
        return inc


def _identification_edges(fdef, n_prev):
    """Raw-node pairs glued when assembling m copies of a level with n_prev vertices."""
    pairs = [(i * n_prev + a, j * n_prev + bb) for (i, a), (j, bb) in fdef.gluing]
    for c in range(fdef.b):
        pre = fdef.preimages(c)
        pairs += [(pre[0][0] * n_prev + pre[0][1], i * n_prev + a) for i, a in pre[1:]]
    return pairs


def check_gluing(fdef):
    """Return a witness (c1, c2) if the gluing merges two boundary vertices, else None."""
    parent = {}

    def find(x):
        while parent.get(x, x) != x:
            x = parent[x]
        return x

    links = [(("slot", i, a), ("bd", c)) for i, a, c in fdef.boundary_images]
    links += [(("slot",) + p, ("slot",) + q) for p, q in fdef.gluing]
    for x, y in links:
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry
    roots = {}
    for c in range(fdef.b):
        r = find(("bd", c))
        if r in roots:
            return roots[r], c
        roots[r] = c
    return None


def build_level(fdef, n):
    """Materialise V_n and the n-cells of ``fdef``.

    Level n is m copies of level n-1 (copy i is psi_i of it), glued along the
    level-1 table.  Results are cached on the definition.
    """
    if n < 0:
        raise ValueError("level must be >= 0")
    key = ("level", n)
    if key in fdef._cache:
        return fdef._cache[key]
    if fdef.m**n > fdef.cell_budget:
        raise StructureError(
            f"{fdef.name}: level {n} has {fdef.m**n} cells, over the budget of {fdef.cell_budget}"
        )
    if n == 0:
        witness = check_gluing(fdef)
        if witness is not None:
            c1, c2 = witness
            raise StructureError(
                f"{fdef.name}: gluing identifies boundary vertices v{c1 + 1} and v{c2 + 1}"
            )
        for c in range(fdef.b):
            if not fdef.preimages(c):
                raise StructureError(f"{fdef.name}: boundary vertex v{c + 1} lies in no 1-cell")
        lg = LevelGraph(0, fdef.m, fdef.b, np.arange(fdef.b)[None, :], fdef.b)
        fdef._cache[key] = lg
        return lg

    prev = build_level(fdef, n - 1)
    m, b, N = fdef.m, fdef.b, prev.n_vertices
    raw = (np.arange(m)[:, None, None] * N + prev.cells[None, :, :]).reshape(-1, b)
    pairs = np.array(_identification_edges(fdef, N), dtype=np.int64).reshape(-1, 2)
    graph = sparse.coo_matrix(
        (np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m * N, m * N)
    )
    _, comp = connected_components(graph, directed=False)

    # where each old vertex lives at level n: first slot (w, a), then descend
    flat = prev.cells.ravel()
    _, first = np.unique(flat, return_index=True)
    w_idx, a_idx = np.divmod(first, b)
    child = np.array([fdef.preimages(a)[0] for a in range(b)])  # (b, 2): map, local index
    new_cell = w_idx * m + child[a_idx, 0]
    old_comp = comp[raw[new_cell, child[a_idx, 1]]]
    if len(np.unique(old_comp)) != N:
        raise StructureError(f"{fdef.name}: level {n - 1} vertices collapse at level {n}")

    n_comp = comp.max() + 1
    label = np.full(n_comp, -1, dtype=np.int64)
    label[old_comp] = np.arange(N)
    comp_of_slots = comp[raw.ravel()]
    fresh = comp_of_slots[label[comp_of_slots] < 0]
    _, order = np.unique(fresh, return_index=True)
    fresh_in_order = fresh[np.sort(order)]
    label[fresh_in_order] = np.arange(N, N + len(fresh_in_order))
    cells = label[comp_of_slots].reshape(-1, b)
    lg = LevelGraph(n, m, b, cells, int(n_comp))
    fdef._cache[key] = lg
    return lg


def refine_cell(lg, word):
    """Child words of ``word`` (a cell one level above ``lg``) in map order."""
    word = tuple(word)
    if len(word) != lg.n - 1:
        raise ValueError(f"word {format_word(word)} has level {len(word)}, expected {lg.n - 1}")
    return [word + (j,) for j in range(lg.m)]


def brute_force_partition(fdef, n):
    """Slot partition at level n by plain union-find over (word, index) slots.

    Independent of :func:`build_level`: relations are generated at every level
    (gluing under each prefix, and each slot tied to its refinements) and the
    classes are read off at level n.  Returns an array of class labels per slot
    in ``cells`` order, relabelled by first appearance.
    """
    m, b = fdef.m, fdef.b
    parent = {}

    def find(x):
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while parent.get(x, x) != root:
            parent[x], x = root, parent[x]
        return root

    def union(x, y):
        rx, ry = find(x), find(y)
        if rx != ry:
            parent[rx] = ry

    for k in range(n):
        for u in itertools.product(range(m), repeat=k):
            for (i, a), (j, bb) in fdef.gluing:
                union((u + (i,), a), (u + (j,), bb))
            for a in range(b):
                for i, aa in fdef.preimages(a):
                    union((u, a), (u + (i,), aa))
    labels, out = {}, []
    for w in itertools.product(range(m), repeat=n):
        for a in range(b):
            r = find((w, a))
            out.append(labels.setdefault(r, len(labels)))
    return np.array(out)


# ----------------------------------------------------------------------------
# symmetry


@dataclass(frozen=True)
class SymmetryElement:
    """Group element g with g o psi_i = psi_{maps[i]} o locals[i] on V_0."""

    boundary: tuple
    maps: tuple
    locals: tuple  # per map, index of the element acting inside the cell


def _level1_automorphisms(fdef, sigma):
    """Iterate incidence automorphisms of level 1 restricting to ``sigma`` on V_0."""
    lg = build_level(fdef, 1)
    g = nx.Graph()
    for k, cell in enumerate(lg.cells):
        g.add_node(("c", k), kind="cell")
        for v in cell:
            g.add_node(("v", int(v)), kind=("bd", int(v)) if v < fdef.b else "v")
            g.add_edge(("c", k), ("v", int(v)))
    h = g.copy()
    nx.set_node_attributes(h, {("v", sigma[c]): ("bd", c) for c in range(fdef.b)}, "kind")
    matcher = nx.algorithms.isomorphism.GraphMatcher(
        g, h, node_match=lambda x, y: x["kind"] == y["kind"]
    )
    return matcher.isomorphisms_iter()


def _element_from(fdef, iso, index):
    lg = build_level(fdef, 1)
    b = fdef.b
    maps, locs = [], []
    for i in range(fdef.m):
        j = iso[("c", i)][1]
        image = [int(iso[("v", int(v))][1]) for v in lg.cells[i]]
        target = [int(v) for v in lg.cells[j]]
        if len(set(target)) != b or set(target) != set(image):
            return None
        tau = tuple(target.index(v) for v in image)
        if tau not in index:
            return None
        maps.append(j)
        locs.append(index[tau])
    return tuple(maps), tuple(locs)


def symmetry_group(fdef):
    """Close the declared boundary permutations into a group acting on the structure.

    Raises StructureError if some element does not extend to a level-1
    automorphism whose cell-local actions stay inside the group.
    """
    if "group" in fdef._cache:
        return fdef._cache["group"]
    b = fdef.b
    ident = tuple(range(b))
    elems = {ident}
    frontier = [ident]
    while frontier:
        nxt = []
        for p in frontier:
            for s in fdef.symmetry:
                q = tuple(s[p[c]] for c in range(b))
                if q not in elems:
                    elems.add(q)
                    nxt.append(q)
        frontier = nxt
    elems = sorted(elems)
    index = {p: k for k, p in enumerate(elems)}
    group = []
    for sigma in elems:
        found = None
        for iso in _level1_automorphisms(fdef, sigma):
            found = _element_from(fdef, iso, index)
            if found is not None:
                break
        if found is None:
            raise StructureError(
                f"{fdef.name}: symmetry {[s + 1 for s in sigma]} does not map 1-cells to 1-cells"
            )
        group.append(SymmetryElement(sigma, *found))
    fdef._cache["group"] = group
    return group


def act_on_slots(group, g, n, m):
    """Images of all level-n slots under element ``g``: (cell index, local index) arrays."""
    b = len(group[0].boundary)
    cell = np.zeros(1, dtype=np.int64)
    elem = np.array([g])
    for _ in range(n):
        maps = np.array([e.maps for e in group])
        locs = np.array([e.locals for e in group])
        cell = (cell[:, None] * m + maps[elem]).reshape(-1)
        elem = locs[elem].reshape(-1)
    bnd = np.array([e.boundary for e in group])
    local = bnd[elem]  # (m**n, b)
    return cell, local


# ----------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    fractal: str
    level: int
    checks: list = field(default_factory=list)  # (condition, passed, detail)

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.checks)

    def add(self, condition, ok, detail=""):
        self.checks.append((condition, bool(ok), detail))

    def failures(self):
        return [(c, d) for c, ok, d in self.checks if not ok]

    def lines(self):
        out = []
        for cond, ok, detail in self.checks:
            out.append(f"{cond:<28} {'pass' if ok else 'FAIL'}  {detail}".rstrip())
        return out


def _connected(lg):
    inc = lg.vertex_cells()
    adj = (inc.T @ inc).tocsr()
    ncomp, _ = connected_components(adj, directed=False)
    return ncomp == 1


def validate_structure(fdef, n):
    """Check the cell-structure axioms exhaustively up to level n.

    Conditions: gluing sanity, (B) connectivity, (C) at least two vertices per
    cell, (D) parents' vertices covered by children, (F) cell intersections match
    the independent union-find oracle, geometric consistency when a reference
    realisation is given, and the declared symmetries.
    """
    if n < 1:
        raise ValueError("validation needs n >= 1")
    rep = ValidationReport(fdef.name, n)
    witness = check_gluing(fdef)
    if witness is not None:
        rep.add("gluing", False, f"v{witness[0] + 1} and v{witness[1] + 1} identified")
        return rep
    missing = [c for c in range(fdef.b) if not fdef.preimages(c)]
    rep.add("gluing", not missing, "" if not missing else f"v{missing[0] + 1} lies in no 1-cell")
    if missing:
        return rep
    try:
        levels = [build_level(fdef, k) for k in range(n + 1)]
    except StructureError as exc:
        rep.add("build", False, str(exc))
        return rep

    lg1 = levels[1]
    inc = lg1.vertex_cells()
    isolated = []
    for i in range(fdef.m):
        others = np.ones(fdef.m, bool)
        others[i] = False
        shared = np.asarray(inc[:, others].sum(axis=1)).ravel()[lg1.cells[i]]
        if not (shared > 0).any():
            isolated.append(i)
    ok_b = not isolated and all(_connected(lg) for lg in levels[1:])
    rep.add("(B) connectivity", ok_b, f"1-cell {isolated[0] + 1} touches no other cell" if isolated else "")

    bad_c = None
    for lg in levels[1:]:
        distinct = np.array([len(set(c)) for c in lg.cells.tolist()])
        if (distinct < 2).any():
            bad_c = (lg.n, lg.word(int(np.argmin(distinct))))
            break
    rep.add("(C) >= 2 vertices per cell", bad_c is None,
            "" if bad_c is None else f"cell {format_word(bad_c[1])} at level {bad_c[0]}")

    bad_d = None
    for lg in levels[1:]:
        parent = levels[lg.n - 1]
        kids = lg.cells.reshape(parent.n_cells, fdef.m * fdef.b)
        for k in range(parent.n_cells):
            if not set(parent.cells[k].tolist()) <= set(kids[k].tolist()):
                bad_d = parent.word(k)
                break
        if bad_d is not None:
            break
    rep.add("(D) refinement covers", bad_d is None, "" if bad_d is None else f"cell {format_word(bad_d)}")

    bad_f = None
    for lg in levels[1:]:
        oracle = brute_force_partition(fdef, lg.n)
        built = lg.cells.ravel()
        # same partition of slots <=> identical pairwise cell intersections
        pairs = np.unique(np.stack([built, oracle], 1), axis=0)
        if len(pairs) != len(np.unique(built)) or len(pairs) != len(np.unique(oracle)):
            dup = np.unique(pairs[:, 0], return_counts=True)
            v = int(dup[0][np.argmax(dup[1])])
            bad_f = (lg.n, v)
            break
    rep.add("(F) cell intersections", bad_f is None,
            "" if bad_f is None else f"vertex {bad_f[1]} at level {bad_f[0]} disagrees with union-find")

    if fdef.geometry is not None:
        bad_g = None
        for lg in levels[1:min(n, 3) + 1]:
            pts = fdef.geometry.level_points(lg.n).reshape(-1, fdef.geometry.dim)
            ids = lg.cells.ravel()
            scale = max(1.0, float(np.abs(pts).max()))
            # identified slots coincide
            ref = np.zeros((lg.n_vertices, pts.shape[1]))
            ref[ids] = pts
            if np.abs(ref[ids] - pts).max() > 1e-9 * scale:
                bad_g = f"identified slots apart at level {lg.n}"
                break
            close = cKDTree(ref).query_pairs(1e-9 * scale)
            if close:
                p, q = sorted(close)[0]
                bad_g = f"distinct vertices {p} and {q} coincide at level {lg.n}"
                break
        rep.add("geometry consistency", bad_g is None, bad_g or "")

    if fdef.symmetry:
        try:
            group = symmetry_group(fdef)
            bad_s = None
            for lg in levels[1:]:
                for gi, g in enumerate(group):
                    cell_img, local_img = act_on_slots(group, gi, lg.n, fdef.m)
                    src = lg.cells
                    dst = lg.cells[cell_img[:, None], local_img]
                    mapping = {}
                    for s, d in zip(src.ravel().tolist(), dst.ravel().tolist()):
                        if mapping.setdefault(s, d) != d:
                            bad_s = f"element {[p + 1 for p in g.boundary]} not well defined at level {lg.n}"
                            break
                    if bad_s is None and len(set(mapping.values())) != lg.n_vertices:
                        bad_s = f"element {[p + 1 for p in g.boundary]} not bijective at level {lg.n}"
                    if bad_s:
                        break
                if bad_s:
                    break
            rep.add("symmetry", bad_s is None, bad_s or f"group of order {len(group)}")
        except StructureError as exc:
            rep.add("symmetry", False, str(exc))
    return rep
