'''
Structured tetrahedral meshes of the unit cube.
Kuhn (Freudenthal) subdivision of a uniform n×n×n grid, P1 Dirichlet
degrees of freedom, point evaluation and dyadic prolongation.
'''

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    '''Invalid mesh request: bad size, non-nested pair or non-finite samples.'''


@dataclass(frozen=True, eq=False)
class Mesh:
    '''
    Kuhn triangulation of (0,1)³ with n subdivisions per axis.

    Vertex (i, j, k) has index i + (n+1)·j + (n+1)²·k. Interior vertices
    (strictly inside the cube) carry the degrees of freedom, numbered in
    vertex order; dof_of_vertex is -1 on the boundary.
    '''
    n: int
    vertices: np.ndarray       # (n+1)³ × 3
    tets: np.ndarray           # 6n³ × 4, positively oriented
    volumes: np.ndarray        # 6n³
    interior_vertices: np.ndarray
    dof_of_vertex: np.ndarray

    @property
    def h(self):
        '''Largest tetrahedron diameter (the cell's main diagonal).'''
        return np.sqrt(3.0) / self.n

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_dofs(self):
        return len(self.interior_vertices)

    @property
    def interior_dofs(self):
        '''Map vertex index -> dof index for the interior vertices.'''
        return {int(v): d for d, v in enumerate(self.interior_vertices)}


def _vertex_stride(n):
    return np.array([1, n + 1, (n + 1) ** 2])


def _signed_volumes(vertices, tets):
    p = vertices[tets]
    edges = p[:, 1:, :] - p[:, :1, :]
    return np.linalg.det(edges) / 6.0


def _freeze(*arrays):
    for array in arrays:
        array.setflags(write=False)


@lru_cache(maxsize=None)
def build_structured_mesh(n):
    '''
    Build the Kuhn triangulation of the unit cube.

    Each grid cell is split into six tetrahedra sharing the main diagonal
    from its (0,0,0) corner to its (1,1,1) corner, one per ordering of the
    axes. Meshes are cached per n and immutable.

    Args:
        n (int): Subdivisions per axis (n >= 1)

    Returns:
        Mesh: The triangulation with Dirichlet dof bookkeeping
    '''
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"Mesh size must be a positive integer, got {n!r}")
    n = int(n)

    axis = np.arange(n + 1) / n
    zz, yy, xx = np.meshgrid(axis, axis, axis, indexing='ij')
    vertices = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    stride = _vertex_stride(n)
    cells = np.arange(n)
    ck, cj, ci = np.meshgrid(cells, cells, cells, indexing='ij')
    base = (ci * stride[0] + cj * stride[1] + ck * stride[2]).ravel()

    tets = []
    for a, b, _ in permutations(range(3)):
        tets.append(np.column_stack([
            base,
            base + stride[a],
            base + stride[a] + stride[b],
            base + stride.sum(),
        ]))
    tets = np.stack(tets, axis=1).reshape(-1, 4)

    volumes = _signed_volumes(vertices, tets)
    flip = volumes < 0
    tets[flip] = tets[flip][:, [1, 0, 2, 3]]
    volumes = np.abs(volumes)

    ijk = np.column_stack([
        np.arange(len(vertices)) % (n + 1),
        (np.arange(len(vertices)) // (n + 1)) % (n + 1),
        np.arange(len(vertices)) // (n + 1) ** 2,
    ])
    interior_mask = np.all((ijk > 0) & (ijk < n), axis=1)
    interior_vertices = np.flatnonzero(interior_mask)
    dof_of_vertex = np.full(len(vertices), -1, dtype=np.int64)
    dof_of_vertex[interior_vertices] = np.arange(len(interior_vertices))

    _freeze(vertices, tets, volumes, interior_vertices, dof_of_vertex)
    return Mesh(
        n=n,
        vertices=vertices,
        tets=tets,
        volumes=volumes,
        interior_vertices=interior_vertices,
        dof_of_vertex=dof_of_vertex,
    )


def vertex_values(u):
    '''Expand interior coefficients to all vertices (zero on the boundary).'''
    values = np.zeros(u.mesh.num_vertices)
    values[u.mesh.interior_vertices] = u.coeffs
    return values


def interpolate(mesh, f):
    '''
    Nodal P1 interpolation of a scalar field.

    Args:
        mesh (Mesh): Target mesh
        f (callable): Vectorized field, (N, 3) points -> (N,) values

    Returns:
        FeFunction: Coefficients f(x_i) at the interior vertices
    '''
    from fem_core import FeFunction

    points = mesh.vertices[mesh.interior_vertices]
    values = np.asarray(f(points), dtype=float).reshape(-1)
    if values.shape != (mesh.num_dofs,):
        raise MeshError(f"Field returned {values.shape} values for {mesh.num_dofs} vertices")
    if not np.all(np.isfinite(values)):
        raise MeshError("Field has non-finite values at interior vertices")
    return FeFunction(mesh, values)


def locate(mesh, points):
    '''
    Find the Kuhn tetrahedron and barycentric coordinates of each point.

    Returns:
        tuple: (vertex indices (N, 4), barycentric coordinates (N, 4))
    '''
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(points < -1e-14) or np.any(points > 1 + 1e-14):
        raise MeshError("Points must lie in the closed unit cube")

    n = mesh.n
    scaled = np.clip(points, 0.0, 1.0) * n
    cell = np.minimum(np.floor(scaled), n - 1).astype(np.int64)
    frac = scaled - cell

    order = np.argsort(-frac, axis=1, kind='stable')
    f_sorted = np.take_along_axis(frac, order, axis=1)
    bary = np.column_stack([
        1.0 - f_sorted[:, 0],
        f_sorted[:, 0] - f_sorted[:, 1],
        f_sorted[:, 1] - f_sorted[:, 2],
        f_sorted[:, 2],
    ])

    stride = _vertex_stride(n)
    base = cell @ stride
    step = stride[order]
    corners = np.column_stack([
        base,
        base + step[:, 0],
        base + step[:, 0] + step[:, 1],
        base + stride.sum(),
    ])
    return corners, bary


def evaluate(u, points):
    '''Evaluate a P1 function at arbitrary points of the closed cube.'''
    corners, bary = locate(u.mesh, points)
    return np.sum(vertex_values(u)[corners] * bary, axis=1)


@lru_cache(maxsize=None)
def prolongation_matrix(n):
    '''
    Sparse interpolation from the interior dofs of mesh n to those of mesh 2n.

    A fine vertex with grid coordinates (I, J, K) is the midpoint of the
    coarse Kuhn edge from (I//2, J//2, K//2) along the parity offset
    (I%2, J%2, K%2), or the coarse vertex itself when the offset is zero.
    '''
    coarse = build_structured_mesh(n)
    fine = build_structured_mesh(2 * n)

    fine_vertices = fine.interior_vertices
    m = 2 * n + 1
    ijk = np.column_stack([fine_vertices % m, (fine_vertices // m) % m, fine_vertices // m ** 2])
    base = ijk // 2
    parity = ijk % 2

    stride = _vertex_stride(n)
    start = base @ stride
    end = (base + parity) @ stride

    # start == end on coarse vertices: the two halves sum to 1
    rows = np.concatenate([np.arange(len(fine_vertices)), np.arange(len(fine_vertices))])
    cols = coarse.dof_of_vertex[np.concatenate([start, end])]
    vals = np.full(len(rows), 0.5)

    keep = cols >= 0
    matrix = sp.coo_matrix(
        (vals[keep], (rows[keep], cols[keep])),
        shape=(fine.num_dofs, coarse.num_dofs),
    ).tocsr()
    matrix.sum_duplicates()
    return matrix


def prolongate(u, fine):
    '''
    Represent a P1 function of mesh n exactly on its dyadic refinement 2n.

    Args:
        u (FeFunction): Function on the coarse mesh
        fine (Mesh): Mesh with twice as many subdivisions

    Returns:
        FeFunction: The same piecewise-linear function on the fine mesh
    '''
    from fem_core import FeFunction

    if fine.n != 2 * u.mesh.n:
        raise MeshError(f"Mesh n={fine.n} is not the dyadic refinement of n={u.mesh.n}")
    return FeFunction(fine, prolongation_matrix(u.mesh.n) @ u.coeffs)


def prolongate_to(u, target):
    '''Prolongate through every dyadic level up to the target mesh.'''
    ratio = target.n // u.mesh.n
    if target.n % u.mesh.n or ratio & (ratio - 1):
        raise MeshError(f"Mesh n={target.n} is not a dyadic refinement of n={u.mesh.n}")
    while u.mesh.n < target.n:
        u = prolongate(u, build_structured_mesh(2 * u.mesh.n))
    return u


def dump_mesh(mesh, path):
    '''
    Write a plain-text node/element file for debugging.

    Columns: "vertex id x y z" for each vertex, then "tet id v0 v1 v2 v3".
    '''
    path = Path(path)
    with path.open('w') as handle:
        handle.write(f"# n {mesh.n} vertices {mesh.num_vertices} tets {len(mesh.tets)}\n")
        handle.write("# vertex id x y z\n")
        for idx, (x, y, z) in enumerate(mesh.vertices):
            handle.write(f"{idx} {x:.17g} {y:.17g} {z:.17g}\n")
        handle.write("# tet id v0 v1 v2 v3\n")
        for idx, tet in enumerate(mesh.tets):
            handle.write(f"{idx} {tet[0]} {tet[1]} {tet[2]} {tet[3]}\n")
    return path
