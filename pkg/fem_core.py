'''
P1 finite element core on Kuhn meshes.
Mass and stiffness assembly, L2 projection, discrete Laplacian, cubic
load vectors and Jacobians, and L^q norms.
'''

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from config import ANALYTIC_ERROR_CONICAL_POINTS, NORM_CONICAL_POINTS
from mesh import MeshError, evaluate, vertex_values
from sparse_linalg import DEFAULT_SOLVER, cg_solve


# ==============================================================================
# FINITE ELEMENT FUNCTIONS
# ==============================================================================

@dataclass(frozen=True, eq=False)
class FeFunction:
    '''A P1 function: coefficients at the interior vertices of a mesh.'''
    mesh: object
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if coeffs.size != self.mesh.num_dofs:
            raise ValueError(f"Expected {self.mesh.num_dofs} coefficients, got {coeffs.size}")
        object.__setattr__(self, 'coeffs', coeffs)

    @classmethod
    def zeros(cls, mesh):
        return cls(mesh, np.zeros(mesh.num_dofs))

    def _check_same_mesh(self, other):
        if other.mesh is not self.mesh:
            raise MeshError("FeFunctions live on different meshes")

    def __add__(self, other):
        self._check_same_mesh(other)
        return FeFunction(self.mesh, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same_mesh(other)
        return FeFunction(self.mesh, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return FeFunction(self.mesh, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return FeFunction(self.mesh, -self.coeffs)


# ==============================================================================
# QUADRATURE
# ==============================================================================

@dataclass(frozen=True, eq=False)
class Quadrature:
    '''
    Tetrahedral quadrature in barycentric coordinates.

    Weights are normalized to the tetrahedron volume (they sum to 1), so
    ∫_K g ≈ |K| Σ w_q g(x_q).
    '''
    name: str
    points: np.ndarray   # nq × 4 barycentric coordinates
    weights: np.ndarray  # nq
    degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("Quadrature weights must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-13:
            raise ValueError("Quadrature weights must sum to 1")

    @classmethod
    def degree2(cls):
        '''Symmetric 4-point rule, exact for total degree <= 2.'''
        a = (5.0 - np.sqrt(5.0)) / 20.0
        b = (5.0 + 3.0 * np.sqrt(5.0)) / 20.0
        points = np.full((4, 4), a)
        np.fill_diagonal(points, b)
        return cls('degree2', points, np.full(4, 0.25), 2)

    @classmethod
    def conical(cls, m):
        '''
        Conical product of Gauss-Jacobi rules with m points per direction,
        exact for total degree <= 2m - 1.
        '''
        tu, wu = roots_jacobi(m, 2.0, 0.0)
        tv, wv = roots_jacobi(m, 1.0, 0.0)
        tw, ww = roots_jacobi(m, 0.0, 0.0)
        u, v, w = (1 + tu) / 2, (1 + tv) / 2, (1 + tw) / 2
        U, V, W = np.meshgrid(u, v, w, indexing='ij')
        x = U
        y = (1 - U) * V
        z = (1 - U) * (1 - V) * W
        weights = np.einsum('i,j,k->ijk', wu / 8, wv / 4, ww / 2).ravel() * 6.0
        points = np.column_stack([(1 - x - y - z).ravel(), x.ravel(), y.ravel(), z.ravel()])
        return cls(f'conical{m}', points, weights / weights.sum(), 2 * m - 1)


DEGREE2 = Quadrature.degree2()


@lru_cache(maxsize=None)
def conical_rule(m):
    return Quadrature.conical(m)


# ==============================================================================
# GEOMETRY AND ASSEMBLY PLUMBING
# ==============================================================================

@lru_cache(maxsize=None)
def barycentric_gradients(mesh):
    '''Gradients of the four barycentric coordinates on every tet: nt × 4 × 3.'''
    if np.any(mesh.volumes <= 1e-12 * mesh.h ** 3):
        raise MeshError("Degenerate (zero-volume) tetrahedron in mesh")
    p = mesh.vertices[mesh.tets]
    edges = p[:, 1:, :] - p[:, :1, :]
    grads = np.empty((len(mesh.tets), 4, 3))
    grads[:, 1:, :] = np.linalg.inv(edges).transpose(0, 2, 1)
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return grads


@lru_cache(maxsize=None)
def _assembly_plan(mesh):
    '''
    CSR pattern of interior-restricted operators and the slot of every
    local (tet, a, b) entry in its data array (-1 when a row or column is
    a boundary vertex).
    '''
    ndof = mesh.num_dofs
    dofs = mesh.dof_of_vertex[mesh.tets]
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    keep = (rows >= 0) & (cols >= 0)

    keys = rows[keep] * ndof + cols[keep]
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    slot = np.full(rows.size, -1, dtype=np.int64)
    slot[keep] = inverse

    indptr = np.concatenate([[0], np.cumsum(np.bincount(unique_keys // ndof, minlength=ndof))]) if ndof else np.zeros(1, dtype=np.int64)
    indices = unique_keys % ndof if ndof else unique_keys
    return slot, indices, indptr


def assemble_local(mesh, local, full=False):
    '''
    Sum nt × 4 × 4 element matrices into a CSR matrix.

    Args:
        mesh (Mesh): Mesh the element matrices belong to
        local (np.ndarray): Element matrices
        full (bool): Assemble over all vertices instead of interior dofs

    Returns:
        scipy.sparse.csr_matrix: Assembled operator
    '''
    if full:
        rows = np.repeat(mesh.tets, 4, axis=1).ravel()
        cols = np.tile(mesh.tets, (1, 4)).ravel()
        size = mesh.num_vertices
        matrix = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)).tocsr()
        matrix.sum_duplicates()
        return matrix

    slot, indices, indptr = _assembly_plan(mesh)
    flat = local.ravel()
    keep = slot >= 0
    data = np.bincount(slot[keep], weights=flat[keep], minlength=indices.size)
    return sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(mesh.num_dofs, mesh.num_dofs))


def quadrature_points(mesh, quad):
    '''Physical quadrature points: nt × nq × 3.'''
    return np.einsum('qa,tad->tqd', quad.points, mesh.vertices[mesh.tets])


def quadrature_values(u, quad):
    '''Values of a P1 function at the quadrature points: nt × nq.'''
    return vertex_values(u)[u.mesh.tets] @ quad.points.T


def field_values(mesh, f, quad):
    '''Sample a callable field or a FeFunction at the quadrature points.'''
    if isinstance(f, FeFunction):
        if f.mesh is mesh:
            return quadrature_values(f, quad)
        f = lambda points, g=f: evaluate(g, points)
    points = quadrature_points(mesh, quad)
    values = np.asarray(f(points.reshape(-1, 3)), dtype=float)
    return values.reshape(points.shape[:2])


def load_vector(mesh, values, quad):
    '''b_i = Σ_K |K| Σ_q w_q g(x_q) φ_i(x_q) over interior dofs, g given at quadrature points.'''
    weighted = mesh.volumes[:, None] * quad.weights[None, :] * values
    local = weighted @ quad.points
    full = np.bincount(mesh.tets.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)
    return full[mesh.interior_vertices]


def weighted_mass(mesh, values, quad):
    '''M^g_ij = Σ_K |K| Σ_q w_q g(x_q) φ_i φ_j, g given at quadrature points.'''
    weighted = mesh.volumes[:, None] * quad.weights[None, :] * values
    local = np.einsum('tq,qa,qb->tab', weighted, quad.points, quad.points)
    return assemble_local(mesh, local)


# ==============================================================================
# OPERATORS
# ==============================================================================

def assemble_mass(mesh, full=False):
    '''
    Consistent P1 mass matrix, M_ij = ∫ φ_i φ_j.

    Exact element formula |K|/20·(1 + δ_ab).
    '''
    local = (mesh.volumes[:, None, None] / 20.0) * (np.ones((4, 4)) + np.eye(4))[None, :, :]
    return assemble_local(mesh, local, full=full)


def assemble_stiffness(mesh, full=False):
    '''
    P1 stiffness matrix, A_ij = ∫ ∇φ_i · ∇φ_j.

    Raises MeshError on degenerate tetrahedra.
    '''
    grads = barycentric_gradients(mesh)
    local = mesh.volumes[:, None, None] * np.einsum('tad,tbd->tab', grads, grads)
    return assemble_local(mesh, local, full=full)


@lru_cache(maxsize=None)
def mass_matrix(mesh):
    return assemble_mass(mesh)


@lru_cache(maxsize=None)
def stiffness_matrix(mesh):
    return assemble_stiffness(mesh)


def l2_project(mesh, f, quad=DEGREE2, cfg=DEFAULT_SOLVER):
    '''
    L2-orthogonal projection P_h onto the P1 Dirichlet space.

    Args:
        mesh (Mesh): Target mesh
        f: Callable field (N, 3) -> (N,) or a FeFunction
        quad (Quadrature): Rule for the load integrals
        cfg (SolverConfig): Mass solve tolerances

    Returns:
        FeFunction: Solution of M u = ⟨f, φ_i⟩
    '''
    b = load_vector(mesh, field_values(mesh, f, quad), quad)
    return FeFunction(mesh, cg_solve(mass_matrix(mesh), b, cfg))


def apply_discrete_laplacian(u, cfg=DEFAULT_SOLVER):
    '''Δ_h u, the solution z of M z = -A u.'''
    rhs = -(stiffness_matrix(u.mesh) @ u.coeffs)
    return FeFunction(u.mesh, cg_solve(mass_matrix(u.mesh), rhs, cfg))


def cubic_load(u, quad=DEGREE2):
    '''b_i = ∫ u³ φ_i by quadrature (the degree-6 integrand is under-integrated).'''
    return load_vector(u.mesh, quadrature_values(u, quad) ** 3, quad)


def cubic_jacobian(u, quad=DEGREE2):
    '''Derivative of cubic_load: the weighted mass matrix with weight 3u².'''
    return weighted_mass(u.mesh, 3.0 * quadrature_values(u, quad) ** 2, quad)


# ==============================================================================
# NORMS
# ==============================================================================

def _check_exponent(q):
    if not np.isfinite(q) or q < 2:
        raise ValueError(f"Norm exponent must lie in [2, ∞), got {q}")


def _is_even_integer(q):
    return float(q).is_integer() and int(q) % 2 == 0


def _exact_power_integrals(u, q):
    '''
    ∫_K u^q per tet for even integer q, in closed form.

    ∫_K λ^α = 6|K| α!/(|α|+3)!, so ∫_K u^q = 6|K|/((q+1)(q+2)(q+3)) · h_q(u_0..u_3)
    with h_q the complete homogeneous symmetric polynomial.
    '''
    q = int(q)
    corner = vertex_values(u)[u.mesh.tets]
    h = np.zeros((q + 1, len(corner)))
    h[0] = 1.0
    for var in range(4):
        x = corner[:, var]
        for k in range(1, q + 1):
            h[k] += x * h[k - 1]
    factor = 6.0 / ((q + 1) * (q + 2) * (q + 3))
    return np.maximum(factor * u.mesh.volumes * h[q], 0.0)


def lq_norm(u, q, quad=None):
    '''
    L^q norm of a P1 function, q in [2, ∞).

    With quad=None, even integer q is integrated exactly and other q use a
    conical rule; a given quad is always used as is.
    '''
    _check_exponent(q)
    if quad is None and _is_even_integer(q):
        total = _exact_power_integrals(u, q).sum()
    else:
        quad = quad or conical_rule(NORM_CONICAL_POINTS)
        values = np.abs(quadrature_values(u, quad)) ** q
        total = np.sum(u.mesh.volumes * (values @ quad.weights))
    return float(total ** (1.0 / q))


def quadrature_lq_norm(mesh, values, q, quad):
    '''L^q norm of a field given by its nt × nq values at the points of quad.'''
    _check_exponent(q)
    total = np.sum(mesh.volumes * ((np.abs(values) ** q) @ quad.weights))
    return float(total ** (1.0 / q))


def lq_distance(u, f, q, quad=None):
    '''‖u − f‖_{L^q} between a P1 function and a callable field, by quadrature.'''
    _check_exponent(q)
    quad = quad or conical_rule(ANALYTIC_ERROR_CONICAL_POINTS)
    diff = quadrature_values(u, quad) - field_values(u.mesh, f, quad)
    return quadrature_lq_norm(u.mesh, diff, q, quad)


def square_function_norm(fields, weights, q, quad=None):
    '''
    ‖(Σ_n λ_n g_n²)^{1/2}‖_{L^q} for mode fields g_n on one mesh.

    The concrete γ-radonifying norm of a finite mode sum.
    '''
    _check_exponent(q)
    quad = quad or conical_rule(ANALYTIC_ERROR_CONICAL_POINTS)
    square = sum(lam * quadrature_values(g, quad) ** 2 for g, lam in zip(fields, weights))
    values = np.sqrt(square) ** q
    total = np.sum(fields[0].mesh.volumes * (values @ quad.weights))
    return float(total ** (1.0 / q))
