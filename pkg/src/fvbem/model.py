"""Problem data: coefficient fields, jumps, exact solutions, built-in experiments.

The built-in problems carry manufactured right-hand sides derived symbolically
from their exact solution pairs, so interior source, trace jump and conormal
jump are mutually consistent by construction.
"""

import configparser
import warnings
from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (convert_xor, parse_expr,
                                        standard_transformations)

from .mesh import (DomainDescriptor, PrimalMesh, lshape_domain,
                   rectangle_domain, square_domain)
from .quadrature import TRI7_BARY, TRI7_W, triangle_points

X1, X2 = sp.symbols("x1 x2", real=True)


class ModelError(ValueError):
    pass


class GammaConditionError(ModelError):
    """Raised when 0.5*div b + r is negative somewhere in the domain."""


class EllipticityWarning(UserWarning):
    pass


def _as_points(points):
    return np.atleast_2d(np.asarray(points, dtype=float))


def _lambdify_scalar(expr):
    fn = sp.lambdify((X1, X2), expr, modules="numpy")

    def evaluate(points):
        p = _as_points(points)
        out = np.asarray(fn(p[:, 0], p[:, 1]), dtype=float)
        return np.broadcast_to(out, (len(p),)).copy()

    return evaluate


def _lambdify_vector(exprs):
    fns = [_lambdify_scalar(e) for e in exprs]

    def evaluate(points):
        p = _as_points(points)
        return np.column_stack([f(p) for f in fns])

    return evaluate


@dataclass
class CoefficientField:
    """Symmetric 2x2 diffusion matrix, smooth or triangle-piecewise-constant.

    For the piecewise-constant kind the matrix depends on the containing
    triangle; callers pass that triangle's barycenter as ``cell_centers``.
    """
    kind: str                      # "smooth" | "triangle-constant"
    _eval: callable

    def evaluate(self, points, cell_centers=None):
        p = _as_points(points)
        if self.kind == "triangle-constant":
            if cell_centers is None:
                cell_centers = p
            return self._eval(_as_points(cell_centers))
        return self._eval(p)

    @staticmethod
    def from_sympy(a11, a12, a22):
        fns = [_lambdify_scalar(e) for e in (a11, a12, a22)]

        def evaluate(points):
            v11, v12, v22 = (f(points) for f in fns)
            out = np.empty((len(points), 2, 2))
            out[:, 0, 0] = v11
            out[:, 0, 1] = v12
            out[:, 1, 0] = v12
            out[:, 1, 1] = v22
            return out

        return CoefficientField("smooth", evaluate)

    @staticmethod
    def isotropic_piecewise(alpha_of_point):
        """alpha evaluated at the cell center times the identity."""

        def evaluate(centers):
            a = np.asarray(alpha_of_point(centers), dtype=float)
            out = np.zeros((len(centers), 2, 2))
            out[:, 0, 0] = a
            out[:, 1, 1] = a
            return out

        return CoefficientField("triangle-constant", evaluate)


@dataclass
class VelocityField:
    _eval: callable
    _div: callable = None          # analytic divergence when available

    def evaluate(self, points):
        return self._eval(_as_points(points))

    def divergence(self, points, fd_step=None):
        p = _as_points(points)
        if self._div is not None:
            return self._div(p)
        h = fd_step if fd_step is not None else 1e-6
        ex = np.array([h, 0.0])
        ey = np.array([0.0, h])
        dbx = (self._eval(p + ex)[:, 0] - self._eval(p - ex)[:, 0]) / (2 * h)
        dby = (self._eval(p + ey)[:, 1] - self._eval(p - ey)[:, 1]) / (2 * h)
        return dbx + dby

    @property
    def has_analytic_divergence(self):
        return self._div is not None

    @staticmethod
    def from_sympy(b1, b2):
        div = sp.diff(b1, X1) + sp.diff(b2, X2)
        return VelocityField(_lambdify_vector((b1, b2)), _lambdify_scalar(div))


@dataclass
class ScalarField:
    _eval: callable

    def evaluate(self, points):
        return self._eval(_as_points(points))

    @staticmethod
    def constant(c):
        c = float(c)
        return ScalarField(lambda p: np.full(len(p), c))

    @staticmethod
    def from_sympy(expr):
        return ScalarField(_lambdify_scalar(expr))


@dataclass
class SourceField(ScalarField):
    """Interior source; the rectangle-indicator kind supports exact integration."""
    rect: tuple = None             # (x0, x1, y0, y1)
    rect_value: float = 0.0

    @staticmethod
    def rectangle_indicator(value, x0, x1, y0, y1):
        value = float(value)

        def evaluate(p):
            inside = ((p[:, 0] >= x0) & (p[:, 0] <= x1)
                      & (p[:, 1] >= y0) & (p[:, 1] <= y1))
            return np.where(inside, value, 0.0)

        return SourceField(evaluate, rect=(x0, x1, y0, y1), rect_value=value)


@dataclass
class JumpData:
    """Trace jump u0 and conormal jump t0 on the coupling boundary.

    t0 is evaluated with the outward normal of the quadrature point's edge; data
    given as plain functions of x ignore the normal.
    """
    u0: callable
    t0: callable

    def eval_u0(self, points):
        return np.asarray(self.u0(_as_points(points)), dtype=float)

    def eval_t0(self, points, normals):
        return np.asarray(self.t0(_as_points(points), np.atleast_2d(normals)),
                          dtype=float)

    @staticmethod
    def zero():
        return JumpData(lambda p: np.zeros(len(p)),
                        lambda p, n: np.zeros(len(p)))


@dataclass
class ExactSolutionPair:
    u: callable                    # interior solution
    grad_u: callable               # interior gradient, (n, 2)
    u_e: callable                  # exterior solution
    phi: callable                  # exterior conormal d u_e / d n, needs normals

    def eval_u(self, points):
        return np.asarray(self.u(_as_points(points)), dtype=float)

    def eval_grad_u(self, points):
        return np.atleast_2d(np.asarray(self.grad_u(_as_points(points)), dtype=float))

    def eval_u_e(self, points):
        return np.asarray(self.u_e(_as_points(points)), dtype=float)

    def eval_phi(self, points, normals):
        return np.asarray(self.phi(_as_points(points), np.atleast_2d(normals)),
                          dtype=float)


@dataclass
class ProblemSpec:
    name: str
    domain: DomainDescriptor
    A: CoefficientField
    b: VelocityField
    r: ScalarField
    f: SourceField
    jumps: JumpData
    exact: ExactSolutionPair = None
    radiation_variant: str = "log"     # "log" (C_inf log|x|) | "ainf" (constant at infinity)
    upwind: str = "none"               # "none" | "full" | "steered"

    def __post_init__(self):
        if self.radiation_variant not in ("log", "ainf"):
            raise ModelError(f"unknown radiation variant {self.radiation_variant!r}")
        if self.upwind not in ("none", "full", "steered"):
            raise ModelError(f"unknown upwind choice {self.upwind!r}")
        if self.radiation_variant == "log" and self.domain.diameter >= 1.0:
            raise ModelError(
                "log-growth radiation requires diam(domain) < 1; rescale the domain")


# ---------------------------------------------------------------------------
# gamma condition and the stabilization selector
# ---------------------------------------------------------------------------

def gamma(spec: ProblemSpec, points):
    """0.5 * div b + r at the given points."""
    p = _as_points(points)
    step = 1e-6 * spec.domain.diameter
    return 0.5 * spec.b.divergence(p, fd_step=step) + spec.r.evaluate(p)


def _gamma_sample_points(spec, mesh):
    pts, _ = triangle_points(mesh.tri_coords, TRI7_BARY, TRI7_W)
    return pts.reshape(-1, 2)


def validate_gamma(spec: ProblemSpec, mesh: PrimalMesh, tol=1e-10):
    """Raise GammaConditionError where 0.5*div b + r < 0, reporting the point."""
    pts = _gamma_sample_points(spec, mesh)
    g = gamma(spec, pts)
    k = int(np.argmin(g))
    if g[k] < -tol:
        raise GammaConditionError(
            f"gamma = {g[k]:.6g} < 0 at x = ({pts[k, 0]:.6g}, {pts[k, 1]:.6g})")
    return float(g[k])


def select_beta(spec: ProblemSpec, mesh: PrimalMesh, tol=1e-12):
    """1 if gamma vanishes at every sample point of the mesh, else 0."""
    g = gamma(spec, _gamma_sample_points(spec, mesh))
    return 1 if np.max(np.abs(g)) <= tol else 0


def min_eigenvalue_report(A: CoefficientField, mesh: PrimalMesh,
                          warn_threshold=0.25):
    """Smallest eigenvalue of A over the mesh sample points (nodes + interior
    quadrature points).

    Warns when the minimum is at or below 0.25: the coupling's ellipticity
    condition needs the minimum to exceed a quarter of a contraction constant
    that is itself at least 1/2, so values <= 0.25 cannot be certified.
    """
    verts = mesh.tri_coords                      # (T, 3, 2), corners per triangle
    qpts, _ = triangle_points(verts, TRI7_BARY, TRI7_W)
    pts = np.concatenate([verts, qpts], axis=1)  # (T, 10, 2)
    centers = np.repeat(mesh.barycenters(), pts.shape[1], axis=0)
    flat = pts.reshape(-1, 2)
    mats = A.evaluate(flat, cell_centers=centers)
    asym = np.abs(mats[:, 0, 1] - mats[:, 1, 0])
    scale = np.abs(mats).max()
    if asym.max() > 1e-14 * max(scale, 1.0):
        raise ModelError("diffusion matrix sample is not symmetric")
    mean = 0.5 * (mats[:, 0, 0] + mats[:, 1, 1])
    rad = np.sqrt(0.25 * (mats[:, 0, 0] - mats[:, 1, 1]) ** 2 + mats[:, 0, 1] ** 2)
    lam = float(np.min(mean - rad))
    if lam <= warn_threshold:
        warnings.warn(
            f"min eigenvalue of the diffusion matrix is {lam:.6g} <= "
            f"{warn_threshold}; ellipticity of the coupled form cannot be "
            "certified", EllipticityWarning, stacklevel=2)
    return lam


# ---------------------------------------------------------------------------
# built-in problems
# ---------------------------------------------------------------------------

def _manufactured(name, domain, a_entries, b_exprs, r_expr, u_expr, ue_expr,
                  upwind):
    """Assemble a ProblemSpec from symbolic data.

    f, u0, t0 follow from the exact pair: f = div(-A grad u + b u) + r u,
    u0 = u - u_e on the boundary, and t0 is the defect of the transmission
    condition, with the convective part of the conormal only on inflow.
    """
    a11, a12, a22 = a_entries
    A = sp.Matrix([[a11, a12], [a12, a22]])
    b = sp.Matrix(b_exprs)
    grad_u = sp.Matrix([sp.diff(u_expr, X1), sp.diff(u_expr, X2)])
    flux = -A * grad_u + b * u_expr
    f_expr = sp.diff(flux[0], X1) + sp.diff(flux[1], X2) + r_expr * u_expr

    cond = A * grad_u                       # A grad u (diffusive conormal flux)
    grad_ue = sp.Matrix([sp.diff(ue_expr, X1), sp.diff(ue_expr, X2)])

    cond_fn = _lambdify_vector((sp.simplify(cond[0]), sp.simplify(cond[1])))
    b_fn = _lambdify_vector(tuple(b_exprs))
    u_fn = _lambdify_scalar(u_expr)
    ue_fn = _lambdify_scalar(ue_expr)
    grad_u_fn = _lambdify_vector((grad_u[0], grad_u[1]))
    grad_ue_fn = _lambdify_vector((grad_ue[0], grad_ue[1]))

    def phi(points, normals):
        return np.einsum("ni,ni->n", grad_ue_fn(points), normals)

    def u0(points):
        return u_fn(points) - ue_fn(points)

    def t0(points, normals):
        bn = np.einsum("ni,ni->n", b_fn(points), normals)
        conormal = np.einsum("ni,ni->n", cond_fn(points), normals)
        conormal = conormal - np.where(bn < 0, bn * u_fn(points), 0.0)
        return conormal - phi(points, normals)

    exact = ExactSolutionPair(u=u_fn, grad_u=grad_u_fn, u_e=ue_fn, phi=phi)
    return ProblemSpec(
        name=name, domain=domain,
        A=CoefficientField.from_sympy(a11, a12, a22),
        b=VelocityField.from_sympy(*b_exprs),
        r=ScalarField.from_sympy(r_expr),
        f=SourceField(_lambdify_scalar(sp.simplify(f_expr))),
        jumps=JumpData(u0, t0), exact=exact,
        radiation_variant="log", upwind=upwind)


def builtin_problem(name: str) -> ProblemSpec:
    """The three built-in experiments: mexican_hat, tanh_convection, lshape_practical."""
    if name == "mexican_hat":
        u = (1 - 100 * X1 ** 2 - 100 * X2 ** 2) * sp.exp(-50 * (X1 ** 2 + X2 ** 2))
        ue = sp.log(sp.sqrt(X1 ** 2 + X2 ** 2))
        return _manufactured(
            name, square_domain((0.0, 0.0), 0.25),
            (10 + sp.cos(X1), 160 * X1 * X2, 10 + sp.sin(X2)),
            (sp.Integer(0), sp.Integer(0)), sp.Integer(0), u, ue, upwind="none")

    if name == "tanh_convection":
        u = sp.Rational(1, 2) * (1 - sp.tanh((sp.Rational(1, 4) - X1) / sp.Rational(1, 50)))
        ue = sp.log(sp.sqrt((X1 - sp.Rational(1, 4)) ** 2 + (X2 - sp.Rational(1, 4)) ** 2))
        return _manufactured(
            name, square_domain((0.25, 0.25), 0.25),
            (sp.Rational(1, 2), sp.Integer(0), sp.Rational(1, 2)),
            (1000 * X1, sp.Integer(0)), sp.Integer(0), u, ue, upwind="steered")

    if name == "lshape_practical":
        def alpha(points):
            p = _as_points(points)
            return np.where(p[:, 1] <= 0.0, 1e-7,
                            np.where(p[:, 0] > 0.0, 1e-6, 5e-7))

        return ProblemSpec(
            name=name, domain=lshape_domain(),
            A=CoefficientField.isotropic_piecewise(alpha),
            b=VelocityField.from_sympy(sp.Integer(15), sp.Integer(10)),
            r=ScalarField.constant(1e-2),
            f=SourceField.rectangle_indicator(5.0, -0.2, -0.1, -0.2, -0.05),
            jumps=JumpData.zero(), exact=None,
            radiation_variant="ainf", upwind="full")

    raise ModelError(f"unknown built-in problem {name!r}")


# ---------------------------------------------------------------------------
# user problem configuration files
# ---------------------------------------------------------------------------

_ALLOWED_FUNCS = {
    "sin": sp.sin, "cos": sp.cos, "tanh": sp.tanh, "exp": sp.exp,
    "log": sp.log, "sqrt": sp.sqrt,
}
_TRANSFORMS = standard_transformations + (convert_xor,)


class ConfigError(ModelError):
    pass


def parse_coefficient_expr(text):
    """Parse one coefficient expression in the grammar +,-,*,/,^ and
    sin/cos/tanh/exp/log/sqrt of x1, x2."""
    local = {"x1": X1, "x2": X2, **_ALLOWED_FUNCS}
    try:
        expr = parse_expr(text, local_dict=local, global_dict={},
                          transformations=_TRANSFORMS, evaluate=True)
    except Exception as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc
    extra = expr.free_symbols - {X1, X2}
    if extra:
        raise ConfigError(f"unknown symbols {sorted(map(str, extra))} in {text!r}")
    return expr


def _parse_domain(text, rescale=1.0):
    parts = text.split()
    kind = parts[0] if parts else ""
    s = float(rescale)
    try:
        if kind == "square":
            cx, cy, hw = (float(v) for v in parts[1:4])
            return square_domain((s * cx, s * cy), s * hw)
        if kind == "rectangle":
            x0, y0, x1, y1 = (s * float(v) for v in parts[1:5])
            rest = [int(v) for v in parts[5:7]]
            nx, ny = (rest + [2, 2])[:2]
            return rectangle_domain(x0, y0, x1, y1, nx, ny)
        if kind == "lshape":
            if s != 1.0:
                raise ConfigError("the L-shape domain is fixed; rescale unsupported")
            return lshape_domain()
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad domain spec {text!r}: {exc}") from exc
    raise ConfigError(f"unknown domain kind {kind!r}")


def load_problem_config(path) -> ProblemSpec:
    """Read a key-value problem description (INI, section [problem])."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        read = cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not read or not cp.has_section("problem"):
        raise ConfigError(f"config {path} is missing a [problem] section")
    sec = cp["problem"]

    def expr(key, default):
        return parse_coefficient_expr(sec.get(key, default))

    rescale = sec.getfloat("rescale", fallback=1.0)
    radiation = sec.get("radiation", "log").strip()
    domain = _parse_domain(sec.get("domain", ""), rescale)
    if radiation == "log" and domain.diameter >= 1.0:
        raise ConfigError(
            f"domain diameter {domain.diameter:.3g} >= 1 with log-growth "
            "radiation; pass rescale = <factor> or switch radiation")

    a11, a12, a22 = expr("a11", "1"), expr("a12", "0"), expr("a22", "1")
    b1, b2 = expr("b1", "0"), expr("b2", "0")
    r = expr("r", "0")
    f = expr("f", "0")
    u0 = expr("u0", "0")
    t0 = expr("t0", "0")

    u0_fn = _lambdify_scalar(u0)
    t0_fn = _lambdify_scalar(t0)
    try:
        return ProblemSpec(
            name=sec.get("name", "user"),
            domain=domain,
            A=CoefficientField.from_sympy(a11, a12, a22),
            b=VelocityField.from_sympy(b1, b2),
            r=ScalarField.from_sympy(r),
            f=SourceField(_lambdify_scalar(f)),
            jumps=JumpData(u0_fn, lambda p, n: t0_fn(p)),
            exact=None,
            radiation_variant=radiation,
            upwind=sec.get("upwind", "none").strip())
    except ModelError as exc:
        raise ConfigError(str(exc)) from exc


def validate_coefficients(spec: ProblemSpec, mesh: PrimalMesh):
    """Sample-based check of symmetry and uniform positive definiteness of A."""
    lam = min_eigenvalue_report(spec.A, mesh)
    if lam <= 0.0:
        raise ModelError(f"diffusion matrix not positive definite (min eig {lam:.3g})")
    return lam
