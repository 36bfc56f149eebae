"""Coherent-anomaly regression over per-cluster singularity data.

Given at least three {chi0(L), lambda_c(L)} pairs from a systematic cluster
series, the amplitude scaling

    chi0(L) = c0 * |lambda_c(L) - lambda_star| ** -(gamma_star - gamma_mf)

yields the true critical point lambda_star and exponent gamma_star.  With
exactly three clusters the system is solved in closed form; with more, a
least-squares fit runs a bracketed 1-D search over lambda_star (the inner
log-log problem is linear).

The series may approach lambda_star from either side: decreasing
lambda_c(L) puts lambda_star below the smallest critical point, increasing
lambda_c(L) puts it above the largest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from spincam.errors import FitError, PreconditionError

GAMMA_MF = 1.0


@dataclass(frozen=True)
class CamPoint:
    """One cluster's singularity data."""

    label: str
    chi0: float
    lam_c: float
    anisotropic: bool = False


@dataclass
class CamInput:
    """Validated collection of per-cluster singularity points.

    Anisotropic clusters are kept for overlay plots but excluded from the
    regression unless ``include_anisotropic`` is set.
    """

    points: list[CamPoint]
    include_anisotropic: bool = False

    def __post_init__(self) -> None:
        self.points = sorted(self.points, key=lambda p: p.lam_c)
        for p in self.points:
            if not p.chi0 > 0:
                raise PreconditionError(f"{p.label}: amplitude must be positive, got {p.chi0}")
            if not np.isfinite(p.lam_c):
                raise PreconditionError(f"{p.label}: non-finite critical point")
        lam = [p.lam_c for p in self.points]
        if len(set(lam)) != len(lam):
            raise PreconditionError("critical points must be distinct")

    def fit_points(self) -> list[CamPoint]:
        pts = [p for p in self.points if self.include_anisotropic or not p.anisotropic]
        if len(pts) < 3:
            raise PreconditionError(
                f"need >= 3 clusters in the regression, have {len(pts)}"
            )
        return pts

    def to_json_dict(self) -> dict:
        return {
            "points": [
                {"label": p.label, "chi0": p.chi0, "lam_c": p.lam_c,
                 "anisotropic": p.anisotropic}
                for p in self.points
            ],
            "include_anisotropic": self.include_anisotropic,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CamInput":
        return cls(
            points=[CamPoint(**p) for p in d["points"]],
            include_anisotropic=d.get("include_anisotropic", False),
        )


@dataclass
class CamResult:
    """Fitted critical amplitude, point and exponent with uncertainties."""

    c0: float
    lam_star: float
    gamma_star: float
    gamma_mf: float
    direction: str  # 'below' (lam_c decreasing to lam_star) or 'above'
    residual: float
    n_points: int
    method: str
    ci95: dict[str, float] | None = None
    labels: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "c0": self.c0,
            "lam_star": self.lam_star,
            "gamma_star": self.gamma_star,
            "gamma_mf": self.gamma_mf,
            "direction": self.direction,
            "residual": self.residual,
            "n_points": self.n_points,
            "method": self.method,
            "ci95": self.ci95,
            "labels": self.labels,
        }


def _direction(points: list[CamPoint]) -> str:
    """Side of the cluster series on which lambda_star lies.

    The coherent anomaly grows toward the true critical point, so the
    largest amplitude marks the end of the series nearest lambda_star.
    """
    pts = sorted(points, key=lambda p: p.lam_c)
    return "below" if pts[0].chi0 >= pts[-1].chi0 else "above"


def _bracket(points: list[CamPoint], direction: str) -> tuple[float, float]:
    lam = np.array([p.lam_c for p in points])
    span = 10.0 * (lam.max() - lam.min())
    eps = max(1e-12, 1e-9 * abs(lam).max())
    if direction == "below":
        return lam.min() - span, lam.min() - eps
    return lam.max() + eps, lam.max() + span


def _log_arrays(points: list[CamPoint], lam_star: float) -> tuple[np.ndarray, np.ndarray]:
    u = np.abs(np.array([p.lam_c for p in points]) - lam_star)
    return np.log(u), np.log(np.array([p.chi0 for p in points]))


def _inner_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Closed-form line fit y = alpha + beta x; returns (alpha, beta, sse)."""
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx < 1e-20:
        raise FitError("collinear critical points; scaling fit is degenerate")
    beta = float(((x - xm) * (y - ym)).sum()) / sxx
    alpha = ym - beta * xm
    resid = y - alpha - beta * x
    return alpha, beta, float(resid @ resid)


def cam_fit(
    cam_input: CamInput,
    gamma_mf: float = GAMMA_MF,
    ci_method: str = "linearized",
    n_bootstrap: int = 1000,
    bootstrap_seed: int = 0,
) -> CamResult:
    """Least-squares coherent-anomaly fit of (c0, lambda_star, gamma_star).

    Minimizes the log-log residual over lambda_star by a bracketed scan plus
    bounded refinement; the inner problem is linear.  95% confidence
    intervals come from the linearized covariance at the optimum (or a
    residual bootstrap when ``ci_method='bootstrap'``); with exactly three
    clusters the fit is exact and no intervals are reported.
    """
    points = cam_input.fit_points()
    direction = _direction(points)
    lo, hi = _bracket(points, direction)

    def objective(lam_star: float) -> float:
        x, y = _log_arrays(points, lam_star)
        try:
            return _inner_fit(x, y)[2]
        except FitError:
            return np.inf

    # Log-spaced scan toward the nearest cluster resolves the steep region.
    edge = hi if direction == "below" else lo
    far = lo if direction == "below" else hi
    offsets = np.geomspace(abs(edge - far), abs(hi - lo) * 1e-9, 400)
    grid = edge - offsets if direction == "below" else edge + offsets
    values = np.array([objective(g) for g in grid])
    if not np.any(np.isfinite(values)):
        raise FitError("scaling-fit objective is degenerate on the whole bracket")
    ibest = int(np.nanargmin(values))
    if ibest in (0, len(grid) - 1) and values[ibest] > 1e-16:
        raise FitError(
            "no interior optimum for lambda_star in the admissible range; "
            "the cluster series does not follow the anomaly scaling"
        )
    blo = grid[max(0, ibest - 1)], grid[min(len(grid) - 1, ibest + 1)]
    res = optimize.minimize_scalar(
        objective, bounds=(min(blo), max(blo)), method="bounded",
        options={"xatol": 1e-14 * max(1.0, abs(edge))},
    )
    lam_star = float(res.x)
    x, y = _log_arrays(points, lam_star)
    alpha, beta, sse = _inner_fit(x, y)
    gamma_star = gamma_mf - beta
    c0 = float(np.exp(alpha))

    n = len(points)
    ci = None
    if n > 3:
        ci = _confidence_intervals(
            points, lam_star, alpha, beta, direction, gamma_mf,
            ci_method, n_bootstrap, bootstrap_seed,
        )
    return CamResult(
        c0=c0,
        lam_star=lam_star,
        gamma_star=float(gamma_star),
        gamma_mf=gamma_mf,
        direction=direction,
        residual=float(np.sqrt(sse / n)),
        n_points=n,
        method="least-squares",
        ci95=ci,
        labels=[p.label for p in points],
    )


def _confidence_intervals(
    points, lam_star, alpha, beta, direction, gamma_mf,
    ci_method, n_bootstrap, seed,
) -> dict[str, float]:
    x, y = _log_arrays(points, lam_star)
    n = len(points)
    dof = n - 3
    if ci_method == "bootstrap":
        resid = y - alpha - beta * x
        rng = np.random.default_rng(seed)
        samples = []
        base = CamInput([CamPoint(p.label, p.chi0, p.lam_c) for p in points])
        for _ in range(n_bootstrap):
            yb = alpha + beta * x + rng.choice(resid, size=n, replace=True)
            pts = [
                CamPoint(p.label, float(np.exp(yv)), p.lam_c)
                for p, yv in zip(base.points, yb)
            ]
            try:
                r = cam_fit(CamInput(pts), gamma_mf=gamma_mf, ci_method="none")
            except (FitError, PreconditionError):
                continue
            samples.append((r.c0, r.lam_star, r.gamma_star))
        if len(samples) < max(10, n_bootstrap // 10):
            raise FitError("bootstrap failed on too many resamples")
        arr = np.array(samples)
        half = 0.5 * (np.percentile(arr, 97.5, axis=0) - np.percentile(arr, 2.5, axis=0))
        return {"c0": float(half[0]), "lam_star": float(half[1]),
                "gamma_star": float(half[2])}
    if ci_method == "none":
        return None
    # Linearized covariance: residual r_i = y_i - alpha - beta * x_i with
    # x_i = log|lam_c_i - lam_star| depending on lam_star.
    # x_i = log u_i with u_i = |lam_c_i - lam*|: du/dlam* = -1 ('below') or +1
    # ('above'); r = y - alpha - beta*x gives dr/dlam* = -beta * (du/dlam*) / u.
    u = np.abs(np.array([p.lam_c for p in points]) - lam_star)
    du = -1.0 if direction == "below" else 1.0
    jac = np.column_stack([
        -np.ones(n),
        -x,
        -beta * du / u,
    ])
    resid = y - alpha - beta * x
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.inv(jac.T @ jac)
    tval = stats.t.ppf(0.975, dof)
    half = tval * np.sqrt(np.diag(cov))
    c0 = float(np.exp(alpha))
    return {
        "c0": float(c0 * half[0]),  # delta method on log c0
        "gamma_star": float(half[1]),
        "lam_star": float(half[2]),
    }


def cam_solve_three(cam_input: CamInput, gamma_mf: float = GAMMA_MF) -> CamResult:
    """Closed-form solve of the three-cluster anomaly system.

    lambda_star solves the consistency between the two pairwise exponent
    ratios; gamma_star then follows from one log-ratio and c0 from the
    amplitudes.  No uncertainties are reported for the exact solve.
    """
    points = cam_input.fit_points()
    if len(points) != 3:
        raise PreconditionError(f"closed-form solve needs exactly 3 clusters, got {len(points)}")
    direction = _direction(points)
    lo, hi = _bracket(points, direction)
    chi = np.array([p.chi0 for p in points])
    lam = np.array([p.lam_c for p in points])

    def consistency(lam_star: float) -> float:
        u = np.abs(lam - lam_star)
        return float(
            np.log(chi[0] / chi[1]) * np.log(u[2] / u[1])
            - np.log(chi[1] / chi[2]) * np.log(u[1] / u[0])
        )

    edge = hi if direction == "below" else lo
    far = lo if direction == "below" else hi
    offsets = np.geomspace(abs(hi - lo) * 1e-10, abs(edge - far), 600)
    grid = edge - offsets if direction == "below" else edge + offsets
    vals = np.array([consistency(g) for g in grid])
    sign_change = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
    if len(sign_change) == 0:
        raise FitError(
            "the three clusters are inconsistent with a common scaling: no "
            f"critical point {direction} the series solves the exponent equations"
        )
    i = sign_change[0]
    lam_star = float(optimize.brentq(consistency, grid[i], grid[i + 1],
                                     xtol=1e-15, rtol=8.9e-16))
    u = np.abs(lam - lam_star)
    gamma_star = gamma_mf + float(np.log(chi[0] / chi[1]) / np.log(u[1] / u[0]))
    c0 = float(np.exp(np.mean(np.log(chi) + (gamma_star - gamma_mf) * np.log(u))))
    resid = np.log(chi) - (np.log(c0) - (gamma_star - gamma_mf) * np.log(u))
    return CamResult(
        c0=c0,
        lam_star=lam_star,
        gamma_star=gamma_star,
        gamma_mf=gamma_mf,
        direction=direction,
        residual=float(np.sqrt(np.mean(resid**2))),
        n_points=3,
        method="three-point",
        ci95=None,
        labels=[p.label for p in points],
    )


def loglog_summary(
    cam_input: CamInput,
    result: CamResult,
    reference_exponent: float | None = None,
) -> list[dict]:
    """Plot-ready rows of log|lam_c - lam_star| against log chi0.

    Includes the fitted line and, when ``reference_exponent`` is given (for
    example the classical 2D Ising susceptibility exponent 7/4), a
    comparison line with that slope anchored at the data centroid.
    """
    if result is None:
        raise PreconditionError("log-log summary requires a completed scaling fit")
    rows = []
    x_all, y_all = [], []
    for p in cam_input.points:
        u = abs(p.lam_c - result.lam_star)
        if u <= 0:
            raise FitError(f"{p.label}: critical point coincides with lam_star")
        x, y = np.log10(u), np.log10(p.chi0)
        fitted = np.log10(result.c0) - (result.gamma_star - result.gamma_mf) * x
        row = {
            "label": p.label,
            "lam_c": p.lam_c,
            "offset": u,
            "log10_offset": x,
            "chi0": p.chi0,
            "log10_chi0": y,
            "log10_chi0_fit": fitted,
            "anisotropic": p.anisotropic,
        }
        x_all.append(x)
        y_all.append(y)
        rows.append(row)
    if reference_exponent is not None:
        xc, yc = np.mean(x_all), np.mean(y_all)
        for row in rows:
            row["log10_chi0_reference"] = yc - (reference_exponent - result.gamma_mf) * (
                row["log10_offset"] - xc
            )
            row["reference_exponent"] = reference_exponent
    return rows


def write_loglog_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# schema: spincam-loglog v1\n")
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
