"""Steady-state observables and the per-cluster susceptibility singularity.

Pipeline: window-average the late-time magnetization, extract the
susceptibility as the slope of magnetization against probe strength, then
locate each cluster's critical point by fitting the mean-field divergence
chi ~ chi0 * [|lambda - lambda_c| / lambda_c]^-1, i.e. a straight line in
1/chi.  The mean-field exponent is held at 1 throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from spincam.errors import FitError, PreconditionError

GAMMA_MF = 1.0

#: Per-point relative residual above which a singularity-fit window is rejected.
RESIDUAL_LIMIT = 0.05

#: Extrapolation beyond the sample nearest to the critical point is flagged
#: when it exceeds this fraction of the window span.
EXTRAPOLATION_LIMIT = 0.20


@dataclass
class WindowAverage:
    """Late-time mean of one observable over [t1, t2].

    ``std`` is the population standard deviation (ddof=0) of the samples in
    the window, the fluctuation bar used to weight response fits.
    """

    site: int
    axis: str
    t1: float
    t2: float
    mean: float
    std: float
    n_samples: int


def window_average(record, site: int, axis: str, t1: float, t2: float) -> WindowAverage:
    """Average a sampled magnetization series over the window [t1, t2]."""
    if not t1 < t2:
        raise PreconditionError(f"need t1 < t2, got [{t1}, {t2}]")
    times = np.asarray(record.times)
    if t2 > times[-1] + 1e-12:
        raise PreconditionError(
            f"window end {t2} beyond last sample {times[-1]:.6g}"
        )
    mask = (times >= t1 - 1e-12) & (times <= t2 + 1e-12)
    if mask.sum() < 2:
        raise PreconditionError(
            f"window [{t1}, {t2}] contains {int(mask.sum())} samples, need >= 2"
        )
    series = np.asarray(record.site_series(site, axis))[mask]
    return WindowAverage(
        site=site,
        axis=axis,
        t1=t1,
        t2=t2,
        mean=float(series.mean()),
        std=float(series.std(ddof=0)),
        n_samples=int(mask.sum()),
    )


@dataclass
class SusceptibilityPoint:
    """Linear-response slope at one driving-parameter value."""

    lam: float
    chi: float
    stderr: float
    component: str = ""
    intercept: float = 0.0
    intercept_stderr: float = 0.0
    nonlinear: bool = False
    weighted: bool = True


def _weighted_polyfit(x: np.ndarray, y: np.ndarray, sigma: np.ndarray, order: int):
    """Weighted LS polynomial fit; returns (coeffs low->high, cov, used_weights)."""
    weighted = bool(np.all(sigma > 0))
    w = 1.0 / sigma**2 if weighted else np.ones_like(x)
    design = np.vander(x, order + 1, increasing=True)
    wd = design * w[:, None]
    gram = design.T @ wd
    try:
        cov = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise FitError("degenerate design matrix in response fit") from exc
    coeffs = cov @ (wd.T @ y)
    resid = y - design @ coeffs
    dof = len(x) - (order + 1)
    if not weighted:
        # Residual-based covariance when no error bars are supplied.
        scale = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = cov * scale
    return coeffs, cov, weighted, resid


def fit_susceptibility(
    points: list[tuple[float, float, float]],
    component: str = "",
    nonlin_threshold: float = 0.05,
) -> SusceptibilityPoint:
    """Susceptibility from (delta, magnetization, stderr) triples.

    Weighted least-squares line through the points; the slope is the
    susceptibility.  A quadratic refit flags nonlinearity when the curvature
    contributes more than ``nonlin_threshold`` of the linear term at the
    largest probe.  Probe strengths must either span both signs or cover at
    least a factor of two in magnitude.
    """
    deltas = np.array([p[0] for p in points], dtype=float)
    mags = np.array([p[1] for p in points], dtype=float)
    sigma = np.array([p[2] for p in points], dtype=float)
    if len(set(deltas.tolist())) < 3:
        raise PreconditionError("need at least 3 distinct probe strengths")
    both_signs = deltas.min() < 0 < deltas.max()
    magnitudes = np.abs(deltas[deltas != 0])
    if not both_signs and (len(magnitudes) == 0 or magnitudes.max() < 2 * magnitudes.min()):
        raise PreconditionError(
            "probe strengths must span both signs or a >= 2x magnitude range"
        )

    coeffs, cov, weighted, _ = _weighted_polyfit(deltas, mags, sigma, order=1)
    nonlinear = False
    if len(deltas) >= 3:
        try:
            qcoeffs, _, _, _ = _weighted_polyfit(deltas, mags, sigma, order=2)
            span = np.abs(deltas).max()
            lin_scale = abs(qcoeffs[1]) * span
            if lin_scale > 0 and abs(qcoeffs[2]) * span**2 > nonlin_threshold * lin_scale:
                nonlinear = True
        except FitError:
            pass

    return SusceptibilityPoint(
        lam=float("nan"),
        chi=float(coeffs[1]),
        stderr=float(np.sqrt(max(cov[1, 1], 0.0))),
        component=component,
        intercept=float(coeffs[0]),
        intercept_stderr=float(np.sqrt(max(cov[0, 0], 0.0))),
        nonlinear=nonlinear,
        weighted=weighted,
    )


@dataclass
class SingularityFit:
    """Mean-field singularity parameters of one cluster's response curve."""

    label: str
    chi0: float
    lam_c: float
    gamma_mf: float
    side: str  # 'above' or 'below': side of lam_c the curve was sampled on
    window: tuple[float, float]
    residual: float
    n_window: int
    extrapolation_flag: bool = False
    rejected_points: int = 0


def _detect_side(lams: np.ndarray, inv_chi: np.ndarray) -> str:
    # The divergence sits where 1/|chi| is smallest.
    return "above" if np.argmin(inv_chi) == 0 else "below"


def coarse_critical_estimate(
    points: list[SusceptibilityPoint], side: str = "auto", n_tail: int = 4
) -> float:
    """Rough critical point from a wide scan: extrapolate 1/|chi| to zero.

    Uses the monotone tail of the scan adjacent to the divergence, guarding
    against samples on the ordered side of the transition.
    """
    pts = sorted((p for p in points if np.isfinite(p.chi) and p.chi != 0.0),
                 key=lambda p: p.lam)
    if len(pts) < 3:
        raise FitError("coarse estimate needs >= 3 finite susceptibility points")
    lams = np.array([p.lam for p in pts])
    inv = 1.0 / np.abs(np.array([p.chi for p in pts]))
    if side == "auto":
        side = _detect_side(lams, inv)
    if side == "above":
        # divergence to the left: keep the run from the smallest lambda over
        # which 1/|chi| increases, then fit the points nearest the divergence
        keep = 1
        while keep < len(pts) and inv[keep] > inv[keep - 1]:
            keep += 1
        lams, inv = lams[:keep][:n_tail], inv[:keep][:n_tail]
    else:
        keep = 1
        while keep < len(pts) and inv[-keep - 1] > inv[-keep]:
            keep += 1
        lams, inv = lams[-keep:][-n_tail:], inv[-keep:][-n_tail:]
    if len(lams) < 2:
        raise FitError("no monotone tail adjacent to the divergence")
    slope, intercept = np.polyfit(lams, inv, 1)
    if slope == 0:
        raise FitError("flat 1/chi scan, no divergence detected")
    lam_c = -intercept / slope
    if not np.isfinite(lam_c):
        raise FitError("coarse critical-point extrapolation failed")
    return float(lam_c)


def fit_singularity(
    points: list[SusceptibilityPoint],
    window_frac: tuple[float, float] = (0.02, 0.10),
    side: str = "auto",
    label: str = "",
    max_passes: int = 3,
) -> SingularityFit:
    """Fit chi0 and lambda_c from a susceptibility curve near its divergence.

    With the mean-field exponent fixed at 1, 1/|chi| is linear in lambda:
    1/chi = |lambda - lambda_c| / (chi0 * lambda_c).  The fit window keeps
    points within the given fractional distance of lambda_c on the sampled
    (disordered) side, re-centering iteratively from a coarse first pass.
    """
    pts = sorted(points, key=lambda p: p.lam)
    lams_all = np.array([p.lam for p in pts])
    chi_all = np.abs(np.array([p.chi for p in pts]))
    if np.any(chi_all <= 0) or not np.all(np.isfinite(chi_all)):
        raise PreconditionError("susceptibility must be finite and nonzero on the curve")
    inv_all = 1.0 / chi_all
    # sigma(1/chi) = sigma(chi) / chi^2
    sig_all = np.array([p.stderr for p in pts]) * inv_all**2
    if side == "auto":
        side = _detect_side(lams_all, inv_all)

    lam_c = coarse_critical_estimate(pts, side=side)
    window = (float(lams_all.min()), float(lams_all.max()))
    mask = np.ones(len(pts), dtype=bool)
    lo, hi = window_frac
    for _ in range(max_passes):
        if side == "above":
            lo_edge, hi_edge = lam_c * (1 + lo), lam_c * (1 + hi)
        else:
            lo_edge, hi_edge = lam_c * (1 - hi), lam_c * (1 - lo)
        new_mask = (lams_all >= lo_edge - 1e-12) & (lams_all <= hi_edge + 1e-12)
        if new_mask.sum() < 4:
            # fall back to the 4 samples nearest the estimated critical point
            order = np.argsort(np.abs(lams_all - lam_c))
            new_mask = np.zeros(len(pts), dtype=bool)
            new_mask[order[:4]] = True
        stable = bool(np.array_equal(new_mask, mask))
        mask = new_mask
        x, y, s = lams_all[mask], inv_all[mask], sig_all[mask]
        coeffs, cov, _, resid = _weighted_polyfit(x, y, s, order=1)
        slope, intercept = coeffs[1], coeffs[0]
        if slope == 0 or (side == "above" and slope < 0) or (side == "below" and slope > 0):
            raise FitError(
                f"no divergence detected on the {side} side (slope {slope:.3e})"
            )
        lam_c = -intercept / slope
        if stable:
            break
    if not np.isfinite(lam_c) or lam_c <= 0:
        raise FitError(f"singularity fit produced invalid critical point {lam_c}")

    chi0 = 1.0 / (abs(slope) * lam_c)
    rel_resid = np.abs(resid) / np.mean(y)
    if np.any(rel_resid > RESIDUAL_LIMIT):
        raise FitError(
            f"window rejected: max per-point residual {rel_resid.max():.1%} of "
            f"mean 1/chi exceeds {RESIDUAL_LIMIT:.0%} (points likely outside the "
            "critical region)"
        )
    nearest = x.min() if side == "above" else x.max()
    span = x.max() - x.min()
    extrapolation = abs(nearest - lam_c)
    flag = bool(span > 0 and extrapolation > EXTRAPOLATION_LIMIT * span)
    if flag:
        warnings.warn(
            f"critical point {lam_c:.6g} extrapolates {extrapolation:.3g} beyond "
            f"the nearest sample ({extrapolation / span:.0%} of the window span)",
            stacklevel=2,
        )
    return SingularityFit(
        label=label,
        chi0=float(chi0),
        lam_c=float(lam_c),
        gamma_mf=GAMMA_MF,
        side=side,
        window=(float(x.min()), float(x.max())),
        residual=float(np.sqrt(np.mean(resid**2))),
        n_window=int(mask.sum()),
        extrapolation_flag=flag,
    )


def check_monotone_series(fits: list[SingularityFit]) -> bool:
    """Warn when the isotropic cluster series has non-monotone critical points.

    A systematic cluster series must have lambda_c(L) approaching the true
    critical point monotonically; violations usually mean an inadmissible
    (for example strongly anisotropic) series.
    """
    lam = [f.lam_c for f in fits]
    if len(lam) < 2:
        return True
    diffs = np.diff(lam)
    monotone = bool(np.all(diffs > 0) or np.all(diffs < 0))
    if not monotone:
        warnings.warn(
            "critical points of the cluster series are not monotone: "
            + ", ".join(f"{f.label}: {f.lam_c:.6g}" for f in fits),
            stacklevel=2,
        )
    return monotone
