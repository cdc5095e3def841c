"""Joint estimation of response, vignetting, exposures and point radiances.

The residual of an observation of point p in frame i is

    r = f^-1(I) / (e_i * V(r_i)) - L_p

with f^-1 normalized to [0, 1]. The energy is sum(w2 * huber(r)), with
w2 = mu / (mu + |grad I|^2). Optimization alternates a damped per-point
radiance update with a Levenberg-Marquardt step on (c, v, e); exposures are
gauge-fixed to unit geometric mean after every accepted step.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dataset import CalibRecord, geometric_mean
from .response import ResponseParams, is_monotone, response_jacobian
from .tracking import Observation, TrackSet
from .vignette import RadiusMap, VignetteParams, is_positive, radius_of, v_normalized

log = logging.getLogger(__name__)

N_C = 4
N_V = 3
N_CV = N_C + N_V
LAMBDA_STALL = 1e10
CHUNK = 8192  # fixed reduction blocks; results do not depend on the thread count


@dataclass(frozen=True)
class CalibConfig:
    huber_h: float = 0.02
    mu: float = 100.0
    lambda0: float = 1e-2
    lambda_up: float = 5.0
    lambda_down: float = 0.5
    max_outer: int = 50
    step_tol: float = 1e-6
    track_reject: float = 0.06
    reject_below_step: float = 1e-2  # track rejection starts once an accepted step is this small
    coupled: bool = True  # (c, v, e) steps move the radiances along
    max_tries: int = 8
    center: tuple[float, float] | None = None
    threads: int = 1

    def __post_init__(self):
        if not self.huber_h > 0 or not self.mu > 0 or not self.lambda0 > 0:
            raise ValueError("huber_h, mu and lambda0 must be positive")
        if not (self.lambda_up > 1.0 > self.lambda_down > 0.0):
            raise ValueError("need lambda_up > 1 > lambda_down > 0")
        if self.max_outer < 0 or self.max_tries < 1 or self.threads < 1:
            raise ValueError("max_outer >= 0, max_tries >= 1 and threads >= 1 required")


@dataclass(frozen=True, eq=False)
class PhotometricState:
    response: ResponseParams
    vignette: VignetteParams
    exposures: np.ndarray  # aligned with frame_ids
    radiances: np.ndarray  # aligned with point_ids
    frame_ids: tuple[int, ...]
    point_ids: tuple[int, ...]

    def __post_init__(self):
        e = np.array(self.exposures, dtype=np.float64)
        L = np.array(self.radiances, dtype=np.float64)
        if e.shape != (len(self.frame_ids),) or L.shape != (len(self.point_ids),):
            raise ValueError("exposures / radiances do not match frame / point ids")
        if np.any(~(e > 0)):
            raise ValueError("exposures must be positive")
        if np.any(L < 0):
            raise ValueError("radiances must be non-negative")
        e.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "exposures", e)
        object.__setattr__(self, "radiances", L)
        object.__setattr__(self, "frame_ids", tuple(int(f) for f in self.frame_ids))
        object.__setattr__(self, "point_ids", tuple(int(p) for p in self.point_ids))

    def exposure_of(self, frame_id: int) -> float:
        return float(self.exposures[self.frame_ids.index(frame_id)])

    def radiance_of(self, point_id: int) -> float:
        return float(self.radiances[self.point_ids.index(point_id)])

    def gauge_fixed(self) -> PhotometricState:
        """Divide exposures by their geometric mean and scale radiances up by it."""
        s = geometric_mean(self.exposures)
        return replace(self, exposures=self.exposures / s, radiances=self.radiances * s)

    def to_record(self, center=None) -> CalibRecord:
        return CalibRecord(self.response.c, self.vignette.v, tuple(self.exposures), self.frame_ids, center)


@dataclass(frozen=True, eq=False)
class Problem:
    """Observations flattened into arrays, ordered by (point_id, frame_id)."""

    point_ids: tuple[int, ...]
    frame_ids: tuple[int, ...]
    pt: np.ndarray  # index into point_ids
    fr: np.ndarray  # index into frame_ids
    intensity: np.ndarray
    grad_sq: np.ndarray
    radius: np.ndarray  # normalized

    @classmethod
    def build(cls, tracks: TrackSet, rmap: RadiusMap, frame_ids: Sequence[int] | None = None) -> Problem:
        """Flatten sampled tracks.

        Clipped samples (intensity 0 or 255) carry no usable irradiance and are
        skipped; points left with fewer than two samples are dropped.
        """
        frame_ids = tuple(sorted(frame_ids if frame_ids is not None else tracks.frame_ids))
        findex = {f: i for i, f in enumerate(frame_ids)}
        pt, fr, inten, grad, xs, ys = [], [], [], [], [], []
        kept_ids = []
        for pid in tracks:
            obs = tracks[pid]
            for o in obs:
                if not o.sampled:
                    raise ValueError(f"track {pid} has unsampled observations; attach frames first")
                if o.frame_id not in findex:
                    raise ValueError(f"track {pid} observes frame {o.frame_id} outside the sequence")
            usable = [o for o in obs if 0.0 < o.intensity < 255.0]
            if len(usable) < 2:
                continue
            k = len(kept_ids)
            kept_ids.append(pid)
            for o in usable:
                pt.append(k)
                fr.append(findex[o.frame_id])
                inten.append(o.intensity)
                grad.append(o.grad_sq)
                xs.append(o.x)
                ys.append(o.y)
        return cls(
            tuple(kept_ids),
            frame_ids,
            np.asarray(pt, dtype=np.intp),
            np.asarray(fr, dtype=np.intp),
            np.asarray(inten, dtype=np.float64),
            np.asarray(grad, dtype=np.float64),
            np.asarray(radius_of(rmap, np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)), dtype=np.float64).reshape(-1),
        )

    @property
    def n_obs(self) -> int:
        return len(self.pt)

    def keep_points(self, keep: np.ndarray) -> Problem:
        """Restrict to the points where keep (indexed like point_ids) is True."""
        new_index = np.cumsum(keep) - 1
        rows = keep[self.pt]
        return Problem(
            tuple(p for p, k in zip(self.point_ids, keep) if k),
            self.frame_ids,
            new_index[self.pt[rows]],
            self.fr[rows],
            self.intensity[rows],
            self.grad_sq[rows],
            self.radius[rows],
        )


@dataclass(frozen=True, eq=False)
class ResidualReport:
    r: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    energy: float
    pt: np.ndarray | None = None
    fr: np.ndarray | None = None

    @property
    def weights(self) -> np.ndarray:
        return self.w1 * self.w2


def huber_weight(r, h: float):
    """IRLS weight of the Huber loss: 1 inside [-h, h], h/|r| outside."""
    a = np.abs(np.asarray(r, dtype=np.float64))
    out = np.where(a <= h, 1.0, h / np.where(a <= h, 1.0, a))
    return float(out) if out.ndim == 0 else out


def huber_loss(r, h: float):
    a = np.abs(np.asarray(r, dtype=np.float64))
    out = np.where(a <= h, 0.5 * a * a, h * (a - 0.5 * h))
    return float(out) if out.ndim == 0 else out


def gradient_weight(grad_sq, mu: float):
    g = np.asarray(grad_sq, dtype=np.float64)
    out = mu / (mu + g)
    return float(out) if out.ndim == 0 else out


def _linearized(state: PhotometricState, prob: Problem):
    """Per-observation normalized irradiance y, e*V, and the residual."""
    y = state.response.lut(prob.intensity)
    V = v_normalized(state.vignette.v, prob.radius)
    if np.any(V < 1e-3):
        raise ValueError("vignette attenuation below the positivity floor")
    e = state.exposures[prob.fr]
    r = y / (e * V) - state.radiances[prob.pt]
    return y, e, V, r


def residuals(state: PhotometricState, prob: Problem) -> np.ndarray:
    return _linearized(state, prob)[3]


def residual(state: PhotometricState, obs: Observation, point_id: int, rmap: RadiusMap) -> float:
    """Residual of a single observation of point_id."""
    if obs.intensity is None:
        raise ValueError("observation has no intensity sample")
    try:
        e = state.exposure_of(obs.frame_id)
    except ValueError:
        raise KeyError(f"no exposure for frame {obs.frame_id}") from None
    try:
        L = state.radiance_of(point_id)
    except ValueError:
        raise KeyError(f"no radiance for point {point_id}") from None
    V = float(v_normalized(state.vignette.v, radius_of(rmap, obs.x, obs.y)))
    if V < 1e-3:
        raise ValueError("vignette attenuation below the positivity floor")
    y = float(state.response.lut(obs.intensity))
    return y / (e * V) - L


def energy(state: PhotometricState, prob: Problem, cfg: CalibConfig) -> ResidualReport:
    r = residuals(state, prob)
    w1 = huber_weight(r, cfg.huber_h)
    w2 = gradient_weight(prob.grad_sq, cfg.mu)
    E = float(np.sum(w2 * huber_loss(r, cfg.huber_h)))
    return ResidualReport(np.asarray(r), np.asarray(w1), np.asarray(w2), E, prob.pt, prob.fr)


def jacobian_blocks(state: PhotometricState, prob: Problem):
    """Per-observation dr/dc (n,4), dr/dv (n,3), dr/de_i (n,) and dr/dL (n,).

    The exposure and radiance derivatives are the single nonzero entries of
    their rows (columns prob.fr and prob.pt respectively).
    """
    y, e, V, r = _linearized(state, prob)
    eV = e * V
    J_c = response_jacobian(state.response, prob.intensity) / eV[:, None]
    r2 = prob.radius**2
    J_v = -(y / (eV * V))[:, None] * np.stack([r2, r2**2, r2**3], axis=1)
    J_e = -y / (e * eV)
    J_L = -np.ones_like(r)
    return J_c, J_v, J_e, J_L, r


def _normal_chunk(J_cv, J_e, pt, fr, W, r, n_frames, n_points):
    Wcv = J_cv * W[:, None]
    A_cv = np.einsum("ni,nj->ij", Wcv, J_cv)
    cross = np.zeros((N_CV, n_frames))
    B_cv = np.zeros((N_CV, n_points))
    for j in range(N_CV):
        cross[j] = np.bincount(fr, weights=Wcv[:, j] * J_e, minlength=n_frames)
        B_cv[j] = -np.bincount(pt, weights=Wcv[:, j], minlength=n_points)
    A_ee = np.bincount(fr, weights=W * J_e * J_e, minlength=n_frames)
    B_e = -np.bincount(fr * n_points + pt, weights=W * J_e, minlength=n_frames * n_points)
    b_cv = np.einsum("ni,n->i", Wcv, r)
    b_e = np.bincount(fr, weights=W * J_e * r, minlength=n_frames)
    D = np.bincount(pt, weights=W, minlength=n_points)
    b_L = -np.bincount(pt, weights=W * r, minlength=n_points)
    return A_cv, cross, A_ee, b_cv, b_e, B_cv, B_e, D, b_L


@dataclass(frozen=True, eq=False)
class NormalSystem:
    """Gauss-Newton system over x = (c, v, e) and the radiances L.

    A, b: the (c, v, e) block; B: coupling to L, shape (7 + F, P);
    D, b_L: the diagonal radiance block (dr/dL = -1) and its gradient.
    """

    A: np.ndarray
    b: np.ndarray
    B: np.ndarray
    D: np.ndarray
    b_L: np.ndarray


def normal_system(state: PhotometricState, prob: Problem, cfg: CalibConfig) -> NormalSystem:
    J_c, J_v, J_e, _, r = jacobian_blocks(state, prob)
    W = huber_weight(r, cfg.huber_h) * gradient_weight(prob.grad_sq, cfg.mu)
    J_cv = np.concatenate([J_c, J_v], axis=1)
    F = len(prob.frame_ids)
    P = len(prob.point_ids)
    bounds = [(s, min(s + CHUNK, prob.n_obs)) for s in range(0, prob.n_obs, CHUNK)]

    def work(bd):
        s, t = bd
        return _normal_chunk(J_cv[s:t], J_e[s:t], prob.pt[s:t], prob.fr[s:t], W[s:t], r[s:t], F, P)

    if cfg.threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(bd) for bd in bounds]

    n = N_CV + F
    A = np.zeros((n, n))
    b = np.zeros(n)
    B = np.zeros((n, P))
    D = np.zeros(P)
    b_L = np.zeros(P)
    diag_e = np.arange(N_CV, n)
    # fixed-order reduction over chunks
    for A_cv, cross, A_ee, b_cv, b_e, B_cv, B_e, D_k, b_L_k in parts:
        A[:N_CV, :N_CV] += A_cv
        A[:N_CV, N_CV:] += cross
        A[N_CV:, :N_CV] += cross.T
        A[diag_e, diag_e] += A_ee
        b[:N_CV] += b_cv
        b[N_CV:] += b_e
        B[:N_CV] += B_cv
        B[N_CV:] += B_e.reshape(F, P)
        D += D_k
        b_L += b_L_k
    return NormalSystem(A, b, B, D, b_L)


def normal_equations(state: PhotometricState, prob: Problem, cfg: CalibConfig):
    """(J^T W J, J^T W r) over the unknowns (c, v, e) with W = w1 * w2."""
    sys_ = normal_system(state, prob, cfg)
    return sys_.A, sys_.b


class SingularSystem(ValueError):
    pass


class StepRejected(ValueError):
    pass


def solve_damped(
    A: np.ndarray,
    b: np.ndarray,
    lam: float,
    constraints: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> np.ndarray:
    """Solve (A + lam * diag(A)) dx = -b, optionally subject to constraints @ dx = targets.

    Unknowns whose diagonal is zero (e.g. a frame without observations) are
    held fixed.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.atleast_1d(np.asarray(b, dtype=np.float64))
    d = np.diag(A).copy()
    active = d > 0
    if not np.any(active):
        raise SingularSystem("normal equations have an all-zero diagonal")
    dx = np.zeros_like(b)
    Aa = A[np.ix_(active, active)] + lam * np.diag(d[active])
    rhs = -b[active]
    m = len(rhs)
    if constraints is not None:
        C = np.atleast_2d(np.asarray(constraints, dtype=np.float64))[:, active]
        k = C.shape[0]
        t = np.zeros(k) if targets is None else np.asarray(targets, dtype=np.float64)
        K = np.zeros((m + k, m + k))
        K[:m, :m] = Aa
        K[:m, m:] = C.T
        K[m:, :m] = C
        Aa, rhs = K, np.concatenate([rhs, t])
    try:
        sol = np.linalg.solve(Aa, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from None
    dx[active] = sol[:m]
    return dx


def gauge_constraints(state: PhotometricState, log_times: np.ndarray | None = None):
    """Linearized gauge conditions on a (c, v, e) step, as (C, targets).

    Row 0 keeps the exposures' geometric mean: sum(de / e) = 0. The energy
    also has an exponential ambiguity (f(x^(1/g)), e^g, V^g, L^g render the
    same images); with known exposure times a second row pins it by holding
    the regression slope of log e on log t at 1.
    """
    e = state.exposures
    rows = [np.concatenate([np.zeros(N_CV), 1.0 / e])]
    targets = [0.0]
    if log_times is not None:
        u = log_times - log_times.mean()
        rows.append(np.concatenate([np.zeros(N_CV), u / e]))
        targets.append(float(u @ log_times - u @ np.log(e)))
    return np.array(rows), np.array(targets)


def apply_cve(state: PhotometricState, dx: np.ndarray) -> PhotometricState:
    """Add (dc, dv, de) and re-fix the exposure gauge; raises StepRejected if invalid."""
    c = np.asarray(state.response.c) + dx[:N_C]
    v = np.asarray(state.vignette.v) + dx[N_C:N_CV]
    e = state.exposures + dx[N_CV:]
    if not np.all(np.isfinite(dx)):
        raise StepRejected("non-finite step")
    if not is_monotone(c):
        raise StepRejected("response would become non-monotone")
    if not is_positive(v):
        raise StepRejected("vignette would drop below the positivity floor")
    if np.any(e <= 0):
        raise StepRejected("exposure would become non-positive")
    cand = PhotometricState(
        ResponseParams(tuple(c)), VignetteParams(tuple(v)), e, state.radiances, state.frame_ids, state.point_ids
    )
    return cand.gauge_fixed()


def solve_coupled(ns: NormalSystem, lam: float, constraints=None, targets=None) -> tuple[np.ndarray, np.ndarray]:
    """Damped joint step (dx, dL) with the radiances eliminated by Schur complement.

    Both blocks are damped as (A + lam diag(A)); the radiance block is
    diagonal, so the reduced system stays (7 + F) x (7 + F).
    """
    D = (1.0 + lam) * ns.D
    if np.any(D <= 0):
        raise SingularSystem("a point has no usable observations")
    BD = ns.B / D
    S = ns.A + lam * np.diag(np.diag(ns.A)) - BD @ ns.B.T
    g = ns.b - BD @ ns.b_L
    # S already carries its damping; solve_damped only handles unobserved frames and the gauge
    dx = solve_damped(S, g, 0.0, constraints, targets)
    dL = -(ns.b_L + ns.B.T @ dx) / D
    return dx, dL


def lm_step_cve(
    state: PhotometricState,
    prob: Problem,
    cfg: CalibConfig,
    lam: float,
    coupled: bool = True,
    log_times: np.ndarray | None = None,
):
    """One damped Gauss-Newton step on (c, v, e).

    With coupled set, the step accounts for how the radiances follow (c, v, e):
    radiances are eliminated from the joint system and moved along with it.
    Otherwise radiances are held fixed. Returns (candidate state, dx, A, b).
    """
    if prob.n_obs < 8:
        raise ValueError("need at least 8 observations for the (c, v, e) step")
    ns = normal_system(state, prob, cfg)
    C, t = gauge_constraints(state, log_times)
    if coupled:
        dx, dL = solve_coupled(ns, lam, C, t)
        moved = replace(state, radiances=np.maximum(0.0, state.radiances + dL))
    else:
        dx = solve_damped(ns.A, ns.b, lam, C, t)
        moved = state
    return apply_cve(moved, dx), dx, ns.A, ns.b


def radiance_step(state: PhotometricState, prob: Problem, cfg: CalibConfig, lam: float, guard: bool = True):
    """Damped per-point radiance update, dL = sum(W r) / ((1 + lam) sum(W)).

    With guard set, a point keeps its old radiance if the update would raise
    that point's share of the energy (only possible through rounding).
    Returns the new state.
    """
    r = residuals(state, prob)
    w2 = gradient_weight(prob.grad_sq, cfg.mu)
    W = huber_weight(r, cfg.huber_h) * w2
    P = len(prob.point_ids)
    num = np.bincount(prob.pt, weights=W * r, minlength=P)
    den = (1.0 + lam) * np.bincount(prob.pt, weights=W, minlength=P)
    if np.any(den <= 0):
        raise SingularSystem("a point has no usable observations")
    L_old = state.radiances
    L_new = np.maximum(0.0, L_old + num / den)
    if guard:
        r_new = r - (L_new - L_old)[prob.pt]
        before = np.bincount(prob.pt, weights=w2 * huber_loss(r, cfg.huber_h), minlength=P)
        after = np.bincount(prob.pt, weights=w2 * huber_loss(r_new, cfg.huber_h), minlength=P)
        L_new = np.where(after <= before, L_new, L_old)
    return replace(state, radiances=L_new)


def radiance_update(residuals_p, weights_p, lam: float) -> float:
    """dL for one point from its residuals and weights (dr/dL = -1)."""
    r = np.asarray(residuals_p, dtype=np.float64)
    W = np.asarray(weights_p, dtype=np.float64)
    J = -np.ones_like(r)
    den = (1.0 + lam) * float(J @ (W * J))
    if den <= 0:
        raise SingularSystem("point has no usable observations")
    return float(-(J @ (W * r)) / den)


def initial_state(prob: Problem, response: ResponseParams | None = None, vignette: VignetteParams | None = None, exposures=None) -> PhotometricState:
    """Default start: identity response, no vignetting, unit exposures, L = mean of f^-1(I)/(eV)."""
    response = response or ResponseParams()
    vignette = vignette or VignetteParams()
    e = np.ones(len(prob.frame_ids)) if exposures is None else np.asarray(exposures, dtype=np.float64)
    y = response.lut(prob.intensity)
    V = v_normalized(vignette.v, prob.radius)
    P = len(prob.point_ids)
    counts = np.bincount(prob.pt, minlength=P)
    L = np.bincount(prob.pt, weights=y / (e[prob.fr] * V), minlength=P) / np.maximum(counts, 1)
    return PhotometricState(response, vignette, e, L, prob.frame_ids, prob.point_ids)


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    lam: float
    energy: float
    accepted: bool
    step_norm: float


@dataclass
class CalibResult:
    state: PhotometricState
    history: list[IterationLog]
    report: ResidualReport
    converged: bool
    rejected_points: list[int] = field(default_factory=list)
    problem: Problem | None = None

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


class InsufficientData(ValueError):
    pass


def calibrate(
    tracks: TrackSet,
    image_size: tuple[int, int],
    cfg: CalibConfig | None = None,
    init: PhotometricState | None = None,
    frame_ids: Sequence[int] | None = None,
    exposure_times: Mapping[int, float] | None = None,
) -> CalibResult:
    """Alternate radiance updates and LM steps on (c, v, e) until the step is tiny.

    image_size is (width, height). Tracks must carry intensity samples.
    exposure_times (frame_id -> any positive unit, e.g. ms) fix the
    exponential ambiguity and seed the exposures; they are not imposed
    frame by frame. Without them the problem is only defined up to that
    ambiguity and the response tends to drift along it.
    """
    cfg = cfg or CalibConfig()
    if len(tracks) == 0:
        raise InsufficientData("no tracks to calibrate from")
    rmap = RadiusMap(image_size[0], image_size[1], cfg.center)
    prob = Problem.build(tracks, rmap, frame_ids)
    if not prob.point_ids:
        raise InsufficientData("no track has two unclipped observations")
    if len(prob.frame_ids) < 2:
        raise InsufficientData("need at least two frames")
    log_times = None
    if exposure_times is not None:
        missing = [f for f in prob.frame_ids if f not in exposure_times]
        if missing:
            log.warning("no exposure time for %d frames; exposure times ignored", len(missing))
        else:
            times = np.array([float(exposure_times[f]) for f in prob.frame_ids])
            if np.any(~(times > 0)) or np.ptp(np.log(times)) == 0.0:
                log.warning("exposure times are not positive and varied; ignored")
            else:
                log_times = np.log(times)
    if init is None:
        seed_e = None if log_times is None else np.exp(log_times - log_times.mean())
        state = initial_state(prob, exposures=seed_e)
    else:
        state = _align_state(init, prob).gauge_fixed()
    unobserved = np.bincount(prob.fr, minlength=len(prob.frame_ids)) == 0
    if np.any(unobserved):
        log.warning("%d frames have no observations; their exposures stay fixed", int(unobserved.sum()))

    lam = cfg.lambda0
    report = energy(state, prob, cfg)
    history = [IterationLog(0, lam, report.energy, True, float("nan"))]
    rejected: list[int] = []
    converged = False
    rejecting = False
    for it in range(1, cfg.max_outer + 1):
        state = radiance_step(state, prob, cfg, lam)
        current = energy(state, prob, cfg).energy
        accepted = False
        step = np.zeros(N_CV + len(prob.frame_ids))
        for _ in range(cfg.max_tries):
            try:
                cand, dx, _, _ = lm_step_cve(state, prob, cfg, lam, cfg.coupled, log_times)
                cand_energy = energy(cand, prob, cfg).energy
            except StepRejected:
                lam *= cfg.lambda_up
                continue
            if cand_energy < current:
                state, step, current = cand, dx, cand_energy
                lam *= cfg.lambda_down
                accepted = True
                break
            lam *= cfg.lambda_up
        step_norm = float(np.max(np.abs(step)))
        # residuals are meaningless as outlier scores until the model has settled
        rejecting = rejecting or (accepted and step_norm < cfg.reject_below_step)
        if rejecting:
            prob, state, dropped = _reject_tracks(state, prob, cfg)
            if dropped:
                rejected += dropped
                current = energy(state, prob, cfg).energy
        history.append(IterationLog(it, lam, current, accepted, step_norm))
        log.debug("iter %d lambda %.3g energy %.9g accepted %s step %.3g", it, lam, current, accepted, step_norm)
        # a fully rejected iteration only counts as converged once damping has made any step negligible
        if (accepted and step_norm < cfg.step_tol) or (not accepted and lam > LAMBDA_STALL):
            converged = True
            break

    return CalibResult(state, history, energy(state, prob, cfg), converged, rejected, prob)


def _reject_tracks(state: PhotometricState, prob: Problem, cfg: CalibConfig):
    r = residuals(state, prob)
    P = len(prob.point_ids)
    mean_abs = np.bincount(prob.pt, weights=np.abs(r), minlength=P) / np.bincount(prob.pt, minlength=P)
    keep = mean_abs <= cfg.track_reject
    if np.all(keep):
        return prob, state, []
    if not np.any(keep):
        raise InsufficientData("every track was rejected as an outlier")
    dropped = [pid for pid, k in zip(prob.point_ids, keep) if not k]
    state = replace(
        state, radiances=state.radiances[keep], point_ids=tuple(p for p, k in zip(state.point_ids, keep) if k)
    )
    return prob.keep_points(keep), state, dropped


def _align_state(init: PhotometricState, prob: Problem) -> PhotometricState:
    """Re-index a user supplied state to the problem's frames and points."""
    e = np.array([init.exposure_of(f) for f in prob.frame_ids])
    known = dict(zip(init.point_ids, init.radiances))
    if all(p in known for p in prob.point_ids):
        L = np.array([known[p] for p in prob.point_ids])
        return PhotometricState(init.response, init.vignette, e, L, prob.frame_ids, prob.point_ids)
    return initial_state(prob, init.response, init.vignette, e)
