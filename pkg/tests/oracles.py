"""Independent oracles and ground-truth builders shared by the tests."""

from dataclasses import replace

import numpy as np

from photocal.calib import PhotometricState, Problem
from photocal.response import ResponseParams, response_eval
from photocal.synth import true_state_radiances
from photocal.tracking import Observation, TrackSet
from photocal.vignette import RadiusMap, VignetteParams, radius_of, v_normalized


def exact_tracks(seq):
    """The sequence's tracks with unquantized intensities f(e V L) at the true parameters."""
    t = seq.truth
    rmap = RadiusMap(seq.spec.width, seq.spec.height)
    f = ResponseParams(t.c)
    out = {}
    for pid, obs in seq.tracks.items():
        new = []
        for o in obs:
            x = t.exposure_of(o.frame_id) * float(v_normalized(t.v, radius_of(rmap, o.x, o.y))) * seq.point_radiance[pid]
            new.append(replace(o, intensity=float(response_eval(f, min(x, 1.0)))))
        out[pid] = new
    return TrackSet(out)


def truth_state(seq, tracks):
    prob = Problem.build(tracks, RadiusMap(seq.spec.width, seq.spec.height))
    t = seq.truth
    e = [t.exposure_of(f) for f in prob.frame_ids]
    L = true_state_radiances(seq, prob.point_ids)
    return PhotometricState(ResponseParams(t.c), VignetteParams(t.v), e, L, prob.frame_ids, prob.point_ids)


def random_problem(rng, n_points=12, n_frames=5, w=40, h=30):
    tracks = {}
    for p in range(n_points):
        frames = sorted(rng.choice(n_frames, size=rng.integers(2, n_frames + 1), replace=False))
        tracks[p] = [
            Observation(int(f), rng.uniform(1, w - 2), rng.uniform(1, h - 2), rng.uniform(5, 250), rng.uniform(0, 400))
            for f in frames
        ]
    return Problem.build(TrackSet(tracks), RadiusMap(w, h)), RadiusMap(w, h), TrackSet(tracks)


def random_state(rng, prob):
    c = rng.uniform(-0.1, 0.1, 4)
    v = rng.uniform(-0.3, 0.0, 3)
    e = rng.uniform(0.5, 2.0, len(prob.frame_ids))
    L = rng.uniform(0.1, 0.9, len(prob.point_ids))
    return PhotometricState(ResponseParams(tuple(c)), VignetteParams(tuple(v)), e, L, prob.frame_ids, prob.point_ids)


def rel_error(analytic, fd):
    scale = max(np.max(np.abs(fd)), 1e-8)
    return float(np.max(np.abs(analytic - fd)) / scale)


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def horn_rmse(src, dst):
    """Rigid alignment via the unit-quaternion eigenproblem, written independently of the SVD route."""
    a = src - src.mean(axis=0)
    b = dst - dst.mean(axis=0)
    S = a.T @ b
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array(
        [
            [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
            [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
            [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
            [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
        ]
    )
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, np.argmax(w)]
    R = np.array(
        [
            [q0 * q0 + qx * qx - qy * qy - qz * qz, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
            [2 * (qy * qx + q0 * qz), q0 * q0 - qx * qx + qy * qy - qz * qz, 2 * (qy * qz - q0 * qx)],
            [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0 * q0 - qx * qx - qy * qy + qz * qz],
        ]
    )
    resid = (a @ R.T) - b
    return float(np.sqrt(np.mean(np.sum(resid**2, axis=1))))
