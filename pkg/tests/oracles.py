"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (loops, midpoint sweeps, central
differences) and shares no code with the package under test.
"""

import numpy as np


def fd_scalar_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        down = f(x)
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return g


def fd_tensor_grads(f, tensors, h=1e-5, coords_per_tensor=None, rng=None):
    """Central-difference gradients of scalar f w.r.t. a dict of arrays.

    Perturbs each tensor in place. When ``coords_per_tensor`` is set, only
    that many randomly chosen coordinates per tensor are probed and the
    returned dict maps name -> list of (flat_index, fd_value).
    """
    out = {}
    for name, t in tensors.items():
        flat = t.reshape(-1)
        if coords_per_tensor is None:
            idxs = range(flat.size)
        else:
            take = min(flat.size, coords_per_tensor)
            idxs = rng.choice(flat.size, size=take, replace=False)
        probes = []
        for i in idxs:
            keep = flat[i]
            flat[i] = keep + h
            up = f()
            flat[i] = keep - h
            down = f()
            flat[i] = keep
            probes.append((int(i), (up - down) / (2.0 * h)))
        out[name] = probes
    return out


def rel_err(a, b):
    """|a-b| / max(1, |a|, |b|); the denominator floor keeps tiny grads honest."""
    return abs(a - b) / max(1.0, abs(a), abs(b))


def brute_force_eer(scores, labels):
    """EER by a midpoint-threshold sweep with naive counting.

    Decision rule: accept when score >= threshold. Candidate thresholds are
    every unique score, every midpoint between adjacent unique scores, and
    one point beyond each end. Returns the exact rate when some candidate
    lands on FAR == FRR, otherwise interpolates linearly between the two
    adjacent candidates where FAR - FRR changes sign.
    """
    scores = [float(s) for s in scores]
    labels = [bool(l) for l in labels]
    tar = [s for s, l in zip(scores, labels) if l]
    non = [s for s, l in zip(scores, labels) if not l]
    assert tar and non, "need both classes"
    uniq = sorted(set(scores))
    cands = [uniq[0] - 1.0]
    for a, b in zip(uniq, uniq[1:]):
        cands.append(a)
        cands.append((a + b) / 2.0)
    cands.append(uniq[-1])
    cands.append(uniq[-1] + 1.0)
    pts = []
    for t in cands:
        far = sum(1 for s in non if s >= t) / len(non)
        frr = sum(1 for s in tar if s < t) / len(tar)
        pts.append((far, frr))
    for far, frr in pts:
        if far == frr:
            return far
    for (f0, r0), (f1, r1) in zip(pts, pts[1:]):
        d0, d1 = f0 - r0, f1 - r1
        if d0 > 0.0 and d1 < 0.0:
            lam = d0 / (d0 - d1)
            return (1.0 - lam) * f0 + lam * f1
    raise AssertionError("no FAR/FRR crossing found")


def naive_cosine(a, b):
    """Textbook cosine with explicit loops."""
    num = sum(float(x) * float(y) for x, y in zip(a, b))
    na = sum(float(x) * float(x) for x in a) ** 0.5
    nb = sum(float(y) * float(y) for y in b) ** 0.5
    return num / (na * nb)
