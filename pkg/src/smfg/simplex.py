"""Probability-simplex utilities: candidate grids, lattices, interpolation."""

import itertools

import numpy as np

# Probabilities with magnitude below this are treated as exact zeros before
# renormalizing; keeps sign noise from products out of downstream Bayes steps.
PROB_FLOOR = 1e-15

# Resolution used for memo keys and serialized probability keys.
KEY_SCALE = 10 ** 12


def compositions(total, parts):
    """All tuples of `parts` non-negative ints summing to `total`, lex order."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def grid_rows(granularity, n_actions):
    """Candidate action distributions with entries in multiples of 1/G.

    Returns a (num_candidates, n_actions) array; granularity 1 yields the
    pure actions. Order is lexicographic in the integer compositions, which
    fixes the tie-breaking order used everywhere else.
    """
    if granularity < 1:
        raise ValueError("grid granularity must be >= 1")
    rows = [np.asarray(c, dtype=float) / granularity
            for c in compositions(granularity, n_actions)]
    return np.asarray(rows)


def simplex_lattice(resolution, dim):
    """Lattice of probability vectors with entries in multiples of 1/resolution."""
    return [np.asarray(c, dtype=float) / resolution
            for c in compositions(resolution, dim)]


def clamp_simplex(v, floor=PROB_FLOOR):
    """Zero out sub-floor entries (including tiny negatives) and renormalize."""
    v = np.asarray(v, dtype=float)
    if v.min() < -floor:
        raise ValueError(f"probability vector has entry {v.min()} below -{floor}")
    out = np.where(np.abs(v) < floor, 0.0, v)
    s = out.sum()
    if s <= 0.0:
        raise ValueError("probability vector sums to zero after clamping")
    return out / s


def quantize(v):
    """Probability vector -> tuple of ints in units of 1e-12 (memo/file keys)."""
    return tuple(int(round(p * KEY_SCALE)) for p in np.asarray(v, dtype=float))


def dequantize(key):
    return np.asarray(key, dtype=float) / KEY_SCALE


def barycentric_weights(z, resolution):
    """Locate `z` in the Freudenthal triangulation of the simplex lattice.

    Returns a list of (lattice_key, weight) pairs with weights summing to 1;
    evaluating a function stored on the lattice with these weights is exact at
    lattice points and piecewise linear in between (plain linear interpolation
    when dim == 2).
    """
    z = np.asarray(z, dtype=float)
    dim = z.shape[0]
    # Suffix sums scaled to the lattice; monotone non-increasing, s[0] = R.
    s = resolution * np.concatenate([np.cumsum(z[::-1])[::-1], [0.0]])
    base = np.floor(s + 1e-9).astype(int)
    base[0] = resolution
    base[-1] = 0
    frac = s - base
    frac = np.clip(frac, 0.0, 1.0)
    # Corners: start from the floor corner and raise coordinates in the order
    # of decreasing fractional part.
    order = sorted(range(1, dim), key=lambda i: -frac[i])
    corners = [base.copy()]
    for i in order:
        nxt = corners[-1].copy()
        nxt[i] += 1
        corners.append(nxt)
    lam = np.empty(dim)
    prev = 1.0
    for k, i in enumerate(order):
        lam[k] = prev - frac[i]
        prev = frac[i]
    lam[dim - 1] = prev
    out = []
    for corner, w in zip(corners, lam):
        if w <= 1e-15:
            continue
        counts = corner[:-1] - corner[1:]
        if counts.min() < 0:  # query outside the simplex face; skip sliver
            continue
        out.append((tuple(int(c) for c in counts), float(w)))
    total = sum(w for _, w in out)
    return [(k, w / total) for k, w in out]


def product_weights(vectors, resolutions):
    """Barycentric weights for a product of simplices (one vector each)."""
    per = [barycentric_weights(v, r) for v, r in zip(vectors, resolutions)]
    out = []
    for combo in itertools.product(*per):
        keys = tuple(k for k, _ in combo)
        w = 1.0
        for _, wi in combo:
            w *= wi
        if w > 1e-15:
            out.append((keys, w))
    return out
