"""Public-state updates: mean field, marginal beliefs, leader mean field.

All three updates are pure functions of immutable inputs. The belief update
conditions on the realized joint leader/major action; when that action has
zero probability under the given prescriptions the update falls back to
pushing the prior through the kernel with the observed action (prescription
weights dropped), and callers that care count how often this happens.
"""

import numpy as np

from .simplex import PROB_FLOOR, clamp_simplex
from .model import BeliefProfile, LeaderMeanField, MeanField


class PrescriptionProfile:
    """Maps from each player's private state to an action distribution.

    leader[i] has shape (|X_li|, |A_li|), major[j] shape (|X_mj|, |A_mj|),
    minor shape (|X_f|, |A_f|). Every row is a probability vector.
    """

    def __init__(self, leader, major, minor):
        self.leader = [np.asarray(g, dtype=float) for g in leader]
        self.major = [np.asarray(g, dtype=float) for g in major]
        self.minor = np.asarray(minor, dtype=float)
        for g in self.leader + self.major + [self.minor]:
            sums = g.sum(axis=-1)
            if g.min() < 0 or np.abs(sums - 1.0).max() >= 1e-9:
                raise ValueError("prescription rows must be probability vectors")

    def lm_tables(self):
        return list(self.leader) + list(self.major)

    def key(self, granularity):
        """Exact integer key (counts out of G) fixing the lexicographic order.

        Order: leader tables, then major tables, then the minor table.
        """
        def enc(g):
            return tuple(tuple(int(round(p * granularity)) for p in row) for row in g)
        return tuple(enc(g) for g in self.lm_tables()) + (enc(self.minor),)


def lm_joint_prescription(spec, lm_tables):
    """Joint action-given-state table over flattened axes, shape (n_lm, n_alm).

    Entry [x, a] is the product over leader/major players of the probability
    each one plays its component of `a` in its component of `x`.
    """
    n_players = len(lm_tables)
    shape = spec.state_sizes_lm + spec.action_sizes_lm
    out = np.ones(shape)
    for p, g in enumerate(lm_tables):
        sh = [1] * (2 * n_players)
        sh[p] = spec.state_sizes_lm[p]
        sh[n_players + p] = spec.action_sizes_lm[p]
        out = out * g.reshape(sh)
    return out.reshape(spec.n_lm, spec.n_alm)


def action_probabilities(spec, profile, gamma_lm_tables):
    """Distribution of the realized joint leader/major action."""
    glm = lm_joint_prescription(spec, gamma_lm_tables)
    return profile.joint() @ glm


def update_mean_field(spec, profile, z, gamma):
    """One-step push-forward of the minor state distribution.

    New mass at x' sums, over joint leader/major states weighted by the
    public belief, joint actions weighted by the prescriptions, and current
    minor states weighted by z, the minor transition kernel.
    """
    zv = z.probs if isinstance(z, MeanField) else np.asarray(z, dtype=float)
    pi = profile.joint()
    glm = lm_joint_prescription(spec, gamma.lm_tables())
    qf = spec.minor_kernel.tensor(zv)
    nxt = np.einsum("i,ij,f,fa,ijfax->x", pi, glm, zv, gamma.minor, qf)
    return MeanField(clamp_simplex(nxt))


def update_belief_flagged(spec, profile, z, gamma_lm_tables, observed_action):
    """Bayes update of every marginal given the realized joint action.

    Returns (new profile, fallback_used). fallback_used is True when the
    observed action has zero probability under the prescriptions, in which
    case the prior is pushed through the kernels without prescription
    weights.
    """
    zv = z.probs if isinstance(z, MeanField) else np.asarray(z, dtype=float)
    pi = profile.joint()
    glm = lm_joint_prescription(spec, gamma_lm_tables)
    w = pi * glm[:, observed_action]
    fallback = bool(w.sum() <= PROB_FLOOR)
    if fallback:
        w = pi
    new_leader = []
    for i in range(spec.num_leaders):
        q = spec.leader_kernels[i].tensor(zv)[:, observed_action, :]
        new_leader.append(clamp_simplex(w @ q))
    new_major = []
    for j in range(spec.num_majors):
        q = spec.major_kernels[j].tensor(zv)[:, observed_action, :]
        new_major.append(clamp_simplex(w @ q))
    return BeliefProfile(new_leader, new_major), fallback


def update_belief(spec, profile, z, gamma_lm_tables, observed_action):
    """As update_belief_flagged, returning only the updated profile."""
    return update_belief_flagged(spec, profile, z, gamma_lm_tables, observed_action)[0]


def update_leader_mean_field(spec, xi, z, gamma):
    """Push-forward of the leader population distribution (infinite leaders).

    Only defined for games with one representative leader and no majors; the
    leader kernel may read the current leader distribution.
    """
    if spec.num_majors != 0 or spec.num_leaders != 1:
        raise ValueError("leader mean field requires one representative leader "
                         "and no majors")
    xv = xi.probs if isinstance(xi, LeaderMeanField) else np.asarray(xi, dtype=float)
    zv = z.probs if isinstance(z, MeanField) else np.asarray(z, dtype=float)
    q = spec.leader_kernels[0].tensor(zv, xi=xv)
    nxt = np.einsum("l,la,lax->x", xv, gamma.leader[0], q)
    return LeaderMeanField(clamp_simplex(nxt))
