"""Game description: spaces, kernels, rewards, and the probability objects.

A game has K committed leaders, M strategic major followers and a continuum
of homogeneous minor followers. Every player carries a private finite state;
the minor population is summarized by its state distribution (the mean
field). All numerics run on dense integer-indexed tables; human-readable
labels are mapped to indices when a game file is loaded.

Joint leader/major states and actions are flattened C-order over the axes
(leader 1, ..., leader K, major 1, ..., major M).
"""

import json

import numpy as np

from .simplex import clamp_simplex

ROW_SUM_TOL = 1e-12


class SpecError(ValueError):
    """Raised when a game description violates a structural invariant."""


def _check_rows(table, name):
    """Validate/normalize the trailing axis of `table` as probability rows."""
    t = np.asarray(table, dtype=float)
    if t.min() < 0.0:
        idx = np.unravel_index(np.argmin(t), t.shape)
        raise SpecError(f"{name}: negative probability {t[idx]} at index {idx}")
    sums = t.sum(axis=-1)
    bad = np.abs(sums - 1.0) >= ROW_SUM_TOL
    if bad.any():
        idx = np.unravel_index(np.argmax(np.abs(sums - 1.0)), sums.shape)
        raise SpecError(f"{name}: row {idx} sums to {sums[idx]}")
    return t / sums[..., None]


class TableKernel:
    """Transition kernel stored as a dense table, optionally affine in z.

    The conditional row for mean field z is
        (1 - w) * base[...] + w * sum_s z[s] * mix[s, ...]
    which stays a probability row for any simplex z when every base row and
    every mix row is one. With no mix block the kernel ignores z.
    """

    def __init__(self, base, z_mix=None):
        self.base = np.asarray(base, dtype=float)
        if z_mix is None:
            self.weight, self.mix = 0.0, None
        else:
            self.weight = float(z_mix["weight"])
            self.mix = np.asarray(z_mix["table"], dtype=float)
            if not (0.0 <= self.weight <= 1.0):
                raise SpecError(f"kernel z-mix weight {self.weight} outside [0, 1]")

    def validate(self, name):
        self.base = _check_rows(self.base, name)
        if self.mix is not None:
            self.mix = _check_rows(self.mix, name + ".z_mix")

    def tensor(self, z, xi=None):
        if self.mix is None:
            return self.base
        mixed = np.tensordot(np.asarray(z, dtype=float), self.mix, axes=(0, 0))
        return (1.0 - self.weight) * self.base + self.weight * mixed

    def to_dict(self):
        d = {"base": self.base.tolist()}
        if self.mix is not None:
            d["z_mix"] = {"weight": self.weight, "table": self.mix.tolist()}
        return d


class CallableKernel:
    """Adapter for a programmatic kernel f(z[, xi]) -> dense table.

    Not serializable; rows are validated on every evaluation.
    """

    def __init__(self, fn, name="callable kernel"):
        self.fn = fn
        self.name = name

    def validate(self, name):
        self.name = name

    def tensor(self, z, xi=None):
        try:
            table = self.fn(z, xi)
        except TypeError:
            table = self.fn(z)
        return _check_rows(table, self.name)


class TableReward:
    """Reward stored as a dense table, optionally affine in z.

    Value for mean field z is base[...] + sum_s z[s] * mix[s, ...].
    """

    def __init__(self, base, z_mix=None):
        self.base = np.asarray(base, dtype=float)
        self.mix = None if z_mix is None else np.asarray(z_mix, dtype=float)

    def validate(self, name):
        if not np.isfinite(self.base).all():
            raise SpecError(f"{name}: non-finite reward entry")
        if self.mix is not None and not np.isfinite(self.mix).all():
            raise SpecError(f"{name}: non-finite reward z-mix entry")

    def tensor(self, z):
        if self.mix is None:
            return self.base
        return self.base + np.tensordot(np.asarray(z, dtype=float), self.mix, axes=(0, 0))

    def bound(self):
        b = np.abs(self.base).max() if self.base.size else 0.0
        if self.mix is not None:
            b += np.abs(self.mix).max(initial=0.0)
        return float(b)

    def to_dict(self):
        d = {"base": self.base.tolist()}
        if self.mix is not None:
            d["z_mix"] = self.mix.tolist()
        return d


class CallableReward:
    """Adapter for a programmatic reward f(z) -> dense table."""

    def __init__(self, fn, bound=None, name="callable reward"):
        self.fn = fn
        self._bound = bound
        self.name = name

    def validate(self, name):
        self.name = name

    def tensor(self, z):
        t = np.asarray(self.fn(z), dtype=float)
        if not np.isfinite(t).all():
            raise SpecError(f"{self.name}: non-finite reward value")
        return t

    def bound(self):
        if self._bound is None:
            raise SpecError(f"{self.name}: no declared reward bound")
        return float(self._bound)


class MeanField:
    """Distribution of minor-follower private states."""

    def __init__(self, probs):
        self.probs = clamp_simplex(probs)

    def __len__(self):
        return len(self.probs)


class LeaderMeanField:
    """Distribution of leader private states (infinite-leaders mode)."""

    def __init__(self, probs):
        self.probs = clamp_simplex(probs)


class BeliefProfile:
    """Public marginal beliefs, one simplex vector per leader and per major.

    The public belief over the joint leader/major state is always the product
    of these marginals; no correlated public beliefs are representable.
    """

    def __init__(self, leader_marginals, major_marginals):
        self.leader_marginals = [clamp_simplex(m) for m in leader_marginals]
        self.major_marginals = [clamp_simplex(m) for m in major_marginals]

    def marginals(self):
        return list(self.leader_marginals) + list(self.major_marginals)

    def joint(self):
        """Flattened product-of-marginals distribution over joint states."""
        out = np.ones(1)
        for m in self.marginals():
            out = np.multiply.outer(out, m).reshape(-1)
        return out


def joint_belief(profile, joint_state):
    """Probability of a joint leader/major state under product marginals."""
    margs = profile.marginals()
    if len(joint_state) != len(margs):
        raise IndexError("joint_state length does not match number of players")
    p = 1.0
    for m, x in zip(margs, joint_state):
        p *= m[x]
    return float(p)


class GameSpec:
    """Full game description over dense index-space tables.

    Table axis orders (flattened joint axes marked *):
      leader kernel i : (*X_lm, *A_lm, X_li)
      major kernel j  : (*X_lm, *A_lm, X_mj)
      minor kernel    : (*X_lm, *A_lm, X_f, A_f, X_f')
      leader/major reward : (*X_lm, *A_lm)
      minor reward        : (*X_lm, X_f, A_f, *A_lm)
    """

    def __init__(self, num_leaders, num_majors,
                 leader_state_labels, major_state_labels, minor_state_labels,
                 leader_action_labels, major_action_labels, minor_action_labels,
                 horizon, discount, initial_lm_dist, initial_mean_field,
                 leader_kernels, major_kernels, minor_kernel,
                 leader_rewards, major_rewards, minor_reward,
                 reward_bound=None):
        self.num_leaders = int(num_leaders)
        self.num_majors = int(num_majors)
        self.leader_state_labels = [list(s) for s in leader_state_labels]
        self.major_state_labels = [list(s) for s in major_state_labels]
        self.minor_state_labels = list(minor_state_labels)
        self.leader_action_labels = [list(s) for s in leader_action_labels]
        self.major_action_labels = [list(s) for s in major_action_labels]
        self.minor_action_labels = list(minor_action_labels)
        self.horizon = None if horizon in (None, "infinite") else int(horizon)
        self.discount = float(discount)
        self.initial_lm_dist = np.asarray(initial_lm_dist, dtype=float)
        self.initial_mean_field = np.asarray(initial_mean_field, dtype=float)
        self.leader_kernels = list(leader_kernels)
        self.major_kernels = list(major_kernels)
        self.minor_kernel = minor_kernel
        self.leader_rewards = list(leader_rewards)
        self.major_rewards = list(major_rewards)
        self.minor_reward = minor_reward
        self.reward_bound = reward_bound

        self.state_sizes_lm = tuple(len(s) for s in self.leader_state_labels) + \
            tuple(len(s) for s in self.major_state_labels)
        self.action_sizes_lm = tuple(len(s) for s in self.leader_action_labels) + \
            tuple(len(s) for s in self.major_action_labels)
        self.n_lm = int(np.prod(self.state_sizes_lm)) if self.state_sizes_lm else 1
        self.n_alm = int(np.prod(self.action_sizes_lm)) if self.action_sizes_lm else 1
        self.n_xf = len(self.minor_state_labels)
        self.n_af = len(self.minor_action_labels)

    # -- index helpers -----------------------------------------------------

    @property
    def is_infinite(self):
        return self.horizon is None

    @property
    def num_lm_players(self):
        return self.num_leaders + self.num_majors

    def lm_state_index(self, coords):
        if not self.state_sizes_lm:
            return 0
        return int(np.ravel_multi_index(tuple(coords), self.state_sizes_lm))

    def lm_state_coords(self, index):
        if not self.state_sizes_lm:
            return ()
        return tuple(int(c) for c in np.unravel_index(index, self.state_sizes_lm))

    def lm_action_index(self, coords):
        if not self.action_sizes_lm:
            return 0
        return int(np.ravel_multi_index(tuple(coords), self.action_sizes_lm))

    def lm_action_coords(self, index):
        if not self.action_sizes_lm:
            return ()
        return tuple(int(c) for c in np.unravel_index(index, self.action_sizes_lm))

    def initial_belief_marginals(self):
        """Per-player marginals of the initial joint leader/major distribution."""
        joint = self.initial_lm_dist.reshape(self.state_sizes_lm or (1,))
        margs = []
        for axis in range(len(self.state_sizes_lm)):
            other = tuple(a for a in range(len(self.state_sizes_lm)) if a != axis)
            margs.append(clamp_simplex(joint.sum(axis=other)))
        return margs

    def player_slots(self):
        """(kind, index) pairs in joint-axis order: leaders then majors."""
        return [("leader", i) for i in range(self.num_leaders)] + \
            [("major", j) for j in range(self.num_majors)]


def validate_game(spec):
    """Check every structural invariant; return the (normalized) spec.

    The first violated invariant raises SpecError naming the offending index.
    Probability rows whose sums are within 1e-12 of one are renormalized.
    """
    if spec.num_leaders < 1:
        raise SpecError("num_leaders must be >= 1")
    if spec.num_majors < 0:
        raise SpecError("num_majors must be >= 0")
    if len(spec.leader_state_labels) != spec.num_leaders or \
            len(spec.leader_action_labels) != spec.num_leaders:
        raise SpecError("leader space lists must have num_leaders entries")
    if len(spec.major_state_labels) != spec.num_majors or \
            len(spec.major_action_labels) != spec.num_majors:
        raise SpecError("major space lists must have num_majors entries")
    if not (0.0 < spec.discount <= 1.0):
        raise SpecError(f"discount {spec.discount} outside (0, 1]")
    if spec.is_infinite and spec.discount >= 1.0:
        raise SpecError("discount must be < 1 for infinite horizon")
    if not spec.is_infinite and spec.horizon < 1:
        raise SpecError("horizon must be >= 1")

    init = spec.initial_lm_dist.reshape(-1)
    if init.shape[0] != spec.n_lm:
        raise SpecError("initial_leader_major_dist has wrong size")
    _check_rows(init, "initial_leader_major_dist")
    if spec.initial_mean_field.shape[0] != spec.n_xf:
        raise SpecError("initial_mean_field has wrong size")
    _check_rows(spec.initial_mean_field, "initial_mean_field")
    spec.initial_mean_field = clamp_simplex(spec.initial_mean_field)

    for i, k in enumerate(spec.leader_kernels):
        k.validate(f"leader kernel {i}")
    for j, k in enumerate(spec.major_kernels):
        k.validate(f"major kernel {j}")
    spec.minor_kernel.validate("minor kernel")
    for i, r in enumerate(spec.leader_rewards):
        r.validate(f"leader reward {i}")
    for j, r in enumerate(spec.major_rewards):
        r.validate(f"major reward {j}")
    spec.minor_reward.validate("minor reward")

    if spec.is_infinite and spec.reward_bound is None:
        bounds = []
        for r in list(spec.leader_rewards) + list(spec.major_rewards) + [spec.minor_reward]:
            if not hasattr(r, "bound"):
                raise SpecError("infinite horizon requires a reward bound")
            bounds.append(r.bound())
        spec.reward_bound = max(bounds)
    return spec


# -- file format -----------------------------------------------------------

def spec_to_dict(spec):
    """Serializable dict mirroring GameSpec (table kernels/rewards only)."""
    def kernels(ks):
        return [k.to_dict() for k in ks]

    d = {
        "format": "smfg-game-v1",
        "num_leaders": spec.num_leaders,
        "num_majors": spec.num_majors,
        "leader_state_spaces": spec.leader_state_labels,
        "major_state_spaces": spec.major_state_labels,
        "minor_state_space": spec.minor_state_labels,
        "leader_action_spaces": spec.leader_action_labels,
        "major_action_spaces": spec.major_action_labels,
        "minor_action_space": spec.minor_action_labels,
        "horizon": "infinite" if spec.is_infinite else spec.horizon,
        "discount": spec.discount,
        "initial_leader_major_dist": spec.initial_lm_dist.reshape(
            spec.state_sizes_lm or (1,)).tolist(),
        "initial_mean_field": spec.initial_mean_field.tolist(),
        "kernels": {
            "leader": kernels(spec.leader_kernels),
            "major": kernels(spec.major_kernels),
            "minor": spec.minor_kernel.to_dict(),
        },
        "rewards": {
            "leader": [r.to_dict() for r in spec.leader_rewards],
            "major": [r.to_dict() for r in spec.major_rewards],
            "minor": spec.minor_reward.to_dict(),
        },
    }
    if spec.reward_bound is not None:
        d["reward_bound"] = spec.reward_bound
    return d


def _kernel_from_dict(d, shape):
    base = np.asarray(d["base"], dtype=float).reshape(shape)
    z_mix = None
    if "z_mix" in d:
        mix = np.asarray(d["z_mix"]["table"], dtype=float)
        z_mix = {"weight": d["z_mix"]["weight"],
                 "table": mix.reshape((mix.shape[0],) + shape)}
    return TableKernel(base, z_mix)


def _reward_from_dict(d, shape):
    base = np.asarray(d["base"], dtype=float).reshape(shape)
    mix = None
    if "z_mix" in d:
        m = np.asarray(d["z_mix"], dtype=float)
        mix = m.reshape((m.shape[0],) + shape)
    return TableReward(base, mix)


def spec_from_dict(d):
    if d.get("format") != "smfg-game-v1":
        raise SpecError(f"unsupported game file format {d.get('format')!r}")
    state_sizes = [len(s) for s in d["leader_state_spaces"]] + \
        [len(s) for s in d["major_state_spaces"]]
    action_sizes = [len(s) for s in d["leader_action_spaces"]] + \
        [len(s) for s in d["major_action_spaces"]]
    n_lm = int(np.prod(state_sizes)) if state_sizes else 1
    n_alm = int(np.prod(action_sizes)) if action_sizes else 1
    n_xf = len(d["minor_state_space"])
    n_af = len(d["minor_action_space"])
    return GameSpec(
        num_leaders=d["num_leaders"], num_majors=d["num_majors"],
        leader_state_labels=d["leader_state_spaces"],
        major_state_labels=d["major_state_spaces"],
        minor_state_labels=d["minor_state_space"],
        leader_action_labels=d["leader_action_spaces"],
        major_action_labels=d["major_action_spaces"],
        minor_action_labels=d["minor_action_space"],
        horizon=d["horizon"], discount=d["discount"],
        initial_lm_dist=np.asarray(d["initial_leader_major_dist"], dtype=float),
        initial_mean_field=np.asarray(d["initial_mean_field"], dtype=float),
        leader_kernels=[
            _kernel_from_dict(kd, (n_lm, n_alm, len(d["leader_state_spaces"][i])))
            for i, kd in enumerate(d["kernels"]["leader"])],
        major_kernels=[
            _kernel_from_dict(kd, (n_lm, n_alm, len(d["major_state_spaces"][j])))
            for j, kd in enumerate(d["kernels"]["major"])],
        minor_kernel=_kernel_from_dict(
            d["kernels"]["minor"], (n_lm, n_alm, n_xf, n_af, n_xf)),
        leader_rewards=[
            _reward_from_dict(rd, (n_lm, n_alm)) for rd in d["rewards"]["leader"]],
        major_rewards=[
            _reward_from_dict(rd, (n_lm, n_alm)) for rd in d["rewards"]["major"]],
        minor_reward=_reward_from_dict(
            d["rewards"]["minor"], (n_lm, n_xf, n_af, n_alm)),
        reward_bound=d.get("reward_bound"),
    )


def dump_json(obj, path):
    """Canonical JSON writer: sorted keys, stable float text, trailing newline."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def load_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_game_file(spec, path):
    dump_json(spec_to_dict(spec), path)


def load_game_file(path):
    return validate_game(spec_from_dict(load_json(path)))
