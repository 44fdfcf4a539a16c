"""Single-stage coupled fixed point and value backups.

At one public point (beliefs, mean field) the stage problem is: find grid
prescription profiles such that

  * the minor prescription maximizes reward-to-go per minor state, with the
    population's own prescription driving the next mean field (an individual
    minor is mass zero, so its deviation moves neither beliefs nor the mean
    field);
  * each major prescription maximizes her reward-to-go per major state, where
    her deviation changes her realized action (and hence which posterior the
    public lands on) but not the prescription weights inside the posterior or
    the mean-field push-forward, which use the tested profile;
  * each leader prescription is unimprovable when a deviation is publicly
    committed: the follower block re-equilibrates against the deviated
    profile and both the posterior weights and the mean field follow it.

Continuation values enter through a `v_next(marginals, z) -> StageValues`
accessor, so the same machinery serves the finite-horizon recursion, file
re-certification and infinite-horizon sweeps.
"""

import itertools

import numpy as np

from . import belief as bel
from .belief import PrescriptionProfile, lm_joint_prescription
from .model import BeliefProfile
from .simplex import clamp_simplex, grid_rows, quantize

TIE_TOL = 1e-9


class NonexistenceError(RuntimeError):
    """No grid fixed point exists at some visited point."""

    def __init__(self, point_key):
        super().__init__(f"no grid fixed point at point {point_key}")
        self.point_key = point_key


class CandidateGrid:
    """Per-state candidate action distributions with entries in 1/G steps."""

    def __init__(self, granularity=1):
        self.granularity = int(granularity)
        if self.granularity < 1:
            raise ValueError("granularity must be >= 1")
        self._rows = {}

    def rows(self, n_actions):
        if n_actions not in self._rows:
            self._rows[n_actions] = grid_rows(self.granularity, n_actions)
        return self._rows[n_actions]

    def player_candidates(self, n_states, n_actions):
        """All prescriptions for one player, as (n_states, n_actions) arrays.

        Candidate identity is its index in this list; the list order (row
        choices cycling fastest in the last state) is the total order used
        for every lexicographic selection.
        """
        rows = self.rows(n_actions)
        out = []
        for combo in itertools.product(range(len(rows)), repeat=n_states):
            out.append(np.stack([rows[r] for r in combo]))
        return out


class StageValues:
    """Per-player state-indexed values at one public point."""

    def __init__(self, minor, leaders, majors):
        self.minor = np.asarray(minor, dtype=float)
        self.leaders = [np.asarray(v, dtype=float) for v in leaders]
        self.majors = [np.asarray(v, dtype=float) for v in majors]

    @classmethod
    def zeros(cls, spec):
        return cls(np.zeros(spec.n_xf),
                   [np.zeros(s) for s in map(len, spec.leader_state_labels)],
                   [np.zeros(s) for s in map(len, spec.major_state_labels)])


class StageSolution:
    """One stage fixed point: prescriptions, values, and diagnostics."""

    def __init__(self, prescriptions, values, multiplicity, existence,
                 off_support_updates=0, candidate_ids=None,
                 skipped_deviations=0):
        self.prescriptions = prescriptions
        self.values = values
        self.multiplicity = multiplicity
        self.existence = existence
        self.off_support_updates = off_support_updates
        self.candidate_ids = candidate_ids
        self.skipped_deviations = skipped_deviations

    @classmethod
    def terminal(cls, spec):
        return cls(None, StageValues.zeros(spec), 1, True)


def zero_values_accessor(spec):
    return lambda marginals, z: StageValues.zeros(spec)


class _Bundle:
    """Successor values gathered per realized joint action, plus caches."""

    __slots__ = ("vf", "vls", "vms", "fallbacks", "cont_f", "obj_m", "obj_l")

    def __init__(self, vf, vls, vms, fallbacks):
        self.vf = vf          # (n_alm, n_xf)
        self.vls = vls        # list of (n_alm, |X_li|)
        self.vms = vms        # list of (n_alm, |X_mj|)
        self.fallbacks = fallbacks
        self.cont_f = None
        self.obj_m = {}
        self.obj_l = {}


class StageContext:
    """Binds one public point (beliefs, z) to cached tensors and candidates."""

    def __init__(self, spec, marginals, z, v_next, grid, tie_tol=TIE_TOL,
                 selection="lex"):
        self.spec = spec
        self.marginals = [np.asarray(m, dtype=float) for m in marginals]
        self.z = np.asarray(z, dtype=float)
        self.v_next = v_next
        self.grid = grid
        self.tie_tol = float(tie_tol)
        self.selection = selection

        self.pi_joint = self._joint(self.marginals)
        self.qf = spec.minor_kernel.tensor(self.z)
        self.ql = [k.tensor(self.z) for k in spec.leader_kernels]
        self.qm = [k.tensor(self.z) for k in spec.major_kernels]
        # minor reward transposed to (x_lm, a_lm, x_f, a_f)
        self.rf = np.transpose(spec.minor_reward.tensor(self.z), (0, 3, 1, 2))
        self.rl = [r if getattr(r, "needs_stage_context", False) else r.tensor(self.z)
                   for r in spec.leader_rewards]
        self.rm = [r.tensor(self.z) for r in spec.major_rewards]

        self.leader_cands = [
            grid.player_candidates(len(spec.leader_state_labels[i]),
                                   len(spec.leader_action_labels[i]))
            for i in range(spec.num_leaders)]
        self.major_cands = [
            grid.player_candidates(len(spec.major_state_labels[j]),
                                   len(spec.major_action_labels[j]))
            for j in range(spec.num_majors)]
        self.minor_cands = grid.player_candidates(spec.n_xf, spec.n_af)

        n_slots = spec.num_lm_players
        self._pi_excl = []
        for slot in range(n_slots):
            margs = list(self.marginals)
            margs[slot] = np.ones_like(margs[slot])
            self._pi_excl.append(self._joint(margs))
        self._glm_cache = {}
        self._bundle_cache = {}
        self._block_cache = {}
        self._pair_value_cache = {}

    # -- small helpers -------------------------------------------------------

    @staticmethod
    def _joint(marginals):
        out = np.ones(1)
        for m in marginals:
            out = np.multiply.outer(out, m).reshape(-1)
        return out

    def lm_tables(self, gl_ids, gm_ids):
        tabs = [self.leader_cands[i][g] for i, g in enumerate(gl_ids)]
        tabs += [self.major_cands[j][g] for j, g in enumerate(gm_ids)]
        return tabs

    def glm(self, gl_ids, gm_ids):
        key = (gl_ids, gm_ids)
        if key not in self._glm_cache:
            self._glm_cache[key] = lm_joint_prescription(
                self.spec, self.lm_tables(gl_ids, gm_ids))
        return self._glm_cache[key]

    def glm_excluding(self, gl_ids, gm_ids, slot):
        key = (gl_ids, gm_ids, slot)
        if key not in self._glm_cache:
            tabs = self.lm_tables(gl_ids, gm_ids)
            tabs[slot] = np.ones_like(tabs[slot])
            self._glm_cache[key] = lm_joint_prescription(self.spec, tabs)
        return self._glm_cache[key]

    def mean_field_next(self, gl_ids, gm_ids, gf_id):
        gf = self.minor_cands[gf_id]
        nxt = np.einsum("i,ij,f,fa,ijfax->x", self.pi_joint,
                        self.glm(gl_ids, gm_ids), self.z, gf, self.qf)
        return clamp_simplex(nxt)

    def bundle(self, gl_ids, gm_ids, z_next):
        """Successor values for every realized joint action under a profile."""
        key = (gl_ids, gm_ids, quantize(z_next))
        if key in self._bundle_cache:
            return self._bundle_cache[key]
        spec = self.spec
        profile = BeliefProfile(self.marginals[:spec.num_leaders],
                                self.marginals[spec.num_leaders:])
        lm_tabs = self.lm_tables(gl_ids, gm_ids)
        vf = np.empty((spec.n_alm, spec.n_xf))
        vls = [np.empty((spec.n_alm, len(s))) for s in spec.leader_state_labels]
        vms = [np.empty((spec.n_alm, len(s))) for s in spec.major_state_labels]
        fallbacks = 0
        for a in range(spec.n_alm):
            nxt, fb = bel.update_belief_flagged(spec, profile, self.z, lm_tabs, a)
            fallbacks += int(fb)
            vals = self.v_next(nxt.marginals(), z_next)
            vf[a] = vals.minor
            for i in range(spec.num_leaders):
                vls[i][a] = vals.leaders[i]
            for j in range(spec.num_majors):
                vms[j][a] = vals.majors[j]
        b = _Bundle(vf, vls, vms, fallbacks)
        self._bundle_cache[key] = b
        return b

    # -- objective tensors ----------------------------------------------------

    def minor_w(self, gl_ids, gm_ids, bundle):
        """Action-value matrix (x_f, a_f) for an individual minor."""
        if bundle.cont_f is None:
            bundle.cont_f = np.einsum("ijfax,jx->ijfa", self.qf, bundle.vf)
        obj = self.rf + self.spec.discount * bundle.cont_f
        return np.einsum("i,ij,ijfa->fa", self.pi_joint,
                         self.glm(gl_ids, gm_ids), obj)

    def _obj_major(self, j, bundle):
        if j not in bundle.obj_m:
            cont = np.einsum("ijx,jx->ij", self.qm[j], bundle.vms[j])
            bundle.obj_m[j] = self.rm[j] + self.spec.discount * cont
        return bundle.obj_m[j]

    def _obj_leader(self, i, bundle, gm_ids, gf_id):
        r = self.rl[i]
        if isinstance(r, np.ndarray):
            if i in bundle.obj_l:
                return bundle.obj_l[i]
            cont = np.einsum("ijx,jx->ij", self.ql[i], bundle.vls[i])
            bundle.obj_l[i] = r + self.spec.discount * cont
            return bundle.obj_l[i]
        # prescription-reading reward: depends on the follower prescriptions,
        # so it cannot be cached on the (leaders, majors, z') bundle alone
        tab = r.context_tensor(
            self.spec, self.z, self.marginals,
            [self.major_cands[j][g] for j, g in enumerate(gm_ids)],
            self.minor_cands[gf_id])
        cont = np.einsum("ijx,jx->ij", self.ql[i], bundle.vls[i])
        return tab + self.spec.discount * cont

    def _per_state_value(self, pi_excl, glm, obj, slot):
        spec = self.spec
        n = spec.num_lm_players
        t = (pi_excl[:, None] * glm * obj).reshape(
            spec.state_sizes_lm + spec.action_sizes_lm)
        axes = tuple(ax for ax in range(2 * n) if ax != slot)
        return t.sum(axis=axes)

    def _per_state_action_w(self, pi_excl, glm_excl, obj, slot):
        spec = self.spec
        n = spec.num_lm_players
        t = (pi_excl[:, None] * glm_excl * obj).reshape(
            spec.state_sizes_lm + spec.action_sizes_lm)
        axes = tuple(ax for ax in range(2 * n) if ax not in (slot, n + slot))
        return t.sum(axis=axes)

    def major_w(self, j, gl_ids, gm_ids, bundle):
        """Action-value matrix (x_mj, a_mj) for major j under a tested profile."""
        slot = self.spec.num_leaders + j
        return self._per_state_action_w(
            self._pi_excl[slot], self.glm_excluding(gl_ids, gm_ids, slot),
            self._obj_major(j, bundle), slot)

    # -- fixed-point membership ------------------------------------------------

    def _rows_pass(self, tables_rows, w):
        best = w.max(axis=1)
        vals = np.einsum("sa,sa->s", w, tables_rows)
        return bool((vals >= best - self.tie_tol).all())

    def pair_is_equilibrium(self, gl_ids, gm_ids, gf_id):
        """Check one (major profile, minor prescription) pair at fixed leaders."""
        z_next = self.mean_field_next(gl_ids, gm_ids, gf_id)
        bundle = self.bundle(gl_ids, gm_ids, z_next)
        if not self._rows_pass(self.minor_cands[gf_id],
                               self.minor_w(gl_ids, gm_ids, bundle)):
            return False
        for j in range(self.spec.num_majors):
            if not self._rows_pass(self.major_cands[j][gm_ids[j]],
                                   self.major_w(j, gl_ids, gm_ids, bundle)):
                return False
        return True

    def block_set(self, gl_ids):
        """All (major ids, minor id) grid pairs in equilibrium at fixed leaders."""
        if gl_ids in self._block_cache:
            return self._block_cache[gl_ids]
        out = []
        gm_ranges = [range(len(c)) for c in self.major_cands]
        for gm_ids in itertools.product(*gm_ranges):
            for gf_id in range(len(self.minor_cands)):
                if self.pair_is_equilibrium(gl_ids, gm_ids, gf_id):
                    out.append((gm_ids, gf_id))
        self._block_cache[gl_ids] = out
        return out

    # -- values ----------------------------------------------------------------

    def profile_values(self, gl_ids, gm_ids, gf_id):
        """Backed-up values of a full profile at this point (all players)."""
        key = (gl_ids, gm_ids, gf_id)
        if key in self._pair_value_cache:
            return self._pair_value_cache[key]
        spec = self.spec
        z_next = self.mean_field_next(gl_ids, gm_ids, gf_id)
        bundle = self.bundle(gl_ids, gm_ids, z_next)
        glm = self.glm(gl_ids, gm_ids)
        if bundle.cont_f is None:
            bundle.cont_f = np.einsum("ijfax,jx->ijfa", self.qf, bundle.vf)
        obj_f = self.rf + spec.discount * bundle.cont_f
        gf = self.minor_cands[gf_id]
        vf = np.einsum("i,ij,fa,ijfa->f", self.pi_joint, glm, gf, obj_f)
        vls, vms = [], []
        for i in range(spec.num_leaders):
            vls.append(self._per_state_value(
                self._pi_excl[i], glm, self._obj_leader(i, bundle, gm_ids, gf_id), i))
        for j in range(spec.num_majors):
            slot = spec.num_leaders + j
            vms.append(self._per_state_value(
                self._pi_excl[slot], glm, self._obj_major(j, bundle), slot))
        vals = StageValues(vf, vls, vms)
        self._pair_value_cache[key] = (vals, bundle.fallbacks)
        return vals, bundle.fallbacks

    def leader_value(self, i, gl_ids, gm_ids, gf_id):
        return self.profile_values(gl_ids, gm_ids, gf_id)[0].leaders[i]

    def select_pair(self, block, leader_index, gl_ids):
        """Resolve follower-block multiplicity inside a leader evaluation.

        lex picks the smallest pair in candidate-id order; pessimistic and
        optimistic pick the pair with the lowest resp. highest prior-weighted
        value for the evaluating leader, ties broken lexicographically.
        """
        if self.selection == "lex" or len(block) == 1:
            return block[0]
        weights = self.marginals[leader_index]
        scored = [(float(weights @ self.leader_value(leader_index, gl_ids, gm, gf)),
                   (gm, gf)) for gm, gf in block]
        if self.selection == "pessimistic":
            target = min(s for s, _ in scored)
        elif self.selection == "optimistic":
            target = max(s for s, _ in scored)
        else:
            raise ValueError(f"unknown selection rule {self.selection!r}")
        return min(p for s, p in scored if s == target)

    # -- the leader condition ----------------------------------------------------

    def solution_set(self):
        """All grid profiles passing the full stage equilibrium condition."""
        spec = self.spec
        solutions = []
        skipped = 0
        gl_ranges = [range(len(c)) for c in self.leader_cands]
        for gl_ids in itertools.product(*gl_ranges):
            block = self.block_set(gl_ids)
            for gm_ids, gf_id in block:
                eq_vals, fallbacks = self.profile_values(gl_ids, gm_ids, gf_id)
                ok = True
                for i in range(spec.num_leaders):
                    live = np.flatnonzero(self.marginals[i] > 0.0)
                    if live.size == 0:
                        continue
                    base = eq_vals.leaders[i]
                    for dev in range(len(self.leader_cands[i])):
                        dev_gl = gl_ids[:i] + (dev,) + gl_ids[i + 1:]
                        dev_block = self.block_set(dev_gl)
                        if not dev_block:
                            skipped += 1
                            continue
                        sel = self.select_pair(dev_block, i, dev_gl)
                        dev_v = self.leader_value(i, dev_gl, sel[0], sel[1])
                        if (dev_v[live] > base[live] + self.tie_tol).any():
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    solutions.append(((gl_ids, gm_ids, gf_id), eq_vals, fallbacks))
        solutions.sort(key=lambda s: s[0])
        out = []
        for ids, vals, fallbacks in solutions:
            gl_ids, gm_ids, gf_id = ids
            prescriptions = PrescriptionProfile(
                [self.leader_cands[i][g] for i, g in enumerate(gl_ids)],
                [self.major_cands[j][g] for j, g in enumerate(gm_ids)],
                self.minor_cands[gf_id])
            out.append(StageSolution(prescriptions, vals,
                                     multiplicity=len(solutions),
                                     existence=True,
                                     off_support_updates=fallbacks,
                                     candidate_ids=ids,
                                     skipped_deviations=skipped))
        return out


# -- public operations mirroring the module contract -------------------------

def _context(spec, profile, z, v_next, grid, tie_tol=TIE_TOL, selection="lex"):
    zv = z.probs if hasattr(z, "probs") else z
    return StageContext(spec, profile.marginals(), zv, v_next, grid,
                        tie_tol=tie_tol, selection=selection)


def _find_candidate_id(cands, table):
    table = np.asarray(table, dtype=float)
    for idx, c in enumerate(cands):
        if np.allclose(c, table, atol=1e-12):
            return idx
    raise ValueError("prescription is not a grid candidate")


def minor_stage_br(spec, profile, z, gamma_lm, v_next, grid, tie_tol=TIE_TOL):
    """All grid minor prescriptions that are stage best responses.

    gamma_lm is (leader tables, major tables). The tested prescription itself
    drives the mean-field argument of the continuation.
    """
    gl_tabs, gm_tabs = gamma_lm
    ctx = _context(spec, profile, z, v_next, grid, tie_tol)
    gl_ids = tuple(_find_candidate_id(ctx.leader_cands[i], t)
                   for i, t in enumerate(gl_tabs))
    gm_ids = tuple(_find_candidate_id(ctx.major_cands[j], t)
                   for j, t in enumerate(gm_tabs))
    out = []
    for gf_id, gf in enumerate(ctx.minor_cands):
        z_next = ctx.mean_field_next(gl_ids, gm_ids, gf_id)
        bundle = ctx.bundle(gl_ids, gm_ids, z_next)
        if ctx._rows_pass(gf, ctx.minor_w(gl_ids, gm_ids, bundle)):
            out.append(gf)
    return out


def major_stage_br(spec, profile, z, gamma_l, gamma_m_others, gamma_f,
                   v_next, grid, j, tie_tol=TIE_TOL):
    """All grid prescriptions for major j that are stage best responses."""
    if not (0 <= j < spec.num_majors):
        raise IndexError(f"major index {j} out of range")
    ctx = _context(spec, profile, z, v_next, grid, tie_tol)
    gl_ids = tuple(_find_candidate_id(ctx.leader_cands[i], t)
                   for i, t in enumerate(gamma_l))
    gf_id = _find_candidate_id(ctx.minor_cands, gamma_f)
    other_ids = [_find_candidate_id(ctx.major_cands[q], t) if q != j else None
                 for q, t in enumerate(gamma_m_others)]
    out = []
    for cand_id, cand in enumerate(ctx.major_cands[j]):
        gm_ids = tuple(cand_id if q == j else other_ids[q]
                       for q in range(spec.num_majors))
        z_next = ctx.mean_field_next(gl_ids, gm_ids, gf_id)
        bundle = ctx.bundle(gl_ids, gm_ids, z_next)
        if ctx._rows_pass(cand, ctx.major_w(j, gl_ids, gm_ids, bundle)):
            out.append(cand)
    return out


def follower_block_equilibria(spec, profile, z, gamma_l, v_next, grid,
                              tie_tol=TIE_TOL):
    """All (major tables tuple, minor table) pairs in joint equilibrium."""
    ctx = _context(spec, profile, z, v_next, grid, tie_tol)
    gl_ids = tuple(_find_candidate_id(ctx.leader_cands[i], t)
                   for i, t in enumerate(gamma_l))
    out = []
    for gm_ids, gf_id in ctx.block_set(gl_ids):
        out.append((tuple(ctx.major_cands[j][g] for j, g in enumerate(gm_ids)),
                    ctx.minor_cands[gf_id]))
    return out


def leader_stage_equilibrium(spec, profile, z, v_next, grid, tie_tol=TIE_TOL,
                             selection="lex"):
    """All StageSolutions of the full stage condition, lexicographic order."""
    ctx = _context(spec, profile, z, v_next, grid, tie_tol, selection)
    return ctx.solution_set()


def backup_values(spec, profile, z, prescriptions, v_next):
    """One-step value backup of a full prescription profile for all players."""
    grid = CandidateGrid(1)
    ctx = _context(spec, profile, z, v_next, grid)
    ctx.leader_cands = [[np.asarray(t, dtype=float)] for t in prescriptions.leader]
    ctx.major_cands = [[np.asarray(t, dtype=float)] for t in prescriptions.major]
    ctx.minor_cands = [np.asarray(prescriptions.minor, dtype=float)]
    vals, _ = ctx.profile_values(tuple([0] * spec.num_leaders),
                                 tuple([0] * spec.num_majors), 0)
    return vals


def best_response_iteration(ctx, gl_ids, start=((), 0), max_rounds=64):
    """Iterate follower best responses at fixed leaders; None if it cycles.

    A converged output is a candidate fixed point only; callers must re-verify
    it with pair_is_equilibrium (the exhaustive definition).
    """
    spec = ctx.spec
    if start == ((), 0) and spec.num_majors:
        gm_ids, gf_id = tuple([0] * spec.num_majors), 0
    else:
        gm_ids, gf_id = start
    seen = set()
    for _ in range(max_rounds):
        state = (gm_ids, gf_id)
        if state in seen:
            return None
        seen.add(state)
        z_next = ctx.mean_field_next(gl_ids, gm_ids, gf_id)
        bundle = ctx.bundle(gl_ids, gm_ids, z_next)
        w = ctx.minor_w(gl_ids, gm_ids, bundle)
        new_gf = _argmax_candidate(ctx.grid.rows(spec.n_af), w)
        new_gm = list(gm_ids)
        for j in range(spec.num_majors):
            wj = ctx.major_w(j, gl_ids, gm_ids, bundle)
            rows = ctx.grid.rows(len(spec.major_action_labels[j]))
            new_gm[j] = _argmax_candidate(rows, wj)
        new_state = (tuple(new_gm), new_gf)
        if new_state == state:
            return state if ctx.pair_is_equilibrium(gl_ids, *state) else None
        gm_ids, gf_id = new_state
    return None


def _argmax_candidate(rows, w):
    """Candidate id whose per-state row maximizes w[s] . row (first maximizer)."""
    vals = w @ rows.T
    choice = vals.argmax(axis=1)
    cid = 0
    for c in choice:
        cid = cid * len(rows) + int(c)
    return cid
