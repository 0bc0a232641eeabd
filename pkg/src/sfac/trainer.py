"""Desk-scale offline actor-critic training on tabular MDPs.

Everything here is sized for a 25-state gridworld: datasets are generated
by episodic rollouts of a noisy behavior policy, critics are fitted
in-sample (expectile state values, so no out-of-distribution maximum is
ever taken), and two softmax policy tables are trained from the same
batches. The theta table minimizes advantage regression plus the clipped
symmetry series against the zeta table; zeta minimizes advantage
regression alone. A run is single-threaded and reproducible from
(config, seed).
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .divergences import parse_family
from .losses import LossConfig, advantage_weight, tabular_sfac_loss


class TrainerError(RuntimeError):
    """Raised when a training run cannot continue."""


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return np.exp(shifted - log_z)


@dataclass(frozen=True)
class TabularPolicy:
    """Per-state action probabilities, one row per state."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.size == 0:
            raise ValueError("probs must be a nonempty state x action table")
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            raise ValueError("probabilities must be finite and nonnegative")
        if not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("every state row must sum to 1")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class TabularMdp:
    transition: np.ndarray  # (S, A, S), rows sum to 1
    reward: np.ndarray  # (S, A)
    gamma: float
    initial: np.ndarray  # (S,)
    terminal: np.ndarray  # (S,) bool

    def __post_init__(self) -> None:
        transition = np.asarray(self.transition, dtype=np.float64)
        reward = np.asarray(self.reward, dtype=np.float64)
        initial = np.asarray(self.initial, dtype=np.float64)
        terminal = np.asarray(self.terminal, dtype=bool)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError("transition must have shape (S, A, S)")
        n_states, n_actions = transition.shape[:2]
        if reward.shape != (n_states, n_actions):
            raise ValueError("reward must have shape (S, A)")
        if initial.shape != (n_states,) or terminal.shape != (n_states,):
            raise ValueError("initial and terminal must have length S")
        if np.any(transition < 0.0) or not np.allclose(
            transition.sum(axis=2), 1.0, atol=1e-9
        ):
            raise ValueError("transition rows must be distributions")
        if np.any(initial < 0.0) or abs(initial.sum() - 1.0) > 1e-9:
            raise ValueError("initial must be a distribution")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not np.all(np.isfinite(reward)):
            raise ValueError("rewards must be finite")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "terminal", terminal)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class Transition:
    s: int
    a: int
    r: float
    s_next: int
    done: bool


@dataclass(frozen=True)
class OfflineDataset:
    """Column-major transition store plus behavior visitation counts."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    n_states: int
    n_actions: int
    seed: int
    counts: np.ndarray  # (S, A) visitation counts

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=np.intp)
        a = np.asarray(self.a, dtype=np.intp)
        r = np.asarray(self.r, dtype=np.float64)
        s_next = np.asarray(self.s_next, dtype=np.intp)
        done = np.asarray(self.done, dtype=bool)
        if not (s.shape == a.shape == r.shape == s_next.shape == done.shape):
            raise ValueError("transition columns must align")
        if s.size and (
            s.min() < 0
            or s.max() >= self.n_states
            or s_next.min() < 0
            or s_next.max() >= self.n_states
            or a.min() < 0
            or a.max() >= self.n_actions
        ):
            raise ValueError("indices out of range")
        for name, value in (("s", s), ("a", a), ("r", r), ("s_next", s_next), ("done", done)):
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return self.s.size

    def row(self, i: int) -> Transition:
        return Transition(
            int(self.s[i]), int(self.a[i]), float(self.r[i]),
            int(self.s_next[i]), bool(self.done[i]),
        )


def make_gridworld(
    size: int = 5,
    step_reward: float = -0.01,
    goal_reward: float = 1.0,
    gamma: float = 0.99,
) -> TabularMdp:
    """Deterministic square grid: 4 moves, walls bump back, one absorbing
    goal in the far corner paying goal_reward on entry, start in the near
    corner."""
    if size < 2:
        raise ValueError("grid needs at least 2 cells per side")
    n_states = size * size
    goal = n_states - 1
    moves = ((-1, 0), (1, 0), (0, -1), (0, 1))  # up, down, left, right
    transition = np.zeros((n_states, 4, n_states))
    reward = np.full((n_states, 4), step_reward)
    for row in range(size):
        for col in range(size):
            s = row * size + col
            if s == goal:
                transition[s, :, s] = 1.0
                reward[s, :] = 0.0
                continue
            for a, (dr, dc) in enumerate(moves):
                nr, nc = row + dr, col + dc
                if not (0 <= nr < size and 0 <= nc < size):
                    nr, nc = row, col
                nxt = nr * size + nc
                transition[s, a, nxt] = 1.0
                if nxt == goal:
                    reward[s, a] = goal_reward
    initial = np.zeros(n_states)
    initial[0] = 1.0
    terminal = np.zeros(n_states, dtype=bool)
    terminal[goal] = True
    return TabularMdp(transition, reward, gamma, initial, terminal)


def value_iteration_q(mdp: TabularMdp, sweeps: int) -> np.ndarray:
    """Synchronous value-iteration sweeps from zero; returns the q table."""
    cont = np.where(mdp.terminal, 0.0, 1.0)
    v = np.zeros(mdp.n_states)
    q = mdp.reward.copy()
    for _ in range(sweeps):
        q = mdp.reward + mdp.gamma * mdp.transition @ (cont * v)
        v = cont * q.max(axis=1)
    return q


def greedy_policy(q_table: np.ndarray) -> TabularPolicy:
    probs = np.zeros_like(q_table)
    probs[np.arange(q_table.shape[0]), q_table.argmax(axis=1)] = 1.0
    return TabularPolicy(probs)


def epsilon_greedy(policy: TabularPolicy, eps: float) -> TabularPolicy:
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    n_actions = policy.probs.shape[1]
    return TabularPolicy((1.0 - eps) * policy.probs + eps / n_actions)


def behavior_policy(mdp: TabularMdp, vi_sweeps: int = 10, eps: float = 0.3) -> TabularPolicy:
    """Noisy greedy policy around a few value-iteration sweeps; the noise
    leaves headroom above its return for the trained policy."""
    return epsilon_greedy(greedy_policy(value_iteration_q(mdp, vi_sweeps)), eps)


def generate_dataset(
    mdp: TabularMdp,
    behavior: TabularPolicy,
    n_transitions: int,
    seed: int,
    horizon: int = 100,
) -> OfflineDataset:
    """Concatenate episodic rollouts until n_transitions are collected.

    Episodes truncate at horizon with done=False so critic targets keep
    bootstrapping through the cut.
    """
    if n_transitions < 0:
        raise ValueError("n_transitions must be nonnegative")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    cols: list[tuple[int, int, float, int, bool]] = []
    counts = np.zeros((mdp.n_states, mdp.n_actions))
    while len(cols) < n_transitions:
        s = int(rng.choice(mdp.n_states, p=mdp.initial))
        for _ in range(horizon):
            a = int(rng.choice(mdp.n_actions, p=behavior.probs[s]))
            s_next = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
            done = bool(mdp.terminal[s_next])
            cols.append((s, a, float(mdp.reward[s, a]), s_next, done))
            counts[s, a] += 1.0
            if len(cols) == n_transitions or done:
                break
            s = s_next
    s_arr = np.array([c[0] for c in cols], dtype=np.intp)
    a_arr = np.array([c[1] for c in cols], dtype=np.intp)
    r_arr = np.array([c[2] for c in cols], dtype=np.float64)
    sn_arr = np.array([c[3] for c in cols], dtype=np.intp)
    d_arr = np.array([c[4] for c in cols], dtype=bool)
    return OfflineDataset(
        s_arr, a_arr, r_arr, sn_arr, d_arr,
        mdp.n_states, mdp.n_actions, seed, counts,
    )


def expectile_value(values, weights, kappa: float) -> float:
    """Exact weighted expectile of a finite sample.

    The asymmetric-least-squares first-order condition is piecewise linear
    and decreasing in v, so the root is found by scanning the sorted
    segments: points below v weigh (1-kappa), points above weigh kappa.
    """
    values = np.asarray(values, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if not 0.0 < kappa < 1.0:
        raise ValueError("kappa must lie in (0, 1)")
    if values.size == 0 or values.shape != weights.shape:
        raise ValueError("values and weights must be nonempty and aligned")
    if np.any(weights < 0.0) or weights.sum() <= 0.0:
        raise ValueError("weights must be nonnegative with positive sum")
    order = np.argsort(values, kind="stable")
    q = values[order]
    w = weights[order]
    below_w = np.cumsum(w)
    below_wq = np.cumsum(w * q)
    total_w = below_w[-1]
    total_wq = below_wq[-1]
    for i in range(q.size):
        num = kappa * (total_wq - below_wq[i]) + (1.0 - kappa) * below_wq[i]
        den = kappa * (total_w - below_w[i]) + (1.0 - kappa) * below_w[i]
        v = num / den
        hi = q[i + 1] if i + 1 < q.size else np.inf
        if q[i] - 1e-12 <= v <= hi + 1e-12:
            return float(v)
    return float(q[-1])


@dataclass(frozen=True)
class CriticTables:
    q: np.ndarray  # (S, A)
    v: np.ndarray  # (S,)

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if q.ndim != 2 or v.shape != (q.shape[0],):
            raise ValueError("q must be (S, A) and v must be (S,)")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(v))):
            raise ValueError("critic tables must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "v", v)


def fit_critics(
    dataset: OfflineDataset,
    gamma: float,
    expectile: float = 0.7,
    sweeps: int = 2000,
) -> CriticTables:
    """In-sample fitted q with expectile state values.

    q(s,a) averages the empirical one-step targets, v(s) is the
    count-weighted expectile of the covered q row, and uncovered entries
    keep the pessimistic floor min_reward/(1-gamma). No maximum over
    out-of-distribution actions is ever taken.
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    n_states, n_actions = dataset.n_states, dataset.n_actions
    floor = float(dataset.r.min()) / (1.0 - gamma)
    covered = dataset.counts > 0
    covered_states = np.flatnonzero(covered.any(axis=1))
    cont = 1.0 - dataset.done.astype(np.float64)
    q = np.full((n_states, n_actions), floor)
    v = np.full(n_states, floor)
    for _ in range(sweeps):
        targets = dataset.r + gamma * cont * v[dataset.s_next]
        sums = np.zeros((n_states, n_actions))
        np.add.at(sums, (dataset.s, dataset.a), targets)
        q_new = np.where(covered, sums / np.maximum(dataset.counts, 1.0), floor)
        v_new = v.copy()
        for s in covered_states:
            acts = covered[s]
            v_new[s] = expectile_value(q_new[s, acts], dataset.counts[s, acts], expectile)
        delta = max(np.abs(q_new - q).max(), np.abs(v_new - v).max())
        q, v = q_new, v_new
        if delta < 1e-8:
            break
    return CriticTables(q, v)


@dataclass(frozen=True)
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @staticmethod
    def zeros(shape) -> "AdamMoments":
        return AdamMoments(np.zeros(shape), np.zeros(shape))


def adam_step(
    table: np.ndarray,
    grad: np.ndarray,
    moments: AdamMoments,
    lr: float,
    step: int,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """One bias-corrected Adam update; step is 1-based."""
    m = beta1 * moments.m + (1.0 - beta1) * grad
    v = beta2 * moments.v + (1.0 - beta2) * grad**2
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    return table - lr * m_hat / (np.sqrt(v_hat) + eps), AdamMoments(m, v)


@dataclass(frozen=True)
class TrainState:
    theta_logits: np.ndarray
    zeta_logits: np.ndarray
    critics: CriticTables
    step: int
    theta_moments: AdamMoments
    zeta_moments: AdamMoments

    def theta_policy(self) -> TabularPolicy:
        return TabularPolicy(_softmax_rows(self.theta_logits))

    def zeta_policy(self) -> TabularPolicy:
        return TabularPolicy(_softmax_rows(self.zeta_logits))


def initial_train_state(critics: CriticTables) -> TrainState:
    shape = critics.q.shape
    return TrainState(
        theta_logits=np.zeros(shape),
        zeta_logits=np.zeros(shape),
        critics=critics,
        step=0,
        theta_moments=AdamMoments.zeros(shape),
        zeta_moments=AdamMoments.zeros(shape),
    )


def sfac_update(
    state: TrainState,
    batch: tuple[np.ndarray, np.ndarray],
    config: LossConfig,
    lrs: tuple[float, float],
    include_symmetry: bool = True,
    algo: str = "adam",
):
    """One gradient step on both policy tables from a batch of (s, a).

    theta descends advantage regression plus the symmetry series against
    the current zeta table; zeta descends advantage regression only. The
    expectation over theta's actions is taken in closed form, so the only
    stochasticity is the batch itself.
    """
    if algo not in ("adam", "sgd"):
        raise ValueError("algo must be 'adam' or 'sgd'")
    s_idx, a_idx = batch
    lr_theta, lr_zeta = lrs
    critics = state.critics
    weights = advantage_weight(
        critics.q[s_idx, a_idx], critics.v[s_idx], config.tau, config.q_weight
    )
    zeta_probs = _softmax_rows(state.zeta_logits)
    total, awr, consym, grad_theta, diag = tabular_sfac_loss(
        state.theta_logits, zeta_probs, s_idx, a_idx, weights, config,
        include_symmetry=include_symmetry,
    )
    _, zeta_awr, _, grad_zeta, _ = tabular_sfac_loss(
        state.zeta_logits, zeta_probs, s_idx, a_idx, weights, config,
        include_symmetry=False,
    )
    if not (np.all(np.isfinite(grad_theta)) and np.all(np.isfinite(grad_zeta))):
        raise TrainerError(
            f"non-finite gradient at step {state.step}: awr={awr!r} "
            f"consym={consym!r} max_ratio={diag['max_ratio']!r}"
        )
    step = state.step + 1
    if algo == "adam":
        theta_logits, theta_moments = adam_step(
            state.theta_logits, grad_theta, state.theta_moments, lr_theta, step
        )
        zeta_logits, zeta_moments = adam_step(
            state.zeta_logits, grad_zeta, state.zeta_moments, lr_zeta, step
        )
    else:
        theta_logits = state.theta_logits - lr_theta * grad_theta
        zeta_logits = state.zeta_logits - lr_zeta * grad_zeta
        theta_moments = state.theta_moments
        zeta_moments = state.zeta_moments
    new_state = TrainState(
        theta_logits=theta_logits,
        zeta_logits=zeta_logits,
        critics=critics,
        step=step,
        theta_moments=theta_moments,
        zeta_moments=zeta_moments,
    )
    diagnostics = {
        "total": total,
        "awr": awr,
        "consym": consym,
        "zeta_awr": zeta_awr,
        "max_ratio": diag["max_ratio"],
        "min_ratio": diag["min_ratio"],
        "clip_fraction": diag["clip_fraction"],
    }
    return new_state, diagnostics


@dataclass(frozen=True)
class EvalReport:
    discounted_mean: float
    discounted_std: float
    undiscounted_mean: float
    undiscounted_std: float
    episodes: int
    horizon: int


def evaluate_policy(
    mdp: TabularMdp,
    policy: TabularPolicy,
    episodes: int,
    horizon: int,
    seed,
) -> EvalReport:
    """Mean discounted and undiscounted return over seeded rollouts."""
    if episodes <= 0 or horizon <= 0:
        raise ValueError("episodes and horizon must be positive")
    rng = np.random.default_rng(seed)
    n_actions = mdp.n_actions
    pol_cdf = np.cumsum(policy.probs, axis=1)
    trans_cdf = np.cumsum(mdp.transition, axis=2)
    states = rng.choice(mdp.n_states, size=episodes, p=mdp.initial)
    active = ~mdp.terminal[states]
    discounted = np.zeros(episodes)
    undiscounted = np.zeros(episodes)
    discount = 1.0
    for _ in range(horizon):
        if not active.any():
            break
        u = rng.random(episodes)
        acts = np.minimum(
            (u[:, None] > pol_cdf[states]).sum(axis=1), n_actions - 1
        )
        u = rng.random(episodes)
        nxt = np.minimum(
            (u[:, None] > trans_cdf[states, acts]).sum(axis=1), mdp.n_states - 1
        )
        r = np.where(active, mdp.reward[states, acts], 0.0)
        discounted += discount * r
        undiscounted += r
        states = np.where(active, nxt, states)
        active = active & ~mdp.terminal[states]
        discount *= mdp.gamma
    return EvalReport(
        discounted_mean=float(discounted.mean()),
        discounted_std=float(discounted.std()),
        undiscounted_mean=float(undiscounted.mean()),
        undiscounted_std=float(undiscounted.std()),
        episodes=episodes,
        horizon=horizon,
    )


_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Full run configuration; see config_to_dict for the file layout."""

    # environment
    grid_size: int = 5
    step_reward: float = -0.01
    goal_reward: float = 1.0
    gamma: float = 0.99
    vi_sweeps: int = 10
    behavior_eps: float = 0.3
    # dataset
    n_transitions: int = 10000
    horizon: int = 100
    # critic
    expectile: float = 0.7
    critic_sweeps: int = 2000
    # loss
    family: str = "jensen_shannon"
    n_loss: int = 3
    eps: float = 100.0
    tau: float = 0.01
    q_weight: float = 0.0
    use_symmetry: bool = True
    kl_baseline: bool = False
    # optimizer
    algo: str = "adam"
    lr_theta: float = 0.001
    lr_zeta: float = 0.001
    batch: int = 256
    steps: int = 20000
    # evaluation
    eval_every: int = 1000
    eval_episodes: int = 200
    eval_horizon: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch <= 0 or self.eval_every <= 0:
            raise ValueError("batch and eval_every must be positive")
        if self.lr_theta < 0.0 or self.lr_zeta < 0.0:
            raise ValueError("learning rates must be nonnegative")
        if self.n_transitions <= 0:
            raise ValueError("n_transitions must be positive")
        if self.algo not in ("adam", "sgd"):
            raise ValueError("algo must be 'adam' or 'sgd'")


def effective_config(config: TrainConfig) -> TrainConfig:
    """Resolve preset modes. The KL-only baseline is literally the same
    update path with the symmetry series disabled and exponential
    advantage weights, so folding the flags here is what makes the
    equivalence exact."""
    if config.kl_baseline:
        return replace(config, use_symmetry=False, q_weight=1.0)
    return config


_CONFIG_BLOCKS = {
    "environment": ("grid_size", "step_reward", "goal_reward", "gamma", "vi_sweeps", "behavior_eps"),
    "dataset": ("n_transitions", "horizon"),
    "critic": ("expectile", "critic_sweeps"),
    "loss": ("family", "n_loss", "eps", "tau", "q_weight", "use_symmetry", "kl_baseline"),
    "optimizer": ("algo", "lr_theta", "lr_zeta", "batch", "steps"),
    "evaluation": ("eval_every", "eval_episodes", "eval_horizon"),
}


def config_to_dict(config: TrainConfig) -> dict:
    flat = asdict(config)
    out: dict = {"schema_version": _SCHEMA_VERSION, "seed": config.seed}
    for block, keys in _CONFIG_BLOCKS.items():
        out[block] = {k: flat[k] for k in keys}
    return out


def config_from_dict(data: dict) -> TrainConfig:
    if not isinstance(data, dict):
        raise ValueError("config must be a mapping")
    version = data.get("schema_version")
    if version != _SCHEMA_VERSION:
        raise ValueError(
            f"unsupported schema_version {version!r}, expected {_SCHEMA_VERSION}"
        )
    kwargs: dict = {}
    if "seed" in data:
        kwargs["seed"] = int(data["seed"])
    for block, keys in _CONFIG_BLOCKS.items():
        payload = data.get(block, {})
        if not isinstance(payload, dict):
            raise ValueError(f"config block {block!r} must be a mapping")
        unknown = set(payload) - set(keys)
        if unknown:
            raise ValueError(f"unknown keys in {block!r}: {sorted(unknown)}")
        kwargs.update(payload)
    return TrainConfig(**kwargs)


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


@dataclass(frozen=True)
class TrainResult:
    config: TrainConfig  # resolved, as written to disk
    behavior_report: EvalReport
    final_report: EvalReport
    curve: tuple
    theta_probs: np.ndarray
    zeta_probs: np.ndarray
    critics: CriticTables
    output_files: dict


def train(config: TrainConfig, out_dir) -> TrainResult:
    """Fit critics once, then alternate policy updates and evaluations.

    Writes transitions.csv, learning_curve.csv (step, return_mean,
    return_std, awr_term, consym_term, clip_fraction), policy_final.csv,
    and the resolved config.json into out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = effective_config(config)

    mdp = make_gridworld(cfg.grid_size, cfg.step_reward, cfg.goal_reward, cfg.gamma)
    behavior = behavior_policy(mdp, cfg.vi_sweeps, cfg.behavior_eps)
    dataset = generate_dataset(mdp, behavior, cfg.n_transitions, cfg.seed, cfg.horizon)
    critics = fit_critics(dataset, cfg.gamma, cfg.expectile, cfg.critic_sweeps)
    loss_config = LossConfig(
        family=parse_family(cfg.family),
        n_loss=cfg.n_loss,
        eps=cfg.eps,
        tau=cfg.tau,
        q_weight=cfg.q_weight,
    )
    state = initial_train_state(critics)
    behavior_report = evaluate_policy(
        mdp, behavior, cfg.eval_episodes, cfg.eval_horizon, [cfg.seed, 2, 0]
    )
    full_weights = advantage_weight(
        critics.q[dataset.s, dataset.a], critics.v[dataset.s], cfg.tau, cfg.q_weight
    )

    curve: list[tuple] = []
    reports: list[EvalReport] = []

    def checkpoint(step: int) -> None:
        report = evaluate_policy(
            mdp, state.theta_policy(), cfg.eval_episodes, cfg.eval_horizon,
            [cfg.seed, 3, step],
        )
        # deterministic full-dataset loss read-out at the current tables
        _, awr, consym, _, diag = tabular_sfac_loss(
            state.theta_logits, _softmax_rows(state.zeta_logits),
            dataset.s, dataset.a, full_weights, loss_config,
            include_symmetry=cfg.use_symmetry,
        )
        curve.append(
            (step, report.discounted_mean, report.discounted_std,
             awr, consym, diag["clip_fraction"])
        )
        reports.append(report)

    checkpoint(0)
    rng_batches = np.random.default_rng([cfg.seed, 1])
    for step in range(1, cfg.steps + 1):
        idx = rng_batches.integers(0, len(dataset), size=cfg.batch)
        state, _ = sfac_update(
            state, (dataset.s[idx], dataset.a[idx]), loss_config,
            (cfg.lr_theta, cfg.lr_zeta), include_symmetry=cfg.use_symmetry,
            algo=cfg.algo,
        )
        if step % cfg.eval_every == 0 or step == cfg.steps:
            checkpoint(step)

    theta_probs = _softmax_rows(state.theta_logits)
    zeta_probs = _softmax_rows(state.zeta_logits)

    paths = {
        "transitions": out / "transitions.csv",
        "learning_curve": out / "learning_curve.csv",
        "policy_final": out / "policy_final.csv",
        "config": out / "config.json",
    }
    _write_csv(
        paths["transitions"],
        ("s", "a", "r", "s_next", "done"),
        zip(
            dataset.s.tolist(), dataset.a.tolist(), dataset.r.tolist(),
            dataset.s_next.tolist(), dataset.done.astype(int).tolist(),
        ),
    )
    _write_csv(
        paths["learning_curve"],
        ("step", "return_mean", "return_std", "awr_term", "consym_term", "clip_fraction"),
        curve,
    )
    _write_csv(
        paths["policy_final"],
        ("state", "action", "theta_prob", "zeta_prob", "behavior_prob"),
        (
            (s, a, theta_probs[s, a], zeta_probs[s, a], behavior.probs[s, a])
            for s in range(mdp.n_states)
            for a in range(mdp.n_actions)
        ),
    )
    tmp = paths["config"].with_name(paths["config"].name + ".tmp")
    tmp.write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
    os.replace(tmp, paths["config"])

    return TrainResult(
        config=cfg,
        behavior_report=behavior_report,
        final_report=reports[-1],
        curve=tuple(curve),
        theta_probs=theta_probs,
        zeta_probs=zeta_probs,
        critics=critics,
        output_files=paths,
    )
