"""The self-improvement engine: evaluate, collect, select, retrain, repeat.

A run is a deterministic function of its config (seeds included). Every
artifact lands under a run directory:

    config.json                   resolved config + hash
    seed_<s>/demos.jsonl          scripted-expert demonstrations
    seed_<s>/round_<r>/
        checkpoint.json           policy after round r (round 0 = initial)
        report.json               evaluation of that checkpoint
        trials.jsonl              the evaluation trials behind report.json
        collect.jsonl             exploration trials gathered for this round (r>=1)
        manifest.json             what selection kept (r>=1)
    seed_<s>/series.json          per-round summary for one seed
    aggregate.json                mean/std across seeds per round

Evaluation and collection use disjoint scenario-id hash domains so training
data never leaks evaluation scenarios. Every report field is recomputable
from the persisted trials; ``verify_report`` re-derives and compares them.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import envs, explore, fileio, policy, selection
from .numerics import RngKey, stable_hash64


@dataclass
class RunConfig:
    env_name: str = "fork_reach"
    n_demos: int = 20
    mode_mix: float = 0.5
    seeds: tuple[int, ...] = (0, 1, 2)
    n_scenarios_eval: int = 50
    attempts: int = 5
    n_scenarios_collect: int = 50
    attempts_collect: int = 5
    rounds: int = 3
    train_iters: int = 20000
    batch_size: int = 64
    lr: float = 3e-4
    eta: float = 0.0
    warm_start: bool = True
    threads: int = 1
    exploration: explore.ExplorationConfig = field(
        default_factory=explore.ExplorationConfig)
    selection: selection.SelectionConfig = field(
        default_factory=selection.SelectionConfig)

    def __post_init__(self):
        envs._check_env(self.env_name)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        for name in ("n_demos", "n_scenarios_eval", "attempts",
                     "n_scenarios_collect", "attempts_collect",
                     "train_iters", "batch_size", "threads"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "exploration" in data and isinstance(data["exploration"], dict):
            data["exploration"] = explore.ExplorationConfig(**data["exploration"])
        if "selection" in data and isinstance(data["selection"], dict):
            data["selection"] = selection.SelectionConfig(**data["selection"])
        if "seeds" in data:
            data["seeds"] = tuple(data["seeds"])
        return cls(**data)

    def config_hash(self) -> str:
        return fileio.sha256_hex(fileio.canonical_json(self.to_dict()))[:16]


@dataclass
class EvalReport:
    checkpoint_id: str
    env_name: str
    round: int
    seed: int
    n_scenarios: int
    attempts: int
    scenarios: list  # [{"scenario_id", "successes", "attempts"}]
    overall_sr: float
    scenario_sr: float
    mixed_fraction: float
    all_success_fraction: float
    zero_success_fraction: float
    dispersion: float
    exploration: dict | None = None  # the exact block the sweep ran with
    wall_clock_sec: float = 0.0  # not persisted: reports must be reproducible

    def to_dict(self) -> dict:
        return {
            "checkpoint_id": self.checkpoint_id,
            "env_name": self.env_name,
            "round": self.round,
            "seed": self.seed,
            "n_scenarios": self.n_scenarios,
            "attempts": self.attempts,
            "exploration": self.exploration,
            "scenarios": self.scenarios,
            "overall_sr": self.overall_sr,
            "scenario_sr": self.scenario_sr,
            "mixed_fraction": self.mixed_fraction,
            "all_success_fraction": self.all_success_fraction,
            "zero_success_fraction": self.zero_success_fraction,
            "dispersion": self.dispersion,
        }


# ---------------------------------------------------------------------------
# Protocol: scenario ids, keys, rollout sweeps
# ---------------------------------------------------------------------------

def scenario_ids(domain: str, seed: int, n: int) -> list[int]:
    """Deterministic scenario ids; domains never collide."""
    return [stable_hash64(domain, seed, i) for i in range(n)]


def _sweep(params, config: RunConfig, seed: int, round_tag: int, domain: str,
           n_scenarios: int, attempts: int, sampler: policy.SamplerConfig,
           source: str, rollout_fn=None) -> list[envs.Trajectory]:
    """Run attempts rollouts per scenario; merged in (scenario, attempt) order.

    Per-attempt keys are derived from (seed, scenario_id, attempt) plus the
    domain/round labels, so results are independent of scheduling.
    """
    if rollout_fn is None:
        rollout_fn = _policy_rollout
    sids = scenario_ids(domain, seed, n_scenarios)
    jobs = []
    for si, sid in enumerate(sids):
        for attempt in range(attempts):
            key = RngKey(seed).child(domain, round_tag, sid, attempt)
            traj_id = f"{domain}-r{round_tag}-s{si:03d}-a{attempt}"
            jobs.append((sid, attempt, key, traj_id))

    def run_job(job):
        sid, attempt, key, traj_id = job
        return rollout_fn(params, config.env_name, sid, attempt, sampler,
                          key, traj_id, round_tag)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            trials = list(pool.map(run_job, jobs))
    else:
        trials = [run_job(job) for job in jobs]
    for t in trials:
        t.source = source
    return trials


def _policy_rollout(params, env_name, sid, attempt, sampler, key, traj_id,
                    round_tag):
    return policy.rollout(params, env_name, sid, sampler, key, traj_id,
                          source="self", round_tag=round_tag)


def compute_report(trials, attempts: int, checkpoint_id: str, env_name: str,
                   round_tag: int, seed: int,
                   exploration: dict | None = None) -> EvalReport:
    """Derive every report field from the trials; shared with the verifier."""
    groups = selection.group_by_scenario(trials)
    scen_rows = []
    n_all = n_zero = n_mixed = 0
    total_succ = 0
    dispersions = []
    for sid, group in groups.items():
        succ = sum(1 for t in group if t.success)
        scen_rows.append({"scenario_id": int(sid), "successes": succ,
                          "attempts": len(group)})
        total_succ += succ
        if succ == len(group):
            n_all += 1
        elif succ == 0:
            n_zero += 1
        else:
            n_mixed += 1
        if len(group) >= 2:
            mids = np.array([t.observations[len(t.observations) // 2][:2]
                             for t in group])
            dists = [float(np.linalg.norm(mids[i] - mids[j]))
                     for i in range(len(mids)) for j in range(i + 1, len(mids))]
            dispersions.append(float(np.mean(dists)))
    n_scen = len(groups)
    n_trials = len(trials)
    return EvalReport(
        checkpoint_id=checkpoint_id,
        env_name=env_name,
        round=round_tag,
        seed=seed,
        n_scenarios=n_scen,
        attempts=attempts,
        scenarios=scen_rows,
        overall_sr=total_succ / n_trials if n_trials else 0.0,
        scenario_sr=(sum(1 for r in scen_rows if r["successes"] > 0) / n_scen
                     if n_scen else 0.0),
        mixed_fraction=n_mixed / n_scen if n_scen else 0.0,
        all_success_fraction=n_all / n_scen if n_scen else 0.0,
        zero_success_fraction=n_zero / n_scen if n_scen else 0.0,
        dispersion=float(np.mean(dispersions)) if dispersions else 0.0,
        exploration=exploration,
    )


def evaluate(params, config: RunConfig, seed: int, round_tag: int,
             rollout_fn=None, domain: str = "eval"):
    """Evaluation protocol: plain inference, no exploration."""
    t0 = time.perf_counter()
    sampler = policy.SamplerConfig(eta=config.eta, exploration=None)
    trials = _sweep(params, config, seed, round_tag, domain,
                    config.n_scenarios_eval, config.attempts, sampler,
                    source="self", rollout_fn=rollout_fn)
    checkpoint_id = (policy.params_digest(params)
                     if isinstance(params, policy.PolicyParams) else "stub")
    report = compute_report(trials, config.attempts, checkpoint_id,
                            config.env_name, round_tag, seed,
                            exploration={"kind": "none"})
    report.wall_clock_sec = time.perf_counter() - t0
    return report, trials


def collect(params, config: RunConfig, seed: int, round_tag: int,
            rollout_fn=None, domain: str = "collect") -> list[envs.Trajectory]:
    """Collection protocol: same sweep, exploration enabled per config."""
    expl = config.exploration if config.exploration.kind != "none" else None
    sampler = policy.SamplerConfig(eta=config.eta, exploration=expl)
    return _sweep(params, config, seed, round_tag, domain,
                  config.n_scenarios_collect, config.attempts_collect, sampler,
                  source="self", rollout_fn=rollout_fn)


# ---------------------------------------------------------------------------
# Training rounds
# ---------------------------------------------------------------------------

def train_initial(config: RunConfig, seed: int):
    """Demonstrations plus the starting policy trained on them."""
    key = RngKey(seed)
    demos = envs.gen_demos(config.env_name, config.n_demos, config.mode_mix,
                           key.child("demos"))
    lo, hi = policy.action_stats(demos)
    params = policy.init_policy(envs.obs_dim(config.env_name), 2, lo, hi,
                                key.child("init"))
    data = policy.build_training_set(demos, params)
    params = policy.train_policy(params, data, key.child("train", 0),
                                 iters=config.train_iters,
                                 batch_size=config.batch_size, lr=config.lr)
    return demos, params


def improve_round(prev_params, d_init, self_trials, config: RunConfig,
                  seed: int, round_tag: int):
    """Select from self-collected trials, then retrain for the fixed budget.

    Returns (new params, manifest dict). An empty kept set is not an error:
    training proceeds on the demonstrations alone and the manifest says so.
    """
    sel = config.selection
    kept = selection.select_trials(self_trials, sel)
    key = RngKey(seed).child("round", round_tag)

    groups = selection.group_by_scenario(self_trials)
    sr_rows = [{"scenario_id": int(sid),
                "successes": sum(1 for t in g if t.success),
                "attempts": len(g)}
               for sid, g in groups.items()]

    train_trajs = list(d_init) + kept
    weight_summary = None
    if sel.intra == "iql" and kept:
        values = selection.iql_fit(train_trajs, sel, key.child("iql"))
        train_trajs = selection.attach_segment_weights(
            train_trajs, values, prev_params.h, sel)
        all_w = np.concatenate([t.weights for t in train_trajs])
        weight_summary = {"min": float(all_w.min()), "mean": float(all_w.mean()),
                          "max": float(all_w.max())}

    if config.warm_start:
        params = prev_params
    else:
        params = policy.init_policy(
            envs.obs_dim(config.env_name), 2, prev_params.act_lo,
            prev_params.act_hi, key.child("reinit"),
            h=prev_params.h, h_exec=prev_params.h_exec)
    data = policy.build_training_set(train_trajs, params,
                                     drop_masked=(sel.mask_mode == "hard"))
    params = policy.train_policy(params, data, key.child("train"),
                                 iters=config.train_iters,
                                 batch_size=config.batch_size, lr=config.lr)

    manifest = {
        "round": round_tag,
        "seed": seed,
        "selection": asdict(sel),
        "n_self_trials": len(self_trials),
        "n_kept": len(kept),
        "kept_traj_ids": [t.traj_id for t in kept],
        "scenario_success_rates": sr_rows,
        "weights_summary": weight_summary,
        "trained_on_init_only": not kept,
        "warm_start": config.warm_start,
        "train_iters": config.train_iters,
    }
    return params, manifest


def _series_entry(report: EvalReport) -> dict:
    return {
        "round": report.round,
        "checkpoint_id": report.checkpoint_id,
        "overall_sr": report.overall_sr,
        "scenario_sr": report.scenario_sr,
        "mixed_fraction": report.mixed_fraction,
        "all_success_fraction": report.all_success_fraction,
        "zero_success_fraction": report.zero_success_fraction,
        "dispersion": report.dispersion,
    }


def _write_round(round_dir: Path, params, config_hash: str,
                 report: EvalReport, eval_trials,
                 collect_trials=None, manifest=None) -> None:
    round_dir.mkdir(parents=True, exist_ok=True)
    policy.save_checkpoint(params, round_dir / "checkpoint.json", config_hash)
    fileio.write_json(round_dir / "report.json", report.to_dict())
    fileio.write_jsonl(round_dir / "trials.jsonl",
                       [envs.traj_to_record(t) for t in eval_trials])
    if collect_trials is not None:
        fileio.write_jsonl(round_dir / "collect.jsonl",
                           [envs.traj_to_record(t) for t in collect_trials])
    if manifest is not None:
        fileio.write_json(round_dir / "manifest.json", manifest)


def run_seed(config: RunConfig, seed: int, out_dir: Path,
             log=print) -> list[EvalReport]:
    """All rounds for one seed; writes files as each round finishes."""
    cfg_hash = config.config_hash()
    seed_dir = out_dir / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    demos, params = train_initial(config, seed)
    fileio.write_jsonl(seed_dir / "demos.jsonl",
                       [envs.traj_to_record(t) for t in demos])
    log(f"  seed {seed}: initial policy trained "
        f"({time.perf_counter() - t0:.1f}s)")

    report, eval_trials = evaluate(params, config, seed, 0)
    _write_round(seed_dir / "round_0", params, cfg_hash, report, eval_trials)
    log(f"  seed {seed} round 0: SR {report.overall_sr:.3f} "
        f"(eval {report.wall_clock_sec:.1f}s)")
    reports = [report]

    for r in range(1, config.rounds + 1):
        self_trials = collect(params, config, seed, r)
        params, manifest = improve_round(params, demos, self_trials, config,
                                         seed, r)
        report, eval_trials = evaluate(params, config, seed, r)
        _write_round(seed_dir / f"round_{r}", params, cfg_hash, report,
                     eval_trials, self_trials, manifest)
        log(f"  seed {seed} round {r}: SR {report.overall_sr:.3f} "
            f"(kept {manifest['n_kept']}/{manifest['n_self_trials']})")
        reports.append(report)

    fileio.write_json(seed_dir / "series.json", {
        "seed": seed,
        "env_name": config.env_name,
        "rounds": [_series_entry(rep) for rep in reports],
    })
    return reports


_AGG_FIELDS = ("overall_sr", "scenario_sr", "mixed_fraction",
               "all_success_fraction", "zero_success_fraction", "dispersion")


def aggregate_reports(per_seed: dict[int, list[EvalReport]]) -> dict:
    seeds = sorted(per_seed)
    n_rounds = len(per_seed[seeds[0]])
    rounds = []
    for r in range(n_rounds):
        row: dict = {"round": per_seed[seeds[0]][r].round}
        for f in _AGG_FIELDS:
            vals = np.array([getattr(per_seed[s][r], f) for s in seeds])
            row[f + "_mean"] = float(vals.mean())
            row[f + "_std"] = float(vals.std())
        rounds.append(row)
    return {"seeds": list(seeds), "rounds": rounds}


def run_rounds(config: RunConfig, out_dir, log=print) -> dict:
    """Full experiment: every seed, every round, plus the aggregate file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {"config": config.to_dict(), "config_hash": config.config_hash()}
    fileio.write_json(out_dir / "config.json", resolved)
    per_seed: dict[int, list[EvalReport]] = {}
    for seed in config.seeds:
        log(f"seed {seed}:")
        per_seed[seed] = run_seed(config, seed, out_dir, log=log)
    agg = aggregate_reports(per_seed)
    fileio.write_json(out_dir / "aggregate.json", agg)
    return agg


# ---------------------------------------------------------------------------
# Diversity histogram and report verification
# ---------------------------------------------------------------------------

def diversity_histogram(trials, trials_per_scenario: int = 10) -> dict:
    """Counts of scenarios by number of successful attempts (0..n)."""
    groups = selection.group_by_scenario(trials)
    bins = [0] * (trials_per_scenario + 1)
    for sid, group in groups.items():
        if len(group) != trials_per_scenario:
            raise ValueError(
                f"scenario {sid} has {len(group)} trials, expected "
                f"{trials_per_scenario}")
        bins[sum(1 for t in group if t.success)] += 1
    n = len(groups)
    return {
        "trials_per_scenario": trials_per_scenario,
        "n_scenarios": n,
        "bins": bins,
        "all_or_nothing_fraction": (bins[0] + bins[-1]) / n if n else 0.0,
        "zero_success_fraction": bins[0] / n if n else 0.0,
    }


def verify_report(report_dict: dict, trials, env_name: str | None = None,
                  replay: bool = True) -> list[str]:
    """Recompute every report field from trials; also replay trajectories.

    Returns a list of problems (empty when the report is intact). Float
    fields must match exactly: both sides derive from the same integer
    tallies through the same arithmetic.
    """
    problems: list[str] = []
    env = env_name or report_dict.get("env_name")
    recomputed = compute_report(
        trials, report_dict.get("attempts", 0),
        report_dict.get("checkpoint_id", ""), env,
        report_dict.get("round", 0), report_dict.get("seed", 0),
        exploration=report_dict.get("exploration")).to_dict()
    for key, value in recomputed.items():
        if key not in report_dict:
            problems.append(f"missing field {key!r}")
        elif report_dict[key] != value:
            problems.append(
                f"field {key!r} mismatch: stored {report_dict[key]!r}, "
                f"recomputed {value!r}")
    if replay and env is not None:
        for traj in trials:
            problems.extend(envs.replay_trajectory(env, traj))
    return problems
