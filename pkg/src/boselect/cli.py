"""Command-line experiment driver.

Subcommands:
  select         run the configured selector for n_trials and write
                 regret_trace.csv, summary.json, distance_matrix.csv and
                 config_resolved.txt to the output directory
  verify-theory  run one of the randomized verification suites
                 (simulation-lemma, return-gap-bound, gp-oracle) and write
                 a JSON-lines report; exits nonzero on any violation
  ablate         sweep one design axis (alpha, rollout-length,
                 policy-source, acquisition) and write a long-format CSV

Every artifact is a pure function of the config file and the master seed:
reruns are byte-identical. Files are written via temp-and-rename.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .acquisition import AcquisitionConfig
from .candidates import CandidateConfig, CandidateSet, MdpShape, generate_candidate_set, true_returns
from .config import ConfigError, ExperimentConfig, load_config, resolved_text
from .distance import DistanceMatrix, distance_matrix_to_csv
from .envs import load_environment, make_gridworld
from .gp import FactorizationError
from .mdp import StateEmbedding, TabularMdp, ValueIterationError
from .offline_data import OfflineDataset, behavior_policy, generate_dataset
from .selection import (
    DistanceOptions,
    GpOptions,
    SelectionTrace,
    SelectorConfig,
    TraceRecord,
    normalized_regret,
    run_bo_selection,
    run_fqe_ope,
    run_random_selection,
    run_validation_baseline,
    summary_json,
    traces_to_csv,
)

SWEEPS = {
    "alpha": ("alpha", [0.1, 1.0, 10.0]),
    "rollout-length": ("rollout_length", [1, 5, 20]),
    "policy-source": (
        "policy_source",
        [
            "selected-model",
            "model-based-fixed",
            "model-free-empirical",
            "exploratory-random",
            "parameter-space",
        ],
    ),
    "acquisition": ("acquisition", ["gp-ucb", "random"]),
}

SUITES = ("simulation-lemma", "return-gap-bound", "gp-oracle")


def derive_seed(master: int, *tags: int) -> int:
    """Deterministic child seed from the master seed and stream tags."""
    return int(np.random.SeedSequence([master, *tags]).generate_state(1)[0])


def atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def build_environment(cfg: ExperimentConfig) -> tuple[TabularMdp, StateEmbedding]:
    if cfg.mdp_path:
        return load_environment(cfg.mdp_path)
    return make_gridworld(
        rows=cfg.grid_rows,
        cols=cfg.grid_cols,
        slip_prob=cfg.slip_prob,
        goal_reward=cfg.goal_reward,
        step_reward=cfg.step_reward,
        gamma=cfg.gamma,
    )


def build_problem(cfg: ExperimentConfig):
    """Environment, dataset, and candidate set from a resolved config."""
    true_mdp, embedding = build_environment(cfg)
    behavior = behavior_policy(true_mdp, cfg.behavior, cfg.epsilon)
    data = generate_dataset(
        true_mdp,
        behavior,
        n_transitions=cfg.n_transitions,
        horizon=cfg.dataset_horizon,
        seed=derive_seed(cfg.seed, 1),
        validation_fraction=cfg.validation_fraction,
        shuffle_split=cfg.shuffle_split,
    )
    cand_config = CandidateConfig(
        smoothing=cfg.smoothing,
        transition_noise=cfg.transition_noise,
        reward_noise_scale=cfg.reward_noise_scale,
        penalty_weight=cfg.penalty_weight,
        uncertainty_scale=cfg.uncertainty_scale,
    )
    cset = generate_candidate_set(
        data, MdpShape.of(true_mdp), cfg.n_candidates, seed=derive_seed(cfg.seed, 2),
        config=cand_config,
    )
    return true_mdp, embedding, behavior, data, cset


def selector_config(cfg: ExperimentConfig, trial_seed: int) -> SelectorConfig:
    return SelectorConfig(
        n_iterations=cfg.n_iterations,
        trajectories_per_eval=cfg.trajectories_per_eval,
        horizon=cfg.horizon,
        seed=trial_seed,
        noise_free=cfg.noise_free,
        acquisition=AcquisitionConfig(
            kind=cfg.acquisition,
            beta=cfg.beta,
            beta_schedule=cfg.beta_schedule,
            delta=cfg.ucb_delta,
            n_candidates=cfg.n_candidates,
            seed=derive_seed(trial_seed, 9),
            allow_reselect=cfg.allow_reselect,
        ),
        gp=GpOptions(
            fit_mode=cfg.lengthscale_mode,
            fixed_lengthscale=cfg.fixed_lengthscale,
            noise_variance=cfg.noise_variance,
        ),
        distance=DistanceOptions(
            alpha=cfg.alpha,
            norm=cfg.norm,
            rollout_length=cfg.rollout_length,
            n_rollouts=cfg.distance_rollouts,
            policy_source=cfg.policy_source,
            n_probe=cfg.n_probe,
            probe_seed=derive_seed(cfg.seed, 3),
            fixed_candidate=cfg.fixed_candidate,
        ),
    )


def _offline_pick_trace(index: int, cset: CandidateSet, true_mdp: TabularMdp) -> SelectionTrace:
    """One-record trace for the zero-budget baselines."""
    returns, j_star, _ = true_returns(cset, true_mdp)
    j_out = float(returns[index])
    record = TraceRecord(
        iteration=1,
        selected_index=index,
        mc_return=float("nan"),
        true_return=j_out,
        output_index=index,
        inference_regret=j_star - j_out,
        normalized_regret=normalized_regret(j_out, j_star),
    )
    return SelectionTrace(records=[record], budget_used=0)


def run_selector_trials(
    cfg: ExperimentConfig,
    true_mdp: TabularMdp,
    embedding: StateEmbedding,
    data: OfflineDataset,
    cset: CandidateSet,
) -> tuple[list[SelectionTrace], DistanceMatrix | None]:
    traces: list[SelectionTrace] = []
    last_matrix: DistanceMatrix | None = None
    if cfg.selector == "validation":
        index, _ = run_validation_baseline(cset, data)
        return [_offline_pick_trace(index, cset, true_mdp)], None
    if cfg.selector == "ope":
        index, _ = run_fqe_ope(cset, data, true_mdp.initial_dist)
        return [_offline_pick_trace(index, cset, true_mdp)], None
    for trial in range(cfg.n_trials):
        sel_cfg = selector_config(cfg, derive_seed(cfg.seed, 100, trial))
        if cfg.selector == "bo":
            artifacts: dict = {}
            trace = run_bo_selection(
                cset, true_mdp, data, embedding, sel_cfg, artifacts=artifacts
            )
            last_matrix = artifacts.get("distance_matrix")
        else:
            trace = run_random_selection(cset, true_mdp, sel_cfg)
        traces.append(trace)
    return traces, last_matrix


def cmd_select(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    os.makedirs(args.out, exist_ok=True)
    true_mdp, embedding, _, data, cset = build_problem(cfg)
    traces, matrix = run_selector_trials(cfg, true_mdp, embedding, data, cset)

    atomic_write(os.path.join(args.out, "regret_trace.csv"), traces_to_csv(traces))
    summary = summary_json(traces)
    summary["selector"] = cfg.selector
    summary["seed"] = cfg.seed
    atomic_write(
        os.path.join(args.out, "summary.json"),
        json.dumps(summary, sort_keys=True, indent=2) + "\n",
    )
    if matrix is not None:
        matrix_csv = distance_matrix_to_csv(matrix)
    else:
        matrix_csv = "\n".join(",".join(["nan"] * len(cset)) for _ in range(len(cset))) + "\n"
    atomic_write(os.path.join(args.out, "distance_matrix.csv"), matrix_csv)
    atomic_write(os.path.join(args.out, "config_resolved.txt"), resolved_text(cfg))
    return 0


def _theory_suite_lines(suite: str, n: int, seed: int) -> tuple[list[str], int]:
    from . import theory

    lines: list[str] = []
    violations = 0
    for i in range(n):
        instance_seed = derive_seed(seed, i)
        if suite == "simulation-lemma":
            m1, m2, pol = theory.random_simulation_lemma_instance(instance_seed)
            lhs, rhs, gap = theory.simulation_lemma_check(m1, m2, pol)
            ok = gap <= 1e-8
            payload = {"instance": i, "lhs": lhs, "rhs": rhs, "gap": gap, "pass": ok}
        elif suite == "return-gap-bound":
            true_mdp, ma, mb, behavior, embedding = theory.random_bound_instance(instance_seed)
            try:
                report = theory.return_gap_bound(true_mdp, ma, mb, behavior, embedding)
            except theory.PremiseViolationError:
                payload = {"instance": i, "premise_violated": True, "pass": True}
                lines.append(json.dumps(payload, sort_keys=True))
                continue
            ok = report.slack >= -1e-8
            payload = {
                "instance": i,
                "premise_violated": False,
                "lhs": report.lhs,
                "term_a1_a2": report.term_a1_a2,
                "term_a3": report.term_a3,
                "rhs": report.rhs,
                "slack": report.slack,
                "lipschitz_L": report.lipschitz_L,
                "epsilon_beta": report.epsilon_beta,
                "pass": ok,
            }
        elif suite == "gp-oracle":
            deviation = theory.gp_conditioning_check(instance_seed)
            ok = bool(deviation <= 1e-8)
            payload = {"instance": i, "max_deviation": deviation, "pass": ok}
        else:
            raise ConfigError(f"unknown suite {suite!r}")
        if not ok:
            violations += 1
        lines.append(json.dumps(payload, sort_keys=True))
    return lines, violations


def cmd_verify_theory(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"suite must be one of {', '.join(SUITES)}")
    os.makedirs(args.out, exist_ok=True)
    lines, violations = _theory_suite_lines(args.suite, args.n, args.seed)
    atomic_write(
        os.path.join(args.out, f"{args.suite}_report.jsonl"), "\n".join(lines) + "\n"
    )
    print(f"{args.suite}: {args.n} instances, {violations} violations")
    return 0 if violations == 0 else 1


def cmd_ablate(args) -> int:
    if args.sweep not in SWEEPS:
        raise ConfigError(f"sweep must be one of {', '.join(SWEEPS)}")
    cfg = load_config(args.config)
    os.makedirs(args.out, exist_ok=True)
    key, values = SWEEPS[args.sweep]

    header = (
        "sweep,value,trial,iteration,selected,mc_return,true_return,"
        "output_index,inference_regret,normalized_regret"
    )
    rows = [header]
    for value in values:
        cell = replace(cfg, **{key: value}, selector="bo")
        cell.validate()
        true_mdp, embedding, _, data, cset = build_problem(cell)
        traces, _ = run_selector_trials(cell, true_mdp, embedding, data, cset)
        for trial, trace in enumerate(traces):
            for rec in trace.records:
                rows.append(
                    f"{args.sweep},{value},{trial},{rec.iteration},{rec.selected_index},"
                    f"{rec.mc_return!r},{rec.true_return!r},{rec.output_index},"
                    f"{rec.inference_regret!r},{rec.normalized_regret!r}"
                )
        atomic_write(
            os.path.join(args.out, f"config_resolved_{args.sweep}_{value}.txt"),
            resolved_text(cell),
        )
    atomic_write(os.path.join(args.out, f"ablate_{args.sweep}.csv"), "\n".join(rows) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="boselect",
        description="Active model selection experiments on exact tabular MDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_select = sub.add_parser("select", help="run the configured selector")
    p_select.add_argument("--config", required=True)
    p_select.add_argument("--out", required=True)
    p_select.add_argument("--seed", type=int, default=None)
    p_select.set_defaults(fn=cmd_select)

    p_verify = sub.add_parser("verify-theory", help="run a verification suite")
    p_verify.add_argument("--suite", required=True, choices=SUITES)
    p_verify.add_argument("--n", type=int, default=100)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", required=True)
    p_verify.set_defaults(fn=cmd_verify_theory)

    p_ablate = sub.add_parser("ablate", help="sweep one design axis")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--sweep", required=True, choices=sorted(SWEEPS))
    p_ablate.add_argument("--out", required=True)
    p_ablate.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FactorizationError, ValueIterationError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
