"""Experiment orchestration: attack scenarios, sweeps, probes, reports.

Everything here is a pure function of (config, seed); wall-clock timings
are the only nondeterministic outputs and go to separate files.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import anomaly as an
from . import collaboration as co
from . import crypto
from .config import ExperimentConfig
from .datasets import FederatedDataset, generate
from .errors import InputError
from .federation import (
    FederationConfig,
    FederationResult,
    check_convergence,
    federated_average,
    format_metrics_csv,
    run_training,
)
from .models import (
    ALL,
    COMMON,
    PRIVATE,
    LayeredModel,
    apply_param_views,
    extract_params,
    flat_params,
    init_layered_model,
    split_flat_params,
)


def build_dataset(cfg: ExperimentConfig, seed: int | None = None, world_seed: int | None = None) -> FederatedDataset:
    ds = cfg.dataset
    return generate(
        num_clients=ds.num_clients,
        num_classes=ds.num_classes,
        samples_per_client=ds.samples_per_client,
        dirichlet_alpha=ds.dirichlet_alpha,
        detection_size=ds.detection_size,
        seed=cfg.seed if seed is None else seed,
        feature_dim=ds.feature_dim,
        test_size=ds.test_size,
        num_edge_nodes=ds.num_edge_nodes,
        cluster_std=ds.cluster_std,
        cluster_spread=ds.cluster_spread,
        world_seed=world_seed,
    )


def _federation_config(
    cfg: ExperimentConfig, seed: int, epochs: int | None = None, aggregate_all: bool = False
) -> FederationConfig:
    f = cfg.federation
    return FederationConfig(
        num_clients=f.num_clients,
        epochs=f.epochs if epochs is None else epochs,
        lr_min=f.lr_min,
        lr_max=f.lr_max,
        adapt_min=f.adapt_min,
        adapt_max=f.adapt_max,
        comp_min=f.comp_min,
        comp_max=f.comp_max,
        comp_threshold=f.comp_threshold,
        local_steps_per_round=f.local_steps_per_round,
        aggregate_all_layers=aggregate_all,
        seed=seed,
    )


def _rebuild_with_flat(model: LayeredModel, flat: np.ndarray) -> LayeredModel:
    return apply_param_views(model, split_flat_params(flat, model, ALL))


def noise_attacker(attack: an.AttackSpec, base_seed: int):
    """Per-round upload attack: perturb the trained parameters of target devices.

    The noise scale is calibrated against the honest cohort of the same round.
    """

    def transform(round_index, cid, model, cohort):
        if cid not in attack.targets:
            return model
        honest = [flat_params(m, ALL) for j, m in enumerate(cohort) if j not in attack.targets]
        std = an.benign_spread(honest) if honest else 0.0
        attacked = an.inject_param_attack(
            flat_params(model, ALL), attack, std, seed=(base_seed * 1_000_003 + round_index * 1_009 + cid)
        )
        return _rebuild_with_flat(model, attacked)

    return transform


def frozen_attacker(attack: an.AttackSpec, init_model: LayeredModel, base_seed: int):
    """Upload attack that freezes target devices at perturbed initial weights.

    The perturbation is built once, on the first round, from the honest
    cohort's spread in that round; afterwards the upload never changes.
    """
    state: dict[int, LayeredModel] = {}

    def transform(round_index, cid, model, cohort):
        if cid not in attack.targets:
            return model
        if cid not in state:
            honest = [flat_params(m, ALL) for j, m in enumerate(cohort) if j not in attack.targets]
            std = an.benign_spread(honest) if honest else 0.0
            attacked = an.inject_param_attack(
                flat_params(init_model, ALL), attack, std, seed=(base_seed * 1_000_003 + cid)
            )
            state[cid] = _rebuild_with_flat(init_model, attacked)
        return state[cid]

    return transform


@dataclass
class DivergenceRuns:
    """Aligned layered and classical runs plus their per-round distance triples."""

    layered: FederationResult
    classical: FederationResult
    trace: list[tuple[float, float, float]]


def divergence_experiment(
    cfg: ExperimentConfig,
    seed: int,
    epochs: int | None = None,
    attack: an.AttackSpec | None = None,
) -> DivergenceRuns:
    """Run layered and all-layer federations from identical init and data.

    With an attack, target devices upload frozen perturbed weights and are
    excluded from training in both runs.
    """
    dataset = build_dataset(cfg, seed)
    specs = cfg.layer_specs()
    results = {}
    for mode_name, aggregate_all in (("layered", False), ("classical", True)):
        fed_cfg = _federation_config(cfg, seed, epochs=epochs, aggregate_all=aggregate_all)
        transform = None
        skip = frozenset()
        if attack is not None:
            init_model = init_layered_model(specs, fed_cfg.seed)
            transform = frozen_attacker(attack, init_model, seed)
            skip = frozenset(attack.targets)
        results[mode_name] = run_training(
            fed_cfg,
            dataset,
            specs,
            skip_training=skip,
            upload_transform=transform,
            record_uploads=True,
        )
    layered, classical = results["layered"], results["classical"]
    trace = an.layer_divergence_trace(
        [r.common for r in layered.trace],
        [r.full for r in classical.trace],
        [r.private for r in layered.trace],
    )
    return DivergenceRuns(layered, classical, trace)


def format_divergence_csv(trace: Sequence[tuple[float, float, float]]) -> str:
    """Render a per-round (d_c, d_ce, d_p) trace as CSV."""
    lines = ["round,d_c,d_ce,d_p"]
    for i, (d_c, d_ce, d_p) in enumerate(trace, start=1):
        lines.append(f"{i},{d_c!r},{d_ce!r},{d_p!r}")
    return "\n".join(lines) + "\n"


def margin_experiment(cfg: ExperimentConfig, seed: int, attack: an.AttackSpec, epochs: int | None = None):
    """Per-round deviation ratios (common, full, private) for one frozen attacker."""
    targets = sorted(attack.targets)
    if len(targets) != 1:
        raise InputError("margin experiment expects exactly one target device")
    runs = divergence_experiment(cfg, seed, epochs=epochs, attack=attack)
    ratios = an.detection_margin(
        [r.common for r in runs.layered.trace],
        [r.full for r in runs.classical.trace],
        [r.private for r in runs.layered.trace],
        targets[0],
    )
    return runs, ratios


@dataclass
class DetectionRound:
    round: int
    flagged: set[int]
    verified: set[int]
    control_flagged: set[int]
    latency_ms: float
    control_latency_ms: float


@dataclass
class DetectionOutcome:
    seed: int
    attackers: set[int]
    rounds: list[DetectionRound]
    result: FederationResult | None = field(repr=False, default=None)
    reports: list[an.AnomalyReport] = field(repr=False, default_factory=list)

    def micro_counts(self, which: str = "flagged"):
        """(tp, fp, fn) accumulated over all rounds for the chosen detector output."""
        tp = fp = fn = 0
        for r in self.rounds:
            chosen = {"flagged": r.flagged, "verified": r.verified, "control": r.control_flagged}[which]
            tp += len(chosen & self.attackers)
            fp += len(chosen - self.attackers)
            fn += len(self.attackers - chosen)
        return tp, fp, fn


def precision_recall(tp: int, fp: int, fn: int):
    precision = tp / (tp + fp) if tp + fp else float("nan")
    recall = tp / (tp + fn) if tp + fn else float("nan")
    return precision, recall


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def detection_experiment(
    cfg: ExperimentConfig,
    seed: int,
    attack: an.AttackSpec,
    epochs: int = 20,
    frozen: bool = True,
) -> DetectionOutcome:
    """Train under attack and screen every round's uploads.

    The screening detector sees common layers; the z-score control sees the
    full parameter vectors of the same uploads.
    """
    dataset = build_dataset(cfg, seed)
    specs = cfg.layer_specs()
    fed_cfg = _federation_config(cfg, seed, epochs=epochs)
    template = init_layered_model(specs, fed_cfg.seed)
    if frozen:
        transform = frozen_attacker(attack, template, seed)
        skip = frozenset(attack.targets)
    else:
        transform = noise_attacker(attack, seed)
        skip = frozenset()
    result = run_training(
        fed_cfg, dataset, specs, skip_training=skip, upload_transform=transform, record_uploads=True
    )
    det_x, det_y = dataset.detection_sets[0]
    rounds = []
    reports = []
    for idx, ups in enumerate(result.trace, start=1):
        batch = an.UploadBatch(
            node_id=0,
            device_ids=list(range(fed_cfg.num_clients)),
            common_views=[split_flat_params(c, template, COMMON) for c in ups.common],
            private_views=[split_flat_params(p, template, PRIVATE) for p in ups.private],
        )
        t0 = time.perf_counter()
        report = an.run_detection(
            batch,
            template,
            det_x,
            det_y,
            theta=cfg.anomaly.theta,
            beta_poison=cfg.anomaly.beta_poison,
            mode=cfg.anomaly.mode,
        )
        latency_ms = (time.perf_counter() - t0) * 1e3
        t1 = time.perf_counter()
        control = an.zscore_flags(ups.full, cfg.anomaly.z_threshold)
        control_ms = (time.perf_counter() - t1) * 1e3
        rounds.append(
            DetectionRound(idx, set(report.flagged), set(report.verified_poisoners), control, latency_ms, control_ms)
        )
        reports.append(report)
    return DetectionOutcome(seed, set(attack.targets), rounds, result, reports)


def detection_suite(
    cfg: ExperimentConfig,
    attack_grid: Sequence[an.AttackSpec],
    seeds: Sequence[int] = (0,),
    epochs: int = 20,
    detectors: Sequence[str] = ("common_layer", "zscore_full"),
):
    """Precision/recall/latency table over an attack grid.

    One row per (attack, seed, detector).  With no attackers in a cell,
    precision and recall are reported as None and the false-positive rate
    carries the signal instead.  Latency values are wall-clock and therefore
    not part of the deterministic outputs.
    """
    if not attack_grid:
        raise InputError("empty attack grid")
    known = {"common_layer", "zscore_full"}
    if not set(detectors) <= known:
        raise InputError(f"detectors must be within {sorted(known)}")
    rows = []
    for cell, attack in enumerate(attack_grid):
        for seed in seeds:
            outcome = detection_experiment(cfg, seed, attack, epochs=epochs)
            n_devices = cfg.federation.num_clients
            for detector in detectors:
                which = "flagged" if detector == "common_layer" else "control"
                tp, fp, fn = outcome.micro_counts(which)
                precision, recall = precision_recall(tp, fp, fn)
                honest_slots = (n_devices - len(outcome.attackers)) * len(outcome.rounds)
                latencies = [
                    r.latency_ms if detector == "common_layer" else r.control_latency_ms for r in outcome.rounds
                ]
                rows.append(
                    {
                        "cell": cell,
                        "kind": attack.kind,
                        "delta_scale": attack.delta_scale,
                        "num_attackers": len(outcome.attackers),
                        "seed": seed,
                        "detector": detector,
                        "precision": None if np.isnan(precision) else precision,
                        "recall": None if np.isnan(recall) else recall,
                        "f1": f1_score(tp, fp, fn),
                        "false_positive_rate": fp / honest_slots if honest_slots else None,
                        "mean_latency_ms": float(np.mean(latencies)),
                    }
                )
    return rows


def collaboration_sweep(
    cfg: ExperimentConfig,
    counts: Sequence[int],
    seeds: Sequence[int],
    epochs: int = 20,
    num_cohorts: int = 256,
):
    """Mean final consensus accuracy per ensemble size.

    For each (seed, count) the accuracy is the mean over member cohorts of
    that size, so the estimate reflects the ensemble size rather than which
    particular clients were picked: all subsets when there are at most
    ``num_cohorts`` of them, otherwise ``num_cohorts`` seeded random draws.
    Returns ``(rows, summary)`` where rows carry one (count, seed, accuracy)
    entry each and summary maps count to the mean accuracy across seeds.
    """
    from itertools import combinations
    from math import comb

    if not counts:
        raise InputError("no ensemble sizes requested")
    if any(k < 1 or k > cfg.federation.num_clients for k in counts):
        raise InputError("ensemble sizes must be within [1, num_clients]")
    rows = []
    by_count: dict[int, list[float]] = {k: [] for k in counts}
    for seed in seeds:
        dataset = build_dataset(cfg, seed)
        fed_cfg = _federation_config(cfg, seed, epochs=epochs)
        result = run_training(fed_cfg, dataset, cfg.layer_specs())
        test_x, test_y = dataset.shared_test
        n = len(result.client_models)
        # member probabilities cached once; subset consensus reuses them
        from .models import forward

        member_probs = [forward(m, test_x) for m in result.client_models]
        for k in counts:
            if comb(n, k) <= num_cohorts:
                cohorts = list(combinations(range(n), k))
            else:
                cohort_rng = np.random.default_rng([seed, k, 0xC0407])
                cohorts = [tuple(int(i) for i in cohort_rng.choice(n, size=k, replace=False)) for _ in range(num_cohorts)]
            accs = []
            for members in cohorts:
                acc_probs = np.zeros_like(member_probs[0])
                for i in members:
                    acc_probs = acc_probs + member_probs[i]
                preds = np.argmax(acc_probs / len(members), axis=1)
                accs.append(float(np.mean(preds == test_y)))
            acc = float(np.mean(accs))
            rows.append({"count": k, "seed": seed, "accuracy": acc})
            by_count[k].append(acc)
    summary = {k: float(np.mean(v)) for k, v in by_count.items()}
    return rows, summary


def _dominant_labels(dataset: FederatedDataset) -> np.ndarray:
    return np.array(
        [
            int(np.argmax(np.bincount(labels, minlength=dataset.num_classes)))
            for _, labels in dataset.client_partitions
        ]
    )


def _train_probe(train_x, train_y, test_x, test_y, num_classes: int, seed: int) -> float:
    """Linear softmax probe trained by full-batch descent; returns test accuracy."""
    from .models import accuracy, convex_specs, loss_and_gradient, sgd_step

    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0) + 1e-12
    tr = (train_x - mean) / std
    te = (test_x - mean) / std
    model = init_layered_model(convex_specs(tr.shape[1], num_classes), seed)
    for _ in range(300):
        _, grads = loss_and_gradient(model, tr, train_y)
        model = sgd_step(model, grads, 0.5)
    return accuracy(model, te, test_y)


@dataclass
class PrivacyProbeResult:
    probe_accuracy_common: float
    probe_accuracy_full: float
    chance: float

    @property
    def privacy_loss_common(self) -> float:
        return self.probe_accuracy_common - self.chance

    @property
    def privacy_loss_full(self) -> float:
        return self.probe_accuracy_full - self.chance


def privacy_probe_experiment(
    cfg: ExperimentConfig, seed: int, epochs: int = 20, num_shadow: int = 3
) -> PrivacyProbeResult:
    """Label-inference probe on shared updates: layered vs full-model sharing.

    Shadow-cohort methodology: the probe trains on per-(client, round)
    shared updates from shadow federations over the same data world but
    fresh client partitions and initializations, then predicts the dominant
    training class of the target federation's clients from their updates.
    Chance is the majority dominant-label frequency of the target cohort.
    """
    specs = cfg.layer_specs()

    def cohort_updates(run_seed: int, aggregate_all: bool):
        dataset = build_dataset(cfg, run_seed, world_seed=seed)
        fed_cfg = _federation_config(cfg, run_seed, epochs=epochs, aggregate_all=aggregate_all)
        result = run_training(fed_cfg, dataset, specs, record_uploads=True)
        dominant = _dominant_labels(dataset)
        samples = [u for ups in result.trace for u in ups.update_shared]
        labels = [dominant[cid] for ups in result.trace for cid in range(len(ups.update_shared))]
        return np.stack(samples), np.array(labels)

    shadow_seeds = [(seed + 1) * 1_000_003 + s for s in range(num_shadow)]
    modes = {}
    target_labels = None
    for name, aggregate_all in (("common", False), ("full", True)):
        parts = [cohort_updates(s, aggregate_all) for s in shadow_seeds]
        train_x = np.vstack([x for x, _ in parts])
        train_y = np.concatenate([y for _, y in parts])
        test_x, test_y = cohort_updates(seed, aggregate_all)
        target_labels = test_y
        modes[name] = _train_probe(train_x, train_y, test_x, test_y, cfg.dataset.num_classes, seed)
    counts = np.bincount(target_labels, minlength=cfg.dataset.num_classes)
    chance = float(counts.max() / counts.sum())
    return PrivacyProbeResult(modes["common"], modes["full"], chance)


@dataclass
class EncryptedRoundCheck:
    max_abs_error: float
    bound: float
    security: float
    plaintext_bytes: int
    ciphertext_bytes: int


def encrypted_aggregation_check(cfg: ExperimentConfig, result: FederationResult) -> EncryptedRoundCheck:
    """Transport the final round's common layers encrypted and compare to plaintext.

    Returns the worst per-parameter deviation of the decrypted mean from the
    plaintext federated average, the theoretical bound N * 2^-scale_bits, and
    the session security metric.
    """
    enc = cfg.encryption
    kp = crypto.keygen(enc.key_bits, cfg.seed)
    codec = crypto.FixedPointCodec(enc.scale_bits, enc.clamp_range)
    rng = random.Random(cfg.seed ^ 0xE9C)
    models = result.client_models
    plain = federated_average(models, COMMON)
    max_err = 0.0
    plaintext_bytes = 0
    ciphertext_bytes = 0
    for layer_idx, target in enumerate(plain):
        ciphers = []
        for m in models:
            view = extract_params(m, COMMON)[layer_idx]
            cipher = crypto.sec_trans(view, kp.public, codec, rng)
            ciphertext_bytes += len(crypto.serialize_cipher(cipher))
            plaintext_bytes += view.values.size * 8
            ciphers.append(cipher)
        total = crypto.hom_aggregate(ciphers, kp.public)
        mean = crypto.decrypt_mean(total, kp.secret)
        max_err = max(max_err, float(np.max(np.abs(mean - target.values))))
    security = crypto.security_metric(
        crypto.enc_strength(enc.key_bits),
        min(plaintext_bytes / ciphertext_bytes, 1.0),
        enc.gamma,
    )
    bound = len(models) * 2.0 ** (-enc.scale_bits)
    return EncryptedRoundCheck(max_err, bound, security, plaintext_bytes, ciphertext_bytes)


def collaboration_rows(cfg: ExperimentConfig, result: FederationResult, dataset: FederatedDataset):
    """Per-round collaboration metrics as CSV extra rows.

    Client rows carry the learning-enhancement sum; GLOBAL rows carry
    consensus accuracy, mean pairwise common-layer compatibility, and one
    resilience value per common layer (from the aggregated layer history,
    available from round 2 on).  Requires an upload trace; returns
    ``(rows, extra_columns)``.
    """
    from .models import accuracy

    if not result.trace:
        return [], []
    test_x, test_y = dataset.shared_test
    n = len(result.client_models)
    template = result.client_models[0]
    common_templates = extract_params(template, COMMON)
    sizes = [v.values.size for v in common_templates]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    res_columns = [f"resilience_{v.layer_name}" for v in common_templates]
    samples_per_round = [dataset.client_partitions[i][1].size for i in range(n)]
    losses = [m.lyapunov_value for m in result.metrics]
    params = co.ResilienceParams(cfg.collaboration.beta_resilience)
    mean_histories: list[list[np.ndarray]] = [[] for _ in common_templates]

    rows = []
    for r_idx, ups in enumerate(result.trace, start=1):
        models = [
            apply_param_views(
                template,
                split_flat_params(c, template, COMMON) + split_flat_params(p, template, PRIVATE),
            )
            for c, p in zip(ups.common, ups.private)
        ]
        experience = co.experience_profile([s * r_idx for s in samples_per_round])
        profiles = [
            co.ModelProfile(
                model_id=i,
                experience=experience[i],
                expertise=accuracy(models[i], test_x, test_y),
                alpha_exp=cfg.collaboration.alpha_exp,
                beta_expertise=cfg.collaboration.beta_expertise,
            )
            for i in range(n)
        ]
        client_views = [extract_params(m, COMMON) for m in models]

        def layer_compat(layer_idx: int) -> float:
            values = [
                co.compatibility(client_views[i][layer_idx], client_views[j][layer_idx])
                for i in range(n)
                for j in range(i + 1, n)
            ]
            return float(np.mean(values)) if values else 1.0

        compat_per_layer = [layer_compat(i) for i in range(len(common_templates))]
        mean_compat = float(np.mean(compat_per_layer)) if compat_per_layer else 1.0
        for li in range(len(common_templates)):
            mean_histories[li].append(
                np.mean([c[offsets[li] : offsets[li + 1]] for c in ups.common], axis=0)
            )

        for i, profile in enumerate(profiles):
            peers = [p for p in profiles if p.model_id != i]
            rows.append({"round": r_idx, "client_id": i, "lambda": repr(co.learning_enhancement(profile, peers))})
        global_row = {
            "round": r_idx,
            "client_id": "GLOBAL",
            "consensus_accuracy": repr(co.consensus_accuracy(models, test_x, test_y)),
            "mean_compatibility": repr(mean_compat),
        }
        if r_idx >= 2:
            for li, view in enumerate(common_templates):
                value = co.resilience(mean_histories[li], losses[:r_idx], params, compat_per_layer[li])
                global_row[f"resilience_{view.layer_name}"] = repr(float(value))
        rows.append(global_row)
    columns = ["lambda", "consensus_accuracy", "mean_compatibility"] + res_columns
    return rows, columns


def run_experiment(cfg: ExperimentConfig, out_dir=None, plots: bool = False) -> dict:
    """Run the configured training experiment and write all artifacts.

    Writes rounds.csv, summary.json, detection_report.txt (when the config
    names attack targets), placement_plan.txt (when a placement instance is
    configured), and timing.txt.  All outputs except timing.txt are
    byte-deterministic under (config, code version).  Returns the summary.
    """
    t_start = time.perf_counter()
    out = Path(cfg.out_dir if out_dir is None else out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset = build_dataset(cfg)
    specs = cfg.layer_specs()
    fed_cfg = _federation_config(cfg, cfg.seed)
    attack = cfg.anomaly.attack.to_spec() if cfg.anomaly.attack.targets else None

    detection_summary = None
    detection_rounds = None
    if attack is not None and attack.kind in (an.PARAM_NOISE, an.PARAM_SCALE):
        outcome = detection_experiment(cfg, cfg.seed, attack, epochs=fed_cfg.epochs)
        run = outcome.result
        tp, fp, fn = outcome.micro_counts("flagged")
        precision, recall = precision_recall(tp, fp, fn)
        ctp, cfp, cfn = outcome.micro_counts("control")
        detection_summary = {
            "attackers": sorted(outcome.attackers),
            "precision": precision,
            "recall": recall,
            "f1": f1_score(tp, fp, fn),
            "control_f1": f1_score(ctp, cfp, cfn),
        }
        detection_rounds = outcome.rounds
        (out / "detection_report.txt").write_text("".join(an.report_text(rep) for rep in outcome.reports))
        (out / "detection_timing.txt").write_text(
            "".join(f"round {r.round} latency_ms {r.latency_ms:.3f}\n" for r in outcome.rounds)
        )
    else:
        run = run_training(fed_cfg, dataset, specs, record_uploads=True)

    collab_rows, collab_columns = collaboration_rows(cfg, run, dataset)
    (out / "rounds.csv").write_text(format_metrics_csv(run.metrics, collab_columns, collab_rows))

    history = run.loss_history()
    verdict = check_convergence(history, epsilon=1e-4, window=5) if len(history) >= 6 else None

    summary = {
        "seed": cfg.seed,
        "epochs": fed_cfg.epochs,
        "num_clients": fed_cfg.num_clients,
        "final_lyapunov": history[-1],
        "final_test_accuracy": run.metrics[-1].global_test_accuracy,
        "convergence": verdict,
        "detection": detection_summary,
    }

    if cfg.encryption.enabled:
        enc_check = encrypted_aggregation_check(cfg, run)
        summary["encryption"] = {
            "max_abs_error": enc_check.max_abs_error,
            "error_bound": enc_check.bound,
            "security_metric": enc_check.security,
        }

    if cfg.placement_path:
        from .placement import load_problem, save_plan, solve_exact

        plan = solve_exact(load_problem(cfg.placement_path))
        save_plan(plan, out / "placement_plan.txt")
        summary["placement_objective"] = plan.objective
        summary["placement_feasible"] = plan.feasible

    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "timing.txt").write_text(f"wall_seconds {time.perf_counter() - t_start:.3f}\n")
    if plots:
        emit_plots(run, out, detection_rounds)
    return summary


def emit_plots(result: FederationResult, out: Path, detection_rounds=None) -> None:
    """Optional line charts: accuracy and lyapunov per round, flags per round."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rounds = [m.round for m in result.metrics]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(rounds, [m.global_test_accuracy for m in result.metrics], marker="o", ms=2)
    axes[0].set_xlabel("round")
    axes[0].set_ylabel("test accuracy")
    axes[1].plot(rounds, [m.lyapunov_value for m in result.metrics], marker="o", ms=2)
    axes[1].set_xlabel("round")
    axes[1].set_ylabel("lyapunov value")
    fig.tight_layout()
    fig.savefig(out / "training_curves.png", dpi=120)
    plt.close(fig)
    if detection_rounds:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot([r.round for r in detection_rounds], [len(r.flagged) for r in detection_rounds], marker="o", ms=3)
        ax.plot([r.round for r in detection_rounds], [len(r.verified) for r in detection_rounds], marker="s", ms=3)
        ax.legend(["flagged", "verified"])
        ax.set_xlabel("round")
        ax.set_ylabel("devices")
        fig.tight_layout()
        fig.savefig(out / "detection_curve.png", dpi=120)
        plt.close(fig)
