"""Phase orchestration behind the CLI.

Every phase reads the validated RunConfig, derives its own seed stream
from the run seed, writes artifacts under the run directory, appends
metric rows to results.jsonl, and registers itself in the manifest. The
manifest and results files contain no wall-clock data, so a (config,
seed) pair reproduces them byte for byte; timing lives in checkpoint
provenance only.

Ground-truth mixture parameters are touched only by explicitly-marked
oracle paths (evaluation, audit, attacks); erasure training consumes
points and flags alone.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import adversary, dataio, diffusion, erasure, metrics
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataio import canonical_json
from .infotheory import leakage_audit
from .report import emit_report
from .results import ResultsRow, append_rows, read_rows


def run_dir_of(cfg: RunConfig, out_override: str | None = None) -> str:
    return out_override or cfg["output_dir"]


def prepare_run_dir(cfg: RunConfig, out_override: str | None = None) -> str:
    run_dir = run_dir_of(cfg, out_override)
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    norm = os.path.join(run_dir, "config.normalized.yaml")
    with open(norm, "w") as f:
        f.write(cfg.normalized_dump())
    return run_dir


def _manifest_path(run_dir: str) -> str:
    return os.path.join(run_dir, "manifest.json")


def update_manifest(run_dir: str, cfg: RunConfig, phase: str, artifacts) -> None:
    path = _manifest_path(run_dir)
    manifest = {"run_id": cfg.run_id, "config_digest": cfg.digest(),
                "phases": [], "artifacts": []}
    if os.path.exists(path):
        with open(path) as f:
            manifest = json.load(f)
    rel = [os.path.relpath(a, run_dir) for a in artifacts]
    manifest["artifacts"] = sorted(set(manifest["artifacts"]) | set(rel))
    if phase not in manifest["phases"]:
        manifest["phases"].append(phase)
    manifest["run_id"] = cfg.run_id
    manifest["config_digest"] = cfg.digest()
    with open(path, "w") as f:
        f.write(canonical_json(manifest))


def _rows(cfg: RunConfig, phase: str, pairs, slack=None, inputs_digest="") -> list[ResultsRow]:
    return [ResultsRow(run_id=cfg.run_id, phase=phase, metric=m, value=float(v),
                       slack=slack, inputs_digest=inputs_digest)
            for m, v in pairs]


def _results_path(run_dir: str) -> str:
    return os.path.join(run_dir, "results.jsonl")


def dataset_path(run_dir: str) -> str:
    return os.path.join(run_dir, "dataset.json")


def ckpt_path(run_dir: str, name: str) -> str:
    return os.path.join(run_dir, "checkpoints", f"{name}.ckpt")


def phase_gen_data(cfg: RunConfig, run_dir: str) -> str:
    ds = dataio.gen_data(cfg.mixture(), cfg["dataset"]["n"],
                         cfg.derived_seed("gen-data"))
    path = dataset_path(run_dir)
    dataio.save_dataset(ds, path)
    update_manifest(run_dir, cfg, "gen-data", [path])
    return path


def _load_dataset(cfg: RunConfig, run_dir: str) -> dataio.LabeledDataset:
    path = dataset_path(run_dir)
    if not os.path.exists(path):
        phase_gen_data(cfg, run_dir)
    return dataio.load_dataset(path)


def _detector_for(cfg: RunConfig, ds: dataio.LabeledDataset, concept_index: int):
    """Concept detector on real training data; deterministic per run."""
    ev = cfg["evaluation"]
    rng = np.random.Generator(np.random.PCG64(cfg.derived_seed("detector", concept_index)))
    tr_pts, tr_flags, _, _ = ds.split(cfg["dataset"]["train_fraction"])
    return metrics.train_detector(
        tr_pts, tr_flags[:, concept_index], rng, hidden=tuple(ev["probe_hidden"]),
        steps=ev["probe_steps"], batch=ev["probe_batch"], lr=ev["probe_lr"],
    )


def phase_train_base(cfg: RunConfig, run_dir: str) -> str:
    ds = _load_dataset(cfg, run_dir)
    m = cfg["model"]
    model = diffusion.init_model(
        d=ds.mixture.dim, n_flags=len(ds.concept_names), hidden=m["hidden"],
        T=m["t_steps"], beta_min=m["beta_min"], beta_max=m["beta_max"],
        seed=cfg.derived_seed("init-model"),
    )
    rng = np.random.Generator(np.random.PCG64(cfg.derived_seed("train-base")))
    tr_pts, tr_flags, ev_pts, ev_flags = ds.split(cfg["dataset"]["train_fraction"])
    history = diffusion.train_base(
        model, tr_pts, tr_flags, steps=m["train_steps"],
        batch_size=m["batch_size"], lr=m["lr"], rng=rng,
        weight_decay=m["weight_decay"],
    )
    # freeze the evaluation constants against this base model (oracle path)
    ev_cfg = cfg["evaluation"]
    cal_rng = np.random.Generator(np.random.PCG64(cfg.derived_seed("calibrate")))
    constants = metrics.calibrate_alignment(model, ds.mixture,
                                            ev_cfg["eval_samples"], cal_rng)
    neutral_eval = ev_pts[ev_flags.max(axis=1) == 0]
    gen_neutral = diffusion.sample(model, np.zeros(model.n_flags), cal_rng,
                                   ev_cfg["eval_samples"])
    constants["fd2_orig"] = metrics.frechet_distance(
        metrics.fit_gaussian(gen_neutral), metrics.fit_gaussian(neutral_eval)
    )
    constants["align_orig"] = 100.0
    # mixed-flag fidelity against held-out real data (the pilot gate input)
    idx = cal_rng.integers(0, tr_flags.shape[0], size=ev_cfg["eval_samples"])
    gen_mixed = diffusion.sample(model, tr_flags[idx].astype(np.float64),
                                 cal_rng, ev_cfg["eval_samples"])
    fd2_all = metrics.frechet_distance(
        metrics.fit_gaussian(gen_mixed), metrics.fit_gaussian(ev_pts)
    )
    model.meta["eval_constants"] = constants
    model.meta["fd2_all"] = fd2_all

    path = ckpt_path(run_dir, "base")
    save_checkpoint(Checkpoint.create(cfg.data, model, command="train-base"), path)
    rows = _rows(cfg, "train-base", [
        ("loss_first100", float(history[:100].mean())),
        ("loss_last100", float(history[-100:].mean())),
        ("fd2_all_vs_holdout", fd2_all),
        ("fd2_neutral_orig", constants["fd2_orig"]),
        ("ll_base", constants["ll_base"]),
    ], inputs_digest=cfg.digest()[:12])
    append_rows(_results_path(run_dir), rows)
    update_manifest(run_dir, cfg, "train-base", [path, _results_path(run_dir)])
    return path


def phase_erase(cfg: RunConfig, run_dir: str, resume: str | None = None,
                stop_at: int | None = None) -> str:
    ds = _load_dataset(cfg, run_dir)
    tr_pts, tr_flags, _, _ = ds.split(cfg["dataset"]["train_fraction"])
    e_cfg = cfg.erasure_config(cfg.derived_seed("erase"), ds.concept_names)
    if resume is None:
        base = load_checkpoint(ckpt_path(run_dir, "base")).to_model()
        model, report, state = erasure.run_erasure(
            base, tr_pts, tr_flags, e_cfg, stop_iteration=stop_at
        )
    else:
        ck = load_checkpoint(resume)
        state = ck.to_erasure_state()
        e_cfg = ck.erasure_cfg()
        model, report, state = erasure.run_erasure(
            state.model, tr_pts, tr_flags, e_cfg, resume=state,
            stop_iteration=stop_at,
        )
    start = 0 if resume is None else load_checkpoint(resume).payload["erasure"]["iteration"]
    path = ckpt_path(run_dir, "erased")
    save_checkpoint(
        Checkpoint.create(cfg.data, model, command="erase",
                          erasure_state=state, erasure_cfg=e_cfg),
        path,
    )
    pairs = []
    for i in range(start, report.iterations):
        pairs.extend([
            (f"l_adv[{i}]", report.l_adv[i]),
            (f"l_traj[{i}]", report.l_traj[i]),
            (f"l_total[{i}]", report.l_total[i]),
            (f"disc_loss[{i}]", report.disc_loss[i]),
        ])
    pairs.extend((f"mi_probe[{i}]", v) for i, v in report.mi_trace if i > start)
    if np.isfinite(report.final_probe_acc):
        pairs.append(("final_probe_acc", report.final_probe_acc))
    append_rows(_results_path(run_dir),
                _rows(cfg, "erase", pairs, inputs_digest=cfg.digest()[:12]))
    update_manifest(run_dir, cfg, "erase", [path, _results_path(run_dir)])
    return path


def phase_evaluate(cfg: RunConfig, run_dir: str, which: str = "erased") -> metrics.EvalReport:
    ds = _load_dataset(cfg, run_dir)
    model = load_checkpoint(ckpt_path(run_dir, which)).to_model()
    constants = model.meta.get("eval_constants")
    if not constants:
        raise dataio.DataError("checkpoint carries no evaluation constants")
    concept_index = ds.concept_names.index(cfg["erasure"]["targets"][0])
    detector = _detector_for(cfg, ds, concept_index)
    _, _, ev_pts, ev_flags = ds.split(cfg["dataset"]["train_fraction"])
    rng = np.random.Generator(np.random.PCG64(cfg.derived_seed("evaluate", which)))
    rep = metrics.evaluate_model(
        model, detector, ds.mixture, ev_pts[ev_flags.max(axis=1) == 0],
        constants, concept_index, cfg["evaluation"]["eval_samples"], rng,
    )
    rows = _rows(cfg, "evaluate", [
        (f"acc.{which}", rep.acc),
        (f"fd2_neutral.{which}", rep.fd2_neutral),
        (f"alignment.{which}", rep.alignment),
        (f"harmonic.{which}", rep.harmonic),
    ], inputs_digest=cfg.digest()[:12])
    append_rows(_results_path(run_dir), rows)
    update_manifest(run_dir, cfg, "evaluate", [_results_path(run_dir)])
    return rep


class AuditOrderingError(RuntimeError):
    """The measured bound chain was violated (a hard audit invariant)."""


def phase_audit(cfg: RunConfig, run_dir: str, which: str = "erased",
                strict: bool = True):
    ds = _load_dataset(cfg, run_dir)
    model = load_checkpoint(ckpt_path(run_dir, which)).to_model()
    ev = cfg["evaluation"]
    rng = np.random.Generator(np.random.PCG64(cfg.derived_seed("audit", which)))
    concept_index = ds.concept_names.index(cfg["erasure"]["targets"][0])
    audit = leakage_audit(
        model, rng, sample_budget=ev["sample_budget"],
        concept_index=concept_index, bins=ev["bins"], slack=ev["slack_nats"],
        probe_hidden=tuple(ev["probe_hidden"]), probe_steps=ev["probe_steps"],
        probe_batch=ev["probe_batch"], probe_lr=ev["probe_lr"],
    )
    rows = [
        ResultsRow(run_id=cfg.run_id, phase="audit", metric=r.name,
                   value=r.value, slack=ev["slack_nats"],
                   inputs_digest=f"{which}:{cfg.digest()[:12]}")
        for r in audit.reports()
    ]
    append_rows(_results_path(run_dir), rows)
    update_manifest(run_dir, cfg, "audit", [_results_path(run_dir)])
    if strict and not audit.ordering_holds():
        raise AuditOrderingError(
            f"bound chain violated on {which}: plugin_mi={audit.plugin_mi:.4f} "
            f"entropy_bound={audit.entropy_bound:.4f} "
            f"fano_bound={audit.fano_bound:.4f} pinsker={audit.pinsker:.4f} "
            f"(slack {audit.slack})"
        )
    return audit


def phase_attack(cfg: RunConfig, run_dir: str, which: str = "erased"):
    ds = _load_dataset(cfg, run_dir)
    model = load_checkpoint(ckpt_path(run_dir, which)).to_model()
    a = cfg["attack"]
    concept_index = ds.concept_names.index(cfg["erasure"]["targets"][0])
    transcripts = []
    rows = []
    for strategy in a["strategies"]:
        rng = np.random.Generator(
            np.random.PCG64(cfg.derived_seed("attack", which, strategy))
        )
        trial_samples = adversary.make_trial_batches(
            model, concept_index, a["trials"], a["trial_batch"], rng
        )
        for q in a["q_values"]:
            tr = adversary.adaptive_attack(
                model, concept_index, q, strategy, rng,
                n_per_query=a["n_per_query"], trials=a["trials"],
                trial_batch=a["trial_batch"], trial_samples=trial_samples,
            )
            transcripts.append(tr.summary())
            half = (tr.ci_hi - tr.ci_lo) / 2.0
            rows.append(ResultsRow(
                run_id=cfg.run_id, phase="attack",
                metric=f"attack_success.{strategy}.q{q}", value=tr.success,
                slack=half, inputs_digest=f"{which}:{cfg.digest()[:12]}",
            ))
    tpath = os.path.join(run_dir, f"attack_transcripts.{which}.json")
    with open(tpath, "w") as f:
        f.write(canonical_json(transcripts))
    append_rows(_results_path(run_dir), rows)
    update_manifest(run_dir, cfg, "attack", [tpath, _results_path(run_dir)])
    return transcripts


def _sweep_worker(args):
    cfg_data, run_dir, lam = args
    cfg = RunConfig(data=cfg_data)
    ds = dataio.load_dataset(dataset_path(run_dir))
    base = load_checkpoint(ckpt_path(run_dir, "base")).to_model()
    tr_pts, tr_flags, ev_pts, ev_flags = ds.split(cfg["dataset"]["train_fraction"])
    sw = cfg["sweep"]
    e_cfg = replace(
        cfg.erasure_config(cfg.derived_seed("sweep"), ds.concept_names),
        iterations=sw["iterations"], probe_samples=0, mi_probe_every=0,
    )
    pts = metrics.tradeoff_sweep(
        base, tr_pts, tr_flags, ev_pts[ev_flags.max(axis=1) == 0],
        e_cfg, [lam], rng_seed=cfg.derived_seed("sweep"),
        sample_budget=sw["sample_budget"], bins=sw["bins"],
    )
    return pts[0]


def phase_sweep(cfg: RunConfig, run_dir: str):
    lams = sorted(cfg["sweep"]["lambdas"])
    jobs = [(cfg.data, run_dir, lam) for lam in lams]
    threads = int(os.environ.get("ERASURE_LAB_THREADS", "1") or "1")
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            points = list(pool.map(_sweep_worker, jobs))
    else:
        points = [_sweep_worker(j) for j in jobs]
    points.sort(key=lambda p: p.lam)
    rows = []
    for p in points:
        rows.extend(_rows(cfg, "sweep", [
            (f"mi[{p.lam:g}]", p.mi),
            (f"fd2_neutral[{p.lam:g}]", p.fd2_neutral),
            (f"diverged[{p.lam:g}]", 1.0 if p.diverged else 0.0),
        ], inputs_digest=cfg.digest()[:12]))
    append_rows(_results_path(run_dir), rows)
    update_manifest(run_dir, cfg, "sweep", [_results_path(run_dir)])
    return points


def phase_report(cfg: RunConfig, run_dir: str) -> list[str]:
    rows = read_rows(_results_path(run_dir))
    artifacts = emit_report(rows, os.path.join(run_dir, "report"))
    update_manifest(run_dir, cfg, "report", artifacts)
    return artifacts
