"""Pipeline stages behind the CLI: data, training, attacks, reports.

Every stage is a pure function of (config, seed) plus the artifacts of
earlier stages, so re-running a stage overwrites its outputs with
identical bytes.  A run manifest records content hashes per stage;
timestamps live only there, never inside stage artifacts.
"""

from __future__ import annotations

import datetime
import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import generate_attacks, summarize, threat_matrix, write_matrix_csv, write_records_jsonl
from .config import ExperimentConfig
from .data import (GestureSample, RadarSequence, generate_dataset, load_dataset,
                   median_frame, save_dataset, split_subjects, value_range, window)
from .interpret import (aggregate_frames, curve_to_csv, export_heatmap_images, frame_importance,
                        grad_cam, heatmap_magnitudes, perturbation_profile, spearman)
from .models import load_model, save_model
from .training import evaluate, train

STAGES = ("gen-data", "train", "attack", "matrix", "interpret", "report")
ATTACK_ORDER = ("bim", "cw", "padding")
SCENARIO_ORDER = ("WB", "B1", "B2", "B3")


class StageDependencyError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _update_manifest(out: Path, cfg: ExperimentConfig, stage: str, artifacts: list[Path]) -> None:
    mpath = out / "run_manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {
        "config_hash": cfg.config_hash(), "version": __version__, "stages": {}}
    manifest["config_hash"] = cfg.config_hash()
    manifest["stages"][stage] = {
        "seed": cfg.seed,
        "completed_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": [{"path": str(p.relative_to(out)), "sha256": _sha256(p)}
                      for p in sorted(artifacts)],
    }
    mpath.write_text(json.dumps(manifest, indent=1, sort_keys=True))


def verify_manifest(out: Path) -> list[str]:
    """Paths whose current content no longer matches the recorded hash."""
    manifest = json.loads((out / "run_manifest.json").read_text())
    stale = []
    for stage in manifest["stages"].values():
        for art in stage["artifacts"]:
            p = out / art["path"]
            if not p.exists() or _sha256(p) != art["sha256"]:
                stale.append(art["path"])
    return stale


# ---------------------------------------------------------------------------
# shared loading helpers


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise StageDependencyError(
            f"missing artifact {path}; run the `{produced_by}` stage first")
    return path


def _load_samples(out: Path) -> list[GestureSample]:
    _require(out / "dataset" / "manifest.json", "gen-data")
    return load_dataset(out / "dataset")


def _model_prefix(out: Path, model_id: str) -> Path:
    return out / "models" / model_id


def _load_model_checked(out: Path, model_id: str):
    _require(_model_prefix(out, model_id).with_suffix(".json"), "train")
    return load_model(_model_prefix(out, model_id))


def _splits(cfg: ExperimentConfig, samples):
    return {sid: split_subjects(samples, assignment, sid)
            for sid, assignment in cfg.splits.items()}


def _windowed(cfg, samples, ids, padding) -> list[RadarSequence]:
    by_id = {s.sample_id: s for s in samples}
    return [window(by_id[i], cfg.window_length, padding) for i in sorted(ids)]


def _resolved_attack_cfg(cfg: ExperimentConfig, samples):
    lo, hi = value_range(samples)
    return cfg.attack.with_box(lo, hi)


# ---------------------------------------------------------------------------
# stages


def stage_gen_data(cfg: ExperimentConfig, out: Path) -> None:
    samples = generate_dataset(cfg.data, cfg.seed)
    save_dataset(samples, out / "dataset")
    _update_manifest(out, cfg, "gen-data",
                     [out / "dataset" / "manifest.json", out / "dataset" / "frames.bin"])


def stage_train(cfg: ExperimentConfig, out: Path) -> None:
    samples = _load_samples(out)
    padding = median_frame(samples)
    splits = _splits(cfg, samples)
    artifacts = []
    for arch in cfg.architectures:
        for split_id in cfg.splits:
            split = splits[split_id]
            csv_path = out / "models" / f"{arch}_{split_id}_metrics.csv"
            model = train(arch, samples, split, cfg.hyper[arch], padding,
                          cfg.window_length, metrics_csv=csv_path)
            test_seqs = _windowed(cfg, samples, split.partitions["test"], padding)
            model.metrics["test"] = evaluate(model, test_seqs).as_dict()
            prefix = _model_prefix(out, model.model_id)
            save_model(model, prefix)
            artifacts += [prefix.with_suffix(".json"), prefix.with_suffix(".bin"), csv_path]
    _update_manifest(out, cfg, "train", artifacts)


def _record_path(out: Path, kind: str, source: str, target: str, attack: str) -> Path:
    return out / "attacks" / f"{kind}__{source}__{target}__{attack}.jsonl"


def stage_attack(cfg: ExperimentConfig, out: Path) -> None:
    samples = _load_samples(out)
    padding = median_frame(samples)
    splits = _splits(cfg, samples)
    acfg = _resolved_attack_cfg(cfg, samples)

    classifiers = {}
    for sc in cfg.scenarios:
        for mid in (sc.source, sc.target):
            if mid not in classifiers:
                classifiers[mid] = _load_model_checked(out, mid).classifier()

    eval_sequences = {}
    for source in {sc.source for sc in cfg.scenarios}:
        split_id = source.rpartition("_")[2]
        eval_sequences[source] = _windowed(
            cfg, samples, splits[split_id].partitions["test"], padding)

    generated = generate_attacks(classifiers, [sc.source for sc in cfg.scenarios],
                                 eval_sequences, list(cfg.attacks), acfg, padding,
                                 jobs=cfg.jobs)
    _, records = threat_matrix(classifiers, cfg.scenarios, eval_sequences,
                               list(cfg.attacks), acfg, padding, jobs=cfg.jobs,
                               generated=generated)
    artifacts = []
    for sc in cfg.scenarios:
        for attack in cfg.attacks:
            path = _record_path(out, sc.kind, sc.source, sc.target, attack)
            write_records_jsonl(records[(sc.kind, attack)], path)
            artifacts.append(path)

    # persist adversarial tensors of the source runs in the dataset binary
    # format, for the interpretability stage and manual inspection
    for (source, attack), results in sorted(generated.items()):
        adv_dir = out / "attacks" / f"adv__{source}__{attack}"
        adv_samples = [GestureSample(r.sample_id, 0, r.true_class,
                                     r.adversarial.astype(np.float32)) for r in results]
        if adv_samples:
            save_dataset(adv_samples, adv_dir)
            artifacts += [adv_dir / "manifest.json", adv_dir / "frames.bin"]
    _update_manifest(out, cfg, "attack", artifacts)


def stage_matrix(cfg: ExperimentConfig, out: Path) -> None:
    """Aggregate the per-sample attack records into one CSV."""
    lines = []
    for kind in SCENARIO_ORDER:
        for sc in cfg.scenarios:
            if sc.kind != kind:
                continue
            for attack in ATTACK_ORDER:
                if attack not in cfg.attacks:
                    continue
                path = _require(_record_path(out, sc.kind, sc.source, sc.target, attack), "attack")
                recs = [json.loads(line) for line in path.read_text().splitlines()]
                n = len(recs)
                rate = float(np.mean([r["success"] for r in recs])) if recs else 0.0
                l2s = [r["l2"] for r in recs if r["success"]]
                linfs = [r["linf"] for r in recs if r["success"]]
                stats = (summarize(l2s) + summarize(linfs)) if l2s else (None,) * 4
                lines.append((sc, attack, n, rate) + stats)

    from .attacks import ThreatRow
    rows = [ThreatRow(sc.kind, sc.source, sc.target, attack, n, rate, *stats)
            for (sc, attack, n, rate, *stats) in lines]
    write_matrix_csv(rows, out / "matrix.csv")
    _update_manifest(out, cfg, "matrix", [out / "matrix.csv"])


def stage_interpret(cfg: ExperimentConfig, out: Path) -> None:
    samples = _load_samples(out)
    padding = median_frame(samples)
    splits = _splits(cfg, samples)
    settings = cfg.interpret
    model = _load_model_checked(out, settings.model)
    clf = model.classifier()

    adv_dir = out / "attacks" / f"adv__{settings.model}__{settings.attack}"
    _require(adv_dir / "manifest.json", "attack")
    adv_samples = {s.sample_id: s for s in load_dataset(adv_dir)}

    # restrict to samples whose white-box attack actually succeeded
    wb = [sc for sc in cfg.scenarios if sc.kind == "WB" and sc.source == settings.model]
    if not wb:
        raise StageDependencyError(
            f"interpret needs a WB scenario with source {settings.model!r} in the config")
    rec_path = _require(_record_path(out, "WB", settings.model, settings.model,
                                     settings.attack), "attack")
    succeeded = {json.loads(line)["sample_id"]
                 for line in rec_path.read_text().splitlines()
                 if json.loads(line)["success"]}

    split_id = settings.model.rpartition("_")[2]
    sequences = _windowed(cfg, samples, splits[split_id].partitions["test"], padding)
    by_id = {s.sample_id: s for s in sequences}

    chosen = []
    for sid in sorted(adv_samples):
        seq = by_id.get(sid)
        if seq is None or sid not in succeeded:
            continue
        chosen.append((seq, adv_samples[sid].frames))
        if len(chosen) >= settings.max_samples:
            break

    profiles, importances, cam_mags, labels = [], [], [], []
    layer = settings.layer or clf.arch.default_cam_layer
    for seq, adv in chosen:
        profiles.append(perturbation_profile(seq.frames, adv))
        importances.append(frame_importance(clf, seq.frames, padding, seq.label))
        cam_mags.append(heatmap_magnitudes(grad_cam(clf, seq.frames, seq.label, layer)))
        labels.append(seq.label)

    interp_dir = out / "interpret"
    interp_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    curves = {
        "perturbation": np.asarray(profiles),
        "importance": np.asarray(importances),
        "gradcam": np.asarray(cam_mags),
    }
    for name, stack in curves.items():
        agg = aggregate_frames(stack, "median")
        path = interp_dir / f"{name}_curve.csv"
        curve_to_csv(agg, path)
        artifacts.append(path)
        per_class = aggregate_frames(stack, "median", labels=labels)
        cpath = interp_dir / f"{name}_curve_by_class.csv"
        if cpath.exists():
            cpath.unlink()
        for cls in sorted(per_class):
            curve_to_csv(per_class[cls], cpath, label=cls)
        artifacts.append(cpath)

    med_prof = np.median(curves["perturbation"], axis=0)
    med_imp = np.median(curves["importance"], axis=0)
    med_cam = np.median(curves["gradcam"], axis=0)
    pert_rho = spearman(med_prof, med_imp)
    cam_rho = spearman(med_cam, med_imp)
    corr = {
        "model": settings.model, "attack": settings.attack, "layer": layer,
        "n_samples": len(chosen),
        "perturbation_vs_importance": {"rho": pert_rho.rho, "n": pert_rho.n},
        "gradcam_vs_importance": {"rho": cam_rho.rho, "n": cam_rho.n},
    }
    cpath = interp_dir / "correlations.json"
    cpath.write_text(json.dumps(corr, indent=1, sort_keys=True))
    artifacts.append(cpath)

    for seq, _ in chosen[:settings.heatmap_samples]:
        heat = grad_cam(clf, seq.frames, seq.label, layer)
        img_dir = interp_dir / "heatmaps" / f"sample_{seq.sample_id:05d}"
        artifacts += export_heatmap_images(heat, img_dir)
        adv_samples_out = [GestureSample(seq.sample_id, seq.subject, seq.label,
                                         heat.maps.astype(np.float32))]
        save_dataset(adv_samples_out, img_dir / "raw")
        artifacts += [img_dir / "raw" / "manifest.json", img_dir / "raw" / "frames.bin"]
    _update_manifest(out, cfg, "interpret", artifacts)


def stage_report(cfg: ExperimentConfig, out: Path) -> None:
    matrix_path = _require(out / "matrix.csv", "matrix")
    report = {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "profile": cfg.profile,
        "seed": cfg.seed,
        "matrix_csv": matrix_path.read_text(),
        "models": {},
    }
    for mid in cfg.model_ids:
        prefix = _model_prefix(out, mid)
        if prefix.with_suffix(".json").exists():
            report["models"][mid] = json.loads(prefix.with_suffix(".json").read_text())["metrics"]
    corr_path = out / "interpret" / "correlations.json"
    if corr_path.exists():
        report["correlations"] = json.loads(corr_path.read_text())
    rpath = out / "report.json"
    rpath.write_text(json.dumps(report, indent=1, sort_keys=True))
    _update_manifest(out, cfg, "report", [rpath])


STAGE_FUNCS = {
    "gen-data": stage_gen_data,
    "train": stage_train,
    "attack": stage_attack,
    "matrix": stage_matrix,
    "interpret": stage_interpret,
    "report": stage_report,
}


def run_stage(name: str, cfg: ExperimentConfig, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    STAGE_FUNCS[name](cfg, out)
