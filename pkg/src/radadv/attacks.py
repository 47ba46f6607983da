"""Targeted gradient attacks on frame-sequence classifiers.

Three attacks are implemented, all constrained to a value box, an
iteration budget, and (by default) an 8-bit grayscale grid:

* ``bim`` -- iterated signed-gradient descent on the cross-entropy toward
  the target class, clipped to the box each step.
* ``cw`` -- gradient descent on ``||delta||^2 + max(best_other - target,
  -kappa)``: perturbation size traded against a logit-margin loss, with
  early exit once the target leads by ``kappa``.
* ``padding_attack`` -- perturbs only the median-frame padding appended to
  short sequences, ascending the target-class score while a mask confines
  each step to the ``k_frames`` least-modified padding frames.  Action
  frames are never touched.

Success always means: the final, discretized tensor makes the evaluated
model predict the target class.  When rounding to the grid breaks a
success found mid-optimization, the attack keeps iterating with whatever
budget remains and retries.

Batched internals process fixed-size chunks of samples; finished rows are
frozen in place rather than removed, so results are bitwise independent
of worker count and sample order.
"""

from __future__ import annotations

import concurrent.futures
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import RadarSequence
from .models import Classifier
from .rng import STREAM_ATTACK_TARGET, rng_for

CHUNK_ROWS = 32


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    alpha: float = 15e-4
    bim_iters: int = 200
    cw_iters: int = 72
    cw_alpha: float = 1e-2
    kappa: float = 20.0
    box_lo: float | None = None     # None: fill from dataset minimum
    box_hi: float | None = None     # None: fill from dataset maximum
    discretize: bool = True
    levels: int = 255
    pad_iters: int = 2000
    k_frames: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.alpha <= 0 or self.cw_alpha <= 0:
            raise ValueError("step sizes must be positive")
        if self.kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {self.kappa}")
        if self.k_frames < 1:
            raise ValueError(f"k_frames must be >= 1, got {self.k_frames}")
        if min(self.bim_iters, self.cw_iters, self.pad_iters) < 1:
            raise ValueError("iteration budgets must be >= 1")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.box_lo is not None and self.box_hi is not None:
            if not (0.0 <= self.box_lo < self.box_hi <= 1.0):
                raise ValueError(
                    f"box_lo/box_hi must satisfy 0 <= box_lo < box_hi <= 1, "
                    f"got box_lo={self.box_lo}, box_hi={self.box_hi}")

    def with_box(self, data_lo: float, data_hi: float) -> "AttackConfig":
        """Fill unset box bounds from the dataset value range."""
        lo = float(data_lo) if self.box_lo is None else self.box_lo
        hi = float(data_hi) if self.box_hi is None else self.box_hi
        cfg = replace(self, box_lo=lo, box_hi=hi)
        cfg.validate()
        return cfg


@dataclass(frozen=True)
class _Box:
    lo: float
    hi: float
    kmin: int | None
    kmax: int | None
    levels: int | None

    def finalize(self, x: np.ndarray) -> np.ndarray:
        """Clip to the box and, when enabled, round onto the grid (float64)."""
        out = np.clip(x.astype(np.float64), self.lo, self.hi)
        if self.levels is not None:
            k = np.clip(np.floor(out * self.levels + 0.5), self.kmin, self.kmax)
            out = k / self.levels
        return out


def _resolve_box(cfg: AttackConfig) -> _Box:
    if cfg.box_lo is None or cfg.box_hi is None:
        raise ValueError("attack config box bounds are unresolved; call with_box() first")
    if not cfg.discretize:
        return _Box(float(cfg.box_lo), float(cfg.box_hi), None, None, None)
    L = cfg.levels
    # bounds within 1e-4 levels of a grid point count as that point, which
    # absorbs single-precision representations of k/levels values
    kmin = int(np.ceil(float(cfg.box_lo) * L - 1e-4))
    kmax = int(np.floor(float(cfg.box_hi) * L + 1e-4))
    if kmin > kmax:
        raise ValueError(f"box [{cfg.box_lo}, {cfg.box_hi}] contains no representable "
                         f"level out of {L}")
    return _Box(kmin / L, kmax / L, kmin, kmax, L)


# ---------------------------------------------------------------------------
# constraint primitives


def clip_box(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Elementwise clamp to [lo, hi]; idempotent."""
    if lo >= hi:
        raise ValueError(f"invalid box: lo={lo} must be < hi={hi}")
    return np.clip(x, lo, hi)


def discretize(x: np.ndarray, levels: int = 255) -> np.ndarray:
    """Map each value to round(v * levels) / levels, half away from zero.

    The result is exactly representable as a ``levels``-step grayscale
    image.  Values must already lie in [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("discretize requires values in [0, 1]")
    return np.floor(x * levels + 0.5) / levels


def distances(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """(L2, Linf) between two equal-shape tensors, over all values."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"distance operands differ in shape: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64).ravel() - b.astype(np.float64).ravel()
    if diff.size == 0:
        return 0.0, 0.0
    return float(np.linalg.norm(diff)), float(np.max(np.abs(diff)))


def summarize(values) -> tuple[float, float]:
    """Median and interquartile range (linearly interpolated quartiles)."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("summarize requires at least one value")
    q1, med, q3 = np.percentile(v, [25.0, 50.0, 75.0])
    return float(med), float(q3 - q1)


# ---------------------------------------------------------------------------
# threat scenarios


SCENARIO_KINDS = ("WB", "B1", "B2", "B3")


def split_model_id(model_id: str) -> tuple[str, str]:
    arch, sep, split = model_id.rpartition("_")
    if not sep or not arch or not split:
        raise ScenarioError(f"model id {model_id!r} is not of the form <arch>_<split>")
    return arch, split


@dataclass(frozen=True)
class ThreatScenario:
    kind: str
    source: str
    target: str

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        sa, ss = split_model_id(self.source)
        ta, ts = split_model_id(self.target)
        same_arch, same_split = sa == ta, ss == ts
        ok = {
            "WB": self.source == self.target,
            "B1": same_arch and not same_split,
            "B2": not same_arch and same_split,
            "B3": not same_arch and not same_split,
        }[self.kind]
        if not ok:
            raise ScenarioError(
                f"scenario {self.kind} invariant violated by source={self.source!r}, "
                f"target={self.target!r}")


# ---------------------------------------------------------------------------
# attack results


@dataclass
class AttackResult:
    adversarial: np.ndarray      # (T, H, W) float64, box-clipped / on-grid
    original: np.ndarray         # (T, H, W) float32 windowed input
    true_class: int
    target_class: int
    success: bool                # w.r.t. the model the attack ran against
    l2: float
    linf: float
    iterations: int
    sample_id: int = -1


@dataclass
class AdversarialPadding:
    """Reusable padding perturbation optimized for one sample length."""

    pattern: np.ndarray          # (T, H, W); frames beyond orig_len carry the attack
    base: np.ndarray             # (H, W) median padding frame
    orig_len: int
    source_model: str
    target_class: int


def _make_result(adv64, seq: RadarSequence, target: int, success: bool, iters: int) -> AttackResult:
    l2, linf = distances(adv64, seq.frames)
    return AttackResult(adversarial=adv64, original=seq.frames, true_class=seq.label,
                        target_class=int(target), success=bool(success), l2=l2, linf=linf,
                        iterations=int(iters), sample_id=seq.sample_id)


# ---------------------------------------------------------------------------
# batched attack cores (one chunk of samples at a time)


def _verify(clf: Classifier, adv64: np.ndarray, targets: np.ndarray) -> np.ndarray:
    logits = clf.logits(adv64.astype(np.float32))
    return np.argmax(logits, axis=1) == targets


def _run_bim(clf: Classifier, x0: np.ndarray, targets: np.ndarray, cfg: AttackConfig,
             box: _Box):
    x = x0.astype(np.float32).copy()
    lo32, hi32 = np.float32(box.lo), np.float32(box.hi)
    B = x.shape[0]
    done = np.zeros(B, dtype=bool)
    success = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=np.int64)
    final = np.empty(x.shape, dtype=np.float64)
    n = 0
    while True:
        logits, grad = clf.ce_grad(x, targets)
        if not np.isfinite(grad).all():
            raise FloatingPointError("non-finite gradient during BIM")
        preds = np.argmax(logits, axis=1)
        cand = (~done) & (preds == targets)
        if cand.any():
            disc = box.finalize(x[cand])
            ok = _verify(clf, disc, targets[cand])
            hit = np.flatnonzero(cand)[ok]
            final[hit], success[hit], iters[hit], done[hit] = disc[ok], True, n, True
        if done.all() or n >= cfg.bim_iters:
            break
        act = ~done
        x[act] = np.clip(x[act] - cfg.alpha * np.sign(grad[act]), lo32, hi32)
        n += 1
    rest = np.flatnonzero(~done)
    if rest.size:
        disc = box.finalize(x[rest])
        final[rest] = disc
        success[rest] = _verify(clf, disc, targets[rest])
        iters[rest] = n
    return final, success, iters


def _run_cw(clf: Classifier, x0: np.ndarray, targets: np.ndarray, cfg: AttackConfig,
            box: _Box):
    x0f = x0.astype(np.float32)
    lo32, hi32 = np.float32(box.lo), np.float32(box.hi)
    delta = np.zeros_like(x0f)
    B = x0f.shape[0]
    rows = np.arange(B)
    done = np.zeros(B, dtype=bool)
    success = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=np.int64)
    final = np.empty(x0f.shape, dtype=np.float64)
    n = 0
    while True:
        xp = x0f + delta
        logits, grad_loss = clf.margin_loss_grad(xp, targets, cfg.kappa)
        if not np.isfinite(grad_loss).all():
            raise FloatingPointError("non-finite gradient during CW")
        masked = logits.copy()
        masked[rows, targets] = -np.inf
        margin = logits[rows, targets] - masked.max(axis=1)
        cand = (~done) & (margin >= cfg.kappa)
        if cand.any():
            disc = box.finalize(xp[cand])
            ok = _verify(clf, disc, targets[cand])
            hit = np.flatnonzero(cand)[ok]
            final[hit], success[hit], iters[hit], done[hit] = disc[ok], True, n, True
        if done.all() or n >= cfg.cw_iters:
            break
        act = ~done
        step = cfg.cw_alpha * (2.0 * delta[act] + grad_loss[act])
        delta[act] = delta[act] - step
        delta[act] = np.clip(x0f[act] + delta[act], lo32, hi32) - x0f[act]
        n += 1
    rest = np.flatnonzero(~done)
    if rest.size:
        disc = box.finalize((x0f + delta)[rest])
        final[rest] = disc
        success[rest] = _verify(clf, disc, targets[rest])
        iters[rest] = n
    return final, success, iters


def _run_padding(clf: Classifier, x0: np.ndarray, lens: np.ndarray, targets: np.ndarray,
                 base: np.ndarray, cfg: AttackConfig, box: _Box):
    """Padding-only ascent on the target-class score.

    The optimizer keeps a continuous pattern; the observable iterate (used
    for the success check and finally emitted) is its box-clipped,
    grid-rounded image, so sub-grid progress accumulates while every
    emitted value stays representable.
    """
    B, T = x0.shape[0], x0.shape[1]
    lo32, hi32 = np.float32(box.lo), np.float32(box.hi)
    pattern = np.broadcast_to(base.astype(np.float32), x0.shape).copy()
    pad_mask = np.arange(T)[None, :] >= lens[:, None]          # (B, T)
    k_eff = np.minimum(cfg.k_frames, (T - lens).astype(np.int64))
    x64 = x0.astype(np.float64)

    done = np.zeros(B, dtype=bool)
    success = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=np.int64)
    final = np.empty(x0.shape, dtype=np.float64)
    final_pattern = np.empty(x0.shape, dtype=np.float64)
    n = 0
    while True:
        emitted = box.finalize(pattern)
        composed = np.where(pad_mask[:, :, None, None], emitted, x64)
        logits, grad = clf.class_logit_grad(composed.astype(np.float32), targets)
        if not np.isfinite(grad).all():
            raise FloatingPointError("non-finite gradient during padding attack")
        newly = (~done) & (np.argmax(logits, axis=1) == targets)
        if newly.any():
            idx = np.flatnonzero(newly)
            final[idx], final_pattern[idx] = composed[idx], emitted[idx]
            success[idx], iters[idx], done[idx] = True, n, True
        if done.all() or n >= cfg.pad_iters:
            break
        act = ~done
        # select the k least-modified padding frames per row (ties: lowest index)
        d = np.linalg.norm((pattern - base[None, None]).reshape(B, T, -1), axis=2)
        d = np.where(pad_mask, d, np.inf)
        order = np.argsort(d, axis=1, kind="stable")
        ranks = np.empty_like(order)
        np.put_along_axis(ranks, order, np.broadcast_to(np.arange(T), (B, T)).copy(), axis=1)
        select = (ranks < k_eff[:, None]) & pad_mask & act[:, None]
        step = cfg.alpha * np.sign(grad) * select[:, :, None, None]
        pattern = np.clip(pattern + step.astype(np.float32), lo32, hi32)
        n += 1
    rest = np.flatnonzero(~done)
    if rest.size:
        emitted = box.finalize(pattern)
        composed = np.where(pad_mask[:, :, None, None], emitted, x64)
        final[rest], final_pattern[rest] = composed[rest], emitted[rest]
        success[rest] = _verify(clf, composed[rest], targets[rest])
        iters[rest] = n
    return final, final_pattern, success, iters


# ---------------------------------------------------------------------------
# public single-sample entry points


def _check_targeted(clf: Classifier, seq: RadarSequence, target: int) -> None:
    if not 0 <= target < clf.num_classes:
        raise ValueError(f"target class {target} out of range")
    pred = int(np.argmax(clf.logits(seq.frames)))
    if pred == target:
        raise ValueError(f"model already predicts the target class {target}; "
                         "a targeted attack needs a different starting prediction")


def bim(clf: Classifier, seq: RadarSequence, target: int, cfg: AttackConfig) -> AttackResult:
    """Targeted basic-iterative attack on one sequence."""
    cfg.validate()
    _check_targeted(clf, seq, target)
    box = _resolve_box(cfg)
    final, success, iters = _run_bim(clf, seq.frames[None], np.array([target]), cfg, box)
    return _make_result(final[0], seq, target, success[0], iters[0])


def cw(clf: Classifier, seq: RadarSequence, target: int, cfg: AttackConfig) -> AttackResult:
    """Targeted margin-loss attack on one sequence."""
    cfg.validate()
    _check_targeted(clf, seq, target)
    box = _resolve_box(cfg)
    final, success, iters = _run_cw(clf, seq.frames[None], np.array([target]), cfg, box)
    return _make_result(final[0], seq, target, success[0], iters[0])


def cw_margin_loss(logits: np.ndarray, target: int, kappa: float) -> float:
    """max(best_other - target_score, -kappa) for one logit vector."""
    logits = np.asarray(logits, dtype=np.float64)
    others = np.delete(logits, target)
    return float(max(others.max() - logits[target], -kappa))


def padding_attack(clf: Classifier, seq: RadarSequence, target: int, base: np.ndarray,
                   cfg: AttackConfig) -> tuple[AdversarialPadding, AttackResult]:
    """Optimize an adversarial padding pattern for one short sequence."""
    cfg.validate()
    T = seq.frames.shape[0]
    if seq.orig_len >= T:
        raise ValueError(f"sample has no padding frames (length {seq.orig_len} of {T}); "
                         "the padding attack needs at least one")
    _check_targeted(clf, seq, target)
    box = _resolve_box(cfg)
    final, patterns, success, iters = _run_padding(
        clf, seq.frames[None], np.array([seq.orig_len]), np.array([target]), base, cfg, box)
    pad = AdversarialPadding(pattern=patterns[0], base=base.copy(), orig_len=seq.orig_len,
                             source_model=clf.model_id, target_class=int(target))
    return pad, _make_result(final[0], seq, target, success[0], iters[0])


def apply_padding(pad: AdversarialPadding, seq: RadarSequence,
                  clf: Classifier | None = None) -> tuple[np.ndarray, bool | None]:
    """Compose a precomputed padding pattern with another short sequence.

    Returns the composed (T, H, W) tensor and, when a classifier is given,
    whether it now predicts the pattern's target class.
    """
    T = pad.pattern.shape[0]
    if seq.frames.shape[0] != T:
        raise ValueError(f"sequence length {seq.frames.shape[0]} does not match pattern {T}")
    if seq.orig_len >= T:
        raise ValueError(f"sample has no padding frames (length {seq.orig_len} of {T})")
    composed = pad.pattern.astype(np.float64).copy()
    composed[:seq.orig_len] = seq.frames[:seq.orig_len].astype(np.float64)
    hit = None
    if clf is not None:
        hit = bool(np.argmax(clf.logits(composed.astype(np.float32))) == pad.target_class)
    return composed, hit


# ---------------------------------------------------------------------------
# chunked batch driver


def _chunk_bounds(n: int, size: int = CHUNK_ROWS) -> list[tuple[int, int]]:
    """Fixed chunk boundaries; short tails merge left so rows stay >= 2."""
    if n <= 0:
        return []
    bounds = [(i, min(i + size, n)) for i in range(0, n, size)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        last = bounds.pop()
        prev = bounds.pop()
        bounds.append((prev[0], last[1]))
    return bounds


def pick_targets(seqs: list[RadarSequence], cfg: AttackConfig, num_classes: int = 6) -> np.ndarray:
    """Per-sample uniformly random target class != true label."""
    targets = np.empty(len(seqs), dtype=np.int64)
    for i, s in enumerate(seqs):
        rng = rng_for(cfg.seed, STREAM_ATTACK_TARGET, s.sample_id)
        choices = [c for c in range(num_classes) if c != s.label]
        targets[i] = choices[rng.integers(len(choices))]
    return targets


def run_attack(clf: Classifier, seqs: list[RadarSequence], targets: np.ndarray,
               attack: str, cfg: AttackConfig, base: np.ndarray | None = None,
               jobs: int = 1) -> list[AttackResult]:
    """Attack many sequences; per-sample results independent of jobs."""
    cfg.validate()
    if attack not in ("bim", "cw", "padding"):
        raise ValueError(f"unknown attack {attack!r}")
    if attack == "padding" and base is None:
        raise ValueError("padding attack requires the median padding frame")
    box = _resolve_box(cfg)
    order = np.argsort([s.sample_id for s in seqs], kind="stable")
    seqs = [seqs[i] for i in order]
    targets = np.asarray(targets)[order]

    def work(span):
        i, j = span
        x = np.stack([s.frames for s in seqs[i:j]])
        t = targets[i:j]
        if attack == "bim":
            final, success, iters = _run_bim(clf, x, t, cfg, box)
        elif attack == "cw":
            final, success, iters = _run_cw(clf, x, t, cfg, box)
        else:
            lens = np.array([s.orig_len for s in seqs[i:j]])
            if (lens >= x.shape[1]).any():
                raise ValueError("padding attack got a sample with no padding frames")
            final, _, success, iters = _run_padding(clf, x, lens, t, base, cfg, box)
        return [(final[k], success[k], iters[k]) for k in range(j - i)]

    spans = _chunk_bounds(len(seqs))
    if jobs > 1 and len(spans) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as ex:
            chunk_results = list(ex.map(work, spans))
    else:
        chunk_results = [work(s) for s in spans]

    results = []
    k = 0
    for span, chunk in zip(spans, chunk_results):
        for final, success, iters in chunk:
            results.append(_make_result(final, seqs[k], targets[k], success, iters))
            k += 1
    return results


# ---------------------------------------------------------------------------
# threat matrix


@dataclass
class ThreatRow:
    scenario: str
    source: str
    target: str
    attack: str
    n: int
    success_rate: float
    l2_median: float | None
    l2_iqr: float | None
    linf_median: float | None
    linf_iqr: float | None


def generate_attacks(classifiers: dict[str, Classifier], sources: list[str],
                     eval_sequences: dict[str, list[RadarSequence]], attacks: list[str],
                     cfg: AttackConfig, base: np.ndarray, jobs: int = 1,
                     ) -> dict[tuple[str, str], list[AttackResult]]:
    """Generate adversarial examples per (source model, attack).

    Only samples the source classifies correctly are attacked; target
    classes come from a per-sample seeded stream, so results do not depend
    on sample order or worker count.
    """
    generated: dict[tuple[str, str], list[AttackResult]] = {}
    for source in sorted(set(sources)):
        clf = classifiers[source]
        pool = sorted(eval_sequences[source], key=lambda s: s.sample_id)
        preds = clf.logits(np.stack([s.frames for s in pool])).argmax(axis=1)
        kept = [s for s, p in zip(pool, preds) if p == s.label]
        targets = pick_targets(kept, cfg, clf.num_classes)
        for attack in attacks:
            if attack == "padding":
                idx = [i for i, s in enumerate(kept) if s.orig_len < s.frames.shape[0]]
                seqs = [kept[i] for i in idx]
                tg = targets[idx]
            else:
                seqs, tg = kept, targets
            generated[(source, attack)] = run_attack(clf, seqs, tg, attack, cfg,
                                                     base=base, jobs=jobs)
    return generated


def threat_matrix(classifiers: dict[str, Classifier], scenarios: list[ThreatScenario],
                  eval_sequences: dict[str, list[RadarSequence]], attacks: list[str],
                  cfg: AttackConfig, base: np.ndarray, jobs: int = 1,
                  generated: dict[tuple[str, str], list[AttackResult]] | None = None,
                  ) -> tuple[list[ThreatRow], dict[tuple[str, str], list[dict]]]:
    """Attack each scenario's source model, score transfers on its target.

    Sources share generated adversarial examples across scenarios.
    Distances aggregate only over successful transfers; per-sample records
    are returned for persistence.
    """
    for sc in scenarios:
        sc.validate()
        for mid in (sc.source, sc.target):
            if mid not in classifiers:
                raise ScenarioError(f"scenario references unknown model {mid!r}")

    if generated is None:
        generated = generate_attacks(classifiers, [sc.source for sc in scenarios],
                                     eval_sequences, attacks, cfg, base, jobs)

    rows: list[ThreatRow] = []
    records: dict[tuple[str, str], list[dict]] = {}
    for sc in scenarios:
        tgt_clf = classifiers[sc.target]
        for attack in attacks:
            results = generated[(sc.source, attack)]
            if sc.target == sc.source:
                hits = np.array([r.success for r in results], dtype=bool)
            elif results:
                adv = np.stack([r.adversarial for r in results]).astype(np.float32)
                tg = np.array([r.target_class for r in results])
                hits = tgt_clf.logits(adv).argmax(axis=1) == tg
            else:
                hits = np.zeros(0, dtype=bool)
            recs = [{
                "sample_id": r.sample_id, "true": r.true_class, "target": r.target_class,
                "success": bool(h), "l2": r.l2, "linf": r.linf, "iters": r.iterations,
            } for r, h in zip(results, hits)]
            records[(sc.kind, attack)] = recs
            l2s = [r["l2"] for r in recs if r["success"]]
            linfs = [r["linf"] for r in recs if r["success"]]
            if l2s:
                l2_med, l2_iqr = summarize(l2s)
                linf_med, linf_iqr = summarize(linfs)
            else:
                l2_med = l2_iqr = linf_med = linf_iqr = None
            rows.append(ThreatRow(sc.kind, sc.source, sc.target, attack, len(recs),
                                  float(np.mean(hits)) if recs else 0.0,
                                  l2_med, l2_iqr, linf_med, linf_iqr))
    return rows, records


def write_matrix_csv(rows: list[ThreatRow], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["scenario,source,target,attack,n,success_rate,l2_median,l2_iqr,linf_median,linf_iqr"]
    for r in rows:
        def fmt(v):
            return "" if v is None else f"{v:.10g}"
        lines.append(",".join([r.scenario, r.source, r.target, r.attack, str(r.n),
                               f"{r.success_rate:.10g}", fmt(r.l2_median), fmt(r.l2_iqr),
                               fmt(r.linf_median), fmt(r.linf_iqr)]))
    path.write_text("\n".join(lines) + "\n")


def write_records_jsonl(records: list[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
