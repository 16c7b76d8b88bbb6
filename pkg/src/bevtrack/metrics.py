"""Tracking evaluation: CLEAR metrics, recall-integrated AMOTA/AMOTP, HOTA.

Localization everywhere is BEV center distance with a 2 m gate; the HOTA
similarity is s = max(0, 1 - dist / gate). Ground truth consists of the
visible annotations only (objects with at least one camera view), so a
perfect detector-fed tracker can reach the metric ceiling.

Matching is per frame and per category: Hungarian on center distance, with
a continuity preference that keeps a previous frame's gt-pred pairing
alive while it stays within the gate.
"""

import math
from collections import namedtuple
from dataclasses import dataclass

import numpy as np

from .tracker import hungarian

GATE_METERS = 2.0
UNMATCHABLE = 1e9

GtBox = namedtuple("GtBox", "id category x y")
PredBox = namedtuple("PredBox", "id category x y score")


@dataclass
class FrameMatching:
    frame_index: int
    pairs: list  # (gt_id, pred_id, distance)
    fp_pred_ids: list
    fn_gt_ids: list


def evaluation_inputs(scene, result_frames):
    """Convert a scene and tracker output into plain per-frame box lists."""
    if len(result_frames) != len(scene.frames):
        raise ValueError(
            f"result has {len(result_frames)} frames, scene has {len(scene.frames)}"
        )
    gt_frames = []
    pred_frames = []
    for t, frame in enumerate(scene.frames):
        gt_frames.append(
            [
                GtBox(a.identity, a.category, a.pose.x, a.pose.y)
                for a in frame.annotations
                if a.views
            ]
        )
        pred_frames.append(
            [
                PredBox(e.track_id, e.category, e.pose.x, e.pose.y, e.score)
                for e in result_frames[t].entries
            ]
        )
    return gt_frames, pred_frames


def match_frames(gt_frames, pred_frames, gate=GATE_METERS):
    """Per-frame gt-pred matching with gating and identity continuity."""
    if len(gt_frames) != len(pred_frames):
        raise ValueError("gt and prediction frame counts differ")
    matchings = []
    prev = {}
    for t, (gts, preds) in enumerate(zip(gt_frames, pred_frames)):
        pairs = []
        used_g, used_p = set(), set()
        preds_by_id = {p.id: (k, p) for k, p in enumerate(preds)}
        for gi, g in enumerate(gts):
            holder = preds_by_id.get(prev.get(g.id))
            if holder is None:
                continue
            k, p = holder
            if k in used_p or p.category != g.category:
                continue
            d = math.hypot(g.x - p.x, g.y - p.y)
            if d <= gate:
                pairs.append((g.id, p.id, d))
                used_g.add(gi)
                used_p.add(k)
        rem_g = [i for i in range(len(gts)) if i not in used_g]
        rem_p = [k for k in range(len(preds)) if k not in used_p]
        if rem_g and rem_p:
            cost = np.full((len(rem_g), len(rem_p)), UNMATCHABLE)
            for a, gi in enumerate(rem_g):
                for b, k in enumerate(rem_p):
                    g, p = gts[gi], preds[k]
                    if g.category != p.category:
                        continue
                    d = math.hypot(g.x - p.x, g.y - p.y)
                    if d <= gate:
                        cost[a, b] = d
            for a, b in hungarian(cost).pairs:
                if cost[a, b] < UNMATCHABLE:
                    gi, k = rem_g[a], rem_p[b]
                    pairs.append((gts[gi].id, preds[k].id, cost[a, b]))
                    used_g.add(gi)
                    used_p.add(k)
        fn = [g.id for i, g in enumerate(gts) if i not in used_g]
        fp = [p.id for k, p in enumerate(preds) if k not in used_p]
        prev = {gid: pid for gid, pid, _ in pairs}
        matchings.append(FrameMatching(t, pairs, fp, fn))
    return matchings


@dataclass
class ClearMetrics:
    mota: float
    motp: float
    ids: int
    frag: int
    tp: int
    fp: int
    fn: int
    gt_total: int
    recall: float


def clear_metrics(matchings):
    """CLEAR configuration errors over one or more concatenated matchings.

    An identity switch is a change of matched prediction id between a gt
    identity's consecutive matched frames (gaps allowed); a fragmentation
    is an interruption of a gt identity's matched span.
    """
    tp = fp = fn = 0
    dist_sum = 0.0
    last_pred = {}
    ids = 0
    timeline = {}
    for m in matchings:
        tp += len(m.pairs)
        fp += len(m.fp_pred_ids)
        fn += len(m.fn_gt_ids)
        for gt_id, pred_id, dist in m.pairs:
            dist_sum += dist
            if gt_id in last_pred and last_pred[gt_id] != pred_id:
                ids += 1
            last_pred[gt_id] = pred_id
            timeline.setdefault(gt_id, []).append(True)
        for gt_id in m.fn_gt_ids:
            timeline.setdefault(gt_id, []).append(False)
    gt_total = tp + fn
    if gt_total == 0:
        raise ValueError("no ground truth boxes to evaluate against")
    frag = 0
    for flags in timeline.values():
        segments = 0
        prev_flag = False
        for flag in flags:
            if flag and not prev_flag:
                segments += 1
            prev_flag = flag
        frag += max(0, segments - 1)
    return ClearMetrics(
        mota=1.0 - (fp + fn + ids) / gt_total,
        motp=dist_sum / tp if tp else 0.0,
        ids=ids,
        frag=frag,
        tp=tp,
        fp=fp,
        fn=fn,
        gt_total=gt_total,
        recall=tp / gt_total,
    )


def _clear_at_threshold(sequences, threshold, gate):
    matchings = []
    for gt_frames, pred_frames in sequences:
        filtered = [
            [p for p in preds if p.score >= threshold] for preds in pred_frames
        ]
        matchings.extend(match_frames(gt_frames, filtered, gate))
    return clear_metrics(matchings)


def amota_amotp(sequences, gate=GATE_METERS, n_recall=40):
    """Recall-averaged MOTAR/MOTP over target recalls i/n_recall, i = 1..n.

    For each target recall the confidence threshold whose achieved recall
    is closest is selected (assuming recall is monotone in the threshold);
    unreachable recall levels are skipped and flagged in the table. MOTAR
    is clamped to [0, 1].
    """
    scores = sorted(
        {p.score for _, preds in sequences for frame in preds for p in frame}
    )
    table = []
    if not scores:
        targets = [(i + 1) / n_recall for i in range(n_recall)]
        table = [
            {"target_recall": r, "achievable": False} for r in targets
        ]
        return 0.0, 0.0, table
    cache = {}

    def counts(idx):
        if idx not in cache:
            cache[idx] = _clear_at_threshold(sequences, scores[idx], gate)
        return cache[idx]

    max_recall = counts(0).recall
    motar_values = []
    motp_values = []
    for i in range(1, n_recall + 1):
        r = i / n_recall
        if r > max_recall + 1e-12:
            table.append({"target_recall": r, "achievable": False})
            continue
        lo, hi = 0, len(scores) - 1
        # rightmost threshold whose achieved recall still reaches r
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if counts(mid).recall >= r - 1e-12:
                lo = mid
            else:
                hi = mid - 1
        best = lo
        if lo + 1 < len(scores):
            if abs(counts(lo + 1).recall - r) < abs(counts(lo).recall - r):
                best = lo + 1
        c = counts(best)
        gt_total = c.gt_total
        raw = 1.0 - (c.ids + c.fp + c.fn - (1.0 - r) * gt_total) / (r * gt_total)
        motar = min(1.0, max(0.0, raw))
        motar_values.append(motar)
        motp_values.append(c.motp)
        table.append(
            {
                "target_recall": r,
                "achievable": True,
                "threshold": scores[best],
                "achieved_recall": c.recall,
                "motar": motar,
                "motp": c.motp,
                "ids": c.ids,
                "fp": c.fp,
                "fn": c.fn,
            }
        )
    if not motar_values:
        return 0.0, 0.0, table
    return float(np.mean(motar_values)), float(np.mean(motp_values)), table


DEFAULT_ALPHAS = tuple(np.round(np.arange(0.05, 0.96, 0.05), 2))


def hota(sequences, gate=GATE_METERS, alphas=DEFAULT_ALPHAS):
    """HOTA decomposition averaged over localization thresholds.

    Frames match once via a Hungarian maximization of global alignment x
    similarity; each alpha then keeps the matches with similarity >= alpha
    as TPs. Association accuracy scores each TP by the Jaccard overlap of
    its gt and prediction tracks under that alpha.
    """
    alphas = np.asarray(alphas)
    gt_index, pred_index = {}, {}
    frames = []
    for seq_idx, (gt_frames, pred_frames) in enumerate(sequences):
        for gts, preds in zip(gt_frames, pred_frames):
            g_ids = [gt_index.setdefault((seq_idx, g.id), len(gt_index)) for g in gts]
            p_ids = [
                pred_index.setdefault((seq_idx, p.id), len(pred_index)) for p in preds
            ]
            sim = np.zeros((len(gts), len(preds)))
            for a, g in enumerate(gts):
                for b, p in enumerate(preds):
                    if g.category != p.category:
                        continue
                    d = math.hypot(g.x - p.x, g.y - p.y)
                    sim[a, b] = max(0.0, 1.0 - d / gate)
            frames.append((np.asarray(g_ids, dtype=int), np.asarray(p_ids, dtype=int), sim))
    n_gt_ids = len(gt_index)
    n_pred_ids = len(pred_index)
    n_alpha = len(alphas)
    empty = {
        "HOTA": 0.0, "DetA": 0.0, "AssA": 0.0, "DetRe": 0.0, "DetPr": 0.0,
        "AssRe": 0.0, "AssPr": 0.0, "LocA": 1.0,
    }
    if n_gt_ids == 0 or n_pred_ids == 0:
        return dict(empty, per_alpha={})

    potential = np.zeros((n_gt_ids, n_pred_ids))
    gt_count = np.zeros(n_gt_ids)
    pred_count = np.zeros(n_pred_ids)
    for g_ids, p_ids, sim in frames:
        gt_count[g_ids] += 1
        pred_count[p_ids] += 1
        if len(g_ids) and len(p_ids):
            denom = sim.sum(axis=0)[None, :] + sim.sum(axis=1)[:, None] - sim
            ratio = np.divide(sim, denom, out=np.zeros_like(sim), where=denom > 1e-12)
            potential[np.ix_(g_ids, p_ids)] += ratio
    alignment = potential / (gt_count[:, None] + pred_count[None, :] - potential)

    tp_a = np.zeros(n_alpha)
    fn_a = np.zeros(n_alpha)
    fp_a = np.zeros(n_alpha)
    loca_sum = np.zeros(n_alpha)
    matches = [np.zeros((n_gt_ids, n_pred_ids)) for _ in range(n_alpha)]
    for g_ids, p_ids, sim in frames:
        if len(g_ids) == 0:
            fp_a += len(p_ids)
            continue
        if len(p_ids) == 0:
            fn_a += len(g_ids)
            continue
        score = alignment[np.ix_(g_ids, p_ids)] * sim
        pairs = hungarian(-score).pairs
        rows = np.array([r for r, _ in pairs], dtype=int)
        cols = np.array([c for _, c in pairs], dtype=int)
        pair_sim = sim[rows, cols]
        for ai, alpha in enumerate(alphas):
            ok = pair_sim >= alpha - 1e-12
            n_match = int(ok.sum())
            tp_a[ai] += n_match
            fn_a[ai] += len(g_ids) - n_match
            fp_a[ai] += len(p_ids) - n_match
            if n_match:
                loca_sum[ai] += pair_sim[ok].sum()
                matches[ai][g_ids[rows[ok]], p_ids[cols[ok]]] += 1

    per_alpha = {
        "alpha": alphas, "DetA": np.zeros(n_alpha), "AssA": np.zeros(n_alpha),
        "DetRe": np.zeros(n_alpha), "DetPr": np.zeros(n_alpha),
        "AssRe": np.zeros(n_alpha), "AssPr": np.zeros(n_alpha),
        "LocA": np.zeros(n_alpha), "HOTA": np.zeros(n_alpha),
    }
    for ai in range(n_alpha):
        mc = matches[ai]
        union = np.maximum(gt_count[:, None] + pred_count[None, :] - mc, 1.0)
        ass_a = mc / union
        tp = tp_a[ai]
        per_alpha["DetA"][ai] = tp / max(1.0, tp + fn_a[ai] + fp_a[ai])
        per_alpha["DetRe"][ai] = tp / max(1.0, tp + fn_a[ai])
        per_alpha["DetPr"][ai] = tp / max(1.0, tp + fp_a[ai])
        per_alpha["AssA"][ai] = (mc * ass_a).sum() / max(1.0, tp)
        per_alpha["AssRe"][ai] = (
            mc * (mc / np.maximum(gt_count[:, None], 1.0))
        ).sum() / max(1.0, tp)
        per_alpha["AssPr"][ai] = (
            mc * (mc / np.maximum(pred_count[None, :], 1.0))
        ).sum() / max(1.0, tp)
        per_alpha["LocA"][ai] = max(1e-10, loca_sum[ai]) / max(1e-10, tp)
        per_alpha["HOTA"][ai] = math.sqrt(per_alpha["DetA"][ai] * per_alpha["AssA"][ai])
    result = {
        key: float(per_alpha[key].mean())
        for key in ("HOTA", "DetA", "AssA", "DetRe", "DetPr", "AssRe", "AssPr", "LocA")
    }
    result["per_alpha"] = per_alpha
    return result


@dataclass
class MetricReport:
    mota: float
    motp: float
    amota: float
    amotp: float
    ids: int
    frag: int
    tp: int
    fp: int
    fn: int
    recall: float
    hota: float
    deta: float
    assa: float
    detre: float
    detpr: float
    assre: float
    asspr: float
    loca: float

    COLUMNS = (
        "mota", "motp", "amota", "amotp", "ids", "frag", "tp", "fp", "fn",
        "recall", "hota", "deta", "assa", "detre", "detpr", "assre", "asspr",
        "loca",
    )

    def to_dict(self):
        return {name: getattr(self, name) for name in self.COLUMNS}


def evaluate(scenes, results, gate=GATE_METERS, n_recall=40):
    """Full report over matched (scene, tracking result) pairs.

    Returns (MetricReport, per-recall MOTAR table).
    """
    if len(scenes) != len(results):
        raise ValueError("need one result per scene")
    sequences = [evaluation_inputs(s, r) for s, r in zip(scenes, results)]
    matchings = []
    for gt_frames, pred_frames in sequences:
        matchings.extend(match_frames(gt_frames, pred_frames, gate))
    clear = clear_metrics(matchings)
    amota, amotp, table = amota_amotp(sequences, gate, n_recall)
    h = hota(sequences, gate)
    report = MetricReport(
        mota=clear.mota,
        motp=clear.motp,
        amota=amota,
        amotp=amotp,
        ids=clear.ids,
        frag=clear.frag,
        tp=clear.tp,
        fp=clear.fp,
        fn=clear.fn,
        recall=clear.recall,
        hota=h["HOTA"],
        deta=h["DetA"],
        assa=h["AssA"],
        detre=h["DetRe"],
        detpr=h["DetPr"],
        assre=h["AssRe"],
        asspr=h["AssPr"],
        loca=h["LocA"],
    )
    return report, table
