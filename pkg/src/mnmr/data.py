"""Trajectory ingestion, preprocessing, windowing and synthetic datasets."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .mixture import MnmmModel, PriorConfig, load_model, sample_dataset, sample_prior, save_model
from .windows import FEATURES, WindowSpec

__all__ = [
    "DataError",
    "TrajectoryPair",
    "IngestReport",
    "Dataset",
    "WindowSet",
    "ingest_highd",
    "downsample",
    "filter_pairs",
    "split",
    "make_windows",
    "write_trajectories",
    "read_trajectories",
    "write_manifest",
    "load_dataset",
    "synth_generate",
    "file_sha256",
]

log = logging.getLogger(__name__)

CANONICAL_COLUMNS = ["pair_id", "time_s", "v_fv", "v_lv", "gap_m", "a_fv"]
HIGHD_FRAME_RATE = 25.0

# HighD XX_tracks.csv columns used by the adapter; others are ignored.
HIGHD_TRACK_COLUMNS = ["id", "frame", "x", "width", "xVelocity", "xAcceleration", "precedingId"]
# XX_tracksMeta.csv: drivingDirection 1 travels towards -x, 2 towards +x.
HIGHD_META_COLUMNS = ["id", "drivingDirection"]


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass
class TrajectoryPair:
    """Time-aligned leader/follower series at a uniform sampling rate."""

    pair_id: str
    time: np.ndarray
    v_fv: np.ndarray
    v_lv: np.ndarray
    gap: np.ndarray
    a_fv: np.ndarray
    rate_hz: float

    def __post_init__(self):
        for name in ("time", "v_fv", "v_lv", "gap", "a_fv"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.time.size
        if any(getattr(self, c).size != n for c in ("v_fv", "v_lv", "gap", "a_fv")):
            raise DataError(f"pair {self.pair_id}: series lengths differ")
        if n > 1:
            dt = np.diff(self.time)
            if np.any(dt <= 0) or np.max(np.abs(dt - 1.0 / self.rate_hz)) > 1e-6:
                raise DataError(f"pair {self.pair_id}: timestamps not uniformly spaced at {self.rate_hz} Hz")
        if np.any(self.gap <= 0):
            raise DataError(f"pair {self.pair_id}: non-positive gap")
        if np.any(self.v_fv < 0) or np.any(self.v_lv < 0):
            raise DataError(f"pair {self.pair_id}: negative speed")

    def __len__(self) -> int:
        return self.time.size

    @property
    def duration(self) -> float:
        return float(self.time[-1] - self.time[0]) if len(self) else 0.0

    def features(self) -> np.ndarray:
        """``(4, L)`` matrix with rows (v_fv, v_fv - v_lv, gap, a_fv)."""
        return np.vstack([self.v_fv, self.v_fv - self.v_lv, self.gap, self.a_fv])


@dataclass
class IngestReport:
    rows_with_leader: int = 0
    rows_out: int = 0
    dropped_nonpositive_gap: int = 0
    dropped_missing_leader: int = 0
    per_pair: dict = field(default_factory=dict)


def _runs(mask_break: np.ndarray):
    """Split indices 0..n-1 into runs; a run ends before every True in mask_break[1:]."""
    starts = np.flatnonzero(np.r_[True, mask_break[1:]])
    ends = np.r_[starts[1:], mask_break.size]
    return zip(starts, ends)


def ingest_highd(tracks_file, meta_file, recording: str | None = None):
    """Extract leader/follower pairs from one HighD recording.

    A pair is a maximal run of consecutive frames in which a vehicle keeps
    the same preceding vehicle. Speeds and accelerations are sign-normalized
    to the driving direction; the gap is the leader's rear bumper minus the
    follower's front bumper. Rows with a non-positive gap, or whose leader
    has no row at that frame, are dropped and split the run.

    Returns ``(pairs, report)``.
    """
    tracks = pd.read_csv(tracks_file)
    meta = pd.read_csv(meta_file)
    for cols, df, fname in ((HIGHD_TRACK_COLUMNS, tracks, tracks_file), (HIGHD_META_COLUMNS, meta, meta_file)):
        missing = [c for c in cols if c not in df.columns]
        if missing:
            raise DataError(f"{fname}: missing columns {missing}")
    recording = recording or Path(tracks_file).name.split("_")[0]
    direction = dict(zip(meta["id"].astype(int), meta["drivingDirection"].astype(int)))
    tracks = tracks[HIGHD_TRACK_COLUMNS].sort_values(["id", "frame"], kind="stable")
    lookup = tracks.set_index(["id", "frame"])

    report = IngestReport()
    pairs = []
    for vid, rows in tracks.groupby("id", sort=True):
        rows = rows[rows["precedingId"] != 0]
        if rows.empty:
            continue
        report.rows_with_leader += int(len(rows))
        sign = -1.0 if direction.get(int(vid), 2) == 1 else 1.0
        frame = rows["frame"].to_numpy()
        lead_id = rows["precedingId"].to_numpy()

        keys = pd.MultiIndex.from_arrays([lead_id, frame])
        leader = lookup.reindex(keys)
        has_leader = leader["x"].notna().to_numpy()
        if sign > 0:
            gap = leader["x"].to_numpy() - (rows["x"].to_numpy() + rows["width"].to_numpy())
        else:
            gap = rows["x"].to_numpy() - (leader["x"].to_numpy() + leader["width"].to_numpy())
        bad_gap = has_leader & ~(gap > 0)
        keep = has_leader & ~bad_gap
        report.dropped_missing_leader += int(np.sum(~has_leader))
        report.dropped_nonpositive_gap += int(np.sum(bad_gap))

        idx = np.flatnonzero(keep)
        if idx.size == 0:
            continue
        f, l = frame[idx], lead_id[idx]
        brk = np.r_[True, (np.diff(f) != 1) | (np.diff(l) != 0)]
        v_f = sign * rows["xVelocity"].to_numpy()[idx]
        a_f = sign * rows["xAcceleration"].to_numpy()[idx]
        v_l = sign * leader["xVelocity"].to_numpy()[idx]
        for s, e in _runs(brk):
            pid = f"{recording}_{int(vid)}_{int(l[s])}_{int(f[s])}"
            pair = TrajectoryPair(
                pair_id=pid,
                time=f[s:e] / HIGHD_FRAME_RATE,
                v_fv=np.clip(v_f[s:e], 0.0, None),
                v_lv=np.clip(v_l[s:e], 0.0, None),
                gap=gap[idx][s:e],
                a_fv=a_f[s:e],
                rate_hz=HIGHD_FRAME_RATE,
            )
            pairs.append(pair)
            report.per_pair[pid] = int(e - s)
            report.rows_out += int(e - s)
    log.info("ingested %d pairs from %s (%d rows dropped)", len(pairs), tracks_file,
             report.dropped_missing_leader + report.dropped_nonpositive_gap)
    return pairs, report


def downsample(pair: TrajectoryPair, factor: int = 5) -> TrajectoryPair:
    """Keep every ``factor``-th sample starting at index 0."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    sl = slice(None, None, factor)
    return TrajectoryPair(pair.pair_id, pair.time[sl], pair.v_fv[sl], pair.v_lv[sl], pair.gap[sl],
                          pair.a_fv[sl], pair.rate_hz / factor)


def filter_pairs(pairs, min_duration_s: float = 50.0):
    """Keep pairs lasting strictly longer than ``min_duration_s`` seconds."""
    return [p for p in pairs if p.duration > min_duration_s]


def make_windows(pair: TrajectoryPair, spec: WindowSpec, stride: int = 1) -> np.ndarray:
    """Stack of ``(D, tau)`` windows, rows ordered (v_fv, dv, gap, a_fv)."""
    series = pair.features()
    L = series.shape[1]
    if L < spec.tau:
        return np.empty((0, series.shape[0], spec.tau))
    starts = range(0, L - spec.tau + 1, stride)
    return np.stack([series[:, s : s + spec.tau] for s in starts])


@dataclass
class Dataset:
    """Pair-level train/test split of trajectory data."""

    train: list
    test: list
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        overlap = {p.pair_id for p in self.train} & {p.pair_id for p in self.test}
        if overlap:
            raise DataError(f"train/test overlap: {sorted(overlap)[:5]}")

    def windows(self, T: int, dT: int, stride: int = 1):
        """``(train, test)`` window stacks for the given past/future lengths."""
        spec = WindowSpec(T=T, dT=dT, step_seconds=self._step())
        return (self._stack(self.train, spec, stride), self._stack(self.test, spec, stride))

    def window_index(self, T: int, dT: int, which: str = "test", stride: int = 1):
        """``(pair_id, t_predict)`` for each window produced by :meth:`windows`."""
        out = []
        for p in self.train if which == "train" else self.test:
            for s in range(0, len(p) - (T + dT) + 1, stride):
                out.append((p.pair_id, float(p.time[s + T])))
        return out

    def pair(self, pair_id: str) -> TrajectoryPair:
        for p in self.train + self.test:
            if p.pair_id == pair_id:
                return p
        raise KeyError(pair_id)

    def _step(self) -> float:
        pairs = self.train or self.test
        return 1.0 / pairs[0].rate_hz if pairs else 0.2

    @staticmethod
    def _stack(pairs, spec, stride):
        parts = [make_windows(p, spec, stride) for p in pairs]
        parts = [w for w in parts if len(w)]
        if not parts:
            return np.empty((0, spec.D, spec.tau))
        return np.concatenate(parts)


@dataclass
class WindowSet:
    """Pre-cut windows (synthetic data) of a fixed maximal shape.

    Shorter configurations are taken as column blocks that end their past at
    the same column: past ``T`` and future ``dT`` use columns
    ``[T0 - T, T0 + dT)``, where ``T0`` is the stored past length.
    """

    train: np.ndarray
    test: np.ndarray
    spec: WindowSpec
    train_labels: np.ndarray | None = None
    test_labels: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def windows(self, T: int, dT: int, stride: int = 1):
        if T > self.spec.T or dT > self.spec.dT:
            raise DataError(f"requested T={T}, dT={dT} exceeds stored windows {self.spec}")
        cols = slice(self.spec.T - T, self.spec.T + dT)
        return self.train[:, :, cols], self.test[:, :, cols]

    def window_index(self, T: int, dT: int, which: str = "test", stride: int = 1):
        n = len(self.train if which == "train" else self.test)
        return [(f"{which}-{i}", float(self.spec.T * self.spec.step_seconds)) for i in range(n)]


def split(pairs, train_fraction: float = 0.75, seed: int = 0) -> Dataset:
    """Seeded pair-level shuffle; ``ceil(train_fraction * N)`` pairs go to train."""
    pairs = sorted(pairs, key=lambda p: p.pair_id)
    if len(pairs) < 2:
        raise DataError("need at least two pairs to split")
    order = np.random.default_rng(seed).permutation(len(pairs))
    n_train = min(len(pairs) - 1, max(1, math.ceil(train_fraction * len(pairs))))
    train = [pairs[i] for i in order[:n_train]]
    test = [pairs[i] for i in order[n_train:]]
    prov = {"seed": seed, "train_fraction": train_fraction, "rounding": "ceil",
            "n_train": len(train), "n_test": len(test)}
    return Dataset(train, test, prov)


# -- canonical files ----------------------------------------------------------

def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_trajectories(pairs, path) -> None:
    """Canonical CSV: one row per sample, grouped by pair, time-sorted."""
    frames = [
        pd.DataFrame({"pair_id": p.pair_id, "time_s": p.time, "v_fv": p.v_fv, "v_lv": p.v_lv,
                      "gap_m": p.gap, "a_fv": p.a_fv})
        for p in pairs
    ]
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CANONICAL_COLUMNS)
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8")


def read_trajectories(path):
    df = pd.read_csv(path, dtype={"pair_id": str}, float_precision="round_trip")
    missing = [c for c in CANONICAL_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    pairs = []
    for pid, g in df.groupby("pair_id", sort=False):
        g = g.sort_values("time_s")
        t = g["time_s"].to_numpy()
        rate = 1.0 / np.median(np.diff(t)) if len(t) > 1 else 5.0
        pairs.append(TrajectoryPair(pid, t, g["v_fv"], g["v_lv"], g["gap_m"], g["a_fv"], round(rate, 9)))
    return pairs


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _windows_frame(windows, labels, split_name, names):
    rows = []
    for i, w in enumerate(windows):
        for r, name in enumerate(names):
            rows.append([f"{split_name}-{i}", split_name, int(labels[i]) if labels is not None else -1, name, *w[r]])
    cols = ["window_id", "split", "label", "feature"] + [f"c{j}" for j in range(windows.shape[2])]
    return pd.DataFrame(rows, columns=cols)


def _read_windows(path):
    df = pd.read_csv(path, float_precision="round_trip")
    ccols = [c for c in df.columns if c.startswith("c") and c[1:].isdigit()]
    out = {}
    for split_name in ("train", "test"):
        part = df[df["split"] == split_name]
        D = part["feature"].nunique() if len(part) else 0
        vals = part[ccols].to_numpy(dtype=float)
        n = len(part) // D if D else 0
        w = vals.reshape(n, D, len(ccols)) if n else np.empty((0, 0, len(ccols)))
        labels = part["label"].to_numpy()[::D] if n else np.empty(0, dtype=int)
        out[split_name] = (w, labels)
    names = tuple(df["feature"].iloc[: df[df["split"] == "train"]["feature"].nunique()])
    return out, names


def load_dataset(directory):
    """Load a dataset directory written by the ``ingest`` or ``synth`` commands."""
    d = Path(directory)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{d}: no manifest.json")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    kind = manifest.get("kind")
    if kind == "trajectories":
        pairs = {p.pair_id: p for p in read_trajectories(d / manifest["files"]["trajectories"])}
        try:
            train = [pairs[i] for i in manifest["train_ids"]]
            test = [pairs[i] for i in manifest["test_ids"]]
        except KeyError as exc:
            raise DataError(f"manifest references unknown pair {exc}") from None
        return Dataset(train, test, manifest)
    if kind == "windows":
        parts, _ = _read_windows(d / manifest["files"]["windows"])
        spec = WindowSpec.from_dict(manifest["window_spec"])
        return WindowSet(parts["train"][0], parts["test"][0], spec, parts["train"][1], parts["test"][1], manifest)
    raise DataError(f"{manifest_path}: unknown dataset kind {kind!r}")


@dataclass
class SynthResult:
    windows: WindowSet
    truth: MnmmModel


def synth_generate(spec: WindowSpec, K: int, prior: PriorConfig, N_train: int, N_test: int, seed: int,
                   out_dir=None, temporal_decay: float | None = None,
                   unit_temporal_scale: bool = False) -> SynthResult:
    """Sample a ground-truth model from the prior, then train/test windows from it.

    With ``out_dir`` the windows (``windows.csv``), the truth model
    (``truth_model.json``) and ``manifest.json`` are written there.
    """
    rng = np.random.default_rng(seed)
    truth = sample_prior(spec, K, prior, rng, temporal_decay=temporal_decay, unit_temporal_scale=unit_temporal_scale)
    train, train_labels = sample_dataset(truth, N_train, rng)
    test, test_labels = sample_dataset(truth, N_test, rng)
    names = FEATURES if spec.D == len(FEATURES) else tuple(f"f{i}" for i in range(spec.D))
    prov = {"kind": "windows", "seed": seed, "K": K, "N_train": N_train, "N_test": N_test,
            "temporal_decay": temporal_decay, "unit_temporal_scale": unit_temporal_scale,
            "window_spec": spec.to_dict(), "prior": prior.to_dict()}
    result = SynthResult(WindowSet(train, test, spec, train_labels, test_labels, prov), truth)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        df = pd.concat([_windows_frame(train, train_labels, "train", names),
                        _windows_frame(test, test_labels, "test", names)], ignore_index=True)
        df.to_csv(out / "windows.csv", index=False, float_format="%.17g", encoding="utf-8")
        save_model(truth, out / "truth_model.json")
        prov = dict(prov, files={"windows": "windows.csv", "truth_model": "truth_model.json"},
                    checksums={"windows.csv": file_sha256(out / "windows.csv"),
                               "truth_model.json": file_sha256(out / "truth_model.json")})
        write_manifest(out / "manifest.json", prov)
        result.windows.provenance = prov
    return result


def load_truth(directory) -> MnmmModel:
    return load_model(Path(directory) / "truth_model.json")
